//! Ranking and contrastive objectives with closed-form gradients.
//!
//! Every loss is a sum over batch rows. Softmax denominators use
//! max-subtraction and `-log σ(x)` is evaluated as `softplus(-x)`.
//!
//! Contrastive terms operate on two parallel `B x d` batches: `users` holds
//! the readout rows of the batch users and `items` the rows of their positive
//! items, so row `k` of each forms a positive pair.

use serde::{Deserialize, Serialize};

use crate::dataset::TrainBatch;
use crate::encoder::{aggregate, aggregate_adjoint, AggregationWindow, EmbeddingState};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{dot, norm, Matrix};

/// Which contrastive term is added to the recommendation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveObjective {
    /// No contrastive term.
    None,
    /// `C(u, i) + C(i, u)`: users and items as each other's views, negatives
    /// from the opposing side.
    UserItem,
    /// `C_self(u) + C_self(i)`: each sample paired with itself.
    SelfOnly,
    /// `UserItem + SelfOnly`.
    UserItemSelf,
    /// `C_con(u, i) + C_con(i, u)`: negatives are the concatenated user and
    /// item batches.
    Concat,
    /// Fused-anchor loss over the concatenated negatives.
    Fusion,
    /// Two noise-perturbed views of the same node, `C(u', u'') + C(i', i'')`.
    NoisyViews,
}

impl ContrastiveObjective {
    pub fn name(self) -> &'static str {
        match self {
            ContrastiveObjective::None => "none",
            ContrastiveObjective::UserItem => "user_item",
            ContrastiveObjective::SelfOnly => "self_only",
            ContrastiveObjective::UserItemSelf => "user_item_self",
            ContrastiveObjective::Concat => "concat",
            ContrastiveObjective::Fusion => "fusion",
            ContrastiveObjective::NoisyViews => "noisy_views",
        }
    }
}

/// How the fused anchor of the fusion loss is formed from the readout rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `e* = 2(α e_u + (1 - α) e_i)` on the window-averaged readout.
    #[default]
    WindowMean,
    /// Reads the neighbor sums of the fused-embedding formula literally: the
    /// layer embeddings do not depend on the summation index, so each side is
    /// scaled by its normalized-adjacency row sum and by the number of layers
    /// in the window (the layer sum is not averaged).
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub objective: ContrastiveObjective,
    pub tau: f64,
    pub alpha: f64,
    /// Weight of the contrastive term.
    pub lambda1: f64,
    /// Weight of the L2 penalty on the batch's initial embeddings.
    pub lambda2: f64,
    /// Readout used by the contrastive term.
    pub window: AggregationWindow,
    /// Readout used by the BPR term.
    pub rec_window: AggregationWindow,
    #[serde(default)]
    pub fusion_mode: FusionMode,
    /// Scale every contrastive input row to unit length before scoring.
    #[serde(default)]
    pub normalize_views: bool,
}

impl ObjectiveConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            problems.push(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            problems.push(format!("lambda1 must be >= 0, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            problems.push(format!("lambda2 must be >= 0, got {}", self.lambda2));
        }
        for (name, w) in [("window", self.window), ("rec_window", self.rec_window)] {
            if w.lo > w.hi || w.hi > layers {
                problems.push(format!("{name} [{}, {}] invalid for {layers} layers", w.lo, w.hi));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Highest layer any readout needs.
    pub fn max_layer(&self) -> usize {
        let cl = if self.objective == ContrastiveObjective::None { 0 } else { self.window.hi };
        cl.max(self.rec_window.hi)
    }
}

/// `total = rec_loss + lambda1 * cl_loss + lambda2 * reg_loss`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_loss: f64,
    pub cl_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(rec_loss: f64, cl_loss: f64, reg_loss: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            rec_loss,
            cl_loss,
            reg_loss,
            total: rec_loss + lambda1 * cl_loss + lambda2 * reg_loss,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.rec_loss.is_finite() && self.cl_loss.is_finite() && self.reg_loss.is_finite()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be > 0, got {tau}")))
    }
}

fn check_parallel(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(context, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

fn check_finite(context: &str, m: &Matrix) -> Result<()> {
    match m.first_non_finite() {
        Some(index) => Err(Error::Numerical {
            context: context.to_string(),
            index: index / m.cols().max(1),
        }),
        None => Ok(()),
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Replaces each row of `logits` by its softmax; returns per-row log-sum-exp.
fn softmax_rows(logits: &mut Matrix, context: &str) -> Result<Vec<f64>> {
    let mut lse = Vec::with_capacity(logits.rows());
    for k in 0..logits.rows() {
        let row = logits.row_mut(k);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Numerical {
                context: context.to_string(),
                index: k,
            });
        }
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        let inv = 1.0 / s;
        row.iter_mut().for_each(|x| *x *= inv);
        lse.push(m + s.ln());
    }
    Ok(lse)
}

#[derive(Debug, Clone)]
pub struct BprOutput {
    pub value: f64,
    pub grad_user: Matrix,
    pub grad_pos: Matrix,
    pub grad_neg: Matrix,
}

/// `Σ_k -log σ(u_k·i_k - u_k·j_k)`.
pub fn bpr_loss(eu: &Matrix, ei: &Matrix, ej: &Matrix) -> Result<BprOutput> {
    check_parallel("bpr positives", eu, ei)?;
    check_parallel("bpr negatives", eu, ej)?;
    for (name, m) in [("bpr users", eu), ("bpr positives", ei), ("bpr negatives", ej)] {
        check_finite(name, m)?;
    }
    let (b, d) = eu.shape();
    let mut value = 0.0;
    let mut grad_user = Matrix::zeros(b, d);
    let mut grad_pos = Matrix::zeros(b, d);
    let mut grad_neg = Matrix::zeros(b, d);
    for k in 0..b {
        let (u, i, j) = (eu.row(k), ei.row(k), ej.row(k));
        let x = dot(u, i) - dot(u, j);
        value += softplus(-x);
        // d/dx softplus(-x) = -σ(-x)
        let g = -sigmoid(-x);
        let gu = grad_user.row_mut(k);
        for c in 0..d {
            gu[c] = g * (i[c] - j[c]);
        }
        grad_pos.row_mut(k).iter_mut().zip(u).for_each(|(o, &x)| *o = g * x);
        grad_neg.row_mut(k).iter_mut().zip(u).for_each(|(o, &x)| *o = -g * x);
    }
    Ok(BprOutput {
        value,
        grad_user,
        grad_pos,
        grad_neg,
    })
}

#[derive(Debug, Clone)]
pub struct InfoNceOutput {
    pub value: f64,
    pub grad_anchor: Matrix,
    pub grad_positive: Matrix,
    pub grad_negatives: Matrix,
}

/// `Σ_k -log [exp(a_k·p_k/τ) / Σ_c exp(a_k·c/τ)]` over the rows `c` of
/// `negatives`, which are expected to include each row's positive.
///
/// When the same matrix is passed in several roles, the caller adds up the
/// corresponding gradients.
pub fn infonce(anchor: &Matrix, positive: &Matrix, negatives: &Matrix, tau: f64) -> Result<InfoNceOutput> {
    check_tau(tau)?;
    check_parallel("infonce positives", anchor, positive)?;
    if negatives.rows() == 0 || negatives.cols() != anchor.cols() {
        return Err(Error::dimension(
            "infonce negatives",
            format!("(>0, {})", anchor.cols()),
            format!("{:?}", negatives.shape()),
        ));
    }
    let inv_tau = 1.0 / tau;
    let mut probs = anchor.matmul_nt(negatives);
    probs.scale(inv_tau);
    let lse = softmax_rows(&mut probs, "infonce logits")?;
    let mut value = 0.0;
    for (k, l) in lse.iter().enumerate() {
        value += l - dot(anchor.row(k), positive.row(k)) * inv_tau;
    }

    let mut grad_anchor = probs.matmul(negatives);
    grad_anchor.add_scaled(-1.0, positive);
    grad_anchor.scale(inv_tau);
    let grad_positive = anchor.scaled(-inv_tau);
    let mut grad_negatives = probs.matmul_tn(anchor);
    grad_negatives.scale(inv_tau);
    if !value.is_finite() {
        return Err(Error::Numerical {
            context: "infonce value".into(),
            index: 0,
        });
    }
    Ok(InfoNceOutput {
        value,
        grad_anchor,
        grad_positive,
        grad_negatives,
    })
}

/// `e*_k = 2 (α u_k + (1 - α) i_k)`.
pub fn fused_embedding(eu: &Matrix, ei: &Matrix, alpha: f64) -> Result<Matrix> {
    check_parallel("fused embedding", eu, ei)?;
    let mut out = eu.scaled(2.0 * alpha);
    out.add_scaled(2.0 * (1.0 - alpha), ei);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PairGrad {
    pub value: f64,
    pub grad_users: Matrix,
    pub grad_items: Matrix,
}

/// Fusion loss with the default fused anchor `2(α u + (1 - α) i)`.
pub fn fusion_loss(eu: &Matrix, ei: &Matrix, tau: f64, alpha: f64) -> Result<PairGrad> {
    let b = eu.rows();
    fusion_loss_weighted(eu, ei, tau, &vec![alpha; b], &vec![1.0 - alpha; b])
}

/// `Σ_k -log [exp(u_k·i_k/τ) / Σ_{j ∈ [U; I]} exp(e*_k·e_j/τ)]` with
/// `e*_k = 2 (a_k u_k + b_k i_k)`.
///
/// The denominator ranges over all `2B` rows of the stacked user and item
/// batches, the anchor's own pair included.
pub fn fusion_loss_weighted(
    eu: &Matrix,
    ei: &Matrix,
    tau: f64,
    user_coef: &[f64],
    item_coef: &[f64],
) -> Result<PairGrad> {
    check_tau(tau)?;
    check_parallel("fusion pair", eu, ei)?;
    let (b, d) = eu.shape();
    if user_coef.len() != b || item_coef.len() != b {
        return Err(Error::dimension("fusion coefficients", b, user_coef.len().min(item_coef.len())));
    }
    let inv_tau = 1.0 / tau;
    let stacked = eu.vstack(ei)?;
    let mut fused = Matrix::zeros(b, d);
    for k in 0..b {
        let (a, c) = (2.0 * user_coef[k], 2.0 * item_coef[k]);
        for ((f, &u), &i) in fused.row_mut(k).iter_mut().zip(eu.row(k)).zip(ei.row(k)) {
            *f = a * u + c * i;
        }
    }
    check_finite("fused embedding", &fused)?;

    let mut probs = fused.matmul_nt(&stacked);
    probs.scale(inv_tau);
    let lse = softmax_rows(&mut probs, "fusion logits")?;
    let mut value = 0.0;
    for (k, l) in lse.iter().enumerate() {
        let term = l - dot(eu.row(k), ei.row(k)) * inv_tau;
        if !term.is_finite() {
            return Err(Error::Numerical {
                context: "fusion loss row".into(),
                index: k,
            });
        }
        value += term;
    }

    let mut grad_fused = probs.matmul(&stacked);
    grad_fused.scale(inv_tau);
    let mut grad_stacked = probs.matmul_tn(&fused);
    grad_stacked.scale(inv_tau);
    let (mut grad_users, mut grad_items) = grad_stacked.split_rows(b);
    grad_users.add_scaled(-inv_tau, ei);
    grad_items.add_scaled(-inv_tau, eu);
    for k in 0..b {
        let (a, c) = (2.0 * user_coef[k], 2.0 * item_coef[k]);
        let gf = grad_fused.row(k);
        grad_users.row_mut(k).iter_mut().zip(gf).for_each(|(g, &x)| *g += a * x);
        grad_items.row_mut(k).iter_mut().zip(gf).for_each(|(g, &x)| *g += c * x);
    }
    Ok(PairGrad {
        value,
        grad_users,
        grad_items,
    })
}

/// `C(u, i) + C(i, u)` with the opposing batch as negatives.
pub fn user_item_loss(eu: &Matrix, ei: &Matrix, tau: f64) -> Result<PairGrad> {
    let ui = infonce(eu, ei, ei, tau)?;
    let iu = infonce(ei, eu, eu, tau)?;
    let mut grad_users = ui.grad_anchor;
    grad_users.add_assign(&iu.grad_positive);
    grad_users.add_assign(&iu.grad_negatives);
    let mut grad_items = ui.grad_positive;
    grad_items.add_assign(&ui.grad_negatives);
    grad_items.add_assign(&iu.grad_anchor);
    Ok(PairGrad {
        value: ui.value + iu.value,
        grad_users,
        grad_items,
    })
}

/// `C_self(x)`: every row is its own positive, the batch is the negative set.
pub fn self_loss(x: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let out = infonce(x, x, x, tau)?;
    let mut g = out.grad_anchor;
    g.add_assign(&out.grad_positive);
    g.add_assign(&out.grad_negatives);
    Ok((out.value, g))
}

/// `C_self(u) + C_self(i)`.
pub fn self_pair_loss(eu: &Matrix, ei: &Matrix, tau: f64) -> Result<PairGrad> {
    let (vu, grad_users) = self_loss(eu, tau)?;
    let (vi, grad_items) = self_loss(ei, tau)?;
    Ok(PairGrad {
        value: vu + vi,
        grad_users,
        grad_items,
    })
}

/// `C(u, i) + C(i, u) + C_self(u) + C_self(i)`.
pub fn user_item_self_loss(eu: &Matrix, ei: &Matrix, tau: f64) -> Result<PairGrad> {
    let mut a = user_item_loss(eu, ei, tau)?;
    let s = self_pair_loss(eu, ei, tau)?;
    a.value += s.value;
    a.grad_users.add_assign(&s.grad_users);
    a.grad_items.add_assign(&s.grad_items);
    Ok(a)
}

/// `C_con(u, i) + C_con(i, u)`; both directions score against `[U; I]`.
pub fn concat_loss(eu: &Matrix, ei: &Matrix, tau: f64) -> Result<PairGrad> {
    let b = eu.rows();
    let stacked = eu.vstack(ei)?;
    let ui = infonce(eu, ei, &stacked, tau)?;
    let iu = infonce(ei, eu, &stacked, tau)?;
    let mut neg = ui.grad_negatives;
    neg.add_assign(&iu.grad_negatives);
    let (neg_u, neg_i) = neg.split_rows(b);
    let mut grad_users = ui.grad_anchor;
    grad_users.add_assign(&iu.grad_positive);
    grad_users.add_assign(&neg_u);
    let mut grad_items = ui.grad_positive;
    grad_items.add_assign(&iu.grad_anchor);
    grad_items.add_assign(&neg_i);
    Ok(PairGrad {
        value: ui.value + iu.value,
        grad_users,
        grad_items,
    })
}

/// Readouts of two noise-perturbed forward passes.
///
/// The perturbation must not depend on `E0`, so both views share the
/// Jacobian of the clean readout over the configured window.
#[derive(Debug, Clone)]
pub struct NoisyViews {
    pub first: Matrix,
    pub second: Matrix,
}

/// Contrastive term for a given objective on gathered pair rows.
///
/// `NoisyViews` is not handled here since it needs the perturbed readouts;
/// see [`total_loss_with_views`].
pub fn pair_objective(objective: ContrastiveObjective, eu: &Matrix, ei: &Matrix, cfg: &ObjectiveConfig) -> Result<PairGrad> {
    match objective {
        ContrastiveObjective::None => Ok(PairGrad {
            value: 0.0,
            grad_users: Matrix::zeros(eu.rows(), eu.cols()),
            grad_items: Matrix::zeros(ei.rows(), ei.cols()),
        }),
        ContrastiveObjective::UserItem => user_item_loss(eu, ei, cfg.tau),
        ContrastiveObjective::SelfOnly => self_pair_loss(eu, ei, cfg.tau),
        ContrastiveObjective::UserItemSelf => user_item_self_loss(eu, ei, cfg.tau),
        ContrastiveObjective::Concat => concat_loss(eu, ei, cfg.tau),
        ContrastiveObjective::Fusion => fusion_loss(eu, ei, cfg.tau, cfg.alpha),
        ContrastiveObjective::NoisyViews => Err(Error::Config("noisy_views objective needs perturbed readouts".into())),
    }
}

/// Full objective for one batch and its gradient with respect to `E0`.
pub fn total_loss(
    cfg: &ObjectiveConfig,
    batch: &TrainBatch,
    state: &EmbeddingState,
    adj: &NormalizedAdjacency,
) -> Result<(LossBreakdown, Matrix)> {
    total_loss_with_views(cfg, batch, state, adj, None)
}

/// Rows scaled to unit length, with the original norms.
pub fn normalize_rows(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numerical {
                context: "row normalization".into(),
                index: r,
            });
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient on normalized rows back to the raw rows:
/// `(g - (g·n) n) / |x|`.
pub fn normalize_rows_backward(grad: &Matrix, normalized: &Matrix, norms: &[f64]) -> Matrix {
    let mut out = grad.clone();
    for (r, &len) in norms.iter().enumerate() {
        let n = normalized.row(r);
        let proj = dot(grad.row(r), n);
        out.row_mut(r).iter_mut().zip(n).for_each(|(g, &ni)| *g = (*g - proj * ni) / len);
    }
    out
}

/// As [`total_loss`], additionally accepting the perturbed readouts required
/// by [`ContrastiveObjective::NoisyViews`].
pub fn total_loss_with_views(
    cfg: &ObjectiveConfig,
    batch: &TrainBatch,
    state: &EmbeddingState,
    adj: &NormalizedAdjacency,
    views: Option<&NoisyViews>,
) -> Result<(LossBreakdown, Matrix)> {
    cfg.validate(state.num_layers())?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let m = adj.num_users();
    let n_nodes = adj.num_nodes();
    if state.initial().rows() != n_nodes {
        return Err(Error::dimension("total_loss embeddings", n_nodes, state.initial().rows()));
    }
    let d = state.dim();
    let users: Vec<usize> = batch.users.iter().map(|&u| u as usize).collect();
    let pos: Vec<usize> = batch.pos_items.iter().map(|&i| m + i as usize).collect();
    let neg: Vec<usize> = batch.neg_items.iter().map(|&j| m + j as usize).collect();

    let rec_emb = aggregate(state, cfg.rec_window)?;
    let bpr = bpr_loss(
        &rec_emb.gather_rows(users.iter().copied()),
        &rec_emb.gather_rows(pos.iter().copied()),
        &rec_emb.gather_rows(neg.iter().copied()),
    )?;
    let mut grad_rec = Matrix::zeros(n_nodes, d);
    grad_rec.scatter_add_rows(users.iter().copied(), &bpr.grad_user);
    grad_rec.scatter_add_rows(pos.iter().copied(), &bpr.grad_pos);
    grad_rec.scatter_add_rows(neg.iter().copied(), &bpr.grad_neg);

    let mut grad_cl = Matrix::zeros(n_nodes, d);
    let cl_value = match cfg.objective {
        ContrastiveObjective::None => 0.0,
        ContrastiveObjective::NoisyViews => {
            let views = views.ok_or_else(|| Error::Config("noisy_views objective requires perturbed views".into()))?;
            for v in [&views.first, &views.second] {
                if v.shape() != (n_nodes, d) {
                    return Err(Error::dimension("noisy view", format!("({n_nodes}, {d})"), format!("{:?}", v.shape())));
                }
            }
            let mut value = 0.0;
            for rows in [&users, &pos] {
                let a = views.first.gather_rows(rows.iter().copied());
                let p = views.second.gather_rows(rows.iter().copied());
                let (a, p, scale) = if cfg.normalize_views {
                    let (a, na) = normalize_rows(&a)?;
                    let (p, np) = normalize_rows(&p)?;
                    (a, p, Some((na, np)))
                } else {
                    (a, p, None)
                };
                let out = infonce(&a, &p, &p, cfg.tau)?;
                value += out.value;
                let mut grad_p = out.grad_positive;
                grad_p.add_assign(&out.grad_negatives);
                let (grad_a, grad_p) = match &scale {
                    Some((na, np)) => (
                        normalize_rows_backward(&out.grad_anchor, &a, na),
                        normalize_rows_backward(&grad_p, &p, np),
                    ),
                    None => (out.grad_anchor, grad_p),
                };
                grad_cl.scatter_add_rows(rows.iter().copied(), &grad_a);
                grad_cl.scatter_add_rows(rows.iter().copied(), &grad_p);
            }
            value
        }
        objective => {
            let cl_emb = if cfg.window == cfg.rec_window {
                None
            } else {
                Some(aggregate(state, cfg.window)?)
            };
            let cl_emb = cl_emb.as_ref().unwrap_or(&rec_emb);
            let eu = cl_emb.gather_rows(users.iter().copied());
            let ei = cl_emb.gather_rows(pos.iter().copied());
            let (eu, ei, scale) = if cfg.normalize_views {
                let (eu, nu) = normalize_rows(&eu)?;
                let (ei, ni) = normalize_rows(&ei)?;
                (eu, ei, Some((nu, ni)))
            } else {
                (eu, ei, None)
            };
            let out = if objective == ContrastiveObjective::Fusion && cfg.fusion_mode == FusionMode::Literal {
                let sums = adj.row_sums();
                let width = cfg.window.len() as f64;
                let a: Vec<f64> = users.iter().map(|&r| cfg.alpha * width * sums[r]).collect();
                let b: Vec<f64> = pos.iter().map(|&r| (1.0 - cfg.alpha) * width * sums[r]).collect();
                fusion_loss_weighted(&eu, &ei, cfg.tau, &a, &b)?
            } else {
                pair_objective(objective, &eu, &ei, cfg)?
            };
            let (grad_u, grad_i) = match &scale {
                Some((nu, ni)) => (
                    normalize_rows_backward(&out.grad_users, &eu, nu),
                    normalize_rows_backward(&out.grad_items, &ei, ni),
                ),
                None => (out.grad_users, out.grad_items),
            };
            grad_cl.scatter_add_rows(users.iter().copied(), &grad_u);
            grad_cl.scatter_add_rows(pos.iter().copied(), &grad_i);
            out.value
        }
    };

    // L2 on the distinct initial rows touched by the batch.
    let mut touched: Vec<usize> = users.iter().chain(&pos).chain(&neg).copied().collect();
    touched.sort_unstable();
    touched.dedup();
    let e0 = state.initial();
    let mut reg_value = 0.0;
    for &r in &touched {
        reg_value += dot(e0.row(r), e0.row(r));
    }

    let breakdown = LossBreakdown::compose(bpr.value, cl_value, reg_value, cfg.lambda1, cfg.lambda2);

    let has_cl = cfg.objective != ContrastiveObjective::None && cfg.lambda1 != 0.0;
    let mut grad_e0 = if has_cl && cfg.window == cfg.rec_window {
        grad_rec.add_scaled(cfg.lambda1, &grad_cl);
        aggregate_adjoint(adj, &grad_rec, cfg.rec_window)?
    } else {
        let mut g = aggregate_adjoint(adj, &grad_rec, cfg.rec_window)?;
        if has_cl {
            g.add_scaled(cfg.lambda1, &aggregate_adjoint(adj, &grad_cl, cfg.window)?);
        }
        g
    };
    if cfg.lambda2 != 0.0 {
        for &r in &touched {
            let scale = 2.0 * cfg.lambda2;
            let src: Vec<f64> = e0.row(r).to_vec();
            grad_e0.row_mut(r).iter_mut().zip(&src).for_each(|(g, &x)| *g += scale * x);
        }
    }
    Ok((breakdown, grad_e0))
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    fn constant(b: usize, d: usize, v: f64) -> Matrix {
        Matrix::from_vec(b, d, vec![v; b * d]).unwrap()
    }

    #[test]
    fn bpr_tied_scores_is_ln2() {
        let e = constant(1, 3, 0.5);
        let out = bpr_loss(&e, &e, &e).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((out.value - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn bpr_large_margin_vanishes() {
        let u = Matrix::from_rows(&[vec![100.0]]).unwrap();
        let i = Matrix::from_rows(&[vec![100.0]]).unwrap();
        let j = Matrix::from_rows(&[vec![-100.0]]).unwrap();
        let out = bpr_loss(&u, &i, &j).unwrap();
        assert!(out.value < 1e-300);
        assert!(out.value >= 0.0);
        // And the reverse does not overflow.
        let out = bpr_loss(&u, &j, &i).unwrap();
        assert!((out.value - 20000.0).abs() < 1e-9);
    }

    #[test]
    fn bpr_rejects_nan() {
        let mut u = constant(2, 2, 1.0);
        u[(1, 0)] = f64::NAN;
        let e = constant(2, 2, 1.0);
        assert!(matches!(bpr_loss(&u, &e, &e), Err(Error::Numerical { index: 1, .. })));
    }

    #[test]
    fn infonce_uniform_and_singleton() {
        let e = constant(4, 3, 0.3);
        let out = infonce(&e, &e, &e, 0.2).unwrap();
        assert!((out.value - 4.0 * 4f64.ln()).abs() < 1e-12);
        assert!((out.value - 5.545177).abs() < 1e-6);

        let a = Matrix::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![2.0, 0.5]]).unwrap();
        let out = infonce(&a, &p, &p, 0.5).unwrap();
        assert!(out.value.abs() < 1e-15);
    }

    #[test]
    fn infonce_rejects_bad_tau() {
        let e = constant(2, 2, 1.0);
        assert!(matches!(infonce(&e, &e, &e, 0.0), Err(Error::Config(_))));
        assert!(matches!(infonce(&e, &e, &e, -1.0), Err(Error::Config(_))));
        assert!(matches!(fusion_loss(&e, &e, 0.0, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn fused_embedding_cases() {
        let u = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let i = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let f = fused_embedding(&u, &i, 0.3).unwrap();
        assert!((f[(0, 0)] - 0.6).abs() < 1e-15 && (f[(0, 1)] - 1.4).abs() < 1e-15);
        assert_eq!(fused_embedding(&u, &i, 0.5).unwrap(), Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap());
        assert_eq!(fused_embedding(&u, &i, 1.0).unwrap(), Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap());
    }

    #[test]
    fn fusion_uniform_value() {
        let zero = constant(4, 3, 0.0);
        let out = fusion_loss(&zero, &zero, 0.24, 0.5).unwrap();
        assert!((out.value - 4.0 * 8f64.ln()).abs() < 1e-12);
        assert!((out.value - 8.317766).abs() < 1e-6);
        // With a shared non-zero row the softmax is still uniform, but the fused
        // anchor has twice the norm of the numerator pair.
        let e = constant(4, 3, 0.2);
        let out = fusion_loss(&e, &e, 0.24, 0.5).unwrap();
        let sq = 3.0 * 0.2 * 0.2;
        assert!((out.value - 4.0 * (8f64.ln() + sq / 0.24)).abs() < 1e-12);
    }

    #[test]
    fn fusion_single_pair_has_two_terms() {
        let u = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let i = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let tau = 0.5;
        // e* = u + i, scores against u and i are both 1/τ.
        let expected = -(0.0f64 / tau) + ((1.0 / tau).exp() * 2.0).ln();
        let out = fusion_loss(&u, &i, tau, 0.5).unwrap();
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn composition_is_exact() {
        let b = LossBreakdown::compose(1.25, 3.5, 0.125, 0.1, 1e-4);
        assert_eq!(b.total, 1.25 + 0.1 * 3.5 + 1e-4 * 0.125);
        let b = LossBreakdown::compose(1.25, 3.5, 0.125, 0.0, 0.0);
        assert_eq!(b.total, 1.25);
    }

    #[test]
    fn config_validation_lists_everything() {
        let cfg = ObjectiveConfig {
            objective: ContrastiveObjective::Fusion,
            tau: 0.0,
            alpha: 1.5,
            lambda1: -1.0,
            lambda2: 0.0,
            window: AggregationWindow { lo: 3, hi: 1 },
            rec_window: AggregationWindow::full(3),
            fusion_mode: FusionMode::WindowMean,
            normalize_views: false,
        };
        let Err(Error::Config(msg)) = cfg.validate(3) else { panic!() };
        assert_eq!(msg.split("; ").count(), 4, "{msg}");
    }
}
