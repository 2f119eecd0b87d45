//! Initialization, lazy Adam, the epoch loop and checkpoints.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, VariantName};
use crate::dataset::InteractionDataset;
use crate::encoder::{aggregate, propagate, AggregationWindow};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_readout, Metric, Split};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;
use crate::objectives::{total_loss_with_views, ContrastiveObjective, LossBreakdown, NoisyViews, ObjectiveConfig};

/// Xavier-uniform table of `(M + N) x d` entries on `[-b, b]`,
/// `b = sqrt(6 / (M + N + d))`.
pub fn init_embeddings(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Matrix {
    let rows = num_users + num_items;
    let bound = xavier_bound(num_users, num_items, dim);
    let dist = Uniform::new_inclusive(-bound, bound).expect("bound is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| dist.sample(&mut rng)).collect();
    Matrix::from_vec(rows, dim, data).expect("length matches")
}

pub fn xavier_bound(num_users: usize, num_items: usize, dim: usize) -> f64 {
    (6.0 / (num_users + num_items + dim) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Matrix,
    pub second_moment: Matrix,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step with bias correction on the rows whose gradient is not all
/// zero. Other rows and their moments are left alone.
///
/// Returns the number of rows updated. A non-finite gradient aborts the step
/// before anything is modified.
pub fn adam_step(params: &mut Matrix, grads: &Matrix, opt: &mut AdamState, lr: f64) -> Result<usize> {
    if params.shape() != grads.shape() || params.shape() != opt.first_moment.shape() {
        return Err(Error::dimension(
            "adam_step",
            format!("{:?}", params.shape()),
            format!("{:?}", grads.shape()),
        ));
    }
    if let Some(index) = grads.first_non_finite() {
        return Err(Error::Numerical {
            context: format!("adam gradient (row {})", index / grads.cols().max(1)),
            index,
        });
    }
    opt.step_count += 1;
    let t = opt.step_count as i32;
    let (b1, b2) = (opt.beta1, opt.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let mut touched = 0;
    for r in 0..params.rows() {
        let g = grads.row(r);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        touched += 1;
        let m = opt.first_moment.row_mut(r);
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = opt.second_moment.row_mut(r);
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (opt.first_moment.row(r), opt.second_moment.row(r));
        for ((p, &mi), &vi) in params.row_mut(r).iter_mut().zip(m).zip(v) {
            *p -= lr * (mi / bc1) / ((vi / bc2).sqrt() + opt.eps);
        }
    }
    Ok(touched)
}

/// Readout of a forward pass with `ε·normalize(U[0,1)^d)` added to every
/// node after each propagation layer.
pub fn noisy_readout<R: Rng + ?Sized>(
    adj: &NormalizedAdjacency,
    e0: &Matrix,
    window: AggregationWindow,
    eps: f64,
    rng: &mut R,
) -> Result<Matrix> {
    let (rows, cols) = e0.shape();
    let mut current = e0.clone();
    let mut acc = if window.lo == 0 { e0.clone() } else { Matrix::zeros(rows, cols) };
    let mut next = Matrix::zeros(rows, cols);
    for l in 1..=window.hi {
        adj.spmm_into(&current, &mut next)?;
        for r in 0..rows {
            let row = next.row_mut(r);
            let mut noise = [0.0f64; 256];
            let noise = if cols <= noise.len() { &mut noise[..cols] } else { &mut vec![0.0; cols][..] };
            let mut sq = 0.0;
            for x in noise.iter_mut() {
                *x = rng.random::<f64>();
                sq += *x * *x;
            }
            let scale = if sq > 0.0 { eps / sq.sqrt() } else { 0.0 };
            for (y, &x) in row.iter_mut().zip(noise.iter()) {
                *y += scale * x;
            }
        }
        std::mem::swap(&mut current, &mut next);
        if l >= window.lo {
            acc.add_assign(&current);
        }
    }
    if window.len() > 1 {
        acc.scale(1.0 / window.len() as f64);
    }
    Ok(acc)
}

/// Training-side counters for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub pairs: usize,
    /// Sums over all steps of the per-batch loss terms.
    pub loss: LossBreakdown,
    /// spmm calls made by forward passes (clean and perturbed).
    pub forward_spmm: u64,
    /// spmm calls made while back-propagating to `E0`.
    pub adjoint_spmm: u64,
    pub train_time_s: f64,
    pub loss_time_s: f64,
}

impl EpochStats {
    pub fn spmm_per_forward(&self) -> f64 {
        self.forward_spmm as f64 / self.steps.max(1) as f64
    }
}

/// One line of the JSON training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub rec_loss: f64,
    pub cl_loss: f64,
    pub reg_loss: f64,
    pub total_loss: f64,
    /// `rec_loss` divided by the number of sampled pairs.
    pub rec_loss_per_pair: f64,
    pub cl_loss_per_pair: f64,
    pub valid_recall: Option<f64>,
    pub valid_ndcg: Option<f64>,
    pub forward_spmm: u64,
    pub adjoint_spmm: u64,
    pub train_time_s: f64,
    pub loss_time_s: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `E0` at the best validation epoch (or the last epoch without a validation split).
    pub embeddings: Matrix,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
    pub epochs_run: usize,
}

pub struct Trainer<'a> {
    cfg: ModelConfig,
    objective: ObjectiveConfig,
    ds: &'a InteractionDataset,
    adj: NormalizedAdjacency,
    embeddings: Matrix,
    optimizer: AdamState,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: ModelConfig, ds: &'a InteractionDataset) -> Result<Self> {
        cfg.validate()?;
        let objective = cfg.objective_config()?;
        let adj = NormalizedAdjacency::build(ds)?;
        let embeddings = init_embeddings(ds.num_users(), ds.num_items(), cfg.model.dim, cfg.seed);
        let optimizer = AdamState::new(embeddings.rows(), embeddings.cols());
        Ok(Self {
            cfg,
            objective,
            ds,
            adj,
            embeddings,
            optimizer,
            epoch: 0,
        })
    }

    /// Continues from a checkpoint written by a run with the same config.
    pub fn resume(cfg: ModelConfig, ds: &'a InteractionDataset, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, ds)?;
        if ckpt.num_users != ds.num_users() || ckpt.num_items != ds.num_items() || ckpt.dim != t.cfg.model.dim {
            return Err(Error::Config(format!(
                "checkpoint is {}x{} d={}, run expects {}x{} d={}",
                ckpt.num_users,
                ckpt.num_items,
                ckpt.dim,
                ds.num_users(),
                ds.num_items(),
                t.cfg.model.dim
            )));
        }
        if ckpt.variant != t.cfg.variant.as_str() {
            return Err(Error::Config(format!(
                "checkpoint variant `{}` differs from `{}`",
                ckpt.variant, t.cfg.variant
            )));
        }
        t.embeddings = ckpt.embeddings;
        t.optimizer = ckpt.optimizer;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn objective(&self) -> &ObjectiveConfig {
        &self.objective
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adj
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.ds.train_edges().len().div_ceil(self.cfg.train.batch_size)
    }

    /// Readout used for scoring.
    pub fn readout(&self) -> Result<Matrix> {
        let w = self.objective.rec_window;
        aggregate(&propagate(&self.adj, &self.embeddings, w.hi)?, w)
    }

    /// Validation Recall@K and NDCG@K, `None` when there is no validation split.
    pub fn validate(&self) -> Result<Option<(f64, f64)>> {
        if self.ds.valid_edges().is_empty() {
            return Ok(None);
        }
        let k = self.cfg.train.eval_k.min(self.ds.num_items());
        let (_, metrics) = evaluate_readout(&self.readout()?, self.ds, Split::Valid, &[k])?;
        let get = |m: Metric| metrics.iter().find(|v| v.metric == m).map(|v| v.value).unwrap_or(0.0);
        Ok(Some((get(Metric::Recall), get(Metric::Ndcg))))
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch as u64 + 1);
        rng
    }

    /// Runs `⌈|train| / B⌉` optimization steps.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let started = Instant::now();
        let mut rng = self.epoch_rng();
        let steps = self.steps_per_epoch();
        let batch_size = self.cfg.train.batch_size;
        let depth = self.objective.max_layer();
        let noisy = self.objective.objective == ContrastiveObjective::NoisyViews;
        let mut totals = LossBreakdown::default();
        let (mut forward_spmm, mut adjoint_spmm) = (0u64, 0u64);
        let mut loss_time = 0.0;
        for step in 0..steps {
            let batch = self.ds.sample_batch(batch_size, &mut rng)?;
            let c0 = self.adj.spmm_calls();
            let state = propagate(&self.adj, &self.embeddings, depth).map_err(|e| self.diverged(e, step))?;
            let views = if noisy {
                let w = self.objective.window;
                let eps = self.cfg.train.noise_eps;
                Some(NoisyViews {
                    first: noisy_readout(&self.adj, &self.embeddings, w, eps, &mut rng)?,
                    second: noisy_readout(&self.adj, &self.embeddings, w, eps, &mut rng)?,
                })
            } else {
                None
            };
            let c1 = self.adj.spmm_calls();
            let t = Instant::now();
            let (loss, grad) = total_loss_with_views(&self.objective, &batch, &state, &self.adj, views.as_ref())
                .map_err(|e| self.diverged(e, step))?;
            loss_time += t.elapsed().as_secs_f64();
            let c2 = self.adj.spmm_calls();
            forward_spmm += c1 - c0;
            adjoint_spmm += c2 - c1;
            if !loss.is_finite() {
                return Err(self.diverged(Error::Numerical { context: "loss".into(), index: step }, step));
            }
            adam_step(&mut self.embeddings, &grad, &mut self.optimizer, self.cfg.train.lr)
                .map_err(|e| self.diverged(e, step))?;
            totals.rec_loss += loss.rec_loss;
            totals.cl_loss += loss.cl_loss;
            totals.reg_loss += loss.reg_loss;
            totals.total += loss.total;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            steps,
            pairs: steps * batch_size,
            loss: totals,
            forward_spmm,
            adjoint_spmm,
            train_time_s: started.elapsed().as_secs_f64(),
            loss_time_s: loss_time,
        })
    }

    fn diverged(&self, cause: Error, step: usize) -> Error {
        match cause {
            Error::Numerical { .. } => Error::Diverged {
                epoch: self.epoch + 1,
                step,
                last_good: Box::new(self.embeddings.clone()),
            },
            other => other,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            num_users: self.ds.num_users(),
            num_items: self.ds.num_items(),
            dim: self.cfg.model.dim,
            variant: self.cfg.variant.as_str().to_string(),
            epoch: self.epoch,
            embeddings: self.embeddings.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Trains until `max_epochs` or until validation Recall@K has not improved
    /// for `patience` epochs; returns the best-validation snapshot.
    pub fn fit(mut self) -> Result<TrainOutcome> {
        self.fit_with(|_| {})
    }

    /// As [`Trainer::fit`], calling `on_epoch` after each logged epoch.
    pub fn fit_with<F: FnMut(&EpochRecord)>(&mut self, mut on_epoch: F) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let mut best: Option<(f64, Checkpoint)> = None;
        let mut since_best = 0;
        let mut last_good = self.embeddings.clone();
        while self.epoch < self.cfg.train.max_epochs {
            let started = Instant::now();
            let stats = match self.run_epoch() {
                Ok(s) => s,
                Err(Error::Diverged { epoch, step, .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e),
            };
            let valid = self.validate()?;
            let pairs = stats.pairs.max(1) as f64;
            let record = EpochRecord {
                epoch: stats.epoch,
                steps: stats.steps,
                rec_loss: stats.loss.rec_loss,
                cl_loss: stats.loss.cl_loss,
                reg_loss: stats.loss.reg_loss,
                total_loss: stats.loss.total,
                rec_loss_per_pair: stats.loss.rec_loss / pairs,
                cl_loss_per_pair: stats.loss.cl_loss / pairs,
                valid_recall: valid.map(|v| v.0),
                valid_ndcg: valid.map(|v| v.1),
                forward_spmm: stats.forward_spmm,
                adjoint_spmm: stats.adjoint_spmm,
                train_time_s: stats.train_time_s,
                loss_time_s: stats.loss_time_s,
                wall_time_s: started.elapsed().as_secs_f64(),
            };
            on_epoch(&record);
            log.push(record);
            last_good = self.embeddings.clone();

            match valid {
                Some((recall, _)) => {
                    if best.as_ref().is_none_or(|(b, _)| recall > *b) {
                        best = Some((recall, self.checkpoint()));
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if since_best >= self.cfg.train.patience {
                            break;
                        }
                    }
                }
                None => best = Some((f64::NAN, self.checkpoint())),
            }
        }
        let (best_valid, checkpoint) = match best {
            Some((v, c)) => (if v.is_nan() { None } else { Some(v) }, c),
            None => (None, self.checkpoint()),
        };
        Ok(TrainOutcome {
            embeddings: checkpoint.embeddings.clone(),
            best_epoch: checkpoint.epoch,
            checkpoint,
            log,
            best_valid,
            epochs_run: self.epoch,
        })
    }
}

pub fn train(cfg: &ModelConfig, ds: &InteractionDataset) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), ds)?.fit()
}

const CKPT_MAGIC: &[u8; 8] = b"HFGCLCKP";
const CKPT_VERSION: u32 = 1;

/// Header `(M, N, d, variant, epoch)`, the `E0` table and Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub variant: String,
    pub epoch: usize,
    pub embeddings: Matrix,
    pub optimizer: AdamState,
}

impl Checkpoint {
    /// Wraps untrained embeddings, e.g. for evaluating an initialization.
    pub fn untrained(variant: VariantName, embeddings: Matrix, num_users: usize) -> Self {
        let (rows, dim) = embeddings.shape();
        Self {
            num_users,
            num_items: rows - num_users,
            dim,
            variant: variant.as_str().to_string(),
            epoch: 0,
            optimizer: AdamState::new(rows, dim),
            embeddings,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        for v in [self.num_users, self.num_items, self.dim] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&(self.variant.len() as u32).to_le_bytes())?;
        w.write_all(self.variant.as_bytes())?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        let o = &self.optimizer;
        w.write_all(&o.step_count.to_le_bytes())?;
        for v in [o.beta1, o.beta2, o.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in [&self.embeddings, &o.first_moment, &o.second_moment] {
            for v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CKPT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut u64s = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let num_users = u64s(&mut r)? as usize;
        let num_items = u64s(&mut r)? as usize;
        let dim = u64s(&mut r)? as usize;
        r.read_exact(&mut b4)?;
        let len = u32::from_le_bytes(b4) as usize;
        if len > 256 {
            return Err(Error::Format("variant name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let variant = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let epoch = u64s(&mut r)? as usize;
        let step_count = u64s(&mut r)?;
        let beta1 = f64::from_bits(u64s(&mut r)?);
        let beta2 = f64::from_bits(u64s(&mut r)?);
        let eps = f64::from_bits(u64s(&mut r)?);
        let rows = num_users + num_items;
        let mut matrix = |r: &mut R| -> Result<Matrix> {
            let data = (0..rows * dim)
                .map(|_| u64s(r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            Matrix::from_vec(rows, dim, data)
        };
        let embeddings = matrix(&mut r)?;
        let first_moment = matrix(&mut r)?;
        let second_moment = matrix(&mut r)?;
        Ok(Self {
            num_users,
            num_items,
            dim,
            variant,
            epoch,
            embeddings,
            optimizer: AdamState {
                first_moment,
                second_moment,
                step_count,
                beta1,
                beta2,
                eps,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(bytes.as_slice())
    }
}
