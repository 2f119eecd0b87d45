//! Full-ranking evaluation, sparsity groups and the positive-pair similarity probe.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Edge, InteractionDataset};
use crate::encoder::{aggregate, propagate, AggregationWindow};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn edges(self, ds: &InteractionDataset) -> &[Edge] {
        match self {
            Split::Valid => ds.valid_edges(),
            Split::Test => ds.test_edges(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Ndcg => "ndcg",
        }
    }
}

/// Top-`k_max` items per user with train items removed.
///
/// Users that were not ranked have an empty list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub ks: Vec<usize>,
    pub k_max: usize,
    pub lists: Vec<Vec<u32>>,
}

/// Propagates `e0`, reads out `window` and ranks every user.
pub fn rank_all(
    e0: &Matrix,
    adj: &NormalizedAdjacency,
    window: AggregationWindow,
    ds: &InteractionDataset,
    ks: &[usize],
) -> Result<RankingResult> {
    let state = propagate(adj, e0, window.hi)?;
    let readout = aggregate(&state, window)?;
    let users: Vec<u32> = (0..ds.num_users() as u32).collect();
    rank_users(&readout, ds, &users, ks)
}

/// Ranks all items for `users` by dot product on a `(M + N) x d` readout.
///
/// Ties go to the lower item index.
pub fn rank_users(readout: &Matrix, ds: &InteractionDataset, users: &[u32], ks: &[usize]) -> Result<RankingResult> {
    let n_items = ds.num_items();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max == 0 || k_max > n_items {
        return Err(Error::Config(format!("cutoffs {ks:?} must lie in [1, {n_items}]")));
    }
    if readout.rows() != ds.num_nodes() {
        return Err(Error::dimension("ranking readout rows", ds.num_nodes(), readout.rows()));
    }
    let m = ds.num_users();
    let mut lists = vec![Vec::new(); ds.num_users()];
    let mut scores = vec![0.0; n_items];
    let mut candidates: Vec<u32> = Vec::with_capacity(n_items);
    for &u in users {
        let eu = readout.row(u as usize);
        for (i, s) in scores.iter_mut().enumerate() {
            *s = dot(eu, readout.row(m + i));
        }
        candidates.clear();
        let pos = ds.user_positives(u);
        let mut p = 0;
        for i in 0..n_items as u32 {
            if p < pos.len() && pos[p] == i {
                p += 1;
                continue;
            }
            candidates.push(i);
        }
        let order = |a: &u32, b: &u32| {
            scores[*b as usize]
                .total_cmp(&scores[*a as usize])
                .then(a.cmp(b))
        };
        let k = k_max.min(candidates.len());
        if k > 0 && k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, order);
        }
        candidates.truncate(k);
        candidates.sort_unstable_by(order);
        lists[u as usize] = candidates.clone();
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(RankingResult { ks, k_max, lists })
}

fn targets_by_user(edges: &[Edge]) -> BTreeMap<u32, Vec<u32>> {
    let mut t: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(u, i) in edges {
        t.entry(u).or_default().push(i);
    }
    for v in t.values_mut() {
        v.sort_unstable();
    }
    t
}

fn check_k(result: &RankingResult, k: usize) -> Result<()> {
    if k == 0 || k > result.k_max {
        return Err(Error::Config(format!("cutoff {k} not evaluated (max {})", result.k_max)));
    }
    Ok(())
}

fn user_recall(list: &[u32], targets: &[u32], k: usize) -> f64 {
    let hits = list.iter().take(k).filter(|i| targets.binary_search(i).is_ok()).count();
    hits as f64 / targets.len() as f64
}

fn user_ndcg(list: &[u32], targets: &[u32], k: usize) -> f64 {
    let gain = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| targets.binary_search(i).is_ok())
        .map(|(r, _)| gain(r + 1))
        .sum();
    let idcg: f64 = (1..=targets.len().min(k)).map(gain).sum();
    dcg / idcg
}

fn per_user(result: &RankingResult, edges: &[Edge], k: usize, metric: Metric) -> Result<Vec<(u32, f64)>> {
    check_k(result, k)?;
    Ok(targets_by_user(edges)
        .into_iter()
        .map(|(u, t)| {
            let list = &result.lists[u as usize];
            let v = match metric {
                Metric::Recall => user_recall(list, &t, k),
                Metric::Ndcg => user_ndcg(list, &t, k),
            };
            (u, v)
        })
        .collect())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean over users with held-out items of `hits@K / |held-out items|`.
pub fn recall_at_k(result: &RankingResult, edges: &[Edge], k: usize) -> Result<f64> {
    Ok(mean(per_user(result, edges, k, Metric::Recall)?.into_iter().map(|(_, v)| v)))
}

/// Mean binary-relevance NDCG@K, ideal DCG over `min(|held-out|, K)` items.
pub fn ndcg_at_k(result: &RankingResult, edges: &[Edge], k: usize) -> Result<f64> {
    Ok(mean(per_user(result, edges, k, Metric::Ndcg)?.into_iter().map(|(_, v)| v)))
}

pub fn metric_at_k(result: &RankingResult, edges: &[Edge], metric: Metric, k: usize) -> Result<f64> {
    match metric {
        Metric::Recall => recall_at_k(result, edges, k),
        Metric::Ndcg => ndcg_at_k(result, edges, k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub group: String,
    /// Evaluated users in the group.
    pub users: usize,
    pub min_degree: u32,
    pub max_degree: u32,
    pub value: f64,
}

/// Splits evaluated users into sparse/common/popular terciles of train degree
/// (ties by user index) and computes `metric@k` inside each group.
pub fn sparsity_groups(
    ds: &InteractionDataset,
    result: &RankingResult,
    edges: &[Edge],
    metric: Metric,
    k: usize,
) -> Result<Vec<GroupMetric>> {
    let mut scores = per_user(result, edges, k, metric)?;
    if scores.len() < 3 {
        return Err(Error::Config(format!("sparsity groups need >= 3 evaluated users, got {}", scores.len())));
    }
    let deg = ds.user_degree();
    scores.sort_by_key(|&(u, _)| (deg[u as usize], u));
    let n = scores.len();
    let base = n / 3;
    let extra = n % 3;
    let mut out = Vec::with_capacity(3);
    let mut start = 0;
    for (g, name) in ["sparse", "common", "popular"].into_iter().enumerate() {
        let size = base + usize::from(g < extra);
        let chunk = &scores[start..start + size];
        out.push(GroupMetric {
            group: name.to_string(),
            users: size,
            min_degree: deg[chunk[0].0 as usize],
            max_degree: deg[chunk[size - 1].0 as usize],
            value: mean(chunk.iter().map(|&(_, v)| v)),
        });
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProbe {
    pub window: AggregationWindow,
    pub mean_cosine: f64,
    pub num_pairs: usize,
    /// Sampled pairs skipped because one side had zero norm.
    pub excluded: usize,
}

/// Mean cosine similarity between the readouts of sampled train pairs, for
/// each window. The same pairs (uniform with replacement) are used for every
/// window.
pub fn similarity_probe(
    e0: &Matrix,
    adj: &NormalizedAdjacency,
    ds: &InteractionDataset,
    windows: &[AggregationWindow],
    sample_size: usize,
    seed: u64,
) -> Result<Vec<SimilarityProbe>> {
    let edges = ds.train_edges();
    if edges.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if sample_size == 0 {
        return Err(Error::Config("probe sample size must be >= 1".into()));
    }
    let depth = windows.iter().map(|w| w.hi).max().unwrap_or(0);
    let state = propagate(adj, e0, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<Edge> = (0..sample_size).map(|_| edges[rng.random_range(0..edges.len())]).collect();
    let m = ds.num_users();
    windows
        .iter()
        .map(|&w| {
            let readout = aggregate(&state, w)?;
            let (mut sum, mut n, mut excluded) = (0.0, 0usize, 0usize);
            for &(u, i) in &sample {
                let (a, b) = (readout.row(u as usize), readout.row(m + i as usize));
                let denom = norm(a) * norm(b);
                if denom == 0.0 {
                    excluded += 1;
                    continue;
                }
                sum += (dot(a, b) / denom).clamp(-1.0, 1.0);
                n += 1;
            }
            if n == 0 {
                return Err(Error::Numerical {
                    context: format!("similarity probe window {w}: every sampled pair has a zero-norm side"),
                    index: 0,
                });
            }
            Ok(SimilarityProbe {
                window: w,
                mean_cosine: sum / n as f64,
                num_pairs: n,
                excluded,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
}

/// Recall and NDCG at every cutoff in `ks` for one split.
pub fn evaluate_readout(
    readout: &Matrix,
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
) -> Result<(RankingResult, Vec<MetricValue>)> {
    let edges = split.edges(ds);
    let users: Vec<u32> = targets_by_user(edges).into_keys().collect();
    let result = rank_users(readout, ds, &users, ks)?;
    let mut out = Vec::new();
    for &k in &result.ks {
        for metric in [Metric::Recall, Metric::Ndcg] {
            out.push(MetricValue {
                metric,
                k,
                value: metric_at_k(&result, edges, metric, k)?,
            });
        }
    }
    Ok((result, out))
}

/// What [`evaluate_model`] measures besides plain Recall/NDCG.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub split: Split,
    pub ks: Vec<usize>,
    /// Metric and cutoff of the sparsity-group breakdown; `None` skips it.
    pub groups: Option<(Metric, usize)>,
    /// Windows of the similarity probe; empty skips it.
    pub probe_windows: Vec<AggregationWindow>,
    pub probe_sample: usize,
    pub probe_seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            ks: vec![10, 20],
            groups: Some((Metric::Recall, 20)),
            probe_windows: Vec::new(),
            probe_sample: 2000,
            probe_seed: 0,
        }
    }
}

/// Ranks with the `rec_window` readout of `e0` and gathers a full report.
pub fn evaluate_model(
    variant: &str,
    seed: u64,
    e0: &Matrix,
    adj: &NormalizedAdjacency,
    ds: &InteractionDataset,
    rec_window: AggregationWindow,
    opts: &ReportOptions,
) -> Result<MetricsReport> {
    let readout = aggregate(&propagate(adj, e0, rec_window.hi)?, rec_window)?;
    let ks: Vec<usize> = opts.ks.iter().map(|&k| k.min(ds.num_items())).collect();
    let (result, metrics) = evaluate_readout(&readout, ds, opts.split, &ks)?;
    let sparsity = match opts.groups {
        Some((metric, k)) if result.ks.contains(&k) => {
            sparsity_groups(ds, &result, opts.split.edges(ds), metric, k)?
        }
        _ => Vec::new(),
    };
    let probes = if opts.probe_windows.is_empty() {
        Vec::new()
    } else {
        similarity_probe(e0, adj, ds, &opts.probe_windows, opts.probe_sample, opts.probe_seed)?
    };
    Ok(MetricsReport {
        variant: variant.to_string(),
        seed,
        split: opts.split,
        metrics,
        sparsity,
        probes,
    })
}

/// Everything measured for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub seed: u64,
    pub split: Split,
    pub metrics: Vec<MetricValue>,
    #[serde(default)]
    pub sparsity: Vec<GroupMetric>,
    #[serde(default)]
    pub probes: Vec<SimilarityProbe>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric && m.k == k).map(|m| m.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat rows `(variant, seed, metric, k, value)`.
    pub fn csv_rows(&self) -> Vec<(String, u64, String, usize, f64)> {
        let mut rows = Vec::new();
        for m in &self.metrics {
            rows.push((self.variant.clone(), self.seed, m.metric.as_str().to_string(), m.k, m.value));
        }
        for g in &self.sparsity {
            rows.push((self.variant.clone(), self.seed, format!("group_{}", g.group), 0, g.value));
        }
        for p in &self.probes {
            rows.push((
                self.variant.clone(),
                self.seed,
                format!("cosine_{}_{}", p.window.lo, p.window.hi),
                0,
                p.mean_cosine,
            ));
        }
        rows
    }
}

/// Writes one CSV row per `(variant, seed, metric, k)` across reports.
pub fn write_metrics_csv<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["variant", "seed", "metric", "k", "value"])?;
    for r in reports {
        for (variant, seed, metric, k, value) in r.csv_rows() {
            out.write_record([variant, seed.to_string(), metric, k.to_string(), format!("{value:.10}")])?;
        }
    }
    out.flush()?;
    Ok(())
}
