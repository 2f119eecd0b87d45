//! Synthetic rating logs with MovieLens-like structure.
//!
//! Users and items carry latent taste vectors; each user rates a
//! heavy-tailed number of items, chosen with probability proportional to
//! item popularity times taste affinity. Ratings on a 1..=5 scale follow the
//! affinity plus noise, so a `rating > 3` threshold keeps the liked part of
//! the log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionDataset, RawInteraction, SplitRatios};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_factors: usize,
    /// Median number of ratings per user before the floor is applied.
    pub median_degree: f64,
    /// Log-normal spread of the user degree distribution.
    pub degree_sigma: f64,
    /// Every user rates at least this many items.
    pub min_degree: usize,
    /// Zipf exponent of item popularity.
    pub popularity_exponent: f64,
    /// Weight of taste affinity when choosing which items to rate.
    pub selection_sharpness: f64,
    /// Standard deviation of rating noise, in rating units.
    pub rating_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_users: 600,
            num_items: 1000,
            num_factors: 6,
            median_degree: 45.0,
            degree_sigma: 0.8,
            min_degree: 20,
            popularity_exponent: 0.8,
            selection_sharpness: 2.5,
            rating_noise: 0.6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// The bundled smoke-test scale (about 50 users).
    pub fn tiny(seed: u64) -> Self {
        Self {
            num_users: 50,
            num_items: 80,
            num_factors: 3,
            median_degree: 18.0,
            degree_sigma: 0.5,
            min_degree: 12,
            seed,
            ..Self::default()
        }
    }

    /// The desk-scale benchmark log: a sparse, long-tailed catalogue of about
    /// 25k liked interactions after filtering.
    pub fn desk() -> Self {
        Self {
            num_users: 2000,
            num_items: 4000,
            median_degree: 14.0,
            degree_sigma: 0.9,
            min_degree: 6,
            popularity_exponent: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_users == 0 || self.num_items == 0 {
            problems.push("num_users and num_items must be positive".to_string());
        }
        if self.num_factors == 0 {
            problems.push("num_factors must be positive".to_string());
        }
        if self.min_degree > self.num_items {
            problems.push(format!("min_degree {} exceeds num_items {}", self.min_degree, self.num_items));
        }
        if !(self.median_degree > 0.0 && self.degree_sigma >= 0.0 && self.rating_noise >= 0.0) {
            problems.push("median_degree must be positive, spreads non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn unit_vector<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v: Vec<f64> = (0..k).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Generates a rating log. Tokens are `u<index>` and `i<index>`; timestamps
/// increase with emission order.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<RawInteraction>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_factors;
    let users: Vec<Vec<f64>> = (0..cfg.num_users).map(|_| unit_vector(&mut rng, k)).collect();
    let items: Vec<Vec<f64>> = (0..cfg.num_items).map(|_| unit_vector(&mut rng, k)).collect();

    // Popularity ranks are a random permutation so item index carries no signal.
    let mut ranks: Vec<usize> = (0..cfg.num_items).collect();
    rand::seq::SliceRandom::shuffle(ranks.as_mut_slice(), &mut rng);
    let log_pop: Vec<f64> = ranks
        .iter()
        .map(|&r| -cfg.popularity_exponent * ((r + 1) as f64).ln())
        .collect();

    let degree_dist = LogNormal::new(cfg.median_degree.ln(), cfg.degree_sigma)
        .map_err(|e| Error::Config(format!("degree distribution: {e}")))?;
    let noise = Normal::new(0.0, cfg.rating_noise.max(1e-12)).expect("finite noise");

    let mut out = Vec::new();
    let mut clock = 0i64;
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(cfg.num_items);
    for (u, taste) in users.iter().enumerate() {
        let degree = (degree_dist.sample(&mut rng).round() as usize).clamp(cfg.min_degree, cfg.num_items);
        // Gumbel top-k draws `degree` distinct items with weights exp(score).
        keys.clear();
        for (i, item) in items.iter().enumerate() {
            let affinity: f64 = taste.iter().zip(item).map(|(a, b)| a * b).sum();
            let gumbel = -(-rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
            keys.push((log_pop[i] + cfg.selection_sharpness * affinity + gumbel, i));
        }
        keys.select_nth_unstable_by(degree - 1, |a, b| b.0.total_cmp(&a.0));
        let mut chosen: Vec<usize> = keys[..degree].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        for i in chosen {
            let affinity: f64 = taste.iter().zip(&items[i]).map(|(a, b)| a * b).sum();
            let raw = 3.4 + 1.6 * affinity + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0);
            clock += 1;
            out.push(RawInteraction {
                timestamp: Some(clock),
                ..RawInteraction::rated(format!("u{u}"), format!("i{i}"), rating)
            });
        }
    }
    Ok(out)
}

/// Split ratios and seed used for the desk benchmark.
pub const DESK_SPLIT_SEED: u64 = 42;

/// Generates [`SynthConfig::desk`], keeps ratings above 3 and splits it
/// 80/10/10.
pub fn desk_dataset() -> Result<InteractionDataset> {
    let raw = generate(&SynthConfig::desk())?;
    InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), DESK_SPLIT_SEED)
}
