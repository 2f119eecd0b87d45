//! Per-epoch timing and total training cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, VariantName};
use crate::dataset::InteractionDataset;
use crate::error::Result;
use crate::training::Trainer;

/// Benchmarks run on the calling thread only.
pub const BENCH_WORKERS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub variant: VariantName,
    pub seed: u64,
    pub epoch_time_s: f64,
    /// Time spent inside loss and gradient evaluation.
    pub loss_eval_s: f64,
    pub steps: usize,
    /// spmm calls issued by forward passes over the epoch.
    pub forward_spmm: u64,
    /// spmm calls issued while back-propagating to `E0`.
    pub adjoint_spmm: u64,
    pub epochs_to_converge: usize,
}

impl TimingRecord {
    pub fn spmm_per_forward(&self) -> f64 {
        self.forward_spmm as f64 / self.steps.max(1) as f64
    }
}

/// spmm calls a single forward pass should issue for `cfg`.
pub fn expected_spmm_per_forward(cfg: &ModelConfig) -> Result<u64> {
    let obj = cfg.objective_config()?;
    let depth = obj.max_layer() as u64;
    Ok(match obj.objective {
        crate::objectives::ContrastiveObjective::NoisyViews => depth + 2 * obj.window.hi as u64,
        _ => depth,
    })
}

/// Times one full training epoch; adjacency construction and initialization
/// happen before the clock starts.
pub fn bench_epoch(cfg: &ModelConfig, ds: &InteractionDataset) -> Result<TimingRecord> {
    let mut trainer = Trainer::new(cfg.clone(), ds)?;
    let stats = trainer.run_epoch()?;
    Ok(TimingRecord {
        variant: cfg.variant,
        seed: cfg.seed,
        epoch_time_s: stats.train_time_s,
        loss_eval_s: stats.loss_time_s,
        steps: stats.steps,
        forward_spmm: stats.forward_spmm,
        adjoint_spmm: stats.adjoint_spmm,
        epochs_to_converge: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: VariantName,
    pub dataset: String,
    pub seed: u64,
    /// Mean training time per epoch, validation excluded.
    pub epoch_time_s: f64,
    /// `epoch_time_s` over the LightGCN row with the same seed, if one exists.
    pub ratio_vs_lightgcn: Option<f64>,
    /// Forward spmm calls per step.
    pub spmm_calls: u64,
    /// Sum of per-epoch training times.
    pub total_time_s: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workers: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Wraps rows, filling in ratios against the LightGCN row of each seed.
    pub fn from_rows(mut rows: Vec<BenchRow>) -> Self {
        fill_ratios(&mut rows);
        Self {
            workers: BENCH_WORKERS,
            rows,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# workers={}", self.workers)?;
        writeln!(w, "variant,dataset,seed,epoch_time_s,ratio_vs_lightgcn,spmm_calls,total_time_s")?;
        for r in &self.rows {
            let ratio = r.ratio_vs_lightgcn.map(|x| format!("{x:.4}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{:.6},{},{},{:.6}",
                r.variant, r.dataset, r.seed, r.epoch_time_s, ratio, r.spmm_calls, r.total_time_s
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Trains every config under every seed to early stopping and records
/// per-epoch and total training time.
pub fn bench_total(
    cfgs: &[ModelConfig],
    ds: &InteractionDataset,
    dataset_name: &str,
    seeds: &[u64],
) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(cfgs.len() * seeds.len());
    for cfg in cfgs {
        for &seed in seeds {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let mut trainer = Trainer::new(cfg.clone(), ds)?;
            let outcome = trainer.fit_with(|_| {})?;
            let total: f64 = outcome.log.iter().map(|r| r.train_time_s).sum();
            let steps: usize = outcome.log.iter().map(|r| r.steps).sum();
            let forward: u64 = outcome.log.iter().map(|r| r.forward_spmm).sum();
            let epochs = outcome.log.len();
            rows.push(BenchRow {
                variant: cfg.variant,
                dataset: dataset_name.to_string(),
                seed,
                epoch_time_s: total / epochs.max(1) as f64,
                ratio_vs_lightgcn: None,
                spmm_calls: forward / steps.max(1) as u64,
                total_time_s: total,
                epochs,
                best_epoch: outcome.best_epoch,
                best_valid: outcome.best_valid,
            });
        }
    }
    Ok(BenchReport::from_rows(rows))
}

fn fill_ratios(rows: &mut [BenchRow]) {
    let base: Vec<(u64, f64)> = rows
        .iter()
        .filter(|r| r.variant == VariantName::Lightgcn)
        .map(|r| (r.seed, r.epoch_time_s))
        .collect();
    for r in rows.iter_mut() {
        r.ratio_vs_lightgcn = base
            .iter()
            .find(|(s, _)| *s == r.seed)
            .filter(|(_, t)| *t > 0.0)
            .map(|(_, t)| r.epoch_time_s / t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: VariantName, seed: u64, t: f64) -> BenchRow {
        BenchRow {
            variant,
            dataset: "d".into(),
            seed,
            epoch_time_s: t,
            ratio_vs_lightgcn: None,
            spmm_calls: 3,
            total_time_s: 2.0 * t,
            epochs: 2,
            best_epoch: 1,
            best_valid: None,
        }
    }

    #[test]
    fn ratios_match_seed() {
        let mut rows = vec![
            row(VariantName::Lightgcn, 1, 2.0),
            row(VariantName::Hfgcl, 1, 3.0),
            row(VariantName::Hfgcl, 2, 3.0),
        ];
        fill_ratios(&mut rows);
        assert_eq!(rows[0].ratio_vs_lightgcn, Some(1.0));
        assert_eq!(rows[1].ratio_vs_lightgcn, Some(1.5));
        assert_eq!(rows[2].ratio_vs_lightgcn, None);
    }

    #[test]
    fn csv_has_worker_header() {
        let report = BenchReport {
            workers: 1,
            rows: vec![row(VariantName::Hfgcl, 7, 0.5)],
        };
        let csv = report.to_csv_string();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "# workers=1");
        assert_eq!(lines[1], "variant,dataset,seed,epoch_time_s,ratio_vs_lightgcn,spmm_calls,total_time_s");
        assert_eq!(lines[2], "hfgcl,d,7,0.500000,,3,1.000000");
    }
}
