// Train HFGCL and LightGCN on a small synthetic log and compare test
// Recall@20 and NDCG@20.

use hfgcl::evaluation::{evaluate_model, ReportOptions};
use hfgcl::synth::{generate, SynthConfig};
use hfgcl::{train, InteractionDataset, Metric, ModelConfig, SplitRatios, VariantName};

pub fn run_example() -> hfgcl::Result<()> {
    let raw = generate(&SynthConfig::tiny(11))?;
    let ds = InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), 42)?;

    for variant in [VariantName::Lightgcn, VariantName::Hfgcl] {
        let mut cfg = ModelConfig::for_variant(variant);
        cfg.seed = 1;
        cfg.model.dim = 16;
        cfg.train.batch_size = 64;
        cfg.train.lr = 0.01;
        cfg.train.max_epochs = 8;
        let outcome = train(&cfg, &ds)?;
        let obj = cfg.objective_config()?;
        let adj = hfgcl::NormalizedAdjacency::build(&ds)?;
        let report = evaluate_model(variant.as_str(), cfg.seed, &outcome.embeddings, &adj, &ds, obj.rec_window, &ReportOptions::default())?;
        println!(
            "{:<9} epochs={} best={} recall@20={:.4} ndcg@20={:.4}",
            variant,
            outcome.epochs_run,
            outcome.best_epoch,
            report.get(Metric::Recall, 20).unwrap_or(f64::NAN),
            report.get(Metric::Ndcg, 20).unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("training example");
}
