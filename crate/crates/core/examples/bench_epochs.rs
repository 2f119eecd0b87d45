// Time one training epoch of LightGCN, the noise-view baseline and HFGCL,
// and report spmm calls per forward pass.

use hfgcl::bench::{bench_epoch, expected_spmm_per_forward};
use hfgcl::synth::{generate, SynthConfig};
use hfgcl::{InteractionDataset, ModelConfig, SplitRatios, VariantName};

pub fn run_example() -> hfgcl::Result<()> {
    let raw = generate(&SynthConfig::tiny(5))?;
    let ds = InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), 42)?;
    println!("variant      epoch_s   spmm/forward");
    for variant in [VariantName::Lightgcn, VariantName::SimgclLite, VariantName::Hfgcl] {
        let mut cfg = ModelConfig::for_variant(variant);
        cfg.model.dim = 16;
        cfg.train.batch_size = 32;
        let rec = bench_epoch(&cfg, &ds)?;
        assert_eq!(rec.spmm_per_forward(), expected_spmm_per_forward(&cfg)? as f64);
        println!("{:<12} {:.5}   {}", variant, rec.epoch_time_s, rec.spmm_per_forward());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("bench example");
}
