// Train for a few epochs, save a checkpoint, resume from it and confirm the
// resumed run continues exactly where an uninterrupted run would be.

use hfgcl::synth::{generate, SynthConfig};
use hfgcl::{Checkpoint, InteractionDataset, ModelConfig, SplitRatios, Trainer, VariantName};

pub fn run_example() -> hfgcl::Result<()> {
    let raw = generate(&SynthConfig::tiny(2))?;
    let ds = InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), 42)?;
    let mut cfg = ModelConfig::for_variant(VariantName::Hfgcl);
    cfg.model.dim = 8;
    cfg.train.batch_size = 64;

    let mut straight = Trainer::new(cfg.clone(), &ds)?;
    for _ in 0..3 {
        straight.run_epoch()?;
    }

    let mut first = Trainer::new(cfg.clone(), &ds)?;
    for _ in 0..2 {
        first.run_epoch()?;
    }
    let bytes = first.checkpoint().to_bytes();
    let ckpt = Checkpoint::read_from(bytes.as_slice())?;
    let mut resumed = Trainer::resume(cfg, &ds, ckpt)?;
    resumed.run_epoch()?;

    assert_eq!(resumed.embeddings(), straight.embeddings());
    println!("checkpoint of {} bytes; resumed epoch {} matches", bytes.len(), resumed.epoch());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("checkpoint example");
}
