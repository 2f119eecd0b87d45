// Sweep the contrastive temperature over two seeds with two worker threads
// and print the resulting CSV.

use hfgcl::cli::{run_sweep, write_sweep_csv, SweepParam};
use hfgcl::synth::{generate, SynthConfig};
use hfgcl::{InteractionDataset, ModelConfig, SplitRatios, VariantName};

pub fn run_example() -> hfgcl::Result<()> {
    let raw = generate(&SynthConfig::tiny(6))?;
    let ds = InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), 42)?;
    let mut base = ModelConfig::for_variant(VariantName::Hfgcl);
    base.model.dim = 8;
    base.train.batch_size = 64;
    base.train.max_epochs = 2;
    let rows = run_sweep(&base, &ds, SweepParam::Tau, &[0.2, 0.3], &[1, 2], &[10], 2)?;
    let mut out = Vec::new();
    write_sweep_csv(&mut out, &rows)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("sweep example");
}
