// Ingest the bundled rating log, keep ratings above 3, split 80/10/10 and
// round-trip the dataset artifact.

use std::path::Path;

use hfgcl::dataset::{ingest, InputFormat};
use hfgcl::{InteractionDataset, SplitRatios};

pub fn run_example() -> hfgcl::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample.csv");
    let full = ingest(&path, InputFormat::Csv, Some(3.0))?;
    let ds = full.split(SplitRatios::default(), 42)?;
    let stats = ds.stats();
    println!(
        "{} users, {} items, {} interactions, density {:.4}",
        stats.users, stats.items, stats.interactions, stats.density
    );
    println!("train/valid/test = {}/{}/{}", stats.train, stats.valid, stats.test);

    let bytes = ds.to_bytes();
    let back = InteractionDataset::read_from(bytes.as_slice())?;
    assert_eq!(back.fingerprint(), ds.fingerprint());
    println!("fingerprint {}", &ds.fingerprint()[..16]);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("ingest example");
}
