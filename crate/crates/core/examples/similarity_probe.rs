// Mean cosine similarity of observed user-item pairs under the initial,
// full and high-order readouts, before and after training.

use hfgcl::evaluation::similarity_probe;
use hfgcl::synth::{generate, SynthConfig};
use hfgcl::training::init_embeddings;
use hfgcl::{train, AggregationWindow, InteractionDataset, ModelConfig, NormalizedAdjacency, SplitRatios, VariantName};

pub fn run_example() -> hfgcl::Result<()> {
    let raw = generate(&SynthConfig::tiny(4))?;
    let ds = InteractionDataset::from_interactions(&raw, Some(3.0))?.split(SplitRatios::default(), 42)?;
    let adj = NormalizedAdjacency::build(&ds)?;
    let mut cfg = ModelConfig::for_variant(VariantName::Hfgcl);
    cfg.model.dim = 16;
    cfg.train.batch_size = 64;
    cfg.train.lr = 0.01;
    cfg.train.max_epochs = 5;
    let layers = cfg.model.layers;
    let windows = [
        AggregationWindow::initial(),
        AggregationWindow::full(layers),
        AggregationWindow::high_order(cfg.model.high_order_start, layers)?,
    ];

    let untrained = init_embeddings(ds.num_users(), ds.num_items(), cfg.model.dim, cfg.seed);
    let trained = train(&cfg, &ds)?.embeddings;
    for (label, e0) in [("untrained", &untrained), ("trained", &trained)] {
        let probes = similarity_probe(e0, &adj, &ds, &windows, 500, 0)?;
        let cells: Vec<String> = probes.iter().map(|p| format!("{}={:.3}", p.window, p.mean_cosine)).collect();
        println!("{label:<9} {}", cells.join("  "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("probe example");
}
