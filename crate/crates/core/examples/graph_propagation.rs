// Build the symmetric-normalized bipartite adjacency and propagate an
// embedding table through it, reading out several layer windows.

use hfgcl::training::init_embeddings;
use hfgcl::{aggregate, propagate, AggregationWindow, NormalizedAdjacency};

pub fn run_example() -> hfgcl::Result<()> {
    // Two users, three items: u0-i0, u0-i1, u1-i1, u1-i2.
    let adj = NormalizedAdjacency::from_edges(2, 3, &[(0, 0), (0, 1), (1, 1), (1, 2)])?;
    println!("{} nodes, {} stored entries", adj.num_nodes(), adj.nnz());
    for r in 0..adj.num_nodes() {
        let row: Vec<String> = adj.row(r).map(|(c, v)| format!("{c}:{v:.4}")).collect();
        println!("row {r}: {}", row.join(" "));
    }

    let e0 = init_embeddings(2, 3, 4, 1);
    let layers = 3;
    let state = propagate(&adj, &e0, layers)?;
    println!("spmm calls for {layers} layers: {}", adj.spmm_calls());
    for w in [
        AggregationWindow::initial(),
        AggregationWindow::full(layers),
        AggregationWindow::high_order(2, layers)?,
    ] {
        let out = aggregate(&state, w)?;
        println!("window {w}: user 0 = {:?}", out.row(0).iter().map(|x| format!("{x:+.4}")).collect::<Vec<_>>());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("graph example");
}
