#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use hfgcl::objectives::{fused_embedding, fusion_loss, infonce, normalize_rows};
use hfgcl::{aggregate, propagate, AggregationWindow, Checkpoint, InteractionDataset, Matrix, NormalizedAdjacency, SplitRatios, VariantName};
use proptest::prelude::*;
use std::collections::HashSet;

fn graph_strategy() -> impl Strategy<Value = (usize, usize, Vec<(u32, u32)>, u64)> {
    (1usize..8, 1usize..8, any::<u64>()).prop_map(|(m, n, seed)| {
        let mut r = rng(seed);
        let edges = random_edges(&mut r, m, n, 0.3);
        (m, n, edges, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_is_symmetric_and_degree_normalized((m, n, edges, _) in graph_strategy()) {
        let adj = NormalizedAdjacency::from_edges(m, n, &edges).unwrap();
        prop_assert_eq!(adj.nnz(), 2 * edges.len());
        let deg: Vec<usize> = (0..m + n).map(|r| adj.row(r).count()).collect();
        for r in 0..m + n {
            for (c, v) in adj.row(r) {
                prop_assert_eq!(adj.get(c, r), v);
                prop_assert!((v - 1.0 / ((deg[r] * deg[c]) as f64).sqrt()).abs() < 1e-15);
                // Bipartite: users only link to items.
                prop_assert!((r < m) != (c < m));
            }
        }
    }

    #[test]
    fn aggregation_is_linear((m, n, edges, seed) in graph_strategy(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0, layers in 0usize..4) {
        let adj = NormalizedAdjacency::from_edges(m, n, &edges).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let x = to_matrix(&random_rows(&mut r, m + n, 3, 1.0));
        let y = to_matrix(&random_rows(&mut r, m + n, 3, 1.0));
        let mut combo = x.scaled(alpha);
        combo.add_scaled(beta, &y);
        for lo in 0..=layers {
            let w = AggregationWindow::new(lo, layers).unwrap();
            let lhs = aggregate(&propagate(&adj, &combo, layers).unwrap(), w).unwrap();
            let mut rhs = aggregate(&propagate(&adj, &x, layers).unwrap(), w).unwrap().scaled(alpha);
            rhs.add_scaled(beta, &aggregate(&propagate(&adj, &y, layers).unwrap(), w).unwrap());
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn propagation_issues_one_spmm_per_layer((m, n, edges, _) in graph_strategy(), layers in 0usize..5) {
        let adj = NormalizedAdjacency::from_edges(m, n, &edges).unwrap();
        let x = Matrix::zeros(m + n, 2);
        let before = adj.spmm_calls();
        propagate(&adj, &x, layers).unwrap();
        prop_assert_eq!(adj.spmm_calls() - before, layers as u64);
    }

    #[test]
    fn fused_embedding_is_affine(alpha in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (to_matrix(&random_rows(&mut r, 4, 3, 1.0)), to_matrix(&random_rows(&mut r, 4, 3, 1.0)));
        let f = fused_embedding(&a, &b, alpha).unwrap();
        let g = fused_embedding(&b, &a, 1.0 - alpha).unwrap();
        prop_assert!(f.max_abs_diff(&g) < 1e-14);
    }

    #[test]
    fn fusion_loss_is_permutation_invariant(seed in any::<u64>(), b in 1usize..8) {
        let mut r = rng(seed);
        let eu = random_rows(&mut r, b, 3, 1.0);
        let ei = random_rows(&mut r, b, 3, 1.0);
        let v = fusion_loss(&to_matrix(&eu), &to_matrix(&ei), 0.3, 0.5).unwrap().value;
        let rev = |x: &Rows| x.iter().rev().cloned().collect::<Rows>();
        let w = fusion_loss(&to_matrix(&rev(&eu)), &to_matrix(&rev(&ei)), 0.3, 0.5).unwrap().value;
        prop_assert!((v - w).abs() < 1e-10 * (1.0 + v.abs()));
    }

    #[test]
    fn infonce_is_shift_stable(seed in any::<u64>(), shift in 0.0f64..40.0) {
        // Scaling every row up drives logits far past exp's range; the value
        // must stay finite and non-negative.
        let mut r = rng(seed);
        let a = random_rows(&mut r, 4, 3, 1.0);
        let big: Rows = a.iter().map(|row| row.iter().map(|x| x * (1.0 + shift)).collect()).collect();
        let out = infonce(&to_matrix(&big), &to_matrix(&big), &to_matrix(&big), 0.05).unwrap();
        prop_assert!(out.value.is_finite());
        prop_assert!(out.value >= -1e-9);
    }

    #[test]
    fn normalized_rows_have_unit_norm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = to_matrix(&random_rows(&mut r, 5, 4, 3.0));
        let (n, norms) = normalize_rows(&x).unwrap();
        for k in 0..5 {
            prop_assert!((hfgcl::matrix::norm(n.row(k)) - 1.0).abs() < 1e-12);
            prop_assert!(norms[k] > 0.0);
        }
    }

    #[test]
    fn split_partitions_every_edge(seed in any::<u64>(), split_seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, n) = (6, 30);
        let mut edges = Vec::new();
        for u in 0..m as u32 {
            for i in 0..n as u32 {
                if u == 0 || (i as usize).is_multiple_of(u as usize + 1) || rand::Rng::random::<f64>(&mut r) < 0.3 {
                    edges.push((u, i));
                }
            }
        }
        let full = dataset_from_edges(m, n, edges.clone());
        let ds = full.split(SplitRatios::default(), split_seed).unwrap();
        let mut all: Vec<_> = ds.train_edges().iter().chain(ds.valid_edges()).chain(ds.test_edges()).copied().collect();
        all.sort_unstable();
        edges.sort_unstable();
        prop_assert_eq!(&all, &edges);
        let train_users: HashSet<u32> = ds.train_edges().iter().map(|e| e.0).collect();
        prop_assert_eq!(train_users.len(), m);
        prop_assert_eq!(ds.split(SplitRatios::default(), split_seed).unwrap(), ds);
    }

    #[test]
    fn dataset_and_checkpoint_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let edges = random_edges(&mut r, 5, 7, 0.3);
        let ds = dataset_from_edges(5, 7, edges);
        let back = InteractionDataset::read_from(ds.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(&back, &ds);
        let e = to_matrix(&random_rows(&mut r, 12, 3, 1.0));
        let ck = Checkpoint::untrained(VariantName::Hfgcl, e, 5);
        let back = Checkpoint::read_from(ck.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
    }
}
