//! Independent reference implementations shared by the oracle and
//! acceptance targets. Everything here is written as plain nested loops over
//! `Vec<Vec<f64>>` and never calls the library's numeric kernels.

#![allow(dead_code, clippy::needless_range_loop)]

use hfgcl::dataset::Edge;
use hfgcl::{InteractionDataset, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, b: usize, d: usize, scale: f64) -> Rows {
    (0..b)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn to_matrix(rows: &Rows) -> Matrix {
    Matrix::from_rows(rows).expect("rectangular rows")
}

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn dot_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `Σ_k -ln σ(u·i - u·j)` evaluated as `ln(1 + e^{-x})`.
pub fn bpr_loop(eu: &Rows, ei: &Rows, ej: &Rows) -> f64 {
    let mut total = 0.0;
    for k in 0..eu.len() {
        let x = dot_loop(&eu[k], &ei[k]) - dot_loop(&eu[k], &ej[k]);
        total += (1.0 + (-x).exp()).ln();
    }
    total
}

/// `Σ_k -ln( exp(a_k·p_k/τ) / Σ_c exp(a_k·c/τ) )`.
pub fn infonce_loop(anchor: &Rows, positive: &Rows, negatives: &Rows, tau: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..anchor.len() {
        let mut denom = 0.0;
        for c in negatives {
            denom += (dot_loop(&anchor[k], c) / tau).exp();
        }
        total += -(dot_loop(&anchor[k], &positive[k]) / tau) + denom.ln();
    }
    total
}

pub fn stack(a: &Rows, b: &Rows) -> Rows {
    a.iter().chain(b.iter()).cloned().collect()
}

/// `C(u, i) + C(i, u)` with the opposite batch as negatives.
pub fn user_item_loop(eu: &Rows, ei: &Rows, tau: f64) -> f64 {
    infonce_loop(eu, ei, ei, tau) + infonce_loop(ei, eu, eu, tau)
}

/// Each row is its own positive against its own batch.
pub fn self_loop(x: &Rows, tau: f64) -> f64 {
    infonce_loop(x, x, x, tau)
}

pub fn self_pair_loop(eu: &Rows, ei: &Rows, tau: f64) -> f64 {
    self_loop(eu, tau) + self_loop(ei, tau)
}

pub fn user_item_self_loop(eu: &Rows, ei: &Rows, tau: f64) -> f64 {
    user_item_loop(eu, ei, tau) + self_pair_loop(eu, ei, tau)
}

/// Both directions scored against the concatenated batch `[U; I]`.
pub fn concat_loop(eu: &Rows, ei: &Rows, tau: f64) -> f64 {
    let all = stack(eu, ei);
    infonce_loop(eu, ei, &all, tau) + infonce_loop(ei, eu, &all, tau)
}

pub fn fused_loop(eu: &[f64], ei: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = vec![0.0; eu.len()];
    for k in 0..eu.len() {
        out[k] = 2.0 * (alpha * eu[k] + (1.0 - alpha) * ei[k]);
    }
    out
}

/// `Σ_k -ln( exp(u_k·i_k/τ) / Σ_{j∈[U;I]} exp(e*_k·e_j/τ) )`.
pub fn fusion_loop(eu: &Rows, ei: &Rows, tau: f64, alpha: f64) -> f64 {
    let all = stack(eu, ei);
    let mut total = 0.0;
    for k in 0..eu.len() {
        let fused = fused_loop(&eu[k], &ei[k], alpha);
        let mut denom = 0.0;
        for e in &all {
            denom += (dot_loop(&fused, e) / tau).exp();
        }
        total += -(dot_loop(&eu[k], &ei[k]) / tau) + denom.ln();
    }
    total
}

/// Dense `D^{-1/2} A D^{-1/2}` of the bipartite graph, users first.
pub fn dense_adjacency(num_users: usize, num_items: usize, edges: &[Edge]) -> Rows {
    let n = num_users + num_items;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        let (r, c) = (u as usize, num_users + i as usize);
        a[r][c] = 1.0;
        a[c][r] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    for r in 0..n {
        for c in 0..n {
            if a[r][c] != 0.0 {
                a[r][c] /= (deg[r] * deg[c]).sqrt();
            }
        }
    }
    a
}

pub fn dense_matmul(a: &Rows, x: &Rows) -> Rows {
    let cols = x.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; cols]; a.len()];
    for r in 0..a.len() {
        for k in 0..x.len() {
            if a[r][k] == 0.0 {
                continue;
            }
            for c in 0..cols {
                out[r][c] += a[r][k] * x[k][c];
            }
        }
    }
    out
}

/// Layers `0..=layers` of dense propagation.
pub fn dense_layers(a: &Rows, e0: &Rows, layers: usize) -> Vec<Rows> {
    let mut out = vec![e0.clone()];
    for _ in 0..layers {
        let next = dense_matmul(a, out.last().expect("layer 0 exists"));
        out.push(next);
    }
    out
}

/// Mean of layers `lo..=hi`.
pub fn dense_window(layers: &[Rows], lo: usize, hi: usize) -> Rows {
    let (n, d) = (layers[0].len(), layers[0][0].len());
    let mut out = vec![vec![0.0; d]; n];
    for l in lo..=hi {
        for r in 0..n {
            for c in 0..d {
                out[r][c] += layers[l][r][c];
            }
        }
    }
    let w = (hi - lo + 1) as f64;
    for row in &mut out {
        for x in row.iter_mut() {
            *x /= w;
        }
    }
    out
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    let mut m: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            m = m.max((x - y).abs());
        }
    }
    m
}

/// Random connected-enough bipartite edge list: every user gets at least one
/// item and every item at least one user.
pub fn random_edges(rng: &mut ChaCha8Rng, num_users: usize, num_items: usize, density: f64) -> Vec<Edge> {
    let mut present = vec![vec![false; num_items]; num_users];
    for u in 0..num_users {
        present[u][rng.random_range(0..num_items)] = true;
    }
    for i in 0..num_items {
        present[rng.random_range(0..num_users)][i] = true;
    }
    for row in present.iter_mut() {
        for cell in row.iter_mut() {
            if rng.random::<f64>() < density {
                *cell = true;
            }
        }
    }
    let mut edges = Vec::new();
    for (u, row) in present.iter().enumerate() {
        for (i, &p) in row.iter().enumerate() {
            if p {
                edges.push((u as u32, i as u32));
            }
        }
    }
    edges
}

/// Dataset with every edge in train.
pub fn dataset_from_edges(num_users: usize, num_items: usize, edges: Vec<Edge>) -> InteractionDataset {
    InteractionDataset::from_parts(
        (0..num_users).map(|u| format!("u{u}")).collect(),
        (0..num_items).map(|i| format!("i{i}")).collect(),
        edges,
        Vec::new(),
        Vec::new(),
    )
    .expect("valid dataset")
}

/// Full sort of the non-train items of `user` by (score desc, index asc).
pub fn ranked_items_loop(readout: &Rows, num_users: usize, num_items: usize, train_items: &[u32], user: usize) -> Vec<u32> {
    let mut items: Vec<(f64, u32)> = Vec::new();
    for i in 0..num_items {
        if train_items.contains(&(i as u32)) {
            continue;
        }
        let s = dot_loop(&readout[user], &readout[num_users + i]);
        items.push((s, i as u32));
    }
    // Insertion sort keeps the oracle free of library comparators.
    for a in 1..items.len() {
        let mut b = a;
        while b > 0 {
            let (prev, cur) = (items[b - 1], items[b]);
            let before = cur.0 > prev.0 || (cur.0 == prev.0 && cur.1 < prev.1);
            if !before {
                break;
            }
            items.swap(b - 1, b);
            b -= 1;
        }
    }
    items.into_iter().map(|(_, i)| i).collect()
}

/// Recall@K and NDCG@K as means over users with held-out items, users in
/// ascending order and ranks in ascending order.
pub fn metrics_loop(ranked: &[Vec<u32>], held_out: &[Edge], num_users: usize, k: usize) -> (f64, f64) {
    let mut targets: Vec<Vec<u32>> = vec![Vec::new(); num_users];
    for &(u, i) in held_out {
        targets[u as usize].push(i);
    }
    let (mut recall_sum, mut ndcg_sum, mut count) = (0.0, 0.0, 0usize);
    for u in 0..num_users {
        let t = &targets[u];
        if t.is_empty() {
            continue;
        }
        let list = &ranked[u];
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for rank in 0..k.min(list.len()) {
            if t.contains(&list[rank]) {
                hits += 1;
                dcg += 1.0 / ((rank + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for rank in 1..=t.len().min(k) {
            idcg += 1.0 / ((rank + 1) as f64).log2();
        }
        recall_sum += hits as f64 / t.len() as f64;
        ndcg_sum += dcg / idcg;
        count += 1;
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (recall_sum / count as f64, ndcg_sum / count as f64)
    }
}

/// `‖a - b‖ / ‖b‖` over every entry.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    (num / den.max(1e-300)).sqrt()
}

/// Central differences of `f` over every entry of `x`.
pub fn finite_difference<F: FnMut(&Matrix) -> f64>(x: &Matrix, step: f64, mut f: F) -> Matrix {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for idx in 0..x.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[idx] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * step);
    }
    grad
}
