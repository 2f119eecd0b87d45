//! Linear graph-convolution encoder.
//!
//! `propagate` caches `Ã^l E0` for every layer; `aggregate` averages a
//! contiguous window of those layers. Because the whole map `E0 -> aggregate`
//! is linear and `Ã` is symmetric, its adjoint is the same window average
//! applied to the upstream gradient, which is how gradients reach `E0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;

/// Inclusive layer range `[lo, hi]` averaged into the final embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregationWindow {
    pub lo: usize,
    pub hi: usize,
}

impl AggregationWindow {
    pub fn new(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Config(format!("aggregation window [{lo}, {hi}] has lo > hi")));
        }
        Ok(Self { lo, hi })
    }

    /// All layers `0..=layers`, the standard LightGCN readout.
    pub const fn full(layers: usize) -> Self {
        Self { lo: 0, hi: layers }
    }

    /// Layers `h..=layers`, dropping the low-order terms.
    pub fn high_order(h: usize, layers: usize) -> Result<Self> {
        Self::new(h, layers)
    }

    /// Only the initial embedding table.
    pub const fn initial() -> Self {
        Self { lo: 0, hi: 0 }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, layers: usize) -> Result<()> {
        if self.lo > self.hi || self.hi > layers {
            return Err(Error::dimension(
                "aggregation window",
                format!("0 <= lo <= hi <= {layers}"),
                format!("[{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }
}

impl std::fmt::Display for AggregationWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..={}", self.lo, self.hi)
    }
}

/// `layers[l] = Ã^l E0` for `l = 0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    layers: Vec<Matrix>,
}

impl EmbeddingState {
    /// Number of propagation layers `L` (excluding `E0`).
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn initial(&self) -> &Matrix {
        &self.layers[0]
    }

    pub fn layer(&self, l: usize) -> &Matrix {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn aggregate(&self, w: AggregationWindow) -> Result<Matrix> {
        aggregate(self, w)
    }
}

/// Runs `layers` rounds of `spmm`, caching each intermediate result.
pub fn propagate(adj: &NormalizedAdjacency, e0: &Matrix, layers: usize) -> Result<EmbeddingState> {
    if e0.rows() != adj.num_nodes() {
        return Err(Error::dimension("propagate input rows", adj.num_nodes(), e0.rows()));
    }
    let mut out = Vec::with_capacity(layers + 1);
    out.push(e0.clone());
    for l in 1..=layers {
        let next = adj.spmm(&out[l - 1])?;
        if let Some(index) = next.first_non_finite() {
            return Err(Error::Numerical {
                context: format!("propagation layer {l}"),
                index,
            });
        }
        out.push(next);
    }
    Ok(EmbeddingState { layers: out })
}

/// Mean of `layers[lo..=hi]`.
pub fn aggregate(state: &EmbeddingState, w: AggregationWindow) -> Result<Matrix> {
    w.check(state.num_layers())?;
    let mut acc = state.layers[w.lo].clone();
    for l in w.lo + 1..=w.hi {
        acc.add_assign(&state.layers[l]);
    }
    if w.len() > 1 {
        acc.scale(1.0 / w.len() as f64);
    }
    Ok(acc)
}

/// `(1/|w|) Σ_{l ∈ w} Ã^l G`, the gradient of `⟨G, aggregate(propagate(E0))⟩`
/// with respect to `E0`. Costs `w.hi` spmm calls.
pub fn aggregate_adjoint(adj: &NormalizedAdjacency, g: &Matrix, w: AggregationWindow) -> Result<Matrix> {
    if w.lo > w.hi {
        return Err(Error::dimension("aggregation window", "lo <= hi", format!("[{}, {}]", w.lo, w.hi)));
    }
    if g.rows() != adj.num_nodes() {
        return Err(Error::dimension("aggregate_adjoint input rows", adj.num_nodes(), g.rows()));
    }
    let mut current = g.clone();
    let mut acc = if w.lo == 0 { g.clone() } else { Matrix::zeros(g.rows(), g.cols()) };
    let mut scratch = Matrix::zeros(g.rows(), g.cols());
    for l in 1..=w.hi {
        adj.spmm_into(&current, &mut scratch)?;
        std::mem::swap(&mut current, &mut scratch);
        if l >= w.lo {
            acc.add_assign(&current);
        }
    }
    if w.len() > 1 {
        acc.scale(1.0 / w.len() as f64);
    }
    Ok(acc)
}
