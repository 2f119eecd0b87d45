//! Symmetric-normalized bipartite adjacency `D^{-1/2} A D^{-1/2}` in CSR form.
//!
//! Users occupy nodes `[0, M)` and items `[M, M + N)`. Both directions of
//! every edge are stored, so the same kernel serves forward propagation and
//! its transpose.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};

const ADJ_MAGIC: &[u8; 8] = b"HFGCLADJ";
const ADJ_VERSION: u32 = 1;

#[derive(Debug)]
pub struct NormalizedAdjacency {
    num_users: usize,
    num_items: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
    spmm_calls: AtomicU64,
}

impl Clone for NormalizedAdjacency {
    fn clone(&self) -> Self {
        Self {
            num_users: self.num_users,
            num_items: self.num_items,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.clone(),
            spmm_calls: AtomicU64::new(0),
        }
    }
}

impl PartialEq for NormalizedAdjacency {
    fn eq(&self, other: &Self) -> bool {
        self.num_users == other.num_users
            && self.num_items == other.num_items
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
            && self.values == other.values
    }
}

impl NormalizedAdjacency {
    /// Builds the normalized adjacency from the train edges of `ds`.
    pub fn build(ds: &InteractionDataset) -> Result<Self> {
        Self::from_edges(ds.num_users(), ds.num_items(), ds.train_edges())
    }

    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(u32, u32)]) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::Graph("no train edges".into()));
        }
        let n = num_users + num_items;
        let mut degree = vec![0u32; n];
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
        for &(u, i) in edges {
            let (u, i) = (u as usize, i as usize);
            if u >= num_users || i >= num_items {
                return Err(Error::Graph(format!("edge ({u}, {i}) outside {num_users}x{num_items}")));
            }
            let item_node = num_users + i;
            degree[u] += 1;
            degree[item_node] += 1;
            adjacency[u].push(item_node as u32);
            adjacency[item_node].push(u as u32);
        }

        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(2 * edges.len());
        let mut values = Vec::with_capacity(2 * edges.len());
        row_offsets.push(0);
        for (r, cols) in adjacency.iter_mut().enumerate() {
            cols.sort_unstable();
            if cols.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Graph(format!("duplicate edge at node {r}")));
            }
            for &c in cols.iter() {
                let (dr, dc) = (degree[r], degree[c as usize]);
                if dr == 0 || dc == 0 {
                    return Err(Error::Graph(format!("zero degree on edge ({r}, {c})")));
                }
                col_indices.push(c);
                values.push(1.0 / (f64::from(dr) * f64::from(dc)).sqrt());
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            num_users,
            num_items,
            row_offsets,
            col_indices,
            values,
            spmm_calls: AtomicU64::new(0),
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs of row `r`, sorted by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .zip(&self.values[span])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// Entry `(r, c)`, zero when absent.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&(c as u32)) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// Row sums, i.e. `Σ_c Ã(r, c)` for each node.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.num_nodes()).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut m = Matrix::zeros(n, n);
        for r in 0..n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// `Ã · x`. Each output row is reduced over its neighbors in column order.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        self.spmm_into(x, &mut out)?;
        Ok(out)
    }

    pub fn spmm_into(&self, x: &Matrix, out: &mut Matrix) -> Result<()> {
        let n = self.num_nodes();
        if x.rows() != n {
            return Err(Error::dimension("spmm input rows", n, x.rows()));
        }
        if out.shape() != x.shape() {
            return Err(Error::dimension(
                "spmm output shape",
                format!("{:?}", x.shape()),
                format!("{:?}", out.shape()),
            ));
        }
        self.spmm_calls.fetch_add(1, Ordering::Relaxed);
        let d = x.cols();
        let src = x.as_slice();
        for r in 0..n {
            let dst = out.row_mut(r);
            dst.fill(0.0);
            let span = self.row_offsets[r]..self.row_offsets[r + 1];
            for (&c, &v) in self.col_indices[span.clone()].iter().zip(&self.values[span]) {
                let c = c as usize * d;
                axpy(v, &src[c..c + d], dst);
            }
        }
        Ok(())
    }

    /// Number of `spmm` calls made through this adjacency so far.
    pub fn spmm_calls(&self) -> u64 {
        self.spmm_calls.load(Ordering::Relaxed)
    }

    pub fn reset_spmm_calls(&self) {
        self.spmm_calls.store(0, Ordering::Relaxed);
    }

    /// Little-endian dump: magic, version, M, N, nnz, offsets, columns, values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ADJ_MAGIC)?;
        w.write_all(&ADJ_VERSION.to_le_bytes())?;
        for v in [self.num_users, self.num_items, self.nnz()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &o in &self.row_offsets {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for &c in &self.col_indices {
            w.write_all(&c.to_le_bytes())?;
        }
        for &v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != ADJ_MAGIC {
            return Err(Error::Format("not an adjacency dump".into()));
        }
        let version = read_u32(&mut r)?;
        if version != ADJ_VERSION {
            return Err(Error::Format(format!("unsupported adjacency version {version}")));
        }
        let num_users = read_u64(&mut r)? as usize;
        let num_items = read_u64(&mut r)? as usize;
        let nnz = read_u64(&mut r)? as usize;
        let n = num_users + num_items;
        let row_offsets = (0..=n).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let col_indices = (0..nnz).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        if row_offsets.first() != Some(&0)
            || row_offsets.last() != Some(&nnz)
            || row_offsets.windows(2).any(|w| w[0] > w[1])
            || col_indices.iter().any(|&c| c as usize >= n)
        {
            return Err(Error::Format("corrupt adjacency arrays".into()));
        }
        Ok(Self {
            num_users,
            num_items,
            row_offsets,
            col_indices,
            values,
            spmm_calls: AtomicU64::new(0),
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_is_a_swap() {
        let adj = NormalizedAdjacency::from_edges(1, 1, &[(0, 0)]).unwrap();
        assert_eq!(adj.nnz(), 2);
        assert_eq!(adj.get(0, 1), 1.0);
        assert_eq!(adj.get(1, 0), 1.0);
        let y = adj.spmm(&Matrix::identity(2)).unwrap();
        assert_eq!(y, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    }

    #[test]
    fn shared_item_weights() {
        let adj = NormalizedAdjacency::from_edges(2, 1, &[(0, 0), (1, 0)]).unwrap();
        let w = 1.0 / 2f64.sqrt();
        assert!((adj.get(0, 2) - w).abs() < 1e-15);
        assert!((adj.get(2, 1) - w).abs() < 1e-15);
        assert!((w - 0.70711).abs() < 1e-5);
    }

    #[test]
    fn regular_biclique_rows_sum_to_one() {
        let adj = NormalizedAdjacency::from_edges(2, 2, &[(0, 0), (0, 1), (1, 0), (1, 1)]).unwrap();
        for s in adj.row_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_and_counts_calls() {
        let adj = NormalizedAdjacency::from_edges(2, 2, &[(0, 0), (1, 1)]).unwrap();
        let y = adj.spmm(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(y, Matrix::zeros(4, 3));
        assert_eq!(adj.spmm_calls(), 1);
        assert!(matches!(adj.spmm(&Matrix::zeros(3, 3)), Err(Error::Dimension { .. })));
        adj.reset_spmm_calls();
        assert_eq!(adj.spmm_calls(), 0);
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert!(NormalizedAdjacency::from_edges(1, 1, &[]).is_err());
        assert!(NormalizedAdjacency::from_edges(1, 1, &[(0, 3)]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let adj = NormalizedAdjacency::from_edges(3, 2, &[(0, 0), (1, 1), (2, 0), (2, 1)]).unwrap();
        let mut buf = Vec::new();
        adj.write_to(&mut buf).unwrap();
        assert_eq!(NormalizedAdjacency::read_from(buf.as_slice()).unwrap(), adj);
        buf[0] = b'X';
        assert!(NormalizedAdjacency::read_from(buf.as_slice()).is_err());
    }
}
