//! Block-partitioned matrices.
//!
//! A [`Partition`] splits an `m × n` matrix into `k × ℓ` blocks with row
//! sizes `p` and column sizes `q`. A [`SparsityStructure`] marks which of those
//! blocks may be nonzero. Block indices are zero-based throughout.

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute threshold under which a block counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    p: Vec<usize>,
    q: Vec<usize>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.p, r.q)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr { p: p.rows, q: p.cols }
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = 0;
    out.push(0);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

impl Partition {
    /// Builds a partition from row block sizes `p` and column block sizes `q`.
    pub fn new(p: Vec<usize>, q: Vec<usize>) -> Result<Self> {
        if p.is_empty() || q.is_empty() {
            return Err(Error::Partition("p and q must be nonempty".into()));
        }
        if p.iter().chain(q.iter()).any(|&s| s == 0) {
            return Err(Error::Partition("block sizes must be >= 1".into()));
        }
        let row_offsets = offsets(&p);
        let col_offsets = offsets(&q);
        Ok(Self {
            rows: p,
            cols: q,
            row_offsets,
            col_offsets,
        })
    }

    /// `k` blocks of one row/column each: the elementwise partition.
    pub fn uniform(k: usize, l: usize, p: usize, q: usize) -> Result<Self> {
        Self::new(vec![p; k], vec![q; l])
    }

    pub fn p(&self) -> &[usize] {
        &self.rows
    }

    pub fn q(&self) -> &[usize] {
        &self.cols
    }

    /// Number of row blocks.
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// Number of column blocks.
    pub fn l(&self) -> usize {
        self.cols.len()
    }

    /// Total row count `m`.
    pub fn m(&self) -> usize {
        self.row_offsets[self.rows.len()]
    }

    /// Total column count `n`.
    pub fn n(&self) -> usize {
        self.col_offsets[self.cols.len()]
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_offsets[j]..self.col_offsets[j + 1]
    }

    /// Row block containing matrix row `r`.
    pub fn row_block_of(&self, r: usize) -> usize {
        self.row_offsets.partition_point(|&o| o <= r) - 1
    }

    /// Column block containing matrix column `c`.
    pub fn col_block_of(&self, c: usize) -> usize {
        self.col_offsets.partition_point(|&o| o <= c) - 1
    }

    /// The square partition `(q, q)` used for Lyapunov matrices.
    pub fn square_cols(&self) -> Partition {
        Partition::new(self.cols.clone(), self.cols.clone()).expect("q already validated")
    }

    pub fn check_matrix(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.m() || m.ncols() != self.n() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, partition expects {}x{}",
                m.nrows(),
                m.ncols(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.k() || j >= self.l() {
            return Err(Error::Dimension(format!(
                "block ({i},{j}) out of range for {}x{} blocks",
                self.k(),
                self.l()
            )));
        }
        Ok(())
    }
}

/// A `k × ℓ` boolean pattern over a partition; `true` marks a block that is
/// allowed to be nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityStructure {
    partition: Partition,
    sigma: Vec<Vec<bool>>,
}

impl SparsityStructure {
    pub fn new(partition: Partition, sigma: Vec<Vec<bool>>) -> Result<Self> {
        if sigma.len() != partition.k() || sigma.iter().any(|r| r.len() != partition.l()) {
            return Err(Error::Structure(format!(
                "sigma must be {}x{}",
                partition.k(),
                partition.l()
            )));
        }
        Ok(Self { partition, sigma })
    }

    pub fn from_bits(partition: Partition, bits: &[u8]) -> Result<Self> {
        let (k, l) = (partition.k(), partition.l());
        if bits.len() != k * l {
            return Err(Error::Structure(format!(
                "expected {} pattern bits, got {}",
                k * l,
                bits.len()
            )));
        }
        let sigma = (0..k).map(|i| (0..l).map(|j| bits[i * l + j] != 0).collect()).collect();
        Self::new(partition, sigma)
    }

    pub fn full(partition: Partition) -> Self {
        let sigma = vec![vec![true; partition.l()]; partition.k()];
        Self { partition, sigma }
    }

    pub fn empty(partition: Partition) -> Self {
        let sigma = vec![vec![false; partition.l()]; partition.k()];
        Self { partition, sigma }
    }

    /// Block-diagonal pattern (requires `k == ℓ`).
    pub fn diagonal(partition: Partition) -> Result<Self> {
        if partition.k() != partition.l() {
            return Err(Error::Structure("diagonal pattern needs k == l".into()));
        }
        let k = partition.k();
        let sigma = (0..k).map(|i| (0..k).map(|j| i == j).collect()).collect();
        Ok(Self { partition, sigma })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.sigma[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.sigma[i][j] = v;
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.sigma
    }

    /// Row-major flattening as 0/1.
    pub fn bits(&self) -> Vec<u8> {
        self.sigma.iter().flat_map(|r| r.iter().map(|&b| b as u8)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.sigma.iter().flatten().filter(|&&b| b).count()
    }

    /// Elementwise `self ≤ other`.
    pub fn is_subpattern_of(&self, other: &SparsityStructure) -> bool {
        self.sigma
            .iter()
            .flatten()
            .zip(other.sigma.iter().flatten())
            .all(|(&a, &b)| !a || b)
    }

    /// Entry-level mask of an `m × n` matrix in this structure.
    pub fn entry_allowed(&self, r: usize, c: usize) -> bool {
        self.sigma[self.partition.row_block_of(r)][self.partition.col_block_of(c)]
    }
}

/// Block `(i, j)` of `m` as a view.
pub fn block_view<'a>(m: &'a DMatrix<f64>, i: usize, j: usize, part: &Partition) -> Result<DMatrixView<'a, f64>> {
    part.check_matrix(m)?;
    part.check_index(i, j)?;
    let r = part.row_range(i);
    let c = part.col_range(j);
    Ok(m.view((r.start, c.start), (r.len(), c.len())))
}

/// Block `(i, j)` of `m`, copied out.
pub fn block(m: &DMatrix<f64>, i: usize, j: usize, part: &Partition) -> Result<DMatrix<f64>> {
    Ok(block_view(m, i, j, part)?.into_owned())
}

pub fn block_frobenius(m: &DMatrix<f64>, i: usize, j: usize, part: &Partition) -> Result<f64> {
    Ok(block_view(m, i, j, part)?.norm())
}

/// All block Frobenius norms as a `k × ℓ` table.
pub fn block_norms(m: &DMatrix<f64>, part: &Partition) -> Result<Vec<Vec<f64>>> {
    part.check_matrix(m)?;
    Ok((0..part.k())
        .map(|i| {
            (0..part.l())
                .map(|j| {
                    let r = part.row_range(i);
                    let c = part.col_range(j);
                    m.view((r.start, c.start), (r.len(), c.len())).norm()
                })
                .collect()
        })
        .collect())
}

/// Indicator of a nonzero value: 0 when `x <= zero_tol`, else 1.
pub fn phi(x: f64, zero_tol: f64) -> u8 {
    if x <= zero_tol {
        0
    } else {
        1
    }
}

/// Block cardinality: number of blocks whose Frobenius norm exceeds `zero_tol`.
pub fn bcard(m: &DMatrix<f64>, part: &Partition, zero_tol: f64) -> Result<usize> {
    Ok(block_norms(m, part)?
        .iter()
        .flatten()
        .map(|&x| phi(x, zero_tol) as usize)
        .sum())
}

/// Smallest pattern σ with `m ∈ M^σ` under the tolerance.
pub fn structure_of(m: &DMatrix<f64>, part: &Partition, zero_tol: f64) -> Result<SparsityStructure> {
    let sigma = block_norms(m, part)?
        .into_iter()
        .map(|row| row.into_iter().map(|x| phi(x, zero_tol) == 1).collect())
        .collect();
    SparsityStructure::new(part.clone(), sigma)
}

/// Whether every block outside `sigma` is zero under the tolerance.
pub fn conforms(m: &DMatrix<f64>, sigma: &SparsityStructure, zero_tol: f64) -> Result<bool> {
    let norms = block_norms(m, sigma.partition())?;
    Ok(norms
        .iter()
        .zip(sigma.rows())
        .all(|(nr, sr)| nr.iter().zip(sr).all(|(&x, &allowed)| allowed || x <= zero_tol)))
}

/// Zeroes every block outside `sigma`.
pub fn project(m: &DMatrix<f64>, sigma: &SparsityStructure) -> Result<DMatrix<f64>> {
    let part = sigma.partition();
    part.check_matrix(m)?;
    let mut out = m.clone();
    for i in 0..part.k() {
        for j in 0..part.l() {
            if !sigma.get(i, j) {
                let r = part.row_range(i);
                let c = part.col_range(j);
                out.view_mut((r.start, c.start), (r.len(), c.len())).fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Reassembles a matrix from its `k × ℓ` grid of blocks.
pub fn assemble(blocks: &[Vec<DMatrix<f64>>], part: &Partition) -> Result<DMatrix<f64>> {
    if blocks.len() != part.k() {
        return Err(Error::Dimension("wrong number of block rows".into()));
    }
    let mut out = DMatrix::zeros(part.m(), part.n());
    for (i, row) in blocks.iter().enumerate() {
        if row.len() != part.l() {
            return Err(Error::Dimension("wrong number of block columns".into()));
        }
        for (j, b) in row.iter().enumerate() {
            let r = part.row_range(i);
            let c = part.col_range(j);
            if b.nrows() != r.len() || b.ncols() != c.len() {
                return Err(Error::Dimension(format!("block ({i},{j}) has wrong shape")));
            }
            out.view_mut((r.start, c.start), (r.len(), c.len())).copy_from(b);
        }
    }
    Ok(out)
}
