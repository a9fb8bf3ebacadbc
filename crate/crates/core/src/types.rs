//! Shared domain types: streamed entries, row profiles, matrix statistics
//! and the small dense matrices used by the oracle-scale computations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{KahanSum, Scalar};

/// One matrix nonzero as it appears in the stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryTriplet {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl EntryTriplet {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }

    pub fn validate(&self, dims: &MatrixDims) -> Result<()> {
        if self.row >= dims.m || self.col >= dims.n {
            return Err(Error::IndexOutOfRange {
                row: self.row,
                col: self.col,
                m: dims.m,
                n: dims.n,
            });
        }
        if !self.value.is_finite() {
            return Err(Error::NonFiniteValue {
                row: self.row,
                col: self.col,
                value: self.value,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixDims {
    pub m: usize,
    pub n: usize,
    /// Declared nonzero count (0 when unknown a priori).
    pub nnz: u64,
}

impl MatrixDims {
    pub fn new(m: usize, n: usize, nnz: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter {
                what: format!("dimensions must be positive, got {m}x{n}"),
            });
        }
        if nnz > (m as u64).saturating_mul(n as u64) {
            return Err(Error::InvalidParameter {
                what: format!("nnz {nnz} exceeds {m}x{n}"),
            });
        }
        Ok(Self { m, n, nnz })
    }
}

/// Per-row L1 norms plus the global norms the solver needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowProfile<S: Scalar> {
    /// z_i, proportional to the L1 norm of row i (exact when accumulated).
    pub z: Vec<S>,
    pub total_l1: S,
    /// Per-row sums of squares, tracked in the same pass.
    pub per_row_l2sq: Option<Vec<S>>,
}

impl<S: Scalar> RowProfile<S> {
    /// Uniform profile (all z_i equal); the "assume-uniform" estimator mode.
    pub fn uniform(m: usize) -> Self {
        Self {
            z: vec![S::one(); m],
            total_l1: S::from_count(m),
            per_row_l2sq: None,
        }
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    pub fn to_f64(&self) -> RowProfile<f64> {
        RowProfile {
            z: self.z.iter().map(|v| v.as_f64()).collect(),
            total_l1: self.total_l1.as_f64(),
            per_row_l2sq: self
                .per_row_l2sq
                .as_ref()
                .map(|v| v.iter().map(|x| x.as_f64()).collect()),
        }
    }
}

/// Outcome of a single streaming accumulation pass.
#[derive(Clone, Debug)]
pub struct StreamProfile {
    pub dims: MatrixDims,
    pub profile: RowProfile<f64>,
    /// Max over columns of the column L1 norm, when tracked.
    pub max_col_l1: Option<f64>,
    /// Frobenius norm squared.
    pub frob_sq: f64,
    /// Entries seen (explicit zeros excluded).
    pub nnz_seen: u64,
    /// Explicit zeros dropped from the stream.
    pub zeros_dropped: u64,
}

/// Single-pass accumulator over a stream of triplets: exact row L1 norms,
/// per-row L2, Frobenius mass and (optionally) column L1 maxima in O(m + n)
/// memory. Coordinates are assumed unique within a stream; duplicate merging
/// is the file parser's job.
pub struct StreamAccumulator {
    dims: MatrixDims,
    row_l1: Vec<KahanSum<f64>>,
    row_l2sq: Vec<KahanSum<f64>>,
    col_l1: Option<Vec<KahanSum<f64>>>,
    frob_sq: KahanSum<f64>,
    nnz_seen: u64,
    zeros_dropped: u64,
}

impl StreamAccumulator {
    pub fn new(dims: MatrixDims, track_columns: bool) -> Self {
        Self {
            dims,
            row_l1: vec![KahanSum::new(); dims.m],
            row_l2sq: vec![KahanSum::new(); dims.m],
            col_l1: track_columns.then(|| vec![KahanSum::new(); dims.n]),
            frob_sq: KahanSum::new(),
            nnz_seen: 0,
            zeros_dropped: 0,
        }
    }

    pub fn push(&mut self, e: &EntryTriplet) -> Result<()> {
        e.validate(&self.dims)?;
        if e.value == 0.0 {
            // Real corpora contain explicit zeros; drop, do not reject.
            self.zeros_dropped += 1;
            return Ok(());
        }
        let a = e.value.abs();
        self.row_l1[e.row].add(a);
        self.row_l2sq[e.row].add(e.value * e.value);
        if let Some(cols) = &mut self.col_l1 {
            cols[e.col].add(a);
        }
        self.frob_sq.add(e.value * e.value);
        self.nnz_seen += 1;
        Ok(())
    }

    /// Merge a partial accumulation over another stream partition.
    pub fn merge(&mut self, other: &StreamAccumulator) {
        assert_eq!(self.dims, other.dims);
        for (a, b) in self.row_l1.iter_mut().zip(&other.row_l1) {
            a.add(b.value());
        }
        for (a, b) in self.row_l2sq.iter_mut().zip(&other.row_l2sq) {
            a.add(b.value());
        }
        if let (Some(a), Some(b)) = (&mut self.col_l1, &other.col_l1) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add(y.value());
            }
        }
        self.frob_sq.add(other.frob_sq.value());
        self.nnz_seen += other.nnz_seen;
        self.zeros_dropped += other.zeros_dropped;
    }

    pub fn finish(self) -> StreamProfile {
        let z: Vec<f64> = self.row_l1.iter().map(|k| k.value()).collect();
        let mut total = KahanSum::new();
        for v in &z {
            total.add(*v);
        }
        StreamProfile {
            dims: self.dims,
            profile: RowProfile {
                z,
                total_l1: total.value(),
                per_row_l2sq: Some(self.row_l2sq.iter().map(|k| k.value()).collect()),
            },
            max_col_l1: self
                .col_l1
                .map(|c| c.iter().map(|k| k.value()).fold(0.0, f64::max)),
            frob_sq: self.frob_sq.value(),
            nnz_seen: self.nnz_seen,
            zeros_dropped: self.zeros_dropped,
        }
    }
}

/// Exact row profile from a stream in one pass.
pub fn accumulate_row_profile<I>(stream: I, dims: MatrixDims) -> Result<RowProfile<f64>>
where
    I: IntoIterator<Item = EntryTriplet>,
{
    let mut acc = StreamAccumulator::new(dims, false);
    for e in stream {
        acc.push(&e)?;
    }
    Ok(acc.finish().profile)
}

/// Full stream profile (row + column + Frobenius) in one pass.
pub fn accumulate_stream_profile<I>(
    stream: I,
    dims: MatrixDims,
    track_columns: bool,
) -> Result<StreamProfile>
where
    I: IntoIterator<Item = EntryTriplet>,
{
    let mut acc = StreamAccumulator::new(dims, track_columns);
    for e in stream {
        acc.push(&e)?;
    }
    Ok(acc.finish())
}

/// Global matrix metrics.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MatrixStats<S: Scalar> {
    pub l1: S,
    pub frob: S,
    /// Spectral norm estimate.
    pub spec: S,
    /// Stable rank, frob^2 / spec^2.
    pub sr: S,
    /// Numeric density, l1^2 / frob^2.
    pub nd: S,
    /// Numeric row density, sum_i ||A_(i)||_1^2 / frob^2.
    pub nrd: S,
    pub sum_row_l1_sq: S,
}

impl<S: Scalar> MatrixStats<S> {
    /// Assemble the metric set from an accumulated profile and a spectral
    /// norm estimate. Errors on the all-zero matrix (stable rank undefined).
    pub fn from_profile(profile: &RowProfile<S>, frob_sq: S, spec: S) -> Result<Self> {
        if frob_sq <= S::zero() || spec <= S::zero() {
            return Err(Error::ZeroMatrix);
        }
        let mut srl1sq = KahanSum::<S>::new();
        for zi in &profile.z {
            srl1sq.add(*zi * *zi);
        }
        let frob = frob_sq.sqrt();
        Ok(Self {
            l1: profile.total_l1,
            frob,
            spec,
            sr: frob_sq / (spec * spec),
            nd: profile.total_l1 * profile.total_l1 / frob_sq,
            nrd: srl1sq.value() / frob_sq,
            sum_row_l1_sq: srl1sq.value(),
        })
    }
}

/// Per-condition outcome of the Definition-1 check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionStatus {
    Holds,
    Fails,
    /// Column maxima were not tracked; condition 1 left unchecked.
    Unchecked,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataMatrixReport {
    /// min_i ||A_(i)||_1 >= max_j ||A^(j)||_1
    pub row_dominance: ConditionStatus,
    /// ||A||_1^2 / ||A||_2^2 >= 50 m
    pub mass_ratio: ConditionStatus,
    /// m >= 50
    pub min_rows: ConditionStatus,
    pub is_data_matrix: bool,
}

/// Check the three data-matrix conditions. `max_col_l1 = None` marks
/// condition 1 as unchecked (diagnostic use only) and the conjunction false
/// unless the caller opted out of column tracking knowingly.
pub fn check_data_matrix(
    profile: &RowProfile<f64>,
    spec: f64,
    max_col_l1: Option<f64>,
    dims: &MatrixDims,
) -> Result<DataMatrixReport> {
    if spec <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let min_row_l1 = profile.z.iter().cloned().fold(f64::INFINITY, f64::min);
    let row_dominance = match max_col_l1 {
        Some(c) => {
            if min_row_l1 >= c {
                ConditionStatus::Holds
            } else {
                ConditionStatus::Fails
            }
        }
        None => ConditionStatus::Unchecked,
    };
    let mass_ratio = if profile.total_l1 * profile.total_l1 / (spec * spec)
        >= 50.0 * dims.m as f64
    {
        ConditionStatus::Holds
    } else {
        ConditionStatus::Fails
    };
    let min_rows = if dims.m >= 50 {
        ConditionStatus::Holds
    } else {
        ConditionStatus::Fails
    };
    let is_data_matrix = row_dominance == ConditionStatus::Holds
        && mass_ratio == ConditionStatus::Holds
        && min_rows == ConditionStatus::Holds;
    Ok(DataMatrixReport {
        row_dominance,
        mass_ratio,
        min_rows,
        is_data_matrix,
    })
}

/// Dense row-major matrix for oracle-scale computations only.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallDenseMatrix<S: Scalar> {
    pub m: usize,
    pub n: usize,
    data: Vec<S>,
}

pub const DENSE_CELL_LIMIT: usize = 1_000_000;

impl<S: Scalar> SmallDenseMatrix<S> {
    pub fn zeros(m: usize, n: usize) -> Result<Self> {
        if m.saturating_mul(n) > DENSE_CELL_LIMIT {
            return Err(Error::DenseGuard { m, n, limit: DENSE_CELL_LIMIT });
        }
        Ok(Self { m, n, data: vec![S::zero(); m * n] })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut a = Self::zeros(m, n)?;
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "ragged rows");
            a.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        Ok(a)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// y = A x
    pub fn matvec(&self, x: &[S], y: &mut [S]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.m);
        for i in 0..self.m {
            let mut acc = S::zero();
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (a, b) in row.iter().zip(x) {
                acc = acc + *a * *b;
            }
            y[i] = acc;
        }
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[S], y: &mut [S]) {
        assert_eq!(x.len(), self.m);
        assert_eq!(y.len(), self.n);
        for v in y.iter_mut() {
            *v = S::zero();
        }
        for i in 0..self.m {
            let xi = x[i];
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (j, a) in row.iter().enumerate() {
                y[j] = y[j] + *a * xi;
            }
        }
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        (0..self.m).flat_map(move |i| {
            (0..self.n).filter_map(move |j| {
                let v = self.get(i, j);
                (v != S::zero()).then_some((i, j, v))
            })
        })
    }

    pub fn frob_sq(&self) -> S {
        let mut k = KahanSum::new();
        for v in &self.data {
            k.add(*v * *v);
        }
        k.value()
    }
}

impl SmallDenseMatrix<f64> {
    pub fn from_triplets<I>(dims: MatrixDims, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = EntryTriplet>,
    {
        let mut a = Self::zeros(dims.m, dims.n)?;
        for e in triplets {
            e.validate(&dims)?;
            // Additive, matching Matrix Market coordinate semantics.
            let cur = a.get(e.row, e.col);
            a.set(e.row, e.col, cur + e.value);
        }
        Ok(a)
    }

    pub fn triplets(&self) -> Vec<EntryTriplet> {
        self.nonzeros()
            .map(|(i, j, v)| EntryTriplet::new(i, j, v))
            .collect()
    }
}
