//! Iterative spectral utilities: power-iteration spectral norm, block
//! subspace iteration for top-k singular subspaces, and the projection
//! quality metrics used by the evaluation harness.

use rand::Rng as _;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, jacobi_eigh, mgs_orthonormalize, norm2};
use crate::scalar::Scalar;
use crate::types::{EntryTriplet, SmallDenseMatrix};

/// A matrix accessible through matvec and transpose-matvec. Callbacks must
/// be safe for concurrent read.
pub trait LinOp<S: Scalar> {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// y = A x
    fn apply(&self, x: &[S], y: &mut [S]);
    /// y = A^T x
    fn apply_t(&self, x: &[S], y: &mut [S]);
}

impl<S: Scalar> LinOp<S> for SmallDenseMatrix<S> {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[S], y: &mut [S]) {
        self.matvec(x, y);
    }
    fn apply_t(&self, x: &[S], y: &mut [S]) {
        self.matvec_t(x, y);
    }
}

/// Coordinate-list sparse matrix.
#[derive(Clone, Debug)]
pub struct CooMatrix {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<EntryTriplet>,
}

impl CooMatrix {
    pub fn new(m: usize, n: usize, entries: Vec<EntryTriplet>) -> Self {
        Self { m, n, entries }
    }
}

impl LinOp<f64> for CooMatrix {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for e in &self.entries {
            y[e.row] += e.value * x[e.col];
        }
    }
    fn apply_t(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for e in &self.entries {
            y[e.col] += e.value * x[e.row];
        }
    }
}

/// Difference A - B of two operators with identical shape.
pub struct DiffOp<'a, S: Scalar> {
    pub a: &'a dyn LinOp<S>,
    pub b: &'a dyn LinOp<S>,
}

impl<S: Scalar> LinOp<S> for DiffOp<'_, S> {
    fn rows(&self) -> usize {
        self.a.rows()
    }
    fn cols(&self) -> usize {
        self.a.cols()
    }
    fn apply(&self, x: &[S], y: &mut [S]) {
        let mut tmp = vec![S::zero(); y.len()];
        self.a.apply(x, y);
        self.b.apply(x, &mut tmp);
        for (yi, ti) in y.iter_mut().zip(&tmp) {
            *yi = *yi - *ti;
        }
    }
    fn apply_t(&self, x: &[S], y: &mut [S]) {
        let mut tmp = vec![S::zero(); y.len()];
        self.a.apply_t(x, y);
        self.b.apply_t(x, &mut tmp);
        for (yi, ti) in y.iter_mut().zip(&tmp) {
            *yi = *yi - *ti;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralEstimate<S: Scalar> {
    pub value: S,
    pub converged: bool,
    pub iterations: usize,
}

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 5000;

fn random_unit<S: Scalar>(len: usize, rng: &mut ChaCha12Rng) -> Vec<S> {
    let mut v: Vec<S> = (0..len)
        .map(|_| S::from_f64_lossy(rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let n = norm2(&v);
    if n > S::zero() {
        for x in v.iter_mut() {
            *x = *x / n;
        }
    }
    v
}

/// Largest singular value by power iteration on A^T A from a seeded random
/// start. The estimate is a lower bound on the true norm up to the
/// convergence flag.
pub fn spectral_norm<S: Scalar>(
    op: &dyn LinOp<S>,
    tol: f64,
    max_iter: usize,
    rng: &mut ChaCha12Rng,
) -> Result<SpectralEstimate<S>> {
    let (m, n) = (op.rows(), op.cols());
    let mut x = random_unit::<S>(n, rng);
    let mut ax = vec![S::zero(); m];
    let tol = S::from_f64_lossy(tol);
    let mut prev = S::zero();
    for iter in 1..=max_iter {
        op.apply(&x, &mut ax);
        let sigma = norm2(&ax);
        if sigma == S::zero() {
            // restart once; a repeated zero image means a zero operator
            if iter == 1 {
                x = random_unit::<S>(n, rng);
                continue;
            }
            return Err(Error::ZeroMatrix);
        }
        op.apply_t(&ax, &mut x);
        let xn = norm2(&x);
        if xn == S::zero() {
            return Err(Error::ZeroMatrix);
        }
        for v in x.iter_mut() {
            *v = *v / xn;
        }
        let rel = if prev > S::zero() {
            ((sigma - prev) / sigma).abs()
        } else {
            S::one()
        };
        if rel < tol {
            return Ok(SpectralEstimate { value: sigma, converged: true, iterations: iter });
        }
        prev = sigma;
    }
    if prev == S::zero() {
        return Err(Error::ZeroMatrix);
    }
    Ok(SpectralEstimate { value: prev, converged: false, iterations: max_iter })
}

/// An orthonormal basis of a k-dimensional subspace of R^dim.
#[derive(Clone, Debug)]
pub struct Subspace<S: Scalar> {
    pub dim: usize,
    pub k: usize,
    /// k orthonormal columns of length dim.
    pub basis: Vec<Vec<S>>,
    /// Set when the requested k exceeded the numerically detected rank and
    /// the basis was padded within the computed subspace.
    pub rank_deficient: bool,
}

impl<S: Scalar> Subspace<S> {
    /// Max absolute deviation of the Gram matrix from identity.
    pub fn orthonormality_defect(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.k {
            for j in 0..self.k {
                let g = dot(&self.basis[i], &self.basis[j]);
                let expect = if i == j { S::one() } else { S::zero() };
                worst = worst.max((g - expect).abs());
            }
        }
        worst
    }
}

pub const SUBSPACE_OVERSAMPLE: usize = 8;
pub const SUBSPACE_DEFAULT_ITERS: usize = 200;

/// Top-k left (or right) singular subspace by block subspace iteration with
/// k + 8 oversampling and re-orthonormalization each step, finished with a
/// Rayleigh-Ritz rotation to order the directions.
pub fn top_k_singular<S: Scalar>(
    op: &dyn LinOp<S>,
    k: usize,
    iters: usize,
    rng: &mut ChaCha12Rng,
    left: bool,
) -> Result<Subspace<S>> {
    let (m, n) = (op.rows(), op.cols());
    let ambient = if left { m } else { n };
    let other = if left { n } else { m };
    if k == 0 || k > ambient.min(other) {
        return Err(Error::InvalidParameter { what: format!("k = {k} invalid for {m}x{n}") });
    }
    let p = (k + SUBSPACE_OVERSAMPLE).min(ambient.min(other));
    let mut q: Vec<Vec<S>> = (0..p).map(|_| random_unit(ambient, rng)).collect();
    let mut tmp = vec![S::zero(); other];

    for _ in 0..iters {
        // q_j <- (A A^T) q_j (left) or (A^T A) q_j (right)
        for col in q.iter_mut() {
            if left {
                op.apply_t(col, &mut tmp);
                op.apply(&tmp, col);
            } else {
                op.apply(col, &mut tmp);
                op.apply_t(&tmp, col);
            }
        }
        let mut fill_rng = rng.clone();
        mgs_orthonormalize(&mut q, |_| random_unit(ambient, &mut fill_rng));
    }

    // Rayleigh-Ritz on the block: T = Q^T (A A^T) Q
    let mut aq: Vec<Vec<S>> = Vec::with_capacity(p);
    for col in &q {
        let mut out = col.clone();
        if left {
            op.apply_t(col, &mut tmp);
            op.apply(&tmp, &mut out);
        } else {
            op.apply(col, &mut tmp);
            op.apply_t(&tmp, &mut out);
        }
        aq.push(out);
    }
    let mut t = vec![S::zero(); p * p];
    for i in 0..p {
        for j in 0..p {
            t[i * p + j] = dot(&q[i], &aq[j]);
        }
    }
    let (vals, vecs) = jacobi_eigh(&t, p);
    let rank_deficient = vals
        .iter()
        .take(k)
        .any(|&v| v <= S::from_f64_lossy(1e-24) * vals[0].max(S::min_positive_value()));

    let mut basis = Vec::with_capacity(k);
    for j in 0..k {
        let mut col = vec![S::zero(); ambient];
        for (i, qi) in q.iter().enumerate() {
            let w = vecs[i * p + j];
            for (c, &qv) in col.iter_mut().zip(qi) {
                *c = *c + w * qv;
            }
        }
        let nrm = norm2(&col);
        if nrm > S::zero() {
            for v in col.iter_mut() {
                *v = *v / nrm;
            }
        }
        basis.push(col);
    }
    Ok(Subspace { dim: ambient, k, basis, rank_deficient })
}

/// ||U^T A||_F (left) or ||A Q||_F (right) for an orthonormal basis.
pub fn projected_frob<S: Scalar>(op: &dyn LinOp<S>, basis: &[Vec<S>], left: bool) -> S {
    let mut acc = S::zero();
    let other = if left { op.cols() } else { op.rows() };
    let mut tmp = vec![S::zero(); other];
    for col in basis {
        if left {
            op.apply_t(col, &mut tmp);
        } else {
            op.apply(col, &mut tmp);
        }
        acc = acc + dot(&tmp, &tmp);
    }
    acc.sqrt()
}

/// Projection quality of sketch B against A:
/// left = ||P_k^B A||_F / ||P_k^A A||_F, right = ||A Q_k^B||_F / ||A Q_k^A||_F,
/// with P from B's top-k left and Q from B's top-k right singular vectors.
pub fn projection_quality<S: Scalar>(
    a: &dyn LinOp<S>,
    b: &dyn LinOp<S>,
    k: usize,
    iters: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(S, S)> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimMismatch {
            expected: format!("{}x{}", a.rows(), a.cols()),
            got: format!("{}x{}", b.rows(), b.cols()),
        });
    }
    // a zero sketch must not look optimal
    let mut probe_rng = rng.clone();
    spectral_norm(b, 1e-4, 50, &mut probe_rng).map_err(|_| Error::ZeroMatrix)?;

    let ub = top_k_singular(b, k, iters, rng, true)?;
    let ua = top_k_singular(a, k, iters, rng, true)?;
    let left = projected_frob(a, &ub.basis, true) / projected_frob(a, &ua.basis, true);

    let vb = top_k_singular(b, k, iters, rng, false)?;
    let va = top_k_singular(a, k, iters, rng, false)?;
    let right = projected_frob(a, &vb.basis, false) / projected_frob(a, &va.basis, false);
    Ok((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(2024)
    }

    #[test]
    fn diag_norm() {
        let a = SmallDenseMatrix::from_rows(&[vec![3.0_f64, 0.0], vec![0.0, 1.0]]).unwrap();
        let est = spectral_norm(&a, 1e-12, 5000, &mut rng()).unwrap();
        assert!((est.value - 3.0).abs() < 1e-9);
        assert!(est.converged);
    }

    #[test]
    fn rank_one_norm() {
        // u v^T with unit u, v has norm 1
        let u = [0.6_f64, 0.8];
        let v = [1.0 / 2.0_f64.sqrt(), -1.0 / 2.0_f64.sqrt()];
        let rows: Vec<Vec<f64>> = u.iter().map(|ui| v.iter().map(|vj| ui * vj).collect()).collect();
        let a = SmallDenseMatrix::from_rows(&rows).unwrap();
        let est = spectral_norm(&a, 1e-12, 5000, &mut rng()).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_errors() {
        let a = SmallDenseMatrix::<f64>::zeros(3, 3).unwrap();
        assert!(matches!(
            spectral_norm(&a, 1e-9, 100, &mut rng()),
            Err(Error::ZeroMatrix)
        ));
    }

    #[test]
    fn sparse_matches_dense() {
        use rand::Rng;
        let mut r = rng();
        let (m, n) = (8, 13);
        let mut dense = SmallDenseMatrix::<f64>::zeros(m, n).unwrap();
        let mut entries = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if r.random::<f64>() < 0.5 {
                    let v = r.random::<f64>() - 0.5;
                    dense.set(i, j, v);
                    entries.push(EntryTriplet::new(i, j, v));
                }
            }
        }
        let coo = CooMatrix::new(m, n, entries);
        let d = spectral_norm(&dense, 1e-12, 5000, &mut rng()).unwrap();
        let s = spectral_norm(&coo, 1e-12, 5000, &mut rng()).unwrap();
        assert!((d.value - s.value).abs() < 1e-8);
    }

    #[test]
    fn top_k_of_diagonal_picks_largest_axes() {
        let a = SmallDenseMatrix::from_rows(&[
            vec![1.0_f64, 0.0, 0.0, 0.0],
            vec![0.0, 5.0, 0.0, 0.0],
            vec![0.0, 0.0, 3.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.5],
        ])
        .unwrap();
        let sub = top_k_singular(&a, 2, 100, &mut rng(), true).unwrap();
        assert!(sub.orthonormality_defect() < 1e-10);
        // spanned axes must be e1 and e2 (values 5 and 3)
        for col in &sub.basis {
            assert!(col[0].abs() < 1e-8 && col[3].abs() < 1e-8);
        }
    }

    #[test]
    fn projection_of_matrix_against_itself_is_one() {
        use rand::Rng;
        let mut r = rng();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..9).map(|_| r.random::<f64>() - 0.5).collect())
            .collect();
        let a = SmallDenseMatrix::from_rows(&rows).unwrap();
        let (l, rr) = projection_quality(&a, &a, 3, 150, &mut rng()).unwrap();
        assert!((l - 1.0).abs() < 1e-9, "left {l}");
        assert!((rr - 1.0).abs() < 1e-9, "right {rr}");
    }

    #[test]
    fn projection_scale_invariant() {
        use rand::Rng;
        let mut r = rng();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| r.random::<f64>() - 0.5).collect())
            .collect();
        let a = SmallDenseMatrix::from_rows(&rows).unwrap();
        let mut b_rows = rows.clone();
        for row in b_rows.iter_mut() {
            for v in row.iter_mut() {
                *v *= 0.3; // keep only part of the info
            }
        }
        b_rows[0][0] += 0.7;
        let b = SmallDenseMatrix::from_rows(&b_rows).unwrap();
        let (l1, r1) = projection_quality(&a, &b, 2, 150, &mut rng()).unwrap();
        for c in [1e-3, 1e3] {
            let mut scaled = b_rows.clone();
            for row in scaled.iter_mut() {
                for v in row.iter_mut() {
                    *v *= c;
                }
            }
            let bc = SmallDenseMatrix::from_rows(&scaled).unwrap();
            let (l2, r2) = projection_quality(&a, &bc, 2, 150, &mut rng()).unwrap();
            assert!((l1 - l2).abs() < 1e-10);
            assert!((r1 - r2).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_sketch_rejected() {
        let a = SmallDenseMatrix::from_rows(&[vec![1.0_f64, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = SmallDenseMatrix::<f64>::zeros(2, 2).unwrap();
        assert!(projection_quality(&a, &b, 1, 50, &mut rng()).is_err());
    }

    // Dense SVD oracle (nalgebra) for the spectral norm.
    #[test]
    fn random_matrix_matches_svd_oracle() {
        use rand::Rng;
        let mut r = rng();
        let (m, n) = (20, 50);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let a = SmallDenseMatrix::from_rows(&rows).unwrap();
        let est = spectral_norm(&a, 1e-13, 20000, &mut rng()).unwrap();
        let na = nalgebra::DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        let oracle = na.svd(false, false).singular_values[0];
        assert!(
            (est.value - oracle).abs() <= 1e-6 * oracle,
            "{} vs {oracle}",
            est.value
        );
    }

    // Construct A = U S V^T with known rank-5 factors; recovered subspace
    // must align with U's column space.
    #[test]
    fn low_rank_subspace_recovery() {
        use rand::Rng;
        let mut r = rng();
        let (m, n, k) = (15, 40, 5);
        let u: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| r.random::<f64>() - 0.5).collect())
            .collect();
        let v: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| r.random::<f64>() - 0.5).collect())
            .collect();
        let mut u = u;
        mgs_orthonormalize(&mut u, |_| vec![0.0; m]);
        let mut v = v;
        mgs_orthonormalize(&mut v, |_| vec![0.0; n]);
        let sigmas = [9.0, 7.0, 5.0, 3.0, 2.0];
        let mut a = SmallDenseMatrix::<f64>::zeros(m, n).unwrap();
        for t in 0..k {
            for i in 0..m {
                for j in 0..n {
                    let cur = a.get(i, j);
                    a.set(i, j, cur + sigmas[t] * u[t][i] * v[t][j]);
                }
            }
        }
        let sub = top_k_singular(&a, k, 300, &mut rng(), true).unwrap();
        // every recovered basis vector lies in span(u): residual after
        // projecting onto u is tiny
        for col in &sub.basis {
            let mut residual = col.clone();
            for ut in &u {
                let d = dot(ut, col);
                for (rv, uv) in residual.iter_mut().zip(ut) {
                    *rv -= d * uv;
                }
            }
            assert!(norm2(&residual) < 1e-6, "residual {}", norm2(&residual));
        }
    }
}
