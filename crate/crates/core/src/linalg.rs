//! Small dense symmetric eigensolver and orthonormalization helpers,
//! shared by the spectral iterations and the oracle-scale objectives.

use crate::scalar::Scalar;

/// Cyclic Jacobi eigensolver for a symmetric matrix stored row-major.
/// Returns eigenvalues in descending order with matching eigenvector
/// columns (`vecs[i * n + j]` is component i of eigenvector j).
/// Converges when every off-diagonal is below 1e-12 times the matrix scale.
pub fn jacobi_eigh<S: Scalar>(a: &[S], n: usize) -> (Vec<S>, Vec<S>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }
    let scale = m
        .iter()
        .fold(S::zero(), |acc, &x| acc.max(x.abs()))
        .max(S::min_positive_value());
    let tol = S::from_f64_lossy(1e-12) * scale;
    let two = S::from_count(2);

    for _sweep in 0..100 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (two * apq);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<S> = (0..n).map(|i| m[i * n + i]).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let vals: Vec<S> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = vec![S::zero(); n * n];
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vecs[i * n + new_j] = v[i * n + old_j];
        }
    }
    (vals, vecs)
}

/// Modified Gram-Schmidt over column vectors, in place. Columns whose
/// residual collapses numerically are replaced with fresh unit vectors from
/// `fill` and re-orthogonalized. Returns the number of replaced columns.
pub fn mgs_orthonormalize<S: Scalar>(
    cols: &mut [Vec<S>],
    mut fill: impl FnMut(usize) -> Vec<S>,
) -> usize {
    let mut replaced = 0;
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            let before = norm2(&cols[j]);
            // two passes: a nearly dependent column loses most of its norm
            // in pass one, and the second pass cleans up the cancellation
            // error before we decide whether the residual is real
            for _pass in 0..2 {
                for i in 0..j {
                    let (head, tail) = cols.split_at_mut(j);
                    let dot = dot(&head[i], &tail[0]);
                    for (t, h) in tail[0].iter_mut().zip(&head[i]) {
                        *t = *t - dot * *h;
                    }
                }
            }
            let norm = norm2(&cols[j]);
            let floor = S::from_f64_lossy(1e-8) * before.max(S::min_positive_value());
            if norm > floor && attempts < 3 {
                let inv = S::one() / norm;
                for x in cols[j].iter_mut() {
                    *x = *x * inv;
                }
                break;
            }
            cols[j] = fill(j);
            replaced += 1;
            attempts += 1;
            if attempts > 3 {
                break;
            }
        }
    }
    replaced
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}
