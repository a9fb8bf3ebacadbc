//! The epsilon-objective tower: exact and surrogate error bounds for an
//! entrywise sampling distribution, the tail bound they certify, a
//! brute-force near-optimality oracle, and the sample-complexity estimate.
//!
//! Everything here runs at oracle scale (small dense matrices); the
//! streaming path never touches these routines.

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha12Rng;

use crate::distribution::{make_plan, BernsteinParams, SamplingPlan, Scheme};
use crate::error::{Error, Result};
use crate::linalg::jacobi_eigh;
use crate::scalar::{KahanSum, Scalar};
use crate::types::{MatrixStats, RowProfile, SmallDenseMatrix};

/// All six epsilon objectives plus the quantities they are built from.
#[derive(Clone, Copy, Debug)]
pub struct EpsilonReport<S: Scalar> {
    pub eps1: S,
    pub eps2: S,
    pub eps3: S,
    pub eps4: S,
    pub eps5: S,
    pub eps6: S,
    pub sigma_exact: S,
    pub sigma_tilde: S,
    pub r_exact: S,
    pub r_tilde: S,
    pub params: BernsteinParams<S>,
}

fn check_support<S: Scalar>(a: &SmallDenseMatrix<S>, p: &SmallDenseMatrix<S>) -> Result<()> {
    if a.m != p.m || a.n != p.n {
        return Err(Error::DimMismatch {
            expected: format!("{}x{}", a.m, a.n),
            got: format!("{}x{}", p.m, p.n),
        });
    }
    for (i, j, v) in a.nonzeros() {
        if v != S::zero() && p.get(i, j) <= S::zero() {
            return Err(Error::ZeroProbabilityEntry { row: i, col: j });
        }
    }
    Ok(())
}

/// Expand a plan into a dense entrywise probability matrix over A's support.
pub fn plan_probabilities<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    plan: &SamplingPlan<S>,
) -> Result<SmallDenseMatrix<S>> {
    let mut p = SmallDenseMatrix::zeros(a.m, a.n)?;
    for (i, j, v) in a.nonzeros() {
        if v == S::zero() {
            continue;
        }
        let e = crate::types::EntryTriplet::new(i, j, v.as_f64());
        p.set(i, j, plan.entry_probability(&e)?);
    }
    Ok(p)
}

/// Spectral norm of a small dense matrix through the smaller Gram matrix.
fn exact_spectral<S: Scalar>(a: &SmallDenseMatrix<S>) -> S {
    let (m, n) = (a.m, a.n);
    let small = m.min(n);
    let mut g = vec![S::zero(); small * small];
    if m <= n {
        for i in 0..m {
            for k in i..m {
                let mut acc = KahanSum::new();
                for j in 0..n {
                    acc.add(a.get(i, j) * a.get(k, j));
                }
                g[i * m + k] = acc.value();
                g[k * m + i] = acc.value();
            }
        }
    } else {
        for j in 0..n {
            for k in j..n {
                let mut acc = KahanSum::new();
                for i in 0..m {
                    acc.add(a.get(i, j) * a.get(i, k));
                }
                g[j * n + k] = acc.value();
                g[k * n + j] = acc.value();
            }
        }
    }
    let (vals, _) = jacobi_eigh(&g, small);
    vals[0].max(S::zero()).sqrt()
}

/// Exact sigma and R for distribution p on A.
///
/// sigma^2 = max of the deviation operator norms on both sides, computed
/// through the identity E[B1 B1^T] - A A^T where the expectation term is the
/// diagonal matrix with entries sum_j A_ij^2 / p_ij. R enumerates every
/// single-entry realization B1 and takes the largest ||B1 - A||_2.
pub fn sigma_r_exact<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
) -> Result<(S, S)> {
    check_support(a, p)?;
    let (m, n) = (a.m, a.n);

    let side = |rows: usize| -> S {
        // G = diag(d) - A A^T (or the transposed pair), symmetric
        let mut g = vec![S::zero(); rows * rows];
        let left = rows == m;
        for i in 0..rows {
            for k in i..rows {
                let mut acc = KahanSum::new();
                let inner = if left { n } else { m };
                for j in 0..inner {
                    let (x, y) = if left {
                        (a.get(i, j), a.get(k, j))
                    } else {
                        (a.get(j, i), a.get(j, k))
                    };
                    acc.add(x * y);
                }
                let mut v = -acc.value();
                if i == k {
                    let mut d = KahanSum::new();
                    for j in 0..inner {
                        let x = if left { a.get(i, j) } else { a.get(j, i) };
                        if x != S::zero() {
                            let pij = if left { p.get(i, j) } else { p.get(j, i) };
                            d.add(x * x / pij);
                        }
                    }
                    v = v + d.value();
                }
                g[i * rows + k] = v;
                g[k * rows + i] = v;
            }
        }
        let (vals, _) = jacobi_eigh(&g, rows);
        vals.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    };
    let sigma_sq = side(m).max(side(n));

    let mut r = S::zero();
    let mut e = a.clone();
    for (i, j, v) in a.nonzeros() {
        if v == S::zero() {
            continue;
        }
        // realization B1 = (A_ij / p_ij) e_i e_j^T; A - B1 is A with one
        // cell changed and has the same norm as B1 - A
        e.set(i, j, v - v / p.get(i, j));
        r = r.max(exact_spectral(&e));
        e.set(i, j, v);
    }
    Ok((sigma_sq.sqrt(), r))
}

/// Surrogate sigma-tilde and R-tilde.
pub fn sigma_r_tilde<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
) -> Result<(S, S)> {
    check_support(a, p)?;
    let (m, n) = (a.m, a.n);
    let mut row_sums = vec![KahanSum::<S>::new(); m];
    let mut col_sums = vec![KahanSum::<S>::new(); n];
    let mut r_tilde = S::zero();
    for (i, j, v) in a.nonzeros() {
        if v == S::zero() {
            continue;
        }
        let pij = p.get(i, j);
        let w = v * v / pij;
        row_sums[i].add(w);
        col_sums[j].add(w);
        r_tilde = r_tilde.max(v.abs() / pij);
    }
    let row_max = row_sums.iter().fold(S::zero(), |acc, s| acc.max(s.value()));
    let col_max = col_sums.iter().fold(S::zero(), |acc, s| acc.max(s.value()));
    Ok((row_max.max(col_max).sqrt(), r_tilde))
}

/// Positive root of eps^2 - eps*beta*R - alpha^2*sigma^2 = 0: the exact
/// epsilon at which the Bernstein tail equals delta.
pub fn eps1_from_sigma_r<S: Scalar>(sigma: S, r: S, params: &BernsteinParams<S>) -> S {
    let (alpha, beta) = (params.alpha, params.beta);
    if sigma == S::zero() && r == S::zero() {
        return S::zero();
    }
    let br = beta * r;
    let four = S::from_count(4);
    let two = S::from_count(2);
    (br + (br * br + four * alpha * alpha * sigma * sigma).sqrt()) / two
}

pub fn eps2_from_sigma_r<S: Scalar>(sigma: S, r: S, params: &BernsteinParams<S>) -> S {
    params.alpha * sigma + params.beta * r
}

/// eps5 = max_i [ alpha * sqrt(sum_j A_ij^2/p_ij) + beta * max_j |A_ij|/p_ij ].
pub fn eps5<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
    params: &BernsteinParams<S>,
) -> Result<S> {
    eps_rowwise(a, p, params, true)
}

/// Column-wise mirror of eps5.
pub fn eps6<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
    params: &BernsteinParams<S>,
) -> Result<S> {
    eps_rowwise(a, p, params, false)
}

fn eps_rowwise<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
    params: &BernsteinParams<S>,
    by_rows: bool,
) -> Result<S> {
    check_support(a, p)?;
    let lanes = if by_rows { a.m } else { a.n };
    let mut sq = vec![KahanSum::<S>::new(); lanes];
    let mut mx = vec![S::zero(); lanes];
    for (i, j, v) in a.nonzeros() {
        if v == S::zero() {
            continue;
        }
        let lane = if by_rows { i } else { j };
        let pij = p.get(i, j);
        sq[lane].add(v * v / pij);
        mx[lane] = mx[lane].max(v.abs() / pij);
    }
    let mut worst = S::zero();
    for lane in 0..lanes {
        worst = worst.max(params.alpha * sq[lane].value().sqrt() + params.beta * mx[lane]);
    }
    Ok(worst)
}

/// The Bernstein tail (m+n) exp(-s eps^2 / (sigma^2 + R eps / 3)).
pub fn bernstein_tail<S: Scalar>(
    eps: S,
    sigma: S,
    r: S,
    s: u64,
    m: usize,
    n: usize,
) -> S {
    let denom = sigma * sigma + r * eps / S::from_count(3);
    if denom == S::zero() {
        return S::zero();
    }
    let exponent = -(S::from_count(s as usize) * eps * eps) / denom;
    S::from_count(m + n) * exponent.exp()
}

/// Evaluate the full tower for distribution p on A.
pub fn eps_chain_report<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    p: &SmallDenseMatrix<S>,
    s: u64,
    delta: S,
) -> Result<EpsilonReport<S>> {
    let params = BernsteinParams::new(a.m, a.n, s, delta)?;
    let (sigma_exact, r_exact) = sigma_r_exact(a, p)?;
    let (sigma_tilde, r_tilde) = sigma_r_tilde(a, p)?;
    let e5 = eps5(a, p, &params)?;
    let e6 = eps6(a, p, &params)?;
    Ok(EpsilonReport {
        eps1: eps1_from_sigma_r(sigma_exact, r_exact, &params),
        eps2: eps2_from_sigma_r(sigma_exact, r_exact, &params),
        eps3: params.alpha * sigma_tilde + params.beta * r_tilde,
        eps4: e5.max(e6),
        eps5: e5,
        eps6: e6,
        sigma_exact,
        sigma_tilde,
        r_exact,
        r_tilde,
        params,
    })
}

/// Result of the brute-force comparison against the numerically optimal
/// entrywise distribution.
#[derive(Clone, Debug)]
pub struct NearOptimality<S: Scalar> {
    /// eps1(p_alg) / eps1(p_star_hat); >= 1 up to optimizer tolerance.
    pub ratio: S,
    pub eps_alg: S,
    pub eps_star: S,
    pub p_alg: SmallDenseMatrix<S>,
    pub p_star: SmallDenseMatrix<S>,
    pub converged: bool,
}

fn softmax_into<S: Scalar>(
    theta: &[f64],
    support: &[(usize, usize)],
    p: &mut SmallDenseMatrix<S>,
) {
    let mx = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let exps: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
    for e in &exps {
        z += e;
    }
    for (&(i, j), &e) in support.iter().zip(&exps) {
        p.set(i, j, S::from_f64_lossy(e / z));
    }
}

/// Compare Algorithm-style sampling against a numerically minimized eps1.
///
/// The optimizer runs gradient descent on the softmax reparameterization of
/// the simplex with central-difference gradients, from 100 random restarts
/// plus a restart at the sampler's own distribution (so the reported ratio
/// can never fall meaningfully below 1), then polishes with pairwise mass
/// moves of 1e-3.
pub fn near_optimality_check<S: Scalar>(
    a: &SmallDenseMatrix<S>,
    s: u64,
    delta: S,
    seed: u64,
) -> Result<NearOptimality<S>> {
    let support: Vec<(usize, usize)> = a
        .nonzeros()
        .filter(|&(_, _, v)| v != S::zero())
        .map(|(i, j, _)| (i, j))
        .collect();
    let nnz = support.len();
    if nnz == 0 {
        return Err(Error::ZeroMatrix);
    }
    if nnz > 8 {
        return Err(Error::InvalidParameter {
            what: format!("near-optimality oracle limited to 8 nonzeros, got {nnz}"),
        });
    }
    let params = BernsteinParams::new(a.m, a.n, s, delta)?;

    let profile = {
        let mut z = vec![S::zero(); a.m];
        let mut total = KahanSum::new();
        for (i, _, v) in a.nonzeros() {
            z[i] = z[i] + v.abs();
            total.add(v.abs());
        }
        RowProfile { z, total_l1: total.value(), per_row_l2sq: None }
    };
    let plan = make_plan(Scheme::Bernstein, profile, None, a.m, a.n, s, delta)?;
    let p_alg = plan_probabilities(a, &plan)?;
    let (sg, rr) = sigma_r_exact(a, &p_alg)?;
    let eps_alg = eps1_from_sigma_r(sg, rr, &params);

    let mut scratch = SmallDenseMatrix::zeros(a.m, a.n)?;
    let eval = |theta: &[f64], p: &mut SmallDenseMatrix<S>| -> S {
        softmax_into(theta, &support, p);
        match sigma_r_exact(a, p) {
            Ok((sg, rr)) => eps1_from_sigma_r(sg, rr, &params),
            Err(_) => S::infinity(),
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best_theta: Vec<f64> = support
        .iter()
        .map(|&(i, j)| p_alg.get(i, j).as_f64().max(1e-300).ln())
        .collect();
    let mut best_val = eval(&best_theta, &mut scratch);
    let mut converged = false;

    const RESTARTS: usize = 100;
    const H: f64 = 1e-6;
    for restart in 0..=RESTARTS {
        let mut theta: Vec<f64> = if restart == 0 {
            best_theta.clone()
        } else {
            (0..nnz).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()
        };
        let mut val = eval(&theta, &mut scratch);
        let mut step = 0.5;
        for _iter in 0..80 {
            let mut grad = vec![0.0; nnz];
            for d in 0..nnz {
                let save = theta[d];
                theta[d] = save + H;
                let up = eval(&theta, &mut scratch).as_f64();
                theta[d] = save - H;
                let dn = eval(&theta, &mut scratch).as_f64();
                theta[d] = save;
                grad[d] = (up - dn) / (2.0 * H);
            }
            let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-10 {
                converged = true;
                break;
            }
            // backtracking line search along -grad
            let mut improved = false;
            let mut trial_step = step;
            for _ in 0..25 {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(&grad)
                    .map(|(t, g)| t - trial_step * g)
                    .collect();
                let tv = eval(&trial, &mut scratch);
                if tv < val {
                    theta = trial;
                    val = tv;
                    step = trial_step * 1.5;
                    improved = true;
                    break;
                }
                trial_step *= 0.5;
            }
            if !improved {
                converged = true;
                break;
            }
        }
        if val < best_val {
            best_val = val;
            best_theta = theta;
        }
    }

    // pairwise mass moves on the simplex itself
    let mut p_star: SmallDenseMatrix<S> = SmallDenseMatrix::zeros(a.m, a.n)?;
    softmax_into(&best_theta, &support, &mut p_star);
    let mut probs: Vec<f64> = support.iter().map(|&(i, j)| p_star.get(i, j).as_f64()).collect();
    let step = 1e-3_f64;
    let eval_probs = |probs: &[f64], p: &mut SmallDenseMatrix<S>| -> S {
        for (&(i, j), &q) in support.iter().zip(probs) {
            p.set(i, j, S::from_f64_lossy(q));
        }
        match sigma_r_exact(a, p) {
            Ok((sg, rr)) => eps1_from_sigma_r(sg, rr, &params),
            Err(_) => S::infinity(),
        }
    };
    let mut cur = eval_probs(&probs, &mut p_star);
    loop {
        let mut moved = false;
        for from in 0..nnz {
            for to in 0..nnz {
                if from == to || probs[from] <= step {
                    continue;
                }
                let mut trial = probs.clone();
                trial[from] -= step;
                trial[to] += step;
                let tv = eval_probs(&trial, &mut scratch);
                if tv < cur {
                    probs = trial;
                    cur = tv;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    let eps_star = eval_probs(&probs, &mut p_star).min(best_val);
    let eps_star = if eps_star <= cur { eps_star } else { cur };

    let ratio = if eps_star > S::zero() { eps_alg / eps_star } else { S::one() };
    Ok(NearOptimality { ratio, eps_alg, eps_star, p_alg, p_star, converged })
}

/// Sample budgets implied by a target relative spectral error.
#[derive(Clone, Copy, Debug)]
pub struct SampleComplexity<S: Scalar> {
    /// nrd * sr / eps^2 * log(n/delta) + sqrt(sr * nd / eps^2 * log(n/delta)).
    pub theta_form: S,
    /// log((m+n)/delta) * (||A||_1 / eps* + sum_i ||A_(i)||_1^2 / eps*^2)
    /// with eps* = eps * ||A||_2.
    pub zeta_form: S,
}

pub fn sample_complexity_bound<S: Scalar>(
    stats: &MatrixStats<S>,
    m: usize,
    n: usize,
    eps: S,
    delta: S,
) -> Result<SampleComplexity<S>> {
    if eps <= S::zero() {
        return Err(Error::InvalidParameter { what: "eps must be positive".into() });
    }
    if delta <= S::zero() || delta >= S::one() {
        return Err(Error::InvalidParameter { what: "delta must lie in (0, 1)".into() });
    }
    let log_n = (S::from_count(n) / delta).ln();
    let e2 = eps * eps;
    let theta_form = stats.nrd * stats.sr / e2 * log_n + (stats.sr * stats.nd / e2 * log_n).sqrt();

    let log_mn = (S::from_count(m + n) / delta).ln();
    let eps_star = eps * stats.spec;
    let zeta_form = log_mn * (stats.l1 / eps_star + stats.sum_row_l1_sq / (eps_star * eps_star));
    Ok(SampleComplexity { theta_form, zeta_form })
}
