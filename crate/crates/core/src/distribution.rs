//! Sampling distributions over matrix entries: the Bernstein-optimal row
//! distribution (solved by bisection on zeta) and the Row-L1 / L1 / L2 /
//! trimmed-L2 baselines, all exposed through one entry-probability model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{KahanSum, Scalar};
use crate::types::{EntryTriplet, RowProfile};

/// alpha = sqrt(log((m+n)/delta)/s), beta = log((m+n)/delta)/(3s).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BernsteinParams<S: Scalar> {
    pub alpha: S,
    pub beta: S,
    pub s: u64,
    pub delta: S,
}

/// Default failure probability, the constant-success-probability regime.
pub const DEFAULT_DELTA: f64 = 0.1;

impl<S: Scalar> BernsteinParams<S> {
    pub fn new(m: usize, n: usize, s: u64, delta: S) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidParameter { what: "sample budget s must be >= 1".into() });
        }
        if delta <= S::zero() || delta >= S::one() {
            return Err(Error::InvalidParameter { what: format!("delta {delta} outside (0,1)") });
        }
        let log_term = (S::from_count(m + n) / delta).ln();
        let s_f = S::from_f64_lossy(s as f64);
        Ok(Self {
            alpha: (log_term / s_f).sqrt(),
            beta: log_term / (S::from_count(3) * s_f),
            s,
            delta,
        })
    }

    /// Build with explicit alpha/beta (used by tests to force the two
    /// limit regimes).
    pub fn raw(alpha: S, beta: S, s: u64, delta: S) -> Self {
        Self { alpha, beta, s, delta }
    }
}

/// rho_i(zeta) = (alpha z_i / 2 zeta + sqrt((alpha z_i / 2 zeta)^2 + beta z_i / zeta))^2.
/// The positive quadratic root involves no subtraction, so direct
/// evaluation is numerically stable.
pub fn rho_of_zeta<S: Scalar>(z_i: S, zeta: S, params: &BernsteinParams<S>) -> Result<S> {
    if zeta <= S::zero() {
        return Err(Error::NonPositiveZeta { zeta: zeta.as_f64() });
    }
    if z_i == S::zero() {
        return Ok(S::zero());
    }
    let two = S::from_count(2);
    let t = params.alpha * z_i / (two * zeta);
    let u = params.beta * z_i / zeta;
    let root = t + (t * t + u).sqrt();
    Ok(root * root)
}

fn rho_sum<S: Scalar>(z: &[S], zeta: S, params: &BernsteinParams<S>) -> Result<S> {
    let mut acc = KahanSum::new();
    for &zi in z {
        acc.add(rho_of_zeta(zi, zeta, params)?);
    }
    Ok(acc.value())
}

/// Find zeta_1 with sum_i rho_i(zeta_1) = 1 by bisection on the strictly
/// decreasing map zeta -> sum rho_i(zeta). Returns (zeta_1, rho) with rho
/// post-normalized to sum exactly to one.
pub fn solve_zeta<S: Scalar>(
    profile: &RowProfile<S>,
    params: &BernsteinParams<S>,
) -> Result<(S, Vec<S>)> {
    let z = &profile.z;
    let mut min_pos = S::infinity();
    let mut sum_z = KahanSum::new();
    let mut sum_z_sq = KahanSum::new();
    for &zi in z {
        if !zi.is_finite() || zi < S::zero() {
            return Err(Error::InvalidParameter {
                what: format!("row weight {zi} must be finite and nonnegative"),
            });
        }
        if zi > S::zero() && zi < min_pos {
            min_pos = zi;
        }
        sum_z.add(zi);
        sum_z_sq.add(zi * zi);
    }
    if !min_pos.is_finite() {
        return Err(Error::AllRowsZero);
    }

    // At zeta = beta * z_min the minimal positive row alone has rho >= 1,
    // so the sum is >= 1 there.
    let mut lo = params.beta * min_pos;
    let mut hi = params.alpha * params.alpha * sum_z_sq.value()
        + S::from_count(2) * params.beta * sum_z.value();
    if hi <= lo {
        hi = lo * S::from_count(2);
    }
    while rho_sum(z, hi, params)? >= S::one() {
        hi = hi * S::from_count(2);
    }

    let tol_sum = S::from_f64_lossy(1e-12);
    let tol_bracket = S::from_f64_lossy(1e-14);
    let two = S::from_count(2);
    let mut mid = (lo + hi) / two;
    for _ in 0..200 {
        mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break; // bracket exhausted at this precision
        }
        let s = rho_sum(z, mid, params)?;
        if (s - S::one()).abs() <= tol_sum {
            break;
        }
        if s > S::one() {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= tol_bracket * mid {
            mid = (lo + hi) / two;
            break;
        }
    }

    let mut rho: Vec<S> = z
        .iter()
        .map(|&zi| rho_of_zeta(zi, mid, params))
        .collect::<Result<_>>()?;
    let mut total = KahanSum::new();
    for &r in &rho {
        total.add(r);
    }
    let total = total.value();
    for r in rho.iter_mut() {
        *r = *r / total;
    }
    Ok((mid, rho))
}

/// Sampling scheme tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Bernstein,
    RowL1,
    L1,
    L2,
    L2Trim { theta: f64 },
}

impl Scheme {
    pub fn parse(name: &str, theta: Option<f64>) -> Result<Self> {
        match name {
            "bernstein" => Ok(Self::Bernstein),
            "row-l1" | "row_l1" => Ok(Self::RowL1),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "l2-trim" | "l2_trim" => Ok(Self::L2Trim { theta: theta.unwrap_or(0.1) }),
            other => Err(Error::UnknownScheme { name: other.into() }),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Bernstein => "bernstein".into(),
            Self::RowL1 => "row_l1".into(),
            Self::L1 => "l1".into(),
            Self::L2 => "l2".into(),
            Self::L2Trim { theta } => format!("l2_trim_{theta}"),
        }
    }

    pub fn is_row_based(&self) -> bool {
        matches!(self, Self::Bernstein | Self::RowL1 | Self::L1)
    }
}

/// Domain over which the trimmed-L2 mean E[|A_ij|^2] is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMeanDomain {
    /// Average over nonzero entries (default; matches how sparse corpora
    /// are stored).
    Nonzeros,
    /// Average over all m*n cells.
    AllCells,
}

impl Default for TrimMeanDomain {
    fn default() -> Self {
        Self::Nonzeros
    }
}

/// Per-entry squared-mass data the L2 schemes need (second pass).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct L2Mass<S: Scalar> {
    /// Absolute trim threshold on A_ij^2; entries at or below it get p = 0.
    pub threshold_sq: S,
    /// Total squared mass over kept entries.
    pub kept_sq_mass: S,
}

/// Compute the absolute squared trim threshold theta * E[|A_ij|^2].
pub fn trim_threshold_sq<S: Scalar>(
    theta: S,
    frob_sq: S,
    nnz: u64,
    cells: u64,
    domain: TrimMeanDomain,
) -> S {
    let denom = match domain {
        TrimMeanDomain::Nonzeros => nnz,
        TrimMeanDomain::AllCells => cells,
    };
    theta * frob_sq / S::from_f64_lossy(denom as f64)
}

/// Squared mass of the entries surviving the trim threshold. One extra
/// pass over the stream.
pub fn kept_sq_mass<I>(stream: I, threshold_sq: f64) -> f64
where
    I: IntoIterator<Item = EntryTriplet>,
{
    let mut acc = KahanSum::new();
    for e in stream {
        let sq = e.value * e.value;
        if sq > threshold_sq {
            acc.add(sq);
        }
    }
    acc.value()
}

/// A fully resolved sampling plan: maps any entry to its probability p_ij.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingPlan<S: Scalar> {
    pub scheme: Scheme,
    pub s: u64,
    pub delta: S,
    /// Row distribution, present for row-based schemes.
    pub rho: Option<Vec<S>>,
    /// Solved zeta_1 (bernstein only).
    pub zeta: Option<S>,
    pub params: Option<BernsteinParams<S>>,
    pub z: RowProfile<S>,
    pub l2: Option<L2Mass<S>>,
}

impl<S: Scalar> SamplingPlan<S> {
    /// p_ij for a single entry. Zero for trimmed-out entries.
    pub fn entry_probability(&self, e: &EntryTriplet) -> Result<S> {
        let v = S::from_f64_lossy(e.value);
        match self.scheme {
            Scheme::Bernstein | Scheme::RowL1 | Scheme::L1 => {
                let zi = self.z.z[e.row];
                if zi <= S::zero() {
                    return Err(Error::ProfileMismatch { row: e.row });
                }
                let rho_i = self.rho.as_ref().expect("row-based plan has rho")[e.row];
                Ok(rho_i * v.abs() / zi)
            }
            Scheme::L2 | Scheme::L2Trim { .. } => {
                let l2 = self.l2.as_ref().expect("l2 plan has mass data");
                let sq = v * v;
                if sq > l2.threshold_sq {
                    Ok(sq / l2.kept_sq_mass)
                } else {
                    Ok(S::zero())
                }
            }
        }
    }

    pub fn m(&self) -> usize {
        self.z.m()
    }
}

/// On-disk JSON form of a plan, for reuse across passes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanDocument {
    pub scheme: String,
    pub s: u64,
    pub delta: f64,
    pub zeta: Option<f64>,
    pub rho: Option<Vec<f64>>,
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<L2Mass<f64>>,
}

impl SamplingPlan<f64> {
    pub fn to_document(&self) -> PlanDocument {
        let trim_theta = match self.scheme {
            Scheme::L2Trim { theta } => Some(theta),
            _ => None,
        };
        PlanDocument {
            scheme: match self.scheme {
                Scheme::Bernstein => "bernstein".into(),
                Scheme::RowL1 => "row_l1".into(),
                Scheme::L1 => "l1".into(),
                Scheme::L2 => "l2".into(),
                Scheme::L2Trim { .. } => "l2_trim".into(),
            },
            s: self.s,
            delta: self.delta,
            zeta: self.zeta,
            rho: self.rho.clone(),
            z: self.z.z.clone(),
            trim_theta,
            l2: self.l2,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

/// Build a plan for any scheme. L2-based schemes must supply `l2`.
pub fn make_plan<S: Scalar>(
    scheme: Scheme,
    profile: RowProfile<S>,
    l2: Option<L2Mass<S>>,
    m: usize,
    n: usize,
    s: u64,
    delta: S,
) -> Result<SamplingPlan<S>> {
    match scheme {
        Scheme::Bernstein => {
            let params = BernsteinParams::new(m, n, s, delta)?;
            let (zeta, rho) = solve_zeta(&profile, &params)?;
            Ok(SamplingPlan {
                scheme,
                s,
                delta,
                rho: Some(rho),
                zeta: Some(zeta),
                params: Some(params),
                z: profile,
                l2: None,
            })
        }
        Scheme::RowL1 | Scheme::L1 => {
            let mut total = KahanSum::new();
            for &zi in &profile.z {
                total.add(if scheme == Scheme::RowL1 { zi * zi } else { zi });
            }
            let total = total.value();
            if total <= S::zero() {
                return Err(Error::AllRowsZero);
            }
            let rho = profile
                .z
                .iter()
                .map(|&zi| if scheme == Scheme::RowL1 { zi * zi / total } else { zi / total })
                .collect();
            Ok(SamplingPlan {
                scheme,
                s,
                delta,
                rho: Some(rho),
                zeta: None,
                params: None,
                z: profile,
                l2: None,
            })
        }
        Scheme::L2 | Scheme::L2Trim { .. } => {
            let l2 = l2.ok_or_else(|| Error::InvalidParameter {
                what: "l2 schemes need per-entry squared mass".into(),
            })?;
            if l2.kept_sq_mass <= S::zero() {
                let theta = match scheme {
                    Scheme::L2Trim { theta } => theta,
                    _ => 0.0,
                };
                return Err(Error::TrimKillsAll { theta });
            }
            Ok(SamplingPlan {
                scheme,
                s,
                delta,
                rho: None,
                zeta: None,
                params: None,
                z: profile,
                l2: Some(l2),
            })
        }
    }
}
