//! Synthetic collaborative-filtering matrix generator.
//!
//! Items get latent vectors u_i, users get latent vectors v_j (i.i.d.
//! standard Gaussians); cell (i, j) holds <u_i, v_j> plus Gaussian noise and
//! is retained with probability 1 - i/m, producing rows of sharply varying
//! density. Deterministic per seed and per row, so generation can be split
//! across row ranges.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EntryTriplet;

pub const DEFAULT_LATENT_DIM: usize = 10;
pub const DEFAULT_NOISE_SD: f64 = 1.0;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Items (rows).
    pub m: usize,
    /// Users (columns).
    pub n: usize,
    #[serde(default = "default_latent_dim")]
    pub d: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    pub seed: u64,
}

fn default_latent_dim() -> usize {
    DEFAULT_LATENT_DIM
}

fn default_noise_sd() -> f64 {
    DEFAULT_NOISE_SD
}

impl SynthConfig {
    pub fn new(m: usize, n: usize, seed: u64) -> Result<Self> {
        Self { m, n, d: DEFAULT_LATENT_DIM, noise_sd: DEFAULT_NOISE_SD, seed }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.m == 0 || self.n == 0 || self.d == 0 {
            return Err(Error::InvalidParameter { what: "m, n, d must be >= 1".into() });
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(Error::InvalidParameter { what: "noise_sd must be >= 0".into() });
        }
        Ok(self)
    }

    /// Sum of per-row retention probabilities times n.
    pub fn expected_nnz(&self) -> f64 {
        let m = self.m as f64;
        (0..self.m).map(|i| 1.0 - i as f64 / m).sum::<f64>() * self.n as f64
    }
}

/// Standard Gaussians by the Marsaglia polar method: draw (x, y) uniform in
/// the square until inside the unit disc, transform, cache the spare.
/// Chosen over ziggurat-style tables for an output sequence that is easy to
/// pin down exactly across platforms.
pub struct GaussianSource {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(rng: ChaCha12Rng) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let x = self.rng.random::<f64>() * 2.0 - 1.0;
            let y = self.rng.random::<f64>() * 2.0 - 1.0;
            let r2 = x * x + y * y;
            if r2 > 0.0 && r2 < 1.0 {
                let f = (-2.0 * r2.ln() / r2).sqrt();
                self.spare = Some(y * f);
                return x * f;
            }
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

// Substream layout: stream 0 draws the user latents once; stream 1 + i
// drives item i's latent vector, retention coins, and noise.
const USER_STREAM: u64 = 0;
const ROW_STREAM_BASE: u64 = 1;

fn substream(seed: u64, idx: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(idx);
    rng
}

/// Row-major lazy stream of the generated entries.
pub struct SynthStream {
    cfg: SynthConfig,
    /// User latents, n x d row-major.
    v: Vec<f64>,
    u_row: Vec<f64>,
    row_src: GaussianSource,
    i: usize,
    j: usize,
}

impl SynthStream {
    fn start_row(&mut self, i: usize) {
        self.row_src = GaussianSource::new(substream(self.cfg.seed, ROW_STREAM_BASE + i as u64));
        for u in self.u_row.iter_mut() {
            *u = self.row_src.next_gaussian();
        }
        self.i = i;
        self.j = 0;
    }
}

impl Iterator for SynthStream {
    type Item = EntryTriplet;

    fn next(&mut self) -> Option<EntryTriplet> {
        loop {
            if self.i >= self.cfg.m {
                return None;
            }
            if self.j >= self.cfg.n {
                let next_row = self.i + 1;
                if next_row >= self.cfg.m {
                    self.i = next_row;
                    return None;
                }
                self.start_row(next_row);
            }
            let (i, j) = (self.i, self.j);
            self.j += 1;
            let keep = 1.0 - i as f64 / self.cfg.m as f64;
            if self.row_src.next_uniform() >= keep {
                continue;
            }
            let d = self.cfg.d;
            let mut dot = 0.0;
            for t in 0..d {
                dot += self.u_row[t] * self.v[j * d + t];
            }
            let value = dot + self.cfg.noise_sd * self.row_src.next_gaussian();
            return Some(EntryTriplet::new(i, j, value));
        }
    }
}

/// Generate the full stream in row-major order.
pub fn generate(cfg: SynthConfig) -> Result<SynthStream> {
    let cfg = cfg.validated()?;
    let mut user_src = GaussianSource::new(substream(cfg.seed, USER_STREAM));
    let mut v = vec![0.0; cfg.n * cfg.d];
    for x in v.iter_mut() {
        *x = user_src.next_gaussian();
    }
    let mut stream = SynthStream {
        cfg,
        v,
        u_row: vec![0.0; cfg.d],
        row_src: GaussianSource::new(substream(cfg.seed, ROW_STREAM_BASE)),
        i: 0,
        j: 0,
    };
    stream.start_row(0);
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(SynthConfig::new(0, 5, 1).is_err());
        assert!(SynthConfig { m: 2, n: 2, d: 2, noise_sd: -1.0, seed: 0 }.validated().is_err());
        assert!(SynthConfig::new(3, 4, 1).is_ok());
    }

    #[test]
    fn reproducible_bit_exact() {
        let cfg = SynthConfig::new(20, 30, 99).unwrap();
        let a: Vec<EntryTriplet> = generate(cfg).unwrap().collect();
        let b: Vec<EntryTriplet> = generate(cfg).unwrap().collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.row, y.row);
            assert_eq!(x.col, y.col);
            assert_eq!(x.value.to_bits(), y.value.to_bits());
        }
    }

    #[test]
    fn row_major_order_and_bounds() {
        let cfg = SynthConfig::new(10, 40, 3).unwrap();
        let entries: Vec<EntryTriplet> = generate(cfg).unwrap().collect();
        assert!(!entries.is_empty());
        for w in entries.windows(2) {
            assert!(
                (w[0].row, w[0].col) < (w[1].row, w[1].col),
                "not strictly row-major"
            );
        }
        for e in &entries {
            assert!(e.row < 10 && e.col < 40);
        }
    }

    #[test]
    fn first_row_fully_retained() {
        let cfg = SynthConfig::new(8, 100, 11).unwrap();
        let row0 = generate(cfg).unwrap().filter(|e| e.row == 0).count();
        assert_eq!(row0, 100);
    }

    #[test]
    fn retention_rates_track_row_index() {
        // 30 seeds, every row count inside 4-sigma binomial bands
        let (m, n) = (50usize, 2000usize);
        for seed in 0..30u64 {
            let cfg = SynthConfig::new(m, n, seed).unwrap();
            let mut counts = vec![0usize; m];
            for e in generate(cfg).unwrap() {
                counts[e.row] += 1;
            }
            for i in 0..m {
                let p = 1.0 - i as f64 / m as f64;
                let mean = n as f64 * p;
                let sd = (n as f64 * p * (1.0 - p)).sqrt();
                let dev = (counts[i] as f64 - mean).abs();
                assert!(dev <= 4.0 * sd + 1e-9, "row {i} count {} mean {mean}", counts[i]);
            }
        }
    }

    #[test]
    fn entry_variance_matches_model() {
        // Var(<u, v> + noise) = d + noise_sd^2 for standard Gaussian latents
        let cfg = SynthConfig { m: 200, n: 2000, d: 10, noise_sd: 1.0, seed: 7 };
        let values: Vec<f64> = generate(cfg).unwrap().map(|e| e.value).collect();
        let k = values.len() as f64;
        let mean: f64 = values.iter().sum::<f64>() / k;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        let expect = 10.0 + 1.0;
        // the dominant fluctuation is the finite pool of shared latent
        // vectors: avg ||u_i||^2 over m items has SD sqrt(2d/m), so the
        // realized variance wobbles by about d * sqrt(2/m) regardless of
        // how many entries are drawn
        let latent_sd = (2.0 / cfg.m as f64).sqrt() * cfg.d as f64
            + (2.0 / cfg.n as f64).sqrt() * cfg.d as f64
            + (3.0 * expect * expect / k).sqrt();
        let band = 3.0 * latent_sd;
        assert!((var - expect).abs() < band, "var {var} expect {expect} band {band}");
    }

    #[test]
    fn gaussian_source_moments() {
        let mut src = GaussianSource::new(substream(5, 0));
        let draws = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let g = src.next_gaussian();
            sum += g;
            sumsq += g * g;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn expected_nnz_matches_empirical() {
        let cfg = SynthConfig::new(60, 500, 21).unwrap();
        let count = generate(cfg).unwrap().count() as f64;
        let expect = cfg.expected_nnz();
        assert!((count - expect).abs() < 5.0 * expect.sqrt());
    }
}
