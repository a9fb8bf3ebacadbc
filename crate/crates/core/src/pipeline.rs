//! Two-pass sketching pipeline over re-playable entry streams, shared by
//! the command-line tool and the test harness.
//!
//! Pass 1 accumulates the row profile (and whatever mass totals the chosen
//! scheme needs), the plan is solved from that profile, and pass 2 runs the
//! reservoir sampler. Peak state between passes is O(m) plus constant
//! sampler state regardless of the number of nonzeros.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distribution::{
    kept_sq_mass, make_plan, trim_threshold_sq, L2Mass, SamplingPlan, Scheme, TrimMeanDomain,
};
use crate::error::{Error, Result};
use crate::mm::MmReader;
use crate::sampler::{sample_entries, FileSpill, MemorySpill, RunRng, SpillStore};
use crate::sketch::{build_sketch, encode_sketch, EncodedSketch, SketchMatrix};
use crate::synth::{generate, SynthConfig};
use crate::types::{EntryTriplet, MatrixDims, RowProfile, StreamAccumulator, StreamProfile};

/// A matrix entry stream that can be replayed from the start, once per pass.
pub enum StreamSource {
    File(PathBuf),
    Synth(SynthConfig),
    Memory { dims: MatrixDims, entries: Vec<EntryTriplet> },
}

impl StreamSource {
    pub fn dims(&self) -> Result<MatrixDims> {
        match self {
            Self::File(path) => Ok(MmReader::open(path)?.dims),
            Self::Synth(cfg) => {
                // nnz is not known ahead of generation; report the expected
                // count, exact counts come from the profile pass
                MatrixDims::new(cfg.m, cfg.n, cfg.expected_nnz() as u64)
            }
            Self::Memory { dims, .. } => Ok(*dims),
        }
    }

    pub fn stream(&self) -> Result<Box<dyn Iterator<Item = Result<EntryTriplet>> + '_>> {
        match self {
            Self::File(path) => Ok(Box::new(MmReader::open(path)?)),
            Self::Synth(cfg) => Ok(Box::new(generate(*cfg)?.map(Ok))),
            Self::Memory { entries, .. } => Ok(Box::new(entries.iter().map(|e| Ok(*e)))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::File(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            Self::Synth(cfg) => format!("synth-{}x{}", cfg.m, cfg.n),
            Self::Memory { dims, .. } => format!("mem-{}x{}", dims.m, dims.n),
        }
    }
}

/// Pass 1: exact stream profile.
pub fn profile_pass(source: &StreamSource, track_columns: bool) -> Result<StreamProfile> {
    let dims = source.dims()?;
    let mut acc = StreamAccumulator::new(dims, track_columns);
    for e in source.stream()? {
        acc.push(&e?)?;
    }
    Ok(acc.finish())
}

/// Everything the sketch pass needs, plus what the summary reports.
pub struct PreparedPlan {
    pub plan: SamplingPlan<f64>,
    pub dims: MatrixDims,
    pub frob_sq: f64,
}

/// Solve the sampling plan for `scheme`, running as many profile passes as
/// the scheme requires (one for row-based schemes and plain L2, two for
/// trimmed L2 whose threshold depends on the total squared mass).
pub fn prepare_plan(
    source: &StreamSource,
    scheme: Scheme,
    s: u64,
    delta: f64,
    assume_uniform_z: bool,
    trim_domain: TrimMeanDomain,
) -> Result<PreparedPlan> {
    let profile = profile_pass(source, false)?;
    let dims = MatrixDims {
        nnz: profile.nnz_seen,
        ..profile.dims
    };
    let frob_sq = profile.frob_sq;

    let row_profile = if assume_uniform_z && scheme.is_row_based() {
        RowProfile::uniform(dims.m)
    } else {
        profile.profile
    };

    let l2 = match scheme {
        Scheme::L2 => Some(L2Mass { threshold_sq: 0.0, kept_sq_mass: frob_sq }),
        Scheme::L2Trim { theta } => {
            let threshold_sq = trim_threshold_sq(
                theta,
                frob_sq,
                dims.nnz,
                dims.m as u64 * dims.n as u64,
                trim_domain,
            );
            let mut first_err: Option<Error> = None;
            let kept = kept_sq_mass(
                source.stream()?.map_while(|r| match r {
                    Ok(e) => Some(e),
                    Err(e) => {
                        first_err = Some(e);
                        None
                    }
                }),
                threshold_sq,
            );
            if let Some(e) = first_err {
                return Err(e);
            }
            Some(L2Mass { threshold_sq, kept_sq_mass: kept })
        }
        _ => None,
    };

    let plan = make_plan(scheme, row_profile, l2, dims.m, dims.n, s, delta)?;
    Ok(PreparedPlan { plan, dims, frob_sq })
}

/// Pass 2: sample the stream under the plan and assemble the sketch.
pub fn sketch_pass(
    source: &StreamSource,
    prepared: &PreparedPlan,
    seed: u64,
    spill: &mut dyn SpillStore,
) -> Result<SketchMatrix> {
    let rng = RunRng::new(seed);
    let mut first_err: Option<Error> = None;
    let stream = source.stream()?.map_while(|r| match r {
        Ok(e) => Some(e),
        Err(e) => {
            first_err = Some(e);
            None
        }
    });
    let tally = sample_entries(stream, &prepared.plan, &rng, spill);
    if let Some(e) = first_err {
        return Err(e);
    }
    build_sketch(&tally?, &prepared.plan, prepared.dims)
}

/// Prefer the in-memory spill for modest budgets, the temp-file spill once
/// the stack would get large.
pub fn default_spill(s: u64) -> Result<Box<dyn SpillStore>> {
    const MEMORY_SPILL_LIMIT: u64 = 1 << 20;
    if s <= MEMORY_SPILL_LIMIT {
        Ok(Box::new(MemorySpill::new()))
    } else {
        Ok(Box::new(FileSpill::new()?))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SketchSummary {
    pub matrix: String,
    pub scheme: String,
    pub m: usize,
    pub n: usize,
    pub nnz: u64,
    pub s: u64,
    pub delta: f64,
    pub seed: u64,
    pub zeta: Option<f64>,
    /// First few rho entries, enough to eyeball the distribution.
    pub rho_head: Option<Vec<f64>>,
    pub sketch_nnz: u64,
    pub encoded_bytes: usize,
    pub payload_bytes: usize,
    pub bits_per_sample: f64,
    pub profile_pass_ms: u128,
    pub sample_pass_ms: u128,
}

/// End-to-end sketch run with timing, as the CLI reports it.
pub fn run_sketch(
    source: &StreamSource,
    scheme: Scheme,
    s: u64,
    delta: f64,
    seed: u64,
    assume_uniform_z: bool,
    trim_domain: TrimMeanDomain,
) -> Result<(SketchMatrix, EncodedSketch, SketchSummary)> {
    let t0 = std::time::Instant::now();
    let prepared = prepare_plan(source, scheme, s, delta, assume_uniform_z, trim_domain)?;
    let profile_pass_ms = t0.elapsed().as_millis();

    let t1 = std::time::Instant::now();
    let mut spill = default_spill(s)?;
    let sketch = sketch_pass(source, &prepared, seed, spill.as_mut())?;
    let sample_pass_ms = t1.elapsed().as_millis();

    let encoded = encode_sketch(&sketch);
    let summary = SketchSummary {
        matrix: source.label(),
        scheme: scheme.name(),
        m: prepared.dims.m,
        n: prepared.dims.n,
        nnz: prepared.dims.nnz,
        s,
        delta,
        seed,
        zeta: prepared.plan.zeta,
        rho_head: prepared
            .plan
            .rho
            .as_ref()
            .map(|r| r.iter().take(8).copied().collect()),
        sketch_nnz: sketch.entries.len() as u64,
        encoded_bytes: encoded.bytes.len(),
        payload_bytes: encoded.payload_bytes,
        bits_per_sample: encoded.bits_per_sample(s),
        profile_pass_ms,
        sample_pass_ms,
    };
    Ok((sketch, encoded, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::decode_sketch;

    fn memory_source() -> StreamSource {
        let entries = vec![
            EntryTriplet::new(0, 0, 1.0),
            EntryTriplet::new(0, 2, -2.0),
            EntryTriplet::new(1, 1, 3.0),
            EntryTriplet::new(2, 0, 0.5),
        ];
        StreamSource::Memory { dims: MatrixDims::new(3, 3, 4).unwrap(), entries }
    }

    #[test]
    fn deterministic_end_to_end() {
        let src = memory_source();
        let run = |seed| {
            run_sketch(&src, Scheme::Bernstein, 100, 0.1, seed, false, TrimMeanDomain::default())
                .unwrap()
        };
        let (_, e1, s1) = run(5);
        let (_, e2, s2) = run(5);
        assert_eq!(e1.bytes, e2.bytes);
        assert_eq!(s1.bits_per_sample, s2.bits_per_sample);
        let (_, e3, _) = run(6);
        assert_ne!(e1.bytes, e3.bytes);
    }

    #[test]
    fn round_trips_through_codec() {
        let src = memory_source();
        let (sketch, encoded, _) =
            run_sketch(&src, Scheme::L2, 50, 0.1, 3, false, TrimMeanDomain::default()).unwrap();
        let back = decode_sketch(&encoded.bytes).unwrap();
        assert_eq!(back, sketch);
    }

    #[test]
    fn synth_source_replays_identically() {
        let cfg = SynthConfig::new(12, 30, 4).unwrap();
        let src = StreamSource::Synth(cfg);
        let a: Vec<EntryTriplet> = src.stream().unwrap().map(|r| r.unwrap()).collect();
        let b: Vec<EntryTriplet> = src.stream().unwrap().map(|r| r.unwrap()).collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
        }
    }

    #[test]
    fn assume_uniform_skips_profile_weights() {
        let src = memory_source();
        let p = prepare_plan(&src, Scheme::RowL1, 10, 0.1, true, TrimMeanDomain::default())
            .unwrap();
        let z = &p.plan.z.z;
        assert!(z.iter().all(|&v| v == z[0]));
    }

    #[test]
    fn trim_plan_reflects_domain() {
        let src = memory_source();
        let nz = prepare_plan(
            &src,
            Scheme::L2Trim { theta: 0.5 },
            10,
            0.1,
            false,
            TrimMeanDomain::Nonzeros,
        )
        .unwrap();
        let all = prepare_plan(
            &src,
            Scheme::L2Trim { theta: 0.5 },
            10,
            0.1,
            false,
            TrimMeanDomain::AllCells,
        )
        .unwrap();
        let l2nz = nz.plan.l2.unwrap();
        let l2all = all.plan.l2.unwrap();
        // fewer cells in the nonzero domain -> higher mean -> higher cut
        assert!(l2nz.threshold_sq > l2all.threshold_sq);
        assert!(l2nz.kept_sq_mass <= l2all.kept_sq_mass);
    }
}
