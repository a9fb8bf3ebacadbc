//! Command-line front end: stats, two-pass sketching, sketch evaluation,
//! synthetic matrix generation, and experiment sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng as _;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use sketchstream::distribution::{PlanDocument, Scheme, TrimMeanDomain, DEFAULT_DELTA};
use sketchstream::error::{Error, Result};
use sketchstream::mm::{read_matrix_market, write_matrix_market};
use sketchstream::pipeline::{run_sketch, StreamSource};
use sketchstream::sketch::{decode_sketch, SketchMatrix};
use sketchstream::spectral::{
    projected_frob, spectral_norm, top_k_singular, CooMatrix, DiffOp, LinOp, SPECTRAL_MAX_ITER,
    SPECTRAL_TOL,
};
use sketchstream::synth::{generate, SynthConfig, DEFAULT_LATENT_DIM, DEFAULT_NOISE_SD};
use sketchstream::types::{accumulate_stream_profile, check_data_matrix, MatrixStats};

pub const CSV_HEADER: &str =
    "matrix,scheme,s,seed,k,left_ratio,right_ratio,spec_err,bits_per_sample,zeta";

/// Subspace iterations used when comparing sketches; enough for the
/// well-separated spectra these experiments produce.
const EVAL_SUBSPACE_ITERS: usize = 60;

#[derive(Parser)]
#[command(name = "sketchstream", version, about = "Streaming element-wise matrix sketching")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Matrix metrics and the data-matrix condition report, as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Two-pass sketch of a Matrix Market file into SKB1.
    Sketch(SketchArgs),
    /// Compare a sketch against its source matrix; prints one CSV row.
    Evaluate(EvaluateArgs),
    /// Generate the synthetic collaborative-filtering matrix.
    Synth(SynthArgs),
    /// Sweep (scheme x s x seed) cells from a manifest into a CSV table.
    Experiment {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct SketchArgs {
    #[arg(long)]
    input: PathBuf,
    /// bernstein | row-l1 | l1 | l2 | l2-trim
    #[arg(long, default_value = "bernstein")]
    scheme: String,
    /// Trim fraction theta for l2-trim.
    #[arg(long)]
    trim_theta: Option<f64>,
    /// Domain of the trim mean: nonzeros | all-cells.
    #[arg(long, default_value = "nonzeros")]
    trim_domain: String,
    #[arg(long)]
    samples: u64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the profile pass and treat all rows as equally heavy.
    #[arg(long)]
    assume_uniform_z: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the solved plan as JSON.
    #[arg(long)]
    plan_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    sketch: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Label for the seed column (the sketch file does not store it).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plan JSON written by `sketch --plan-out`, used to fill the zeta column.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Print the CSV header line before the row.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
    d: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_SD)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Stats { input } => cmd_stats(&input),
        Cmd::Sketch(args) => cmd_sketch(&args),
        Cmd::Evaluate(args) => cmd_evaluate(&args),
        Cmd::Synth(args) => cmd_synth(&args),
        Cmd::Experiment { manifest } => cmd_experiment(&manifest),
    };
    if let Err(e) = res {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn parse_trim_domain(name: &str) -> Result<TrimMeanDomain> {
    match name {
        "nonzeros" => Ok(TrimMeanDomain::Nonzeros),
        "all-cells" | "all_cells" => Ok(TrimMeanDomain::AllCells),
        other => Err(Error::InvalidParameter {
            what: format!("unknown trim domain '{other}' (expected nonzeros | all-cells)"),
        }),
    }
}

fn spectral_rng(tag: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED);
    rng.set_stream(tag);
    rng
}

// ---------------------------------------------------------------- stats --

#[derive(Serialize)]
struct StatsOutput {
    m: usize,
    n: usize,
    nnz: u64,
    zeros_dropped: u64,
    stats: MatrixStats<f64>,
    spectral_converged: bool,
    data_matrix: sketchstream::types::DataMatrixReport,
}

fn cmd_stats(input: &Path) -> Result<()> {
    let contents = read_matrix_market(input)?;
    let dims = contents.dims;
    let profile = accumulate_stream_profile(contents.entries.iter().copied(), dims, true)?;

    let coo = CooMatrix::new(dims.m, dims.n, contents.entries);
    let est = spectral_norm(&coo, SPECTRAL_TOL, SPECTRAL_MAX_ITER, &mut spectral_rng(0))?;
    let stats = MatrixStats::from_profile(&profile.profile, profile.frob_sq, est.value)?;
    let report = check_data_matrix(&profile.profile, est.value, profile.max_col_l1, &dims)?;

    let out = StatsOutput {
        m: dims.m,
        n: dims.n,
        nnz: profile.nnz_seen,
        zeros_dropped: profile.zeros_dropped,
        stats,
        spectral_converged: est.converged,
        data_matrix: report,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

// --------------------------------------------------------------- sketch --

/// Write bytes, never leaving a partial file behind on failure.
fn write_file_cleanly(path: &Path, bytes: &[u8]) -> Result<()> {
    match fs::write(path, bytes) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(path);
            Err(e.into())
        }
    }
}

fn cmd_sketch(args: &SketchArgs) -> Result<()> {
    let scheme = Scheme::parse(&args.scheme, args.trim_theta)?;
    let trim_domain = parse_trim_domain(&args.trim_domain)?;
    let source = StreamSource::File(args.input.clone());

    let result = run_sketch(
        &source,
        scheme,
        args.samples,
        args.delta,
        args.seed,
        args.assume_uniform_z,
        trim_domain,
    );
    let (sketch, encoded, summary) = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_file(&args.out);
            return Err(e);
        }
    };

    write_file_cleanly(&args.out, &encoded.bytes)?;
    if let Some(plan_path) = &args.plan_out {
        // rebuild the document from the sketch run's plan numbers
        let prepared = sketchstream::pipeline::prepare_plan(
            &source,
            scheme,
            args.samples,
            args.delta,
            args.assume_uniform_z,
            trim_domain,
        )?;
        let doc: PlanDocument = prepared.plan.to_document();
        write_file_cleanly(plan_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    }
    let _ = sketch;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

// ------------------------------------------------------------- evaluate --

struct SketchFile {
    sketch: SketchMatrix,
    payload_bytes: usize,
}

fn load_sketch_file(path: &Path) -> Result<SketchFile> {
    let bytes = fs::read(path)?;
    let sketch = decode_sketch(&bytes)?;
    // fixed header: magic 4, version 1, three u64 dims, scheme tag 1,
    // m row scales, then payload, then u64 crc
    let header = 4 + 1 + 24 + 1 + 8 * sketch.dims.m;
    let payload_bytes = bytes.len().saturating_sub(header + 8);
    Ok(SketchFile { sketch, payload_bytes })
}

struct EvalRow {
    matrix: String,
    scheme: String,
    s: u64,
    seed: u64,
    k: usize,
    left_ratio: f64,
    right_ratio: f64,
    spec_err: f64,
    bits_per_sample: f64,
    zeta: Option<f64>,
}

impl EvalRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.3},{}",
            self.matrix,
            self.scheme,
            self.s,
            self.seed,
            self.k,
            self.left_ratio,
            self.right_ratio,
            self.spec_err,
            self.bits_per_sample,
            self.zeta.map(|z| format!("{z:.6}")).unwrap_or_default(),
        )
    }
}

/// Reference quantities of A shared by every sketch evaluation against it.
struct Reference {
    a: CooMatrix,
    spec: f64,
    left_denom: f64,
    right_denom: f64,
    k: usize,
}

impl Reference {
    fn build(a: CooMatrix, k: usize) -> Result<Self> {
        let est = spectral_norm(&a, SPECTRAL_TOL, SPECTRAL_MAX_ITER, &mut spectral_rng(1))?;
        let ua = top_k_singular(&a, k, EVAL_SUBSPACE_ITERS, &mut spectral_rng(2), true)?;
        let va = top_k_singular(&a, k, EVAL_SUBSPACE_ITERS, &mut spectral_rng(3), false)?;
        let left_denom = projected_frob(&a, &ua.basis, true);
        let right_denom = projected_frob(&a, &va.basis, false);
        Ok(Self { a, spec: est.value, left_denom, right_denom, k })
    }

    fn evaluate(&self, b: &CooMatrix) -> Result<(f64, f64, f64)> {
        if b.m != self.a.m || b.n != self.a.n {
            return Err(Error::DimMismatch {
                expected: format!("{}x{}", self.a.m, self.a.n),
                got: format!("{}x{}", b.m, b.n),
            });
        }
        spectral_norm(b, 1e-4, 50, &mut spectral_rng(4)).map_err(|_| Error::ZeroMatrix)?;
        let ub = top_k_singular(b, self.k, EVAL_SUBSPACE_ITERS, &mut spectral_rng(5), true)?;
        let vb = top_k_singular(b, self.k, EVAL_SUBSPACE_ITERS, &mut spectral_rng(6), false)?;
        let left = projected_frob(&self.a, &ub.basis, true) / self.left_denom;
        let right = projected_frob(&self.a, &vb.basis, false) / self.right_denom;
        let diff = DiffOp { a: &self.a as &dyn LinOp<f64>, b: b as &dyn LinOp<f64> };
        let err = spectral_norm(&diff, 1e-7, SPECTRAL_MAX_ITER, &mut spectral_rng(7));
        let spec_err = match err {
            Ok(e) => e.value / self.spec,
            // B == A exactly
            Err(Error::ZeroMatrix) => 0.0,
            Err(e) => return Err(e),
        };
        Ok((left, right, spec_err))
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let contents = read_matrix_market(&args.input)?;
    let dims = contents.dims;
    let reference = Reference::build(CooMatrix::new(dims.m, dims.n, contents.entries), args.k)?;

    let file = load_sketch_file(&args.sketch)?;
    let b = CooMatrix::new(file.sketch.dims.m, file.sketch.dims.n, file.sketch.triplets());
    let (left, right, spec_err) = reference.evaluate(&b)?;

    let zeta = match &args.plan {
        Some(p) => {
            let doc: PlanDocument = serde_json::from_str(&fs::read_to_string(p)?)?;
            doc.zeta
        }
        None => None,
    };
    let row = EvalRow {
        matrix: args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        scheme: file.sketch.scheme.name(),
        s: file.sketch.s,
        seed: args.seed,
        k: args.k,
        left_ratio: left,
        right_ratio: right,
        spec_err,
        bits_per_sample: 8.0 * file.payload_bytes as f64 / file.sketch.s as f64,
        zeta,
    };
    if args.header {
        println!("{CSV_HEADER}");
    }
    println!("{}", row.to_csv());
    Ok(())
}

// ---------------------------------------------------------------- synth --

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig { m: args.m, n: args.n, d: args.d, noise_sd: args.noise_sd, seed: args.seed }
        .validated()?;
    // counting pass, then a writing pass; the generator replays exactly
    let nnz = generate(cfg)?.count() as u64;
    match write_matrix_market(&args.out, cfg.m, cfg.n, nnz, generate(cfg)?) {
        Ok(()) => {}
        Err(e) => {
            let _ = fs::remove_file(&args.out);
            return Err(e);
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "out": args.out.display().to_string(),
            "m": cfg.m, "n": cfg.n, "d": cfg.d,
            "noise_sd": cfg.noise_sd, "seed": cfg.seed, "nnz": nnz,
        })
    );
    Ok(())
}

// ----------------------------------------------------------- experiment --

#[derive(Deserialize)]
struct Manifest {
    input: Option<PathBuf>,
    synth: Option<SynthConfig>,
    schemes: Vec<String>,
    #[serde(default)]
    trim_theta: Option<f64>,
    s_values: Vec<u64>,
    seeds: Vec<u64>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default = "default_delta")]
    delta: f64,
    out_dir: PathBuf,
    #[serde(default)]
    assume_uniform_z: bool,
}

fn default_k() -> usize {
    20
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    scheme: String,
    s: u64,
    seed: u64,
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bits_per_sample: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    zeta: Option<f64>,
}

fn cmd_experiment(manifest_path: &Path) -> Result<()> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let source = match (&manifest.input, &manifest.synth) {
        (Some(path), None) => StreamSource::File(path.clone()),
        (None, Some(cfg)) => StreamSource::Synth(cfg.validated()?),
        _ => {
            return Err(Error::InvalidParameter {
                what: "manifest must set exactly one of 'input' or 'synth'".into(),
            })
        }
    };
    if manifest.s_values.is_empty() || manifest.seeds.is_empty() || manifest.schemes.is_empty() {
        return Err(Error::InvalidParameter {
            what: "manifest needs non-empty schemes, s_values, seeds".into(),
        });
    }

    // materialize the matrix once; every cell replays it from memory
    let mut entries = Vec::new();
    for e in source.stream()? {
        entries.push(e?);
    }
    let mut dims = source.dims()?;
    dims.nnz = entries.len() as u64;
    let label = source.label();
    let reference = Reference::build(CooMatrix::new(dims.m, dims.n, entries.clone()), manifest.k)?;
    let mem_source = StreamSource::Memory { dims, entries };

    let cells_dir = manifest.out_dir.join("cells");
    fs::create_dir_all(&cells_dir)?;

    let mut rows: Vec<String> = vec![CSV_HEADER.to_owned()];
    for scheme_name in &manifest.schemes {
        let scheme = Scheme::parse(scheme_name, manifest.trim_theta)?;
        for &s in &manifest.s_values {
            for &seed in &manifest.seeds {
                let marker = cells_dir.join(format!("{}-{s}-{seed}.json", scheme.name()));
                let record = match fs::read_to_string(&marker)
                    .ok()
                    .and_then(|t| serde_json::from_str::<CellRecord>(&t).ok())
                {
                    Some(r) => r,
                    None => {
                        let r = run_cell(&mem_source, &reference, scheme, s, seed, &manifest);
                        write_file_cleanly(&marker, serde_json::to_string_pretty(&r)?.as_bytes())?;
                        r
                    }
                };
                if record.ok {
                    let row = EvalRow {
                        matrix: label.clone(),
                        scheme: record.scheme.clone(),
                        s: record.s,
                        seed: record.seed,
                        k: manifest.k,
                        left_ratio: record.left_ratio.unwrap_or(f64::NAN),
                        right_ratio: record.right_ratio.unwrap_or(f64::NAN),
                        spec_err: record.spec_err.unwrap_or(f64::NAN),
                        bits_per_sample: record.bits_per_sample.unwrap_or(f64::NAN),
                        zeta: record.zeta,
                    };
                    rows.push(row.to_csv());
                } else {
                    eprintln!(
                        "cell {}/{s}/{seed} failed: {}",
                        record.scheme,
                        record.error.as_deref().unwrap_or("unknown")
                    );
                }
            }
        }
    }
    let csv_path = manifest.out_dir.join("results.csv");
    write_file_cleanly(&csv_path, (rows.join("\n") + "\n").as_bytes())?;
    println!(
        "{}",
        serde_json::json!({
            "results": csv_path.display().to_string(),
            "rows": rows.len() - 1,
        })
    );
    Ok(())
}

fn run_cell(
    source: &StreamSource,
    reference: &Reference,
    scheme: Scheme,
    s: u64,
    seed: u64,
    manifest: &Manifest,
) -> CellRecord {
    let outcome = (|| -> Result<CellRecord> {
        let (sketch, encoded, summary) = run_sketch(
            source,
            scheme,
            s,
            manifest.delta,
            seed,
            manifest.assume_uniform_z,
            TrimMeanDomain::default(),
        )?;
        let b = CooMatrix::new(sketch.dims.m, sketch.dims.n, sketch.triplets());
        let (left, right, spec_err) = reference.evaluate(&b)?;
        Ok(CellRecord {
            scheme: scheme.name(),
            s,
            seed,
            ok: true,
            error: None,
            left_ratio: Some(left),
            right_ratio: Some(right),
            spec_err: Some(spec_err),
            bits_per_sample: Some(encoded.bits_per_sample(s)),
            zeta: summary.zeta,
        })
    })();
    outcome.unwrap_or_else(|e| CellRecord {
        scheme: scheme.name(),
        s,
        seed,
        ok: false,
        error: Some(e.to_string()),
        left_ratio: None,
        right_ratio: None,
        spec_err: None,
        bits_per_sample: None,
        zeta: None,
    })
}
