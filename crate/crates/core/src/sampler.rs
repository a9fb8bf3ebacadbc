//! Sampling s i.i.d. entries with replacement from a weighted stream in one
//! forward pass plus a backward replay over a spill store. The forward pass
//! keeps only the running weight total, the RNG and the spill cursor; the
//! number of virtual reservoir samplers never materializes.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

use crate::distribution::SamplingPlan;
use crate::error::{Error, Result};
use crate::types::EntryTriplet;

/// Reproducible RNG: one root seed, documented substream indices derive
/// independent generators (forward pass = stream 0, backward pass = 1).
#[derive(Clone, Copy, Debug)]
pub struct RunRng {
    pub seed: u64,
}

pub const FORWARD_STREAM: u64 = 0;
pub const BACKWARD_STREAM: u64 = 1;

impl RunRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn substream(&self, idx: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(idx);
        rng
    }
}

/// Exact Binomial(s, p) variate. Small means take a direct inversion fast
/// path: constructing `rand_distr::Binomial` per call pays the full BTPE
/// setup, which dominates the sampling pass where almost every entry has
/// s*p << 1. Larger means go through `rand_distr`.
pub fn binomial_draw(s: u64, p: f64, rng: &mut ChaCha12Rng) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(Error::BadProbability { p });
    }
    if p == 0.0 || s == 0 {
        return Ok(0);
    }
    if p == 1.0 {
        return Ok(s);
    }
    let mean = s as f64 * p;
    if mean <= 25.0 {
        let q = 1.0 - p;
        let mut pmf = (s as f64 * q.ln()).exp();
        if pmf > 0.0 {
            let mut cdf = pmf;
            let u: f64 = rng.random();
            let mut k = 0u64;
            while u > cdf && k < s {
                pmf *= ((s - k) as f64 / (k + 1) as f64) * (p / q);
                cdf += pmf;
                k += 1;
                if pmf < 1e-300 {
                    break;
                }
            }
            return Ok(k);
        }
        // pmf(0) underflowed; fall through to the general sampler
    }
    let dist = rand_distr::Binomial::new(s, p)
        .map_err(|_| Error::BadProbability { p })?;
    Ok(dist.sample(rng))
}

/// Exact hypergeometric variate: t balls in empty bins when k balls land in
/// k distinct bins out of s, of which l are empty.
/// Pr[t] = C(l,t) C(s-l,k-t) / C(s,k).
pub fn hypergeometric_draw(s: u64, l: u64, k: u64, rng: &mut ChaCha12Rng) -> Result<u64> {
    if l > s || k > s {
        return Err(Error::BadHypergeometric { s, l, k });
    }
    if k == 0 || l == 0 {
        return Ok(0);
    }
    if l == s {
        return Ok(k);
    }
    // k = 1 is the overwhelmingly common backward-pass record; Pr[t=1] = l/s
    if k == 1 {
        return Ok(u64::from(rng.random::<f64>() * (s as f64) < l as f64));
    }
    // small supports: direct inversion beats rand_distr's per-call
    // constructor setup by orders of magnitude
    if l.min(k) <= 64 {
        return Ok(hypergeometric_inverse(s, l, k, rng));
    }
    // rand_distr's constructor computes a starting probability with raw
    // factorial products and overflows to rejection for some perfectly
    // valid parameter triples; fall back to our own exact inversion there.
    match rand_distr::Hypergeometric::new(s, l, k) {
        Ok(dist) => Ok(dist.sample(rng)),
        Err(_) => Ok(hypergeometric_inverse(s, l, k, rng)),
    }
}

/// ln Gamma(x) for x > 0, Lanczos approximation (g = 7, 9 terms), good to
/// ~1e-13 relative which is far below the inversion's needs.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact inversion for Hypergeometric(s; l successes; k draws), walking
/// outward from the mode so the accumulated mass never underflows.
fn hypergeometric_inverse(s: u64, l: u64, k: u64, rng: &mut ChaCha12Rng) -> u64 {
    let lo = (k + l).saturating_sub(s);
    let hi = l.min(k);
    if lo == hi {
        return lo;
    }
    let mode = (((k + 1) as f64) * ((l + 1) as f64) / ((s + 2) as f64)).floor() as u64;
    let mode = mode.clamp(lo, hi);
    let ln_pm = ln_choose(l, mode) + ln_choose(s - l, k - mode) - ln_choose(s, k);
    let pm = ln_pm.exp();

    // x >= lo >= l + k - s keeps s + x - l - k from wrapping
    let ratio_up = |x: u64| {
        // p(x+1) / p(x)
        ((l - x) as f64 * (k - x) as f64)
            / ((x + 1) as f64 * ((s + x + 1 - l - k) as f64))
    };
    let ratio_down = |x: u64| {
        // p(x-1) / p(x)
        (x as f64 * ((s + x - l - k) as f64))
            / (((l - x + 1) as f64) * ((k - x + 1) as f64))
    };

    let u: f64 = rng.random();
    let mut acc = pm;
    if acc > u {
        return mode;
    }
    let (mut rx, mut rp) = (mode, pm);
    let (mut lx, mut lp) = (mode, pm);
    loop {
        let mut moved = false;
        if rx < hi {
            rp *= ratio_up(rx);
            rx += 1;
            acc += rp;
            if acc > u {
                return rx;
            }
            moved = true;
        }
        if lx > lo {
            lp *= ratio_down(lx);
            lx -= 1;
            acc += lp;
            if acc > u {
                return lx;
            }
            moved = true;
        }
        if !moved {
            // u landed in the last sliver of rounding error
            return mode;
        }
    }
}

/// One spill record: a stream item together with the number of virtual
/// samplers that picked it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpillRecord {
    pub row: u64,
    pub col: u64,
    pub value: f64,
    pub k: u64,
}

pub const SPILL_RECORD_BYTES: usize = 32;

impl SpillRecord {
    /// Fixed-width little-endian layout: row u64, col u64, value f64, k u64.
    pub fn to_bytes(&self) -> [u8; SPILL_RECORD_BYTES] {
        let mut b = [0u8; SPILL_RECORD_BYTES];
        b[0..8].copy_from_slice(&self.row.to_le_bytes());
        b[8..16].copy_from_slice(&self.col.to_le_bytes());
        b[16..24].copy_from_slice(&self.value.to_le_bytes());
        b[24..32].copy_from_slice(&self.k.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Self {
        Self {
            row: u64::from_le_bytes(b[0..8].try_into().unwrap()),
            col: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            value: f64::from_le_bytes(b[16..24].try_into().unwrap()),
            k: u64::from_le_bytes(b[24..32].try_into().unwrap()),
        }
    }
}

/// Append-only record store, replayed newest-first after the forward pass.
pub trait SpillStore {
    fn push(&mut self, rec: &SpillRecord) -> Result<()>;
    fn record_count(&self) -> u64;
    /// Pop the most recently pushed record. Returns `None` when exhausted.
    /// Must only be called after the forward pass is complete.
    fn pop(&mut self) -> Result<Option<SpillRecord>>;
}

/// In-memory spill store for desk-scale runs and tests.
#[derive(Default)]
pub struct MemorySpill {
    records: Vec<SpillRecord>,
}

impl MemorySpill {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SpillStore for MemorySpill {
    fn push(&mut self, rec: &SpillRecord) -> Result<()> {
        self.records.push(*rec);
        Ok(())
    }

    fn record_count(&self) -> u64 {
        self.records.len() as u64
    }

    fn pop(&mut self) -> Result<Option<SpillRecord>> {
        Ok(self.records.pop())
    }
}

const SPILL_CHUNK_BYTES: usize = 1 << 20;

/// Temporary-file spill store; the durable-storage model. Records are
/// written through a buffer and replayed by reading backward in 1 MiB
/// chunks. Location comes from `SKETCHSTREAM_TMP` when set.
pub struct FileSpill {
    writer: Option<BufWriter<File>>,
    file: Option<File>,
    count: u64,
    // backward-read state
    chunk: Vec<SpillRecord>,
    next_chunk_end: u64,
    // keep the tempdir alive for the store's lifetime
    _dir: Option<tempfile::TempDir>,
}

impl FileSpill {
    pub fn new() -> Result<Self> {
        let dir = match std::env::var_os("SKETCHSTREAM_TMP") {
            Some(d) => tempfile::TempDir::new_in(d)?,
            None => tempfile::TempDir::new()?,
        };
        let path = dir.path().join("spill.bin");
        let file = File::create(&path)?;
        let reader = File::open(&path)?;
        Ok(Self {
            writer: Some(BufWriter::new(file)),
            file: Some(reader),
            count: 0,
            chunk: Vec::new(),
            next_chunk_end: 0,
            _dir: Some(dir),
        })
    }

    fn begin_replay(&mut self) -> Result<()> {
        if let Some(w) = self.writer.take() {
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?.sync_data().ok();
            self.next_chunk_end = self.count * SPILL_RECORD_BYTES as u64;
        }
        Ok(())
    }

    fn load_prev_chunk(&mut self) -> Result<()> {
        let end = self.next_chunk_end;
        if end == 0 {
            return Ok(());
        }
        let len = (end as usize).min(SPILL_CHUNK_BYTES);
        let len = len - len % SPILL_RECORD_BYTES;
        let start = end - len as u64;
        let file = self.file.as_mut().expect("replay after push phase");
        file.seek(SeekFrom::Start(start))?;
        let mut buf = vec![0u8; len];
        file.read_exact(&mut buf)?;
        self.chunk = buf
            .chunks_exact(SPILL_RECORD_BYTES)
            .map(SpillRecord::from_bytes)
            .collect();
        self.next_chunk_end = start;
        Ok(())
    }
}

impl SpillStore for FileSpill {
    fn push(&mut self, rec: &SpillRecord) -> Result<()> {
        self.writer
            .as_mut()
            .expect("push after replay started")
            .write_all(&rec.to_bytes())?;
        self.count += 1;
        Ok(())
    }

    fn record_count(&self) -> u64 {
        self.count
    }

    fn pop(&mut self) -> Result<Option<SpillRecord>> {
        self.begin_replay()?;
        if self.chunk.is_empty() {
            self.load_prev_chunk()?;
        }
        Ok(self.chunk.pop())
    }
}

/// Multiset of sampled entries with positive counts; sum of counts = s.
#[derive(Clone, Debug, Default)]
pub struct SampleTally {
    /// (row, col) -> (value, count)
    pub entries: HashMap<(usize, usize), (f64, u64)>,
    pub total: u64,
}

impl SampleTally {
    pub fn count_sum(&self) -> u64 {
        self.entries.values().map(|(_, k)| *k).sum()
    }
}

/// Words of forward-pass state beyond the spill store: running weight W,
/// the budget s, the item counter, and the RNG. The structural basis of
/// the active-memory contract.
pub fn forward_state_words() -> usize {
    let rng_words = std::mem::size_of::<ChaCha12Rng>().div_ceil(8);
    // W + s + position counter + rng
    3 + rng_words
}

/// Forward pass: push (item, k) with k = Binomial(s, w/W) onto the spill
/// store. Backward pass: replay newest-first, drawing
/// t = Hypergeometric(s, l, k) committed samplers per record until l = 0.
/// The yielded multiset is distributed as s i.i.d. draws with
/// Pr[item] = w / W_total.
pub fn stream_sample<I>(
    stream: I,
    s: u64,
    rng: &RunRng,
    spill: &mut dyn SpillStore,
) -> Result<SampleTally>
where
    I: IntoIterator<Item = (EntryTriplet, f64)>,
{
    if s == 0 {
        return Err(Error::InvalidParameter { what: "sample budget s must be >= 1".into() });
    }
    let mut fwd = rng.substream(FORWARD_STREAM);
    let mut total_weight = 0.0_f64;
    let mut position = 0u64;
    for (entry, w) in stream {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::BadWeight { position, weight: w });
        }
        total_weight += w;
        let k = binomial_draw(s, (w / total_weight).min(1.0), &mut fwd)?;
        if k > 0 {
            spill.push(&SpillRecord {
                row: entry.row as u64,
                col: entry.col as u64,
                value: entry.value,
                k,
            })?;
        }
        position += 1;
    }
    if position == 0 {
        return Err(Error::EmptyStream { s });
    }

    let mut bwd = rng.substream(BACKWARD_STREAM);
    let mut tally = SampleTally { entries: HashMap::new(), total: s };
    let mut open = s; // samplers not yet committed to an item
    while open > 0 {
        let rec = spill.pop()?.expect(
            "spill exhausted before all samplers committed; first record must carry k = s",
        );
        let t = hypergeometric_draw(s, open, rec.k, &mut bwd)?;
        if t > 0 {
            open -= t;
            let slot = tally
                .entries
                .entry((rec.row as usize, rec.col as usize))
                .or_insert((rec.value, 0));
            slot.1 += t;
        }
    }
    Ok(tally)
}

/// Algorithm-1 step: sample s entries under a plan's entry probabilities.
/// Trimmed-out entries (p = 0) are skipped; they are unsampleable.
pub fn sample_entries<I>(
    stream: I,
    plan: &SamplingPlan<f64>,
    rng: &RunRng,
    spill: &mut dyn SpillStore,
) -> Result<SampleTally>
where
    I: IntoIterator<Item = EntryTriplet>,
{
    let weighted = stream
        .into_iter()
        .map(|e| plan.entry_probability(&e).map(|p| (e, p)))
        .filter(|r| !matches!(r, Ok((_, p)) if *p == 0.0));
    // collect errors eagerly through an adapter
    let mut err = None;
    let iter = weighted
        .map_while(|r| match r {
            Ok(pair) => Some(pair),
            Err(e) => {
                err = Some(e);
                None
            }
        });
    let tally = stream_sample(iter, plan.s, rng, spill);
    if let Some(e) = err {
        return Err(e);
    }
    tally
}
