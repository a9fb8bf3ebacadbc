//! Sketch assembly and the bit-compact SKB1 container.
//!
//! For row-based schemes every nonzero of B in row i is an integer multiple
//! of the shared scale z_i/(s rho_i), so the payload stores only signed
//! counts and column offsets; no entry floats. L2-based schemes have
//! entry-specific magnitudes and fall back to explicit f64 values under a
//! distinct scheme tag.

use crate::distribution::{SamplingPlan, Scheme};
use crate::error::{Error, Result};
use crate::sampler::SampleTally;
use crate::types::{EntryTriplet, MatrixDims, SmallDenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchEntry {
    pub row: usize,
    pub col: usize,
    /// Signed sample count; the sign of A_ij is folded in.
    pub k: i64,
    /// Explicit decoded value for L2-based schemes; unused (0) otherwise.
    pub explicit_value: f64,
}

/// Decoded sparse sketch B with per-row scale factors.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchMatrix {
    pub dims: MatrixDims,
    pub s: u64,
    pub scheme: Scheme,
    /// z_i / (s rho_i); zero for rows that cannot be sampled.
    pub row_scale: Vec<f64>,
    /// Sorted by (row, col), unique keys.
    pub entries: Vec<SketchEntry>,
}

impl SketchMatrix {
    pub fn value_of(&self, e: &SketchEntry) -> f64 {
        if self.scheme.is_row_based() {
            e.k as f64 * self.row_scale[e.row]
        } else {
            e.explicit_value
        }
    }

    pub fn triplets(&self) -> Vec<EntryTriplet> {
        self.entries
            .iter()
            .map(|e| EntryTriplet::new(e.row, e.col, self.value_of(e)))
            .collect()
    }

    pub fn count_sum(&self) -> u64 {
        self.entries.iter().map(|e| e.k.unsigned_abs()).sum()
    }

    pub fn to_dense(&self) -> Result<SmallDenseMatrix<f64>> {
        let mut a = SmallDenseMatrix::zeros(self.dims.m, self.dims.n)?;
        for e in &self.entries {
            a.set(e.row, e.col, self.value_of(e));
        }
        Ok(a)
    }
}

/// Assemble B from a sample tally: B_ij = (k_ij / s) * A_ij / p_ij.
pub fn build_sketch(
    tally: &SampleTally,
    plan: &SamplingPlan<f64>,
    dims: MatrixDims,
) -> Result<SketchMatrix> {
    let s = plan.s;
    debug_assert_eq!(tally.count_sum(), s);
    let row_scale: Vec<f64> = if plan.scheme.is_row_based() {
        let rho = plan.rho.as_ref().expect("row-based plan has rho");
        plan.z
            .z
            .iter()
            .zip(rho)
            .map(|(&zi, &ri)| if ri > 0.0 { zi / (s as f64 * ri) } else { 0.0 })
            .collect()
    } else {
        vec![0.0; dims.m]
    };

    let mut entries = Vec::with_capacity(tally.entries.len());
    for (&(row, col), &(value, count)) in &tally.entries {
        let e = EntryTriplet::new(row, col, value);
        let p = plan.entry_probability(&e)?;
        if p <= 0.0 {
            return Err(Error::ZeroProbabilityEntry { row, col });
        }
        let k = value.signum() as i64 * count as i64;
        let explicit_value = if plan.scheme.is_row_based() {
            0.0
        } else {
            (count as f64 / s as f64) * value / p
        };
        entries.push(SketchEntry { row, col, k, explicit_value });
    }
    entries.sort_by_key(|e| (e.row, e.col));
    // dims.nnz describes the sketch itself
    let dims = MatrixDims { nnz: entries.len() as u64, ..dims };
    Ok(SketchMatrix { dims, s, scheme: plan.scheme, row_scale, entries })
}

// --- varint primitives ---

pub fn write_uvarint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

pub fn read_uvarint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0u32;
    loop {
        let byte = *buf.get(*pos).ok_or(Error::Decode {
            offset: *pos,
            what: "varint overruns payload".into(),
        })?;
        *pos += 1;
        if shift >= 64 {
            return Err(Error::Decode { offset: *pos, what: "varint too long".into() });
        }
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
    }
}

pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}

// --- CRC-64/XZ ---

const CRC64_POLY: u64 = 0xC96C_5795_D787_0F42; // reflected

fn crc64(data: &[u8]) -> u64 {
    let mut table = [0u64; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut crc = i as u64;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ CRC64_POLY } else { crc >> 1 };
        }
        *slot = crc;
    }
    let mut crc = !0u64;
    for &b in data {
        crc = table[((crc ^ u64::from(b)) & 0xff) as usize] ^ (crc >> 8);
    }
    !crc
}

pub const SKB1_MAGIC: [u8; 4] = [0x53, 0x4B, 0x42, 0x31];
pub const SKB1_VERSION: u8 = 1;

fn scheme_tag(scheme: Scheme) -> u8 {
    match scheme {
        Scheme::Bernstein => 0,
        Scheme::RowL1 => 1,
        Scheme::L1 => 2,
        Scheme::L2 => 3,
        Scheme::L2Trim { .. } => 4,
    }
}

fn scheme_from_tag(tag: u8, offset: usize) -> Result<Scheme> {
    match tag {
        0 => Ok(Scheme::Bernstein),
        1 => Ok(Scheme::RowL1),
        2 => Ok(Scheme::L1),
        3 => Ok(Scheme::L2),
        4 => Ok(Scheme::L2Trim { theta: f64::NAN }),
        t => Err(Error::Decode { offset, what: format!("unknown scheme tag {t}") }),
    }
}

/// Encoded sketch plus its payload-size statistic.
#[derive(Clone, Debug)]
pub struct EncodedSketch {
    pub bytes: Vec<u8>,
    pub payload_bytes: usize,
}

impl EncodedSketch {
    pub fn bits_per_sample(&self, s: u64) -> f64 {
        8.0 * self.payload_bytes as f64 / s as f64
    }
}

/// SKB1 layout: magic, version u8, LE u64 m, n, s, scheme tag u8,
/// m x f64 row scales, varint payload, u64 CRC-64/XZ over all prior bytes.
///
/// Payload, per row: uvarint entry count (0 marks an empty row), then per
/// entry an unsigned column gap varint (first column absolute, subsequent
/// gaps are col - prev - 1), a zigzag-varint signed count, and for L2-based
/// tags an explicit LE f64 value.
pub fn encode_sketch(b: &SketchMatrix) -> EncodedSketch {
    let mut out = Vec::new();
    out.extend_from_slice(&SKB1_MAGIC);
    out.push(SKB1_VERSION);
    out.extend_from_slice(&(b.dims.m as u64).to_le_bytes());
    out.extend_from_slice(&(b.dims.n as u64).to_le_bytes());
    out.extend_from_slice(&b.s.to_le_bytes());
    out.push(scheme_tag(b.scheme));
    for &rs in &b.row_scale {
        out.extend_from_slice(&rs.to_le_bytes());
    }

    let payload_start = out.len();
    let explicit_values = !b.scheme.is_row_based();
    let mut idx = 0usize;
    for row in 0..b.dims.m {
        let start = idx;
        while idx < b.entries.len() && b.entries[idx].row == row {
            idx += 1;
        }
        let row_entries = &b.entries[start..idx];
        write_uvarint(&mut out, row_entries.len() as u64);
        let mut prev_col: Option<usize> = None;
        for e in row_entries {
            let gap = match prev_col {
                None => e.col as u64,
                Some(p) => (e.col - p - 1) as u64,
            };
            write_uvarint(&mut out, gap);
            write_uvarint(&mut out, zigzag(e.k));
            if explicit_values {
                out.extend_from_slice(&e.explicit_value.to_le_bytes());
            }
            prev_col = Some(e.col);
        }
    }
    let payload_bytes = out.len() - payload_start;

    let crc = crc64(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    EncodedSketch { bytes: out, payload_bytes }
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, len: usize) -> Result<&'a [u8]> {
    if *pos + len > buf.len() {
        return Err(Error::Decode { offset: *pos, what: "truncated input".into() });
    }
    let out = &buf[*pos..*pos + len];
    *pos += len;
    Ok(out)
}

/// Exact inverse of `encode_sketch`. The checksum is verified before the
/// payload is parsed, so corrupted varints are rejected, never misread.
pub fn decode_sketch(bytes: &[u8]) -> Result<SketchMatrix> {
    let mut pos = 0usize;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != SKB1_MAGIC {
        return Err(Error::Decode { offset: 0, what: "bad magic".into() });
    }
    let version = take(bytes, &mut pos, 1)?[0];
    if version != SKB1_VERSION {
        return Err(Error::Decode { offset: 4, what: format!("unsupported version {version}") });
    }
    if bytes.len() < 8 {
        return Err(Error::Decode { offset: bytes.len(), what: "missing checksum".into() });
    }
    let body = &bytes[..bytes.len() - 8];
    let stored_crc = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let actual_crc = crc64(body);
    if stored_crc != actual_crc {
        return Err(Error::Decode {
            offset: bytes.len() - 8,
            what: format!("checksum mismatch: stored {stored_crc:016x}, computed {actual_crc:016x}"),
        });
    }

    let m = u64::from_le_bytes(take(body, &mut pos, 8)?.try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(take(body, &mut pos, 8)?.try_into().unwrap()) as usize;
    let s = u64::from_le_bytes(take(body, &mut pos, 8)?.try_into().unwrap());
    let tag_offset = pos;
    let scheme = scheme_from_tag(take(body, &mut pos, 1)?[0], tag_offset)?;
    let mut row_scale = Vec::with_capacity(m);
    for _ in 0..m {
        row_scale.push(f64::from_le_bytes(take(body, &mut pos, 8)?.try_into().unwrap()));
    }

    let explicit_values = !scheme.is_row_based();
    let mut entries = Vec::new();
    for row in 0..m {
        let count = read_uvarint(body, &mut pos)? as usize;
        let mut prev_col: Option<usize> = None;
        for _ in 0..count {
            let gap = read_uvarint(body, &mut pos)? as usize;
            let col = match prev_col {
                None => gap,
                Some(p) => p + 1 + gap,
            };
            if col >= n {
                return Err(Error::Decode { offset: pos, what: format!("column {col} >= {n}") });
            }
            let k = unzigzag(read_uvarint(body, &mut pos)?);
            let explicit_value = if explicit_values {
                f64::from_le_bytes(take(body, &mut pos, 8)?.try_into().unwrap())
            } else {
                0.0
            };
            entries.push(SketchEntry { row, col, k, explicit_value });
            prev_col = Some(col);
        }
    }
    if pos != body.len() {
        return Err(Error::Decode { offset: pos, what: "trailing bytes after payload".into() });
    }
    let dims = MatrixDims::new(m, n, entries.len() as u64)?;
    Ok(SketchMatrix { dims, s, scheme, row_scale, entries })
}
