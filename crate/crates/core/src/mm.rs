//! Matrix Market I/O, restricted to "coordinate real general" files.
//!
//! Indices are 1-based on disk and 0-based in memory. Duplicate coordinates
//! are legal in the format and merge additively on read. Pattern, complex,
//! and non-general symmetry files are rejected rather than half-supported.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{EntryTriplet, MatrixDims};

const BANNER: &str = "%%MatrixMarket";

fn parse_error(path: &Path, line: u64, what: impl Into<String>) -> Error {
    Error::MatrixMarket { path: path.display().to_string(), line: line as usize, what: what.into() }
}

/// Header + triplets; `dims.nnz` is the entry count after duplicate merging.
#[derive(Debug)]
pub struct MmContents {
    pub dims: MatrixDims,
    pub entries: Vec<EntryTriplet>,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<MmContents> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_matrix_market_from(BufReader::new(file), path)
}

pub fn read_matrix_market_from<R: Read>(reader: BufReader<R>, path: &Path) -> Result<MmContents> {
    let mut lines = reader.lines();
    let mut line_no = 0u64;

    let header = loop {
        match lines.next() {
            Some(l) => {
                line_no += 1;
                let l = l?;
                if line_no == 1 {
                    break l;
                }
            }
            None => return Err(parse_error(path, line_no, "empty file")),
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != BANNER {
        return Err(parse_error(path, 1, "expected '%%MatrixMarket matrix coordinate real general' banner"));
    }
    if !fields[1].eq_ignore_ascii_case("matrix") || !fields[2].eq_ignore_ascii_case("coordinate") {
        return Err(parse_error(path, 1, format!("unsupported object/format '{} {}'", fields[1], fields[2])));
    }
    if !fields[3].eq_ignore_ascii_case("real") {
        return Err(parse_error(path, 1, format!("unsupported field type '{}'", fields[3])));
    }
    if !fields[4].eq_ignore_ascii_case("general") {
        return Err(parse_error(path, 1, format!("unsupported symmetry '{}'", fields[4])));
    }

    // skip comments, find the size line
    let (m, n, nnz) = loop {
        let l = match lines.next() {
            Some(l) => {
                line_no += 1;
                l?
            }
            None => return Err(parse_error(path, line_no, "missing size line")),
        };
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_error(path, line_no, "size line must be 'm n nnz'"));
        }
        let m: usize = parts[0]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad row count '{}'", parts[0])))?;
        let n: usize = parts[1]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad column count '{}'", parts[1])))?;
        let nnz: u64 = parts[2]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad entry count '{}'", parts[2])))?;
        break (m, n, nnz);
    };
    let dims = MatrixDims::new(m, n, nnz)
        .map_err(|e| parse_error(path, line_no, e.to_string()))?;

    let mut entries: Vec<EntryTriplet> = Vec::with_capacity(nnz.min(1 << 24) as usize);
    let mut seen = 0u64;
    for l in lines {
        line_no += 1;
        let l = l?;
        let t = l.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_error(path, line_no, "entry line must be 'i j value'"));
        }
        let i: usize = parts[0]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad row index '{}'", parts[0])))?;
        let j: usize = parts[1]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad column index '{}'", parts[1])))?;
        let v: f64 = parts[2]
            .parse()
            .map_err(|_| parse_error(path, line_no, format!("bad value '{}'", parts[2])))?;
        if i == 0 || j == 0 || i > m || j > n {
            return Err(parse_error(path, line_no, format!("index ({i}, {j}) outside 1..={m} x 1..={n}")));
        }
        if !v.is_finite() {
            return Err(parse_error(path, line_no, format!("non-finite value '{}'", parts[2])));
        }
        entries.push(EntryTriplet::new(i - 1, j - 1, v));
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_error(path, line_no, format!("size line declared {nnz} entries, found {seen}")));
    }

    // duplicate coordinates sum
    entries.sort_unstable_by_key(|e| (e.row, e.col));
    let mut merged: Vec<EntryTriplet> = Vec::with_capacity(entries.len());
    for e in entries {
        match merged.last_mut() {
            Some(last) if last.row == e.row && last.col == e.col => last.value += e.value,
            _ => merged.push(e),
        }
    }
    let dims = MatrixDims { nnz: merged.len() as u64, ..dims };
    Ok(MmContents { dims, entries: merged })
}

/// Streaming reader: header parsed eagerly, entries yielded one line at a
/// time without buffering the file. Unlike [`read_matrix_market`] this does
/// not merge duplicate coordinates; callers on the streaming path expect
/// duplicate-free files (the writer below only produces such).
pub struct MmReader {
    pub dims: MatrixDims,
    path: std::path::PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: u64,
    seen: u64,
    done: bool,
}

impl MmReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let mut lines = BufReader::new(file).lines();
        let mut line_no = 0u64;

        let header = match lines.next() {
            Some(l) => {
                line_no += 1;
                l?
            }
            None => return Err(parse_error(&path, 0, "empty file")),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5
            || fields[0] != BANNER
            || !fields[1].eq_ignore_ascii_case("matrix")
            || !fields[2].eq_ignore_ascii_case("coordinate")
            || !fields[3].eq_ignore_ascii_case("real")
            || !fields[4].eq_ignore_ascii_case("general")
        {
            return Err(parse_error(&path, 1, "expected 'matrix coordinate real general' banner"));
        }
        let (m, n, nnz) = loop {
            let l = match lines.next() {
                Some(l) => {
                    line_no += 1;
                    l?
                }
                None => return Err(parse_error(&path, line_no, "missing size line")),
            };
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(parse_error(&path, line_no, "size line must be 'm n nnz'"));
            }
            let m: usize = parts[0]
                .parse()
                .map_err(|_| parse_error(&path, line_no, format!("bad row count '{}'", parts[0])))?;
            let n: usize = parts[1]
                .parse()
                .map_err(|_| parse_error(&path, line_no, format!("bad column count '{}'", parts[1])))?;
            let nnz: u64 = parts[2]
                .parse()
                .map_err(|_| parse_error(&path, line_no, format!("bad entry count '{}'", parts[2])))?;
            break (m, n, nnz);
        };
        let dims =
            MatrixDims::new(m, n, nnz).map_err(|e| parse_error(&path, line_no, e.to_string()))?;
        Ok(Self { dims, path, lines, line_no, seen: 0, done: false })
    }
}

impl Iterator for MmReader {
    type Item = Result<EntryTriplet>;

    fn next(&mut self) -> Option<Result<EntryTriplet>> {
        if self.done {
            return None;
        }
        loop {
            let l = match self.lines.next() {
                Some(Ok(l)) => l,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                None => {
                    self.done = true;
                    if self.seen != self.dims.nnz {
                        return Some(Err(parse_error(
                            &self.path,
                            self.line_no,
                            format!("size line declared {} entries, found {}", self.dims.nnz, self.seen),
                        )));
                    }
                    return None;
                }
            };
            self.line_no += 1;
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = t.split_whitespace().collect();
            let parsed = (|| -> Result<EntryTriplet> {
                if parts.len() != 3 {
                    return Err(parse_error(&self.path, self.line_no, "entry line must be 'i j value'"));
                }
                let i: usize = parts[0].parse().map_err(|_| {
                    parse_error(&self.path, self.line_no, format!("bad row index '{}'", parts[0]))
                })?;
                let j: usize = parts[1].parse().map_err(|_| {
                    parse_error(&self.path, self.line_no, format!("bad column index '{}'", parts[1]))
                })?;
                let v: f64 = parts[2].parse().map_err(|_| {
                    parse_error(&self.path, self.line_no, format!("bad value '{}'", parts[2]))
                })?;
                if i == 0 || j == 0 || i > self.dims.m || j > self.dims.n {
                    return Err(parse_error(
                        &self.path,
                        self.line_no,
                        format!("index ({i}, {j}) outside 1..={} x 1..={}", self.dims.m, self.dims.n),
                    ));
                }
                if !v.is_finite() {
                    return Err(parse_error(
                        &self.path,
                        self.line_no,
                        format!("non-finite value '{}'", parts[2]),
                    ));
                }
                Ok(EntryTriplet::new(i - 1, j - 1, v))
            })();
            match parsed {
                Ok(e) => {
                    self.seen += 1;
                    return Some(Ok(e));
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Write entries from an iterator without materializing them; the entry
/// count must be known up front for the size line.
pub fn write_matrix_market<I>(
    path: impl AsRef<Path>,
    m: usize,
    n: usize,
    nnz: u64,
    entries: I,
) -> Result<()>
where
    I: IntoIterator<Item = EntryTriplet>,
{
    let path = path.as_ref();
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{BANNER} matrix coordinate real general")?;
    writeln!(w, "{m} {n} {nnz}")?;
    let mut written = 0u64;
    for e in entries {
        writeln!(w, "{} {} {:.17e}", e.row + 1, e.col + 1, e.value)?;
        written += 1;
    }
    w.flush()?;
    if written != nnz {
        // leave no half-claimed file around
        let _ = std::fs::remove_file(path);
        return Err(Error::InvalidParameter {
            what: format!("writer promised {nnz} entries but streamed {written}"),
        });
    }
    Ok(())
}
