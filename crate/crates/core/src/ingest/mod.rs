//! Collection and examination: parse raw access-log lines and clean the stream.

pub mod parse;
pub mod record;
pub mod sanitize;
pub mod schema;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;

pub use parse::{format_line, parse_line, ParseError, RejectReason};
pub use record::{AccessLogRecord, CacheStatus, Method, MissingFields};
pub use sanitize::{sanitize, IngestStats};
pub use schema::{Delimiter, FieldKind, LogSchema};

use crate::error::{Error, Result};

const CHUNK_LINES: usize = 64 * 1024;

/// Open a log file, transparently decompressing gzip input.
pub fn open_log(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Parse a chunk of numbered lines. Pure per line, so the parallel result
/// equals the sequential one.
fn parse_chunk(
    lines: &[(u64, String)],
    schema: &LogSchema,
) -> (Vec<AccessLogRecord>, IngestStats, Vec<ParseError>) {
    let parsed: Vec<_> = lines
        .par_iter()
        .map(|(no, line)| parse_line(line, *no, schema))
        .collect();
    let mut stats = IngestStats::default();
    let mut records = Vec::with_capacity(parsed.len());
    let mut errors = Vec::new();
    for p in parsed {
        match p {
            Ok(r) => {
                stats.accept();
                records.push(r);
            }
            Err(e) => {
                stats.reject(e.reason.key());
                errors.push(e);
            }
        }
    }
    (records, stats, errors)
}

/// Output of [`read_records`].
#[derive(Debug, Default)]
pub struct Ingested {
    pub records: Vec<AccessLogRecord>,
    pub stats: IngestStats,
    /// First few parse errors, for diagnostics.
    pub sample_errors: Vec<ParseError>,
}

/// Parse every line from `reader` in bounded chunks, then sanitize.
pub fn ingest_reader(reader: impl BufRead, schema: &LogSchema) -> std::io::Result<Ingested> {
    let mut out = ingest_unsanitized(reader, schema)?;
    let (records, sstats) = sanitize(std::mem::take(&mut out.records));
    out.stats.absorb_sanitize(&sstats);
    out.records = records;
    Ok(out)
}

/// Read, parse and sanitize several log files as one stream.
pub fn read_records(paths: &[impl AsRef<Path>], schema: &LogSchema) -> Result<Ingested> {
    let mut all = Ingested::default();
    let mut raw = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let reader = open_log(p)?;
        // sanitize once over the union so cross-file duplicates are caught
        let mut part = ingest_unsanitized(reader, schema).map_err(|e| Error::io(p, e))?;
        all.stats.merge(&part.stats);
        raw.append(&mut part.records);
        for e in part.sample_errors {
            if all.sample_errors.len() < 20 {
                all.sample_errors.push(e);
            }
        }
    }
    let (records, sstats) = sanitize(raw);
    all.stats.absorb_sanitize(&sstats);
    all.records = records;
    Ok(all)
}

fn ingest_unsanitized(reader: impl BufRead, schema: &LogSchema) -> std::io::Result<Ingested> {
    let mut out = Ingested::default();
    let mut chunk: Vec<(u64, String)> = Vec::with_capacity(CHUNK_LINES);
    let mut line_no = 0u64;
    let mut lines = reader.lines();
    loop {
        let next = lines.next().transpose()?;
        let done = next.is_none();
        if let Some(line) = next {
            line_no += 1;
            if line.trim().is_empty() {
                out.stats.reject("blank");
            } else {
                chunk.push((line_no, line));
            }
        }
        if chunk.len() == CHUNK_LINES || (done && !chunk.is_empty()) {
            let (recs, stats, errors) = parse_chunk(&chunk, schema);
            out.records.extend(recs);
            out.stats.merge(&stats);
            let room = 20usize.saturating_sub(out.sample_errors.len());
            out.sample_errors.extend(errors.into_iter().take(room));
            chunk.clear();
        }
        if done {
            break;
        }
    }
    Ok(out)
}

/// Write records as NDJSON, one object per line.
pub fn write_ndjson(path: &Path, records: &[AccessLogRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ndjson(path: &Path) -> Result<Vec<AccessLogRecord>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format("record", path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
