//! LIBSVM datasets, iteration-trace CSV files and key-value metadata.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::SparseColumnMatrix;
use crate::solver::IterationRecord;

/// Samples are the columns of `data` (`d x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: SparseColumnMatrix,
    pub targets: Vec<f64>,
    pub feature_names: Option<Vec<String>>,
    preprocessed: bool,
}

impl Dataset {
    pub fn new(data: SparseColumnMatrix, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != data.cols() {
            return Err(Error::DimensionMismatch {
                expected: data.cols(),
                found: targets.len(),
            });
        }
        Ok(Self {
            data,
            targets,
            feature_names: None,
            preprocessed: false,
        })
    }

    pub fn features(&self) -> usize {
        self.data.rows()
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    /// The first `n` samples. Keeps the feature count.
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.samples());
        let cols: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|j| {
                let (idx, val) = self.data.column(j);
                idx.iter().copied().zip(val.iter().copied()).collect()
            })
            .collect();
        Ok(Self {
            data: SparseColumnMatrix::from_columns(self.features(), &cols)?,
            targets: self.targets[..n].to_vec(),
            feature_names: self.feature_names.clone(),
            preprocessed: self.preprocessed,
        })
    }
}

/// Parses `label idx:val ...` lines with 1-based, strictly increasing indices.
///
/// Blank lines and `#` comments are skipped. When the labels take exactly two
/// values other than `{-1, +1}`, the smaller maps to -1 and the larger to +1.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut features = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid label '{label_tok}'"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite label '{label_tok}'"),
            });
        }
        let mut entries = Vec::new();
        let mut previous = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("expected index:value, got '{tok}'"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid feature index '{idx}'"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("invalid feature value '{val}'"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite feature value '{val}'"),
                });
            }
            if idx <= previous {
                return Err(Error::NonMonotoneIndex { line: lineno });
            }
            previous = idx;
            entries.push((idx - 1, val));
        }
        features = features.max(previous);
        columns.push(entries);
        labels.push(label);
    }
    map_binary_labels(&mut labels);
    Dataset::new(SparseColumnMatrix::from_columns(features, &columns)?, labels)
}

fn map_binary_labels(labels: &mut [f64]) {
    let mut distinct: Vec<f64> = labels.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() == 2 && distinct != [-1.0, 1.0] {
        let low = distinct[0];
        for y in labels.iter_mut() {
            *y = if *y == low { -1.0 } else { 1.0 };
        }
    }
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

pub fn read_libsvm_file(path: &Path) -> Result<Dataset> {
    parse_libsvm(BufReader::new(File::open(path)?))
}

/// Writes one line per sample. Values use the shortest exact decimal form.
pub fn emit_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    for j in 0..dataset.samples() {
        write!(out, "{}", dataset.targets[j])?;
        let (idx, val) = dataset.data.column(j);
        for (&i, &v) in idx.iter().zip(val) {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Drops feature rows with no nonzero entry and appends a constant-1 intercept row.
pub fn preprocess(raw: &Dataset) -> Result<Dataset> {
    if raw.preprocessed {
        return Err(Error::DoublePreprocess);
    }
    if raw.samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = raw.features();
    let mut used = vec![false; d];
    for (&i, &v) in raw.data.row_indices().iter().zip(raw.data.values()) {
        if v != 0.0 {
            used[i] = true;
        }
    }
    let mut new_index = vec![usize::MAX; d];
    let mut kept = 0;
    for i in 0..d {
        if used[i] {
            new_index[i] = kept;
            kept += 1;
        }
    }
    let columns: Vec<Vec<(usize, f64)>> = (0..raw.samples())
        .map(|j| {
            let (idx, val) = raw.data.column(j);
            let mut col: Vec<(usize, f64)> = idx
                .iter()
                .zip(val)
                .filter(|&(&i, &v)| used[i] && v != 0.0)
                .map(|(&i, &v)| (new_index[i], v))
                .collect();
            col.push((kept, 1.0));
            col
        })
        .collect();
    let feature_names = raw.feature_names.as_ref().map(|names| {
        let mut kept_names: Vec<String> = names
            .iter()
            .enumerate()
            .filter(|(i, _)| used.get(*i).copied().unwrap_or(false))
            .map(|(_, n)| n.clone())
            .collect();
        kept_names.push("intercept".into());
        kept_names
    });
    Ok(Dataset {
        data: SparseColumnMatrix::from_columns(kept + 1, &columns)?,
        targets: raw.targets.clone(),
        feature_names,
        preprocessed: true,
    })
}

pub const TRACE_HEADER: [&str; 6] = ["k", "f", "grad_norm", "step_size", "sketch_size", "wall_clock_seconds"];

fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            format_float(r.f),
            format_float(r.grad_norm),
            format_float(r.step_size),
            r.sketch_size.to_string(),
            format_float(r.wall_clock_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::SchemaMismatch(format!(
            "expected header {}, found {}",
            TRACE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::SchemaMismatch(format!("row {}: invalid {what}", row + 1));
        let record = IterationRecord {
            k: field(0).parse().map_err(|_| bad("k"))?,
            f: field(1).parse().map_err(|_| bad("f"))?,
            grad_norm: field(2).parse().map_err(|_| bad("grad_norm"))?,
            step_size: field(3).parse().map_err(|_| bad("step_size"))?,
            sketch_size: field(4).parse().map_err(|_| bad("sketch_size"))?,
            wall_clock_seconds: field(5).parse().map_err(|_| bad("wall_clock_seconds"))?,
        };
        if let Some(prev) = out.last().map(|p: &IterationRecord| p.k) {
            if record.k <= prev {
                return Err(Error::SchemaMismatch(format!("row {}: k is not increasing", row + 1)));
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_trace_file(path: &Path, records: &[IterationRecord]) -> Result<()> {
    write_trace(records, BufWriter::new(File::create(path)?))
}

pub fn read_trace_file(path: &Path) -> Result<Vec<IterationRecord>> {
    read_trace(BufReader::new(File::open(path)?))
}

/// `key = value` lines in insertion order.
pub fn write_key_values<W: Write>(pairs: &[(String, String)], mut out: W) -> Result<()> {
    for (k, v) in pairs {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::InvalidConfig(format!("metadata entry '{k}' cannot be serialized")));
        }
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_key_values<R: BufRead>(input: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Parse {
            line: lineno + 1,
            message: "expected 'key = value'".into(),
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn write_key_values_file(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    write_key_values(pairs, BufWriter::new(File::create(path)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(sha256_hex(&bytes))
}
