//! Tensor dataset files.
//!
//! Binary layout (little-endian): `b"ROMT"`, version byte `b'1'`, missing
//! policy byte (0 = quiet NaN), order `u32`, shape `u64` per mode, sample
//! count `u64`, then every sample's cells as `f64` in column-major
//! (first index fastest) order. Missing cells hold the canonical quiet NaN.
//!
//! Text layout: a manifest with a `shape` line followed by one CSV file name
//! per sample; each CSV is the mode-1 unfolding (rows `P_1`, columns the
//! remaining indices, first fastest) with `NA` for missing cells.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rompca_core::sample::{validate_samples, TensorSample};
use rompca_core::tensor::{fold, unfold, DenseTensor, Matrix};

use crate::error::{CliError, CliResult};

pub const DATASET_MAGIC: &[u8; 4] = b"ROMT";
pub const DATASET_VERSION: u8 = b'1';
pub const MISSING_AS_NAN: u8 = 0;
const CANONICAL_NAN: u64 = 0x7ff8_0000_0000_0000;

pub const MANIFEST_HEADER: &str = "# rompca tensor dataset";

/// Little-endian byte sink.
#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
}

/// Little-endian byte source that reports truncation against a path.
pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8], path: &'a Path) -> Self {
        Self { data, pos: 0, path }
    }

    pub fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(CliError::format(
                self.path,
                format!("truncated file: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    /// A `u64` count that must fit in memory.
    pub fn count(&mut self, what: &str) -> CliResult<usize> {
        let v = self.u64()?;
        let remaining = (self.data.len() - self.pos) as u64;
        if v > remaining.max(1 << 20) {
            return Err(CliError::format(
                self.path,
                format!("implausible {what} {v}"),
            ));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn f64s(&mut self, n: usize) -> CliResult<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| CliError::format(self.path, "size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(&self) -> CliResult<()> {
        if self.pos != self.data.len() {
            return Err(CliError::format(
                self.path,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }

    pub fn shape(&mut self) -> CliResult<Vec<usize>> {
        let order = self.u32()? as usize;
        if order == 0 || order > 16 {
            return Err(CliError::format(
                self.path,
                format!("unsupported tensor order {order}"),
            ));
        }
        let shape = (0..order)
            .map(|_| self.count("dimension"))
            .collect::<CliResult<Vec<_>>>()?;
        if shape.contains(&0) {
            return Err(CliError::format(
                self.path,
                format!("zero dimension in shape {shape:?}"),
            ));
        }
        Ok(shape)
    }
}

pub fn write_shape(w: &mut ByteWriter, shape: &[usize]) {
    w.u32(shape.len() as u32);
    for &p in shape {
        w.usize(p);
    }
}

/// Checks the 4-byte magic and version byte.
pub fn read_header(
    r: &mut ByteReader,
    magic: &[u8; 4],
    version: u8,
    kind: &'static str,
) -> CliResult<()> {
    let m = r.take(4)?;
    if m != magic {
        return Err(CliError::format(
            r.path,
            format!("not a {kind} file (magic {:?})", String::from_utf8_lossy(m)),
        ));
    }
    let v = r.u8()?;
    if v != version {
        return Err(CliError::UnsupportedVersion {
            path: r.path.to_path_buf(),
            kind,
            version: v.wrapping_sub(b'0'),
        });
    }
    Ok(())
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn encode_dataset(samples: &[TensorSample]) -> CliResult<Vec<u8>> {
    let shape = validate_samples(samples)?;
    let mut w = ByteWriter::default();
    w.bytes(DATASET_MAGIC);
    w.u8(DATASET_VERSION);
    w.u8(MISSING_AS_NAN);
    write_shape(&mut w, &shape);
    w.usize(samples.len());
    for s in samples {
        for (&x, &m) in s.data().as_slice().iter().zip(s.mask().as_slice()) {
            w.u64(if m == 0.0 { CANONICAL_NAN } else { x.to_bits() });
        }
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> CliResult<Vec<TensorSample>> {
    let mut r = ByteReader::new(bytes, path);
    read_header(&mut r, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let policy = r.u8()?;
    if policy != MISSING_AS_NAN {
        return Err(CliError::format(
            path,
            format!("unknown missing-value policy {policy}"),
        ));
    }
    let shape = r.shape()?;
    let n = r.count("sample count")?;
    let d: usize = shape.iter().product();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let cells = r.f64s(d)?;
        if cells.iter().any(|x| x.is_infinite()) {
            return Err(CliError::format(
                path,
                format!("sample {i} contains an infinite value"),
            ));
        }
        samples.push(TensorSample::from_nan(DenseTensor::from_vec(
            &shape, cells,
        )?)?);
    }
    r.finish()?;
    if samples.is_empty() {
        return Err(CliError::format(path, "dataset holds no samples"));
    }
    Ok(samples)
}

fn is_binary_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "romt")
}

/// Reads a dataset, detecting the binary format by its magic bytes.
pub fn load_dataset(path: &Path) -> CliResult<Vec<TensorSample>> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(DATASET_MAGIC) {
        decode_dataset(&bytes, path)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| CliError::format(path, "neither a binary dataset nor a UTF-8 manifest"))?;
        load_manifest(&text, path)
    }
}

/// Writes the binary format for `.romt` paths and the manifest format
/// otherwise.
pub fn save_dataset(path: &Path, samples: &[TensorSample]) -> CliResult<()> {
    if is_binary_path(path) {
        write_bytes(path, &encode_dataset(samples)?)
    } else {
        save_manifest(path, samples)
    }
}

fn sample_file_name(path: &Path, i: usize) -> String {
    let stem = path
        .file_stem()
        .map_or("sample".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}_{:05}.csv", i + 1)
}

pub fn save_manifest(path: &Path, samples: &[TensorSample]) -> CliResult<()> {
    let shape = validate_samples(samples)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = format!(
        "{MANIFEST_HEADER}\nshape {}\n",
        shape
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    for (i, s) in samples.iter().enumerate() {
        let name = sample_file_name(path, i);
        let m = unfold(&s.to_nan_tensor(), 0)?;
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for row in 0..m.rows() {
            let rec: Vec<String> = (0..m.cols())
                .map(|c| {
                    let v = m.get(row, c);
                    if v.is_nan() {
                        "NA".to_string()
                    } else {
                        format!("{v:?}")
                    }
                })
                .collect();
            wtr.write_record(&rec)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_bytes(&dir.join(&name), &bytes)?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    write_bytes(path, manifest.as_bytes())
}

fn parse_cell(field: &str, file: &Path, row: usize) -> CliResult<f64> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    let v: f64 = f
        .parse()
        .map_err(|_| CliError::format(file, format!("row {}: cannot parse {f:?}", row + 1)))?;
    if v.is_infinite() {
        return Err(CliError::format(
            file,
            format!("row {}: infinite value", row + 1),
        ));
    }
    Ok(v)
}

pub fn load_manifest(text: &str, path: &Path) -> CliResult<Vec<TensorSample>> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut shape: Option<Vec<usize>> = None;
    let mut files: Vec<PathBuf> = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        if let Some(rest) = line.strip_prefix("shape") {
            let dims = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::format(path, format!("bad shape line {line:?}")))?;
            if dims.is_empty() || dims.contains(&0) {
                return Err(CliError::format(path, format!("bad shape line {line:?}")));
            }
            shape = Some(dims);
        } else {
            files.push(dir.join(line));
        }
    }
    let shape = shape.ok_or_else(|| CliError::format(path, "manifest has no shape line"))?;
    if files.is_empty() {
        return Err(CliError::format(path, "manifest lists no sample files"));
    }
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    files
        .iter()
        .map(|file| {
            let bytes = read_bytes(file)?;
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(bytes.as_slice());
            let mut values = Vec::with_capacity(rows * cols);
            let mut n_rows = 0;
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| CliError::format(file, e.to_string()))?;
                if rec.len() != cols {
                    return Err(CliError::format(
                        file,
                        format!("row {} has {} fields, expected {cols}", i + 1, rec.len()),
                    ));
                }
                for f in rec.iter() {
                    values.push(parse_cell(f, file, i)?);
                }
                n_rows += 1;
            }
            if n_rows != rows {
                return Err(CliError::format(
                    file,
                    format!("{n_rows} rows, expected {rows}"),
                ));
            }
            let m = Matrix::from_row_major(rows, cols, &values)?;
            Ok(TensorSample::from_nan(fold(&m, 0, &shape)?)?)
        })
        .collect()
}

/// Writes CSV text with a header row; every value is already formatted.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        wtr.write_record(r)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_bytes(path, &bytes)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").map_err(|e| CliError::io("<stdout>", e))
}
