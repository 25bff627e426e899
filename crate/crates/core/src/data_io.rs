//! MNIST IDX parsing, digit subsets, and CSV output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{LabeledSet, Role};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "ELASTICA_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    Standardized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    /// Row-major images, pixels scaled to `[0, 1]` unless standardized.
    pub images: Vec<Vec<f64>>,
    pub raw_labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
    pub normalization: Normalization,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn label_histogram(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        for &l in &self.raw_labels {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: bytes.len(),
            message: format!("file ends before the {what} field"),
        })
}

fn expect_magic(bytes: &[u8], magic: u32, kind: &str) -> Result<()> {
    let found = read_u32(bytes, 0, "magic number")?;
    if found != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected {kind} magic {magic:#010x}, found {found:#010x}"),
        });
    }
    Ok(())
}

/// Decodes an image file and its label file.
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<ImageSet> {
    expect_magic(image_bytes, IMAGE_MAGIC, "image")?;
    let count = read_u32(image_bytes, 4, "image count")? as usize;
    let rows = read_u32(image_bytes, 8, "row count")? as usize;
    let cols = read_u32(image_bytes, 12, "column count")? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if image_bytes.len() < needed {
        return Err(Error::Parse {
            offset: image_bytes.len(),
            message: format!(
                "image payload truncated: header promises {count} images of {rows}x{cols} ({needed} bytes)"
            ),
        });
    }

    expect_magic(label_bytes, LABEL_MAGIC, "label")?;
    let label_count = read_u32(label_bytes, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Parse {
            offset: 4,
            message: format!("label file holds {label_count} labels for {count} images"),
        });
    }
    if label_bytes.len() < 8 + count {
        return Err(Error::Parse {
            offset: label_bytes.len(),
            message: format!("label payload truncated: expected {count} labels"),
        });
    }

    let images = image_bytes[16..needed]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(ImageSet {
        images,
        raw_labels: label_bytes[8..8 + count].to_vec(),
        rows,
        cols,
        normalization: Normalization::None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// `explicit` if given, else `$ELASTICA_DATA_DIR`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "no MNIST directory given and {DATA_DIR_ENV} is not set"
            ))
        })
}

fn find_file(dir: &Path, stem: &str, kind: &str) -> Result<PathBuf> {
    let rank = if kind == "images" { 3 } else { 1 };
    let canonical = dir.join(format!("{stem}-{kind}-idx{rank}-ubyte"));
    let dotted = dir.join(format!("{stem}-{kind}.idx{rank}-ubyte"));
    for p in [&canonical, &dotted] {
        if p.is_file() {
            return Ok(p.clone());
        }
    }
    Err(Error::io(
        canonical,
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    ))
}

/// Loads one MNIST split from `dir` (uncompressed IDX files with the usual
/// names, e.g. `train-images-idx3-ubyte`).
pub fn load_mnist(dir: &Path, split: Split) -> Result<ImageSet> {
    let images = find_file(dir, split.prefix(), "images")?;
    let labels = find_file(dir, split.prefix(), "labels")?;
    let ib = fs::read(&images).map_err(|e| Error::io(&images, e))?;
    let lb = fs::read(&labels).map_err(|e| Error::io(&labels, e))?;
    parse_idx(&ib, &lb)
}

/// Per-feature mean and standard deviation over `rows`.
pub fn feature_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            let c = r[k] - mean[k];
            var[k] += c * c;
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, std)
}

/// Standardizes every feature in place to zero mean and unit variance;
/// constant features become 0.
pub fn standardize_rows(rows: &mut [Vec<f64>]) {
    let (mean, std) = feature_moments(rows);
    for r in rows.iter_mut() {
        for k in 0..r.len() {
            r[k] = if std[k] > 0.0 {
                (r[k] - mean[k]) / std[k]
            } else {
                0.0
            };
        }
    }
}

pub fn standardize(set: &ImageSet) -> Result<ImageSet> {
    if set.normalization == Normalization::Standardized {
        return Err(Error::AlreadyStandardized);
    }
    let mut out = set.clone();
    standardize_rows(&mut out.images);
    out.normalization = Normalization::Standardized;
    Ok(out)
}

/// Draws `n_total` images split equally over `classes` (the remainder goes
/// to the first class), without replacement. Digits become the subclass
/// labels.
pub fn sample_pair_subset(
    set: &ImageSet,
    classes: &[u8],
    n_total: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if classes.is_empty() {
        return Err(Error::InvalidArgument("no classes requested".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = n_total / classes.len();
    let mut features = Vec::with_capacity(n_total);
    let mut labels = Vec::with_capacity(n_total);
    for (c, &digit) in classes.iter().enumerate() {
        let want = per + if c == 0 { n_total % classes.len() } else { 0 };
        let pool: Vec<usize> = (0..set.len())
            .filter(|&i| set.raw_labels[i] == digit)
            .collect();
        if pool.len() < want {
            return Err(Error::InsufficientData(format!(
                "digit {digit}: need {want} images, only {} available",
                pool.len()
            )));
        }
        for k in sample(&mut rng, pool.len(), want) {
            features.push(set.images[pool[k]].clone());
            labels.push(usize::from(digit));
        }
    }
    LabeledSet::new(features, labels, Role::Primary)
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<i64> for Field {
    fn from(v: i64) -> Self {
        Field::Int(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Text(v.to_string())
    }
}

/// Shortest decimal form of `v` rounded to 9 significant digits.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    let mag = rounded.abs();
    if mag == 0.0 || (1e-5..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Int(v) => write!(f, "{v}"),
            Field::Float(v) => f.write_str(&format_float(*v)),
            Field::Text(s) => f.write_str(s),
            Field::Empty => Ok(()),
        }
    }
}

/// Header plus rows, written as one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&table.header)
        .map_err(|e| csv_error(path, e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(ToString::to_string))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV file written by [`write_csv`] back as header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn parse_float(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: format!("not a number: '{s}'"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(payload);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(LABEL_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn one_blank_image() {
        let set = parse_idx(&image_file(1, 28, 28, &[0; 784]), &label_file(&[5])).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.images[0].len(), 784);
        assert!(set.images[0].iter().all(|&p| p == 0.0));
        assert_eq!(set.raw_labels, vec![5]);
    }

    #[test]
    fn pixels_scaled_to_unit_interval() {
        let mut px = vec![0u8; 4];
        px[1] = 255;
        px[2] = 51;
        let set = parse_idx(&image_file(1, 2, 2, &px), &label_file(&[0])).unwrap();
        assert_eq!(set.images[0], vec![0.0, 1.0, 0.2, 0.0]);
    }

    #[test]
    fn swapped_files_fail_on_magic() {
        let img = image_file(1, 28, 28, &[0; 784]);
        let lab = label_file(&[5]);
        assert!(matches!(
            parse_idx(&lab, &img),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let img = image_file(2, 28, 28, &[0; 784]);
        match parse_idx(&img, &label_file(&[1, 2])) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 16 + 784),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let img = image_file(1, 28, 28, &[0; 784]);
        assert!(matches!(
            parse_idx(&img, &label_file(&[1, 2])),
            Err(Error::Parse { offset: 4, .. })
        ));
    }

    fn toy_set() -> ImageSet {
        ImageSet {
            images: vec![
                vec![0.5, 0.0, 1.0],
                vec![0.5, 0.2, 0.0],
                vec![0.5, 0.9, 0.3],
                vec![0.5, 0.4, 0.6],
            ],
            raw_labels: vec![5, 8, 5, 8],
            rows: 1,
            cols: 3,
            normalization: Normalization::None,
        }
    }

    #[test]
    fn standardize_moments_and_constant_column() {
        let s = standardize(&toy_set()).unwrap();
        assert!(s.images.iter().all(|r| r[0] == 0.0));
        let (mean, std) = feature_moments(&s.images);
        for k in 1..3 {
            assert!(mean[k].abs() < 1e-9);
            assert!((std[k] - 1.0).abs() < 1e-9);
        }
        assert!(matches!(standardize(&s), Err(Error::AlreadyStandardized)));
    }

    #[test]
    fn subset_is_balanced_and_seeded() {
        let set = toy_set();
        let a = sample_pair_subset(&set, &[5, 8], 4, 1).unwrap();
        assert_eq!(a.labels.iter().filter(|&&l| l == 5).count(), 2);
        assert_eq!(a, sample_pair_subset(&set, &[5, 8], 4, 1).unwrap());
        assert!(matches!(
            sample_pair_subset(&set, &[5, 8], 6, 1),
            Err(Error::InsufficientData(_))
        ));
        let b = sample_pair_subset(&set, &[5, 8], 3, 2).unwrap();
        assert_eq!(b.labels.iter().filter(|&&l| l == 5).count(), 2);
    }

    #[test]
    fn float_format_nine_digits() {
        assert_eq!(format_float(0.1234567891234), "0.123456789");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(-2.5e-12), "-2.5e-12");
        let v = 123.456789012345;
        let back: f64 = format_float(v).parse().unwrap();
        assert!((back - v).abs() <= 1e-9 * v.abs());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &Table::new(["a", "b"])).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
        let mut t = Table::new(["a", "b"]);
        t.push(vec![Field::from(1usize), Field::from(0.25)]);
        write_csv(&path, &t).unwrap();
        let (h, rows) = read_csv(&path).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "0.25".to_string()]]);
        let bad = dir.path().join("missing").join("t.csv");
        assert!(matches!(write_csv(&bad, &t), Err(Error::Io { .. })));
    }
}
