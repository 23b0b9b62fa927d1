//! Datasets: IDX and CSV ingestion, synthetic Gaussian blobs, label corruption.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled examples. Row `i` carries the stable example id `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    ids: Vec<u64>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(features, labels, ids, class_count)
    }

    pub fn with_ids(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<u64>,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Data("class count must be positive".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(Error::Data(format!(
                "label {y} at row {i} is out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row_of_id(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Features and labels for the given rows, in order.
    pub fn batch(&self, rows: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.gather_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }

    /// The first `n` rows (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        let (features, labels) = self.batch(&rows);
        Dataset {
            features,
            labels,
            ids: self.ids[..rows.len()].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Split off the rows `[at..]` into a second dataset; ids are kept.
    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.len());
        let head: Vec<usize> = (0..at).collect();
        let tail: Vec<usize> = (at..self.len()).collect();
        let part = |rows: &[usize]| {
            let (features, labels) = self.batch(rows);
            Dataset {
                features,
                labels,
                ids: rows.iter().map(|&r| self.ids[r]).collect(),
                class_count: self.class_count,
            }
        };
        (part(&head), part(&tail))
    }
}

// ---------------------------------------------------------------------------
// IDX

/// Parsed IDX header: magic followed by big-endian `u32` dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |offset: u64, message: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            message,
        };
        let word = |off: usize| -> Result<u32> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(|| fmt(off as u64, "truncated header".into()))
        };
        let magic = word(0)?;
        if magic >> 16 != 0 || (magic >> 8) & 0xff != 0x08 {
            return Err(fmt(0, format!("bad magic number {magic:#010x}")));
        }
        let ndim = (magic & 0xff) as usize;
        let dims = (0..ndim)
            .map(|i| word(4 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        Ok(IdxHeader { magic, dims })
    }

    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.magic.to_be_bytes().to_vec();
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load an image/label IDX pair (MNIST layout). Pixels are scaled into `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_file(images_path)?;
    let lab = read_file(labels_path)?;
    let ih = IdxHeader::parse(&img, images_path)?;
    let lh = IdxHeader::parse(&lab, labels_path)?;
    let fmt = |path: &Path, offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if ih.magic != IDX_IMAGES_MAGIC {
        return Err(fmt(images_path, 0, format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {:#010x}", ih.magic)));
    }
    if lh.magic != IDX_LABELS_MAGIC {
        return Err(fmt(labels_path, 0, format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {:#010x}", lh.magic)));
    }
    if ih.dims.len() != 3 {
        return Err(fmt(images_path, 3, format!("expected 3 dimensions, found {}", ih.dims.len())));
    }
    if lh.dims.len() != 1 {
        return Err(fmt(labels_path, 3, format!("expected 1 dimension, found {}", lh.dims.len())));
    }
    let n = ih.dims[0] as usize;
    let (rows, cols) = (ih.dims[1] as usize, ih.dims[2] as usize);
    let dim = rows * cols;
    if lh.dims[0] as usize != n {
        return Err(fmt(
            labels_path,
            4,
            format!("label count {} does not match image count {n}", lh.dims[0]),
        ));
    }
    let need = ih.len() + n * dim;
    if img.len() < need {
        return Err(fmt(
            images_path,
            img.len(),
            format!("truncated pixel data: need {need} bytes"),
        ));
    }
    let need = lh.len() + n;
    if lab.len() < need {
        return Err(fmt(
            labels_path,
            lab.len(),
            format!("truncated label data: need {need} bytes"),
        ));
    }
    let pixels = img[ih.len()..ih.len() + n * dim]
        .iter()
        .map(|&p| p as f64 / 255.0)
        .collect();
    let labels: Vec<usize> = lab[lh.len()..lh.len() + n].iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(Matrix::from_vec(n, dim, pixels)?, labels, classes)
}

/// Write an image/label IDX pair. Feature values are mapped back to bytes by `round(255 * x)`.
pub fn write_idx(data: &Dataset, rows: u32, cols: u32, images_path: &Path, labels_path: &Path) -> Result<()> {
    if (rows * cols) as usize != data.dim() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images cannot hold {} features",
            data.dim()
        )));
    }
    let n = data.len() as u32;
    let mut img = IdxHeader {
        magic: IDX_IMAGES_MAGIC,
        dims: vec![n, rows, cols],
    }
    .to_bytes();
    img.extend(
        data.features()
            .as_slice()
            .iter()
            .map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = IdxHeader {
        magic: IDX_LABELS_MAGIC,
        dims: vec![n],
    }
    .to_bytes();
    lab.extend(data.labels().iter().map(|&l| l as u8));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

// ---------------------------------------------------------------------------
// CSV: `id,label,f0..f{D-1}`

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("id,label");
    for j in 0..data.dim() {
        header.push_str(&format!(",f{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (i, row) in data.features().iter_rows().enumerate() {
        let mut line = format!("{},{}", data.ids[i], data.labels[i]);
        for v in row {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read the internal CSV format. With `class_count == None` the count is `max label + 1`.
pub fn read_csv(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(perr(1, "header must start with `id,label`".into()));
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(perr(1, format!("expected column `f{j}`, found `{c}`")));
        }
    }
    let dim = cols.len() - 2;
    let (mut ids, mut labels, mut feats) = (Vec::new(), Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(perr(lineno, format!("expected {} fields, found {}", dim + 2, fields.len())));
        }
        ids.push(fields[0].parse::<u64>().map_err(|e| perr(lineno, format!("id: {e}")))?);
        labels.push(fields[1].parse::<usize>().map_err(|e| perr(lineno, format!("label: {e}")))?);
        for f in &fields[2..] {
            feats.push(f.parse::<f64>().map_err(|e| perr(lineno, format!("feature: {e}")))?);
        }
    }
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
    let n = labels.len();
    Dataset::with_ids(Matrix::from_vec(n, dim, feats)?, labels, ids, classes)
}

// ---------------------------------------------------------------------------
// Synthetic blobs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Class centers. With `classes <= dim` they are scaled unit vectors; otherwise
/// they sit evenly on a circle in the first two coordinates (or a line for `dim == 1`).
pub fn blob_centers(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut v = vec![0.0; dim];
            if classes <= dim {
                v[c] = 1.0;
            } else if dim == 1 {
                v[0] = c as f64;
            } else {
                let a = std::f64::consts::TAU * c as f64 / classes as f64;
                v[0] = a.cos();
                v[1] = a.sin();
            }
            v
        })
        .collect()
}

/// Gaussian blobs around [`blob_centers`], 80/20 train/test split.
///
/// Example `i` belongs to class `i % classes` and keeps id `i` in whichever split it lands.
pub fn synth_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    if n < classes {
        return Err(Error::config("n", format!("n={n} is smaller than classes={classes}")));
    }
    if dim == 0 {
        return Err(Error::config("dim", "must be at least 1"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::config("spread", format!("must be >= 0, got {spread}")));
    }
    let centers = blob_centers(classes, dim);
    let mut rng = rng::stream(seed, Stream::Synth);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut feats = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for &m in &centers[c] {
            feats.push(m + spread * noise.sample(&mut rng));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let all = Dataset::new(Matrix::from_vec(n, dim, feats)?, labels, classes)?;
    let (x, y) = all.batch(&order);
    let ids = order.iter().map(|&i| i as u64).collect();
    let shuffled = Dataset::with_ids(x, y, ids, classes)?;
    Ok(shuffled.split_at(n * 4 / 5))
}

// ---------------------------------------------------------------------------
// UniformFlip

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn flip_count(&self, n: usize) -> usize {
        (self.fraction * n as f64).round() as usize
    }
}

/// Relabel exactly `round(fraction * N)` distinct examples, each to a uniformly
/// chosen *different* class. Returns the corrupted dataset and the changed rows.
pub fn uniform_flip(data: &Dataset, spec: &CorruptionSpec) -> Result<(Dataset, Vec<usize>)> {
    if !(spec.fraction >= 0.0 && spec.fraction <= 1.0) {
        return Err(Error::config(
            "fraction",
            format!("must lie in [0, 1], got {}", spec.fraction),
        ));
    }
    let c = data.class_count();
    let count = spec.flip_count(data.len());
    if count > 0 && c < 2 {
        return Err(Error::config("fraction", "label flipping needs at least 2 classes"));
    }
    let mut rng = rng::stream(spec.seed, Stream::Corruption);
    let mut rows = index::sample(&mut rng, data.len(), count).into_vec();
    rows.sort_unstable();
    let mut out = data.clone();
    for &r in &rows {
        let old = out.labels[r];
        out.labels[r] = (old + 1 + rng.gen_range(0..c - 1)) % c;
    }
    Ok((out, rows))
}
