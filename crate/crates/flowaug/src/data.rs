//! Dataset ingestion: IDX image/label files, synthetic 2-D generators, and
//! deterministic class-stratified subsetting.
//!
//! All inputs live in `[0,1]` per coordinate (pixel bytes are scaled by
//! `1/255`, synthetic points are clamped into the unit square), labels are
//! dense class indices, and every random choice is a pure function of an
//! explicit seed.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, mix, rng_from, standard_normal, stream, uniform};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which side of the train/test split a handle holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// An in-memory dataset: `[n, dim]` inputs in `[0,1]` plus class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle<T: Scalar> {
    /// Provenance: generator name or source file names.
    name: String,
    split: Split,
    inputs: Tensor<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> DatasetHandle<T> {
    /// Validates and wraps dataset pieces: nonempty, labels in range,
    /// inputs within `[0,1]`.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        inputs: Tensor<T>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if inputs.rank() != 2 || inputs.shape()[0] == 0 {
            return Err(Error::Dataset(format!(
                "inputs must be a nonempty [n, dim] matrix, got {:?}",
                inputs.shape()
            )));
        }
        if labels.len() != inputs.shape()[0] {
            return Err(Error::Dataset(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.shape()[0]
            )));
        }
        if num_classes == 0 {
            return Err(Error::Dataset("zero classes".to_string()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {l} at index {i} out of range for {num_classes} classes"
            )));
        }
        let lo = T::zero();
        let hi = T::one();
        if let Some(i) = inputs.data().iter().position(|&v| v < lo || v > hi) {
            return Err(Error::Dataset(format!(
                "input value {} at flat index {i} outside [0,1]",
                inputs.data()[i]
            )));
        }
        Ok(DatasetHandle { name: name.into(), split, inputs, labels, num_classes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn n(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-class sample counts, indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// One-hot label matrix `[n, num_classes]`.
    pub fn one_hot_labels(&self) -> Tensor<T> {
        one_hot(&self.labels, self.num_classes)
    }

    /// Rows `rows` of the dataset as a new handle (order as given).
    pub fn select(&self, rows: &[usize], name_suffix: &str) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("empty row selection".to_string()));
        }
        let dim = self.dim();
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n() {
                return Err(Error::Dataset(format!("row {r} out of {}", self.n())));
            }
            data.extend_from_slice(self.inputs.row(r)?.data());
            labels.push(self.labels[r]);
        }
        DatasetHandle::new(
            format!("{}{name_suffix}", self.name),
            self.split,
            Tensor::new(vec![rows.len(), dim], data)?,
            labels,
            self.num_classes,
        )
    }
}

/// One-hot encoding of dense class labels.
pub fn one_hot<T: Scalar>(labels: &[usize], num_classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len().max(1), num_classes.max(1)]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * num_classes + l] = T::one();
    }
    t
}

// ---------------------------------------------------------------------------
// IDX files
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Dataset(format!(
            "{}: truncated header, expected at least {end} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Parses an IDX image file (big-endian magic `0x00000803`, three extents,
/// raw bytes) into `[n, rows*cols]` features scaled by `1/255`.
pub fn load_idx_images<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = read_file(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGES_MAGIC:08x} for images)",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let rows = read_be_u32(&bytes, 8, path)? as usize;
    let cols = read_be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: truncated or oversized payload, expected {expected} bytes for {n}×{rows}×{cols}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    if n == 0 || rows * cols == 0 {
        return Err(Error::Dataset(format!("{}: empty image tensor", path.display())));
    }
    let scale = 1.0 / 255.0;
    let data: Vec<T> = bytes[16..].iter().map(|&b| T::narrow(f64::from(b) * scale)).collect();
    Tensor::new(vec![n, rows * cols], data)
}

/// Parses an IDX label file (big-endian magic `0x00000801`, one extent,
/// raw bytes) into dense labels.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let magic = read_be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "{}: bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_LABELS_MAGIC:08x} for labels)",
            path.display()
        )));
    }
    let n = read_be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::Dataset(format!(
            "{}: truncated or oversized payload, expected {expected} bytes for {n} labels, found {}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Loads a matched IDX image/label pair into a dataset handle.
pub fn load_idx_pair<T: Scalar>(
    images: &Path,
    labels: &Path,
    split: Split,
    num_classes: usize,
) -> Result<DatasetHandle<T>> {
    let inputs = load_idx_images(images)?;
    let label_vec = load_idx_labels(labels)?;
    if label_vec.len() != inputs.shape()[0] {
        return Err(Error::Dataset(format!(
            "{} images but {} labels ({} / {})",
            inputs.shape()[0],
            label_vec.len(),
            images.display(),
            labels.display()
        )));
    }
    DatasetHandle::new(
        format!("{}+{}", images.display(), labels.display()),
        split,
        inputs,
        label_vec,
        num_classes,
    )
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn synthetic_handle<T: Scalar>(
    name: String,
    split: Split,
    points: Vec<(f64, f64)>,
    labels: Vec<usize>,
    num_classes: usize,
) -> Result<DatasetHandle<T>> {
    let mut data = Vec::with_capacity(points.len() * 2);
    for (x, y) in points {
        data.push(T::narrow(clamp01(x)));
        data.push(T::narrow(clamp01(y)));
    }
    DatasetHandle::new(name, split, Tensor::new(vec![labels.len(), 2], data)?, labels, num_classes)
}

/// `k` Gaussian blobs with means evenly spaced on a circle of radius 0.3
/// around (0.5, 0.5); labels round-robin, points clamped into `[0,1]²`.
pub fn gaussian_mixture<T: Scalar>(
    k: usize,
    n: usize,
    noise: f64,
    seed: u64,
    split: Split,
) -> Result<DatasetHandle<T>> {
    if k == 0 || n == 0 {
        return Err(Error::Dataset("gaussian_mixture needs k ≥ 1 and n ≥ 1".to_string()));
    }
    let mut rng = rng_from(mix(seed, stream::DATA));
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let angle = std::f64::consts::TAU * class as f64 / k as f64;
        let cx = 0.5 + 0.3 * angle.cos();
        let cy = 0.5 + 0.3 * angle.sin();
        let dx: f64 = standard_normal(&mut rng);
        let dy: f64 = standard_normal(&mut rng);
        points.push((cx + noise * dx, cy + noise * dy));
        labels.push(class);
    }
    synthetic_handle(format!("gaussian_mixture_{k}"), split, points, labels, k)
}

/// Two interleaved arcs (half-moons) scaled into the unit square.
pub fn two_arcs<T: Scalar>(n: usize, noise: f64, seed: u64, split: Split) -> Result<DatasetHandle<T>> {
    if n == 0 {
        return Err(Error::Dataset("two_arcs needs n ≥ 1".to_string()));
    }
    let mut rng = rng_from(mix(seed, stream::DATA));
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t: f64 = uniform(&mut rng, 0.0, std::f64::consts::PI);
        // Raw moons: class 0 on (cos t, sin t), class 1 on (1-cos t, 0.5-sin t);
        // their union spans x ∈ [-1, 2], y ∈ [-0.5, 1].
        let (rx, ry) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let dx: f64 = standard_normal(&mut rng);
        let dy: f64 = standard_normal(&mut rng);
        let x = 0.1 + 0.8 * (rx + 1.0) / 3.0 + noise * dx;
        let y = 0.1 + 0.8 * (ry + 0.5) / 1.5 + noise * dy;
        points.push((x, y));
        labels.push(class);
    }
    synthetic_handle("two_arcs".to_string(), split, points, labels, 2)
}

/// `k` concentric rings around (0.5, 0.5), one class per ring.
pub fn rings<T: Scalar>(k: usize, n: usize, noise: f64, seed: u64, split: Split) -> Result<DatasetHandle<T>> {
    if k == 0 || n == 0 {
        return Err(Error::Dataset("rings needs k ≥ 1 and n ≥ 1".to_string()));
    }
    let mut rng = rng_from(mix(seed, stream::DATA));
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let radius = 0.4 * (class + 1) as f64 / k as f64;
        let theta: f64 = uniform(&mut rng, 0.0, std::f64::consts::TAU);
        let dx: f64 = standard_normal(&mut rng);
        let dy: f64 = standard_normal(&mut rng);
        points.push((
            0.5 + radius * theta.cos() + noise * dx,
            0.5 + radius * theta.sin() + noise * dy,
        ));
        labels.push(class);
    }
    synthetic_handle(format!("rings_{k}"), split, points, labels, k)
}

// ---------------------------------------------------------------------------
// Stratified subsetting
// ---------------------------------------------------------------------------

/// Class-stratified subset of `⌈fraction·n⌉` samples, deterministic under
/// `seed`, emitted in source order.
///
/// Per-class counts are assigned by largest remainder, so each differs from
/// exact proportionality (`fraction · n_class`) by less than 1. The draw for
/// each class depends only on `(seed, class, within-class order)`: shuffling
/// the source rows in a way that preserves each class's relative order
/// selects exactly the same samples.
pub fn stratified_subset<T: Scalar>(
    data: &DatasetHandle<T>,
    fraction: f64,
    seed: u64,
) -> Result<DatasetHandle<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("subset fraction", format!("{fraction}; need (0, 1]")));
    }
    if fraction == 1.0 {
        // Identity, order preserved.
        return data.select(&(0..data.n()).collect::<Vec<_>>(), "");
    }

    // Within-class index lists in source order.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Dataset(format!(
            "cannot stratify: class {empty} has no samples"
        )));
    }

    // Largest-remainder apportionment of ⌈fraction·n⌉ across classes.
    let total = (fraction * data.n() as f64).ceil() as usize;
    let mut counts: Vec<usize> = Vec::with_capacity(by_class.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(by_class.len());
    for (c, members) in by_class.iter().enumerate() {
        let exact = fraction * members.len() as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        remainders.push((c, exact - floor as f64));
    }
    let assigned: usize = counts.iter().sum();
    if assigned > total {
        // ⌈fraction·n⌉ ≥ Σ⌊fraction·n_c⌋ always; guard anyway.
        return Err(Error::numerical("subset apportionment", "floor sum exceeds total".to_string()));
    }
    // Ties broken by class index for determinism.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite remainders").then(a.0.cmp(&b.0)));
    for &(c, _) in remainders.iter().take(total - assigned) {
        counts[c] += 1;
    }
    if let Some(zero) = counts.iter().position(|&k| k == 0) {
        return Err(Error::Dataset(format!(
            "fraction {fraction} yields no samples for class {zero}"
        )));
    }

    // Per-class draw: seeded shuffle of within-class ranks, take the first
    // `count`, then map ranks back to source indices.
    let mut chosen = Vec::with_capacity(total);
    for (c, members) in by_class.iter().enumerate() {
        let mut class_rng = rng_from(mix(mix(seed, stream::SUBSET), c as u64));
        let ranks = rng::shuffled_indices(members.len(), &mut class_rng);
        for &r in ranks.iter().take(counts[c]) {
            chosen.push(members[r]);
        }
    }
    chosen.sort_unstable();
    data.select(&chosen, "@subset")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f.flush().unwrap();
        f
    }

    fn idx_images_bytes(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&n.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_header_arithmetic_and_scaling() {
        let pixels = vec![0u8; 10 * 28 * 28];
        let f = write_temp(&idx_images_bytes(10, 28, 28, &pixels));
        let t = load_idx_images::<f64>(f.path()).unwrap();
        assert_eq!(t.shape(), &[10, 784]);

        let f = write_temp(&idx_images_bytes(1, 1, 3, &[0, 51, 255]));
        let t = load_idx_images::<f64>(f.path()).unwrap();
        assert_eq!(t.data()[0], 0.0);
        assert!((t.data()[1] - 0.2).abs() < 1e-12);
        assert_eq!(t.data()[2], 1.0);
    }

    #[test]
    fn idx_bad_magic_cites_offset() {
        let mut bytes = idx_images_bytes(1, 1, 1, &[0]);
        bytes[2] = 0x07;
        let f = write_temp(&bytes);
        let err = load_idx_images::<f64>(f.path()).unwrap_err().to_string();
        assert!(err.contains("offset 0"), "{err}");
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn idx_truncation_reports_expected_and_actual() {
        let bytes = idx_images_bytes(10, 28, 28, &[0u8; 100]);
        let f = write_temp(&bytes);
        let err = load_idx_images::<f64>(f.path()).unwrap_err().to_string();
        assert!(err.contains("7856"), "expected byte count missing: {err}");
        assert!(err.contains("116"), "actual byte count missing: {err}");
    }

    #[test]
    fn idx_label_pair_and_range_validation() {
        let img = write_temp(&idx_images_bytes(3, 1, 2, &[0, 10, 20, 30, 40, 50]));
        let lab = write_temp(&idx_labels_bytes(&[0, 1, 2]));
        let d = load_idx_pair::<f64>(img.path(), lab.path(), Split::Train, 3).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.labels(), &[0, 1, 2]);

        // A label equal to the class count must be rejected.
        let lab_bad = write_temp(&idx_labels_bytes(&[0, 1, 10]));
        let err = load_idx_pair::<f64>(img.path(), lab_bad.path(), Split::Train, 10).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");

        let lab_magic = {
            let mut b = idx_labels_bytes(&[0, 1, 2]);
            b[3] = 0x99;
            write_temp(&b)
        };
        assert!(load_idx_labels(lab_magic.path()).is_err());
    }

    #[test]
    fn synthetic_generators_are_deterministic_and_bounded() {
        let a = gaussian_mixture::<f64>(2, 100, 0.05, 7, Split::Train).unwrap();
        let b = gaussian_mixture::<f64>(2, 100, 0.05, 7, Split::Train).unwrap();
        assert_eq!(a.inputs().data(), b.inputs().data());
        assert_eq!(a.labels(), b.labels());
        let c = gaussian_mixture::<f64>(2, 100, 0.05, 8, Split::Train).unwrap();
        assert_ne!(a.inputs().data(), c.inputs().data());

        for d in [
            a,
            two_arcs::<f64>(101, 0.02, 3, Split::Test).unwrap(),
            rings::<f64>(3, 99, 0.01, 4, Split::Train).unwrap(),
        ] {
            assert!(d.inputs().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let counts = d.class_counts();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "round-robin classes stay balanced: {counts:?}");
        }
    }

    #[test]
    fn mixture_means_sit_near_their_centers() {
        let d = gaussian_mixture::<f64>(4, 4000, 0.02, 11, Split::Train).unwrap();
        for class in 0..4 {
            let angle = std::f64::consts::TAU * class as f64 / 4.0;
            let (cx, cy) = (0.5 + 0.3 * angle.cos(), 0.5 + 0.3 * angle.sin());
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut n = 0.0;
            for (i, &l) in d.labels().iter().enumerate() {
                if l == class {
                    mx += d.inputs().at2(i, 0);
                    my += d.inputs().at2(i, 1);
                    n += 1.0;
                }
            }
            assert!((mx / n - cx).abs() < 0.01, "class {class} x-mean");
            assert!((my / n - cy).abs() < 0.01, "class {class} y-mean");
        }
    }

    #[test]
    fn one_hot_places_single_ones() {
        let t = one_hot::<f64>(&[2, 0], 3);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn subset_matches_balanced_arithmetic() {
        // Balanced 10-class, 1000 samples, 5% → 50 samples, 5 per class.
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let inputs = Tensor::<f64>::zeros(&[1000, 2]);
        let d = DatasetHandle::new("balanced", Split::Train, inputs, labels, 10).unwrap();
        let s = stratified_subset(&d, 0.05, 123).unwrap();
        assert_eq!(s.n(), 50);
        assert!(s.class_counts().iter().all(|&c| c == 5), "{:?}", s.class_counts());
    }

    #[test]
    fn subset_counts_stay_within_one_of_proportionality() {
        // Unbalanced classes: 7, 13, 30 members.
        let mut labels = Vec::new();
        labels.extend(std::iter::repeat_n(0, 7));
        labels.extend(std::iter::repeat_n(1, 13));
        labels.extend(std::iter::repeat_n(2, 30));
        let d = DatasetHandle::new(
            "unbalanced",
            Split::Train,
            Tensor::<f64>::zeros(&[50, 2]),
            labels,
            3,
        )
        .unwrap();
        for fraction in [0.37, 0.2, 0.5, 0.81] {
            let s = stratified_subset(&d, fraction, 9).unwrap();
            let counts = s.class_counts();
            assert_eq!(s.n(), (fraction * 50.0).ceil() as usize);
            for (c, &k) in counts.iter().enumerate() {
                let exact = fraction * d.class_counts()[c] as f64;
                assert!(
                    (k as f64 - exact).abs() < 1.0,
                    "class {c}: {k} vs exact {exact} at fraction {fraction}"
                );
            }
        }
    }

    #[test]
    fn subset_is_deterministic_and_fraction_one_is_identity() {
        let d = gaussian_mixture::<f64>(3, 120, 0.05, 5, Split::Train).unwrap();
        let a = stratified_subset(&d, 0.25, 77).unwrap();
        let b = stratified_subset(&d, 0.25, 77).unwrap();
        assert_eq!(a.inputs().data(), b.inputs().data());
        assert_eq!(a.labels(), b.labels());
        let c = stratified_subset(&d, 0.25, 78).unwrap();
        assert_ne!(a.inputs().data(), c.inputs().data());

        let full = stratified_subset(&d, 1.0, 77).unwrap();
        assert_eq!(full.inputs().data(), d.inputs().data());
        assert_eq!(full.labels(), d.labels());
    }

    #[test]
    fn subset_commutes_with_class_order_preserving_shuffles() {
        // Same within-class sequences, different interleavings: blocked
        // (all of class 0, then class 1) vs alternating.
        let n_per = 20usize;
        let mut blocked_labels = Vec::new();
        let mut blocked_rows = Vec::new();
        for class in 0..2usize {
            for j in 0..n_per {
                blocked_labels.push(class);
                blocked_rows.push([class as f64 / 10.0 + j as f64 / 1000.0, 0.5]);
            }
        }
        let mut alternating_labels = Vec::new();
        let mut alternating_rows = Vec::new();
        for j in 0..n_per {
            for class in 0..2usize {
                alternating_labels.push(class);
                alternating_rows.push([class as f64 / 10.0 + j as f64 / 1000.0, 0.5]);
            }
        }
        let to_handle = |rows: &[[f64; 2]], labels: Vec<usize>| {
            let data: Vec<f64> = rows.iter().flatten().copied().collect();
            DatasetHandle::new(
                "perm",
                Split::Train,
                Tensor::new(vec![labels.len(), 2], data).unwrap(),
                labels,
                2,
            )
            .unwrap()
        };
        let blocked = to_handle(&blocked_rows, blocked_labels);
        let alternating = to_handle(&alternating_rows, alternating_labels);

        let sa = stratified_subset(&blocked, 0.3, 42).unwrap();
        let sb = stratified_subset(&alternating, 0.3, 42).unwrap();
        let key = |d: &DatasetHandle<f64>| {
            let mut items: Vec<(usize, u64, u64)> = (0..d.n())
                .map(|i| {
                    (
                        d.labels()[i],
                        d.inputs().at2(i, 0).to_bits(),
                        d.inputs().at2(i, 1).to_bits(),
                    )
                })
                .collect();
            items.sort_unstable();
            items
        };
        assert_eq!(key(&sa), key(&sb), "selection depends only on within-class order");
    }

    #[test]
    fn subset_rejects_starved_classes_and_bad_fractions() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let d = DatasetHandle::new(
            "tiny",
            Split::Train,
            Tensor::<f64>::zeros(&[100, 2]),
            labels,
            10,
        )
        .unwrap();
        // 0.5% of 100 = 1 sample for 10 classes: someone gets zero.
        let err = stratified_subset(&d, 0.005, 1).unwrap_err();
        assert!(err.to_string().contains("class"), "{err}");
        assert!(stratified_subset(&d, 0.0, 1).is_err());
        assert!(stratified_subset(&d, 1.5, 1).is_err());

        // A class with no samples at all cannot be stratified.
        let d2 = DatasetHandle::new(
            "gap",
            Split::Train,
            Tensor::<f64>::zeros(&[4, 2]),
            vec![0, 0, 2, 2],
            3,
        )
        .unwrap();
        assert!(stratified_subset(&d2, 0.5, 1).unwrap_err().to_string().contains("class 1"));
    }

    #[test]
    fn handle_validation_rejects_out_of_unit_inputs() {
        let t = Tensor::matrix(1, 2, vec![0.5, 1.5]).unwrap();
        assert!(DatasetHandle::new("bad", Split::Train, t, vec![0], 1).is_err());
    }
}
