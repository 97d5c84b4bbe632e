//! Versioned binary model checkpoints with an integrity checksum.
//!
//! Saving writes every parameter bit-exactly in its stored precision, so
//! `load(save(m))` reproduces `m` down to the last mantissa bit. The
//! container is self-describing (structure travels with the parameters) and
//! refuses to decode anything it cannot fully verify.
//!
//! ## Container layout (format version 1)
//!
//! All multi-byte integers and floats are little-endian. Offsets in bytes.
//!
//! ```text
//! offset  size  field
//! 0       8     magic, the ASCII bytes "FLOWAUG\0"
//! 8       4     format version (u32); this build reads version 1
//! 12      1     model kind: 1 = flow, 2 = mlp classifier, 3 = cnn classifier
//! 13      1     element precision in bytes: 4 = f32, 8 = f64
//! 14      ...   kind-specific payload (below)
//! end-32  32    SHA-256 digest of every preceding byte
//! ```
//!
//! **Tensor** encoding (used throughout the payloads): rank as `u64`, then
//! each extent as `u64`, then the elements little-endian in row-major order.
//! An **optional tensor** is one flag byte (0 = absent, 1 = present) followed
//! by the tensor when present.
//!
//! **Flow payload**: the structural description first — `dim`, `blocks`,
//! `hidden`, `label_width` as `u64` each, `use_actnorm` and `use_invlinear`
//! as flag bytes, `scale_clamp` as `f64` — then a `u64` layer count and the
//! layers in stack order. Each layer is one tag byte followed by its fields:
//!
//! ```text
//! tag 0  actnorm      initialized flag byte, log_scale tensor, bias tensor
//! tag 1  lu linear    dim u64, permutation u64×dim, signs i8×dim,
//!                     strict-lower optional tensor, strict-upper optional
//!                     tensor, diagonal log-magnitude tensor
//! tag 2  coupling     dim u64, split u64, label_width u64, clamp f64,
//!                     then tensors w1, b1, w2, b2
//! tag 3  permutation  dim u64, indices u64×dim
//! ```
//!
//! **Mlp payload**: `input_dim` u64, hidden-layer count u64, each hidden
//! width u64, `classes` u64, parameter count u64, then the parameter tensors
//! in declaration order (weights and biases interleaved per layer).
//!
//! **Cnn payload**: the eight architecture fields as u64 each —
//! `in_channels`, `height`, `width`, `conv1_channels`, `conv2_channels`,
//! `fc1_width`, `fc2_width`, `classes` — then parameter count u64 and the
//! parameter tensors in declaration order.
//!
//! ## Failure modes
//!
//! Decoding verifies, in order: the file is large enough to hold a container
//! at all, the magic matches, the SHA-256 tail matches the bytes before it
//! (truncation and corruption both land here), the format version is one
//! this build reads (mismatch names both versions), the model kind is the
//! one the caller asked for, and the stored precision matches the requested
//! element type. Only then is the payload parsed, and every structural
//! constructor re-validates its pieces.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::classify::{Classifier, Cnn, CnnSpec, Mlp, MlpSpec};
use crate::error::{Error, Result};
use crate::flow::{
    ActNormLayer, CouplingLayer, FlowConfig, FlowModel, InvLinearLayer, Layer, PermutationLayer,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First eight bytes of every checkpoint file.
pub const MAGIC: [u8; 8] = *b"FLOWAUG\0";

/// Container format version this build writes and reads.
pub const FORMAT_VERSION: u32 = 1;

const KIND_FLOW: u8 = 1;
const KIND_MLP: u8 = 2;
const KIND_CNN: u8 = 3;

const TAG_ACTNORM: u8 = 0;
const TAG_INVLINEAR: u8 = 1;
const TAG_COUPLING: u8 = 2;
const TAG_PERMUTATION: u8 = 3;

const CHECKSUM_LEN: usize = 32;
/// Magic + version + kind + precision + checksum: the smallest possible file.
const MIN_LEN: usize = 8 + 4 + 1 + 1 + CHECKSUM_LEN;

fn kind_label(kind: u8) -> &'static str {
    match kind {
        KIND_FLOW => "flow",
        KIND_MLP => "mlp classifier",
        KIND_CNN => "cnn classifier",
        _ => "unrecognized",
    }
}

fn precision_label(bytes: u8) -> String {
    match bytes {
        4 => "f32".to_string(),
        8 => "f64".to_string(),
        other => format!("{other}-byte"),
    }
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

struct Enc {
    buf: Vec<u8>,
}

impl Enc {
    fn new() -> Self {
        Enc { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn flag(&mut self, v: bool) {
        self.buf.push(u8::from(v));
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.usize(t.rank());
        for &e in t.shape() {
            self.usize(e);
        }
        for &v in t.data() {
            v.write_le(&mut self.buf);
        }
    }

    fn opt_tensor<T: Scalar>(&mut self, t: Option<&Tensor<T>>) {
        match t {
            None => self.flag(false),
            Some(t) => {
                self.flag(true);
                self.tensor(t);
            }
        }
    }

    /// Prepends the header, appends the digest, and returns the final bytes.
    fn seal(self, kind: u8, precision: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(MIN_LEN + self.buf.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(kind);
        out.push(precision);
        out.extend_from_slice(&self.buf);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// Cursor over the payload region of a verified container.
struct Dec<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Dec { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(bad(format!(
                "payload ended early: {what} needs {n} bytes but only {remaining} remain"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn flag(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(bad(format!("{what} flag byte is {other}; expected 0 or 1"))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("slice is 8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| bad(format!("{what} value {v} exceeds this platform")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("slice is 8 bytes")))
    }

    fn tensor<T: Scalar>(&mut self, what: &str) -> Result<Tensor<T>> {
        let rank = self.usize(what)?;
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let extent = self.usize(what)?;
            numel = numel
                .checked_mul(extent)
                .ok_or_else(|| bad(format!("{what} tensor extents overflow")))?;
            shape.push(extent);
        }
        let byte_len = numel
            .checked_mul(T::BYTES)
            .ok_or_else(|| bad(format!("{what} tensor size overflows")))?;
        let raw = self.take(byte_len, what)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Tensor::new(shape, data)
    }

    fn opt_tensor<T: Scalar>(&mut self, what: &str) -> Result<Option<Tensor<T>>> {
        if self.flag(what)? {
            Ok(Some(self.tensor(what)?))
        } else {
            Ok(None)
        }
    }

    fn indices(&mut self, n: usize, what: &str) -> Result<Vec<usize>> {
        (0..n).map(|_| self.usize(what)).collect()
    }

    fn finish(&self) -> Result<()> {
        let leftover = self.bytes.len() - self.pos;
        if leftover != 0 {
            return Err(bad(format!(
                "payload has {leftover} trailing bytes after the last field"
            )));
        }
        Ok(())
    }
}

/// Verifies the outer container and returns `(kind, payload bytes)`.
///
/// The checksum is verified before anything inside it is interpreted, so a
/// truncated or bit-flipped file fails here rather than producing a
/// plausible-looking model.
fn open_container<T: Scalar>(bytes: &[u8], expected_kind: u8) -> Result<&[u8]> {
    if bytes.len() < MIN_LEN {
        return Err(bad(format!(
            "checksum cannot be verified: file is {} bytes, below the {MIN_LEN}-byte minimum",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(bad(format!(
            "not a model checkpoint: leading bytes {:?} instead of {MAGIC:?}",
            &bytes[..8]
        )));
    }
    let body_len = bytes.len() - CHECKSUM_LEN;
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest[..] != bytes[body_len..] {
        return Err(bad(
            "checksum mismatch: file is corrupt or truncated".to_string(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {version} is not readable by this build, which reads version {FORMAT_VERSION}"
        )));
    }
    let kind = bytes[12];
    if kind != expected_kind {
        return Err(bad(format!(
            "file stores a {} (kind tag {kind}) but a {} (kind tag {expected_kind}) was requested",
            kind_label(kind),
            kind_label(expected_kind)
        )));
    }
    let precision = bytes[13];
    if usize::from(precision) != T::BYTES {
        return Err(bad(format!(
            "stored precision is {} but {} was requested; reload with the stored precision",
            precision_label(precision),
            T::NAME
        )));
    }
    Ok(&bytes[14..body_len])
}

// ---------------------------------------------------------------------------
// Flow payload
// ---------------------------------------------------------------------------

fn encode_flow<T: Scalar>(model: &FlowModel<T>) -> Vec<u8> {
    let mut enc = Enc::new();
    let cfg = model.config();
    enc.usize(cfg.dim);
    enc.usize(cfg.blocks);
    enc.usize(cfg.hidden);
    enc.usize(cfg.label_width);
    enc.flag(cfg.use_actnorm);
    enc.flag(cfg.use_invlinear);
    enc.f64(cfg.scale_clamp);
    enc.usize(model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::ActNorm(l) => {
                enc.u8(TAG_ACTNORM);
                enc.flag(l.initialized());
                let [log_scale, bias] = l.params();
                enc.tensor(log_scale);
                enc.tensor(bias);
            }
            Layer::InvLinear(l) => {
                enc.u8(TAG_INVLINEAR);
                enc.usize(l.dim());
                for &p in l.perm() {
                    enc.usize(p);
                }
                for &s in l.signs() {
                    enc.u8(s as u8);
                }
                // params() is `lower?`, `upper?`, `log_mag`; reconstruct the
                // options from the packed strict-triangle size.
                let params = l.params();
                let packed = l.dim() * (l.dim() - 1) / 2;
                if packed == 0 {
                    enc.opt_tensor::<T>(None);
                    enc.opt_tensor::<T>(None);
                    enc.tensor(params[0]);
                } else {
                    enc.opt_tensor(Some(params[0]));
                    enc.opt_tensor(Some(params[1]));
                    enc.tensor(params[2]);
                }
            }
            Layer::Coupling(l) => {
                enc.u8(TAG_COUPLING);
                enc.usize(l.dim());
                enc.usize(l.split());
                enc.usize(l.label_width());
                enc.f64(l.clamp());
                for t in l.params() {
                    enc.tensor(t);
                }
            }
            Layer::Permutation(l) => {
                enc.u8(TAG_PERMUTATION);
                enc.usize(l.dim());
                for &p in l.perm() {
                    enc.usize(p);
                }
            }
        }
    }
    enc.seal(KIND_FLOW, T::BYTES as u8)
}

fn decode_flow<T: Scalar>(payload: &[u8]) -> Result<FlowModel<T>> {
    let mut dec = Dec::new(payload);
    let config = FlowConfig {
        dim: dec.usize("flow dim")?,
        blocks: dec.usize("flow blocks")?,
        hidden: dec.usize("flow hidden width")?,
        label_width: dec.usize("flow label width")?,
        use_actnorm: dec.flag("flow actnorm")?,
        use_invlinear: dec.flag("flow lu-linear")?,
        scale_clamp: dec.f64("flow scale clamp")?,
    };
    let layer_count = dec.usize("layer count")?;
    let mut layers = Vec::new();
    for i in 0..layer_count {
        let tag = dec.u8("layer tag")?;
        let layer = match tag {
            TAG_ACTNORM => {
                let initialized = dec.flag("actnorm initialized")?;
                let log_scale = dec.tensor("actnorm log-scale")?;
                let bias = dec.tensor("actnorm bias")?;
                Layer::ActNorm(ActNormLayer::from_parts(log_scale, bias, initialized)?)
            }
            TAG_INVLINEAR => {
                let dim = dec.usize("lu-linear dim")?;
                let perm = dec.indices(dim, "lu-linear permutation")?;
                let signs: Vec<i8> = dec
                    .take(dim, "lu-linear signs")?
                    .iter()
                    .map(|&b| b as i8)
                    .collect();
                let lower = dec.opt_tensor("lu-linear strict-lower")?;
                let upper = dec.opt_tensor("lu-linear strict-upper")?;
                let log_mag = dec.tensor("lu-linear log-magnitude")?;
                Layer::InvLinear(InvLinearLayer::from_parts(
                    dim, perm, signs, lower, upper, log_mag,
                )?)
            }
            TAG_COUPLING => {
                let dim = dec.usize("coupling dim")?;
                let split = dec.usize("coupling split")?;
                let label_width = dec.usize("coupling label width")?;
                let clamp = dec.f64("coupling clamp")?;
                let w1 = dec.tensor("coupling first weight")?;
                let b1 = dec.tensor("coupling first bias")?;
                let w2 = dec.tensor("coupling second weight")?;
                let b2 = dec.tensor("coupling second bias")?;
                Layer::Coupling(CouplingLayer::from_parts(
                    dim, split, label_width, clamp, w1, b1, w2, b2,
                )?)
            }
            TAG_PERMUTATION => {
                let dim = dec.usize("permutation dim")?;
                let perm = dec.indices(dim, "permutation indices")?;
                Layer::Permutation(PermutationLayer::from_perm(perm)?)
            }
            other => {
                return Err(bad(format!("layer {i} has unknown tag {other}")));
            }
        };
        layers.push(layer);
    }
    dec.finish()?;
    FlowModel::from_layers(config, layers)
}

// ---------------------------------------------------------------------------
// Classifier payloads
// ---------------------------------------------------------------------------

fn encode_params<T: Scalar>(enc: &mut Enc, params: &[&Tensor<T>]) {
    enc.usize(params.len());
    for t in params {
        enc.tensor(t);
    }
}

fn decode_params<T: Scalar>(dec: &mut Dec, what: &str) -> Result<Vec<Tensor<T>>> {
    let count = dec.usize(what)?;
    (0..count).map(|_| dec.tensor(what)).collect()
}

fn encode_classifier<T: Scalar>(clf: &Classifier<T>) -> Vec<u8> {
    let mut enc = Enc::new();
    let kind = match clf {
        Classifier::Mlp(m) => {
            let spec = m.spec();
            enc.usize(spec.input_dim);
            enc.usize(spec.hidden.len());
            for &w in &spec.hidden {
                enc.usize(w);
            }
            enc.usize(spec.classes);
            encode_params(&mut enc, &m.params());
            KIND_MLP
        }
        Classifier::Cnn(c) => {
            let spec = c.spec();
            enc.usize(spec.in_channels);
            enc.usize(spec.height);
            enc.usize(spec.width);
            enc.usize(spec.conv1_channels);
            enc.usize(spec.conv2_channels);
            enc.usize(spec.fc1_width);
            enc.usize(spec.fc2_width);
            enc.usize(spec.classes);
            encode_params(&mut enc, &c.params());
            KIND_CNN
        }
    };
    enc.seal(kind, T::BYTES as u8)
}

fn decode_mlp<T: Scalar>(payload: &[u8]) -> Result<Classifier<T>> {
    let mut dec = Dec::new(payload);
    let input_dim = dec.usize("mlp input dim")?;
    let hidden_count = dec.usize("mlp hidden count")?;
    let hidden = dec.indices(hidden_count, "mlp hidden width")?;
    let classes = dec.usize("mlp classes")?;
    let params = decode_params(&mut dec, "mlp parameters")?;
    dec.finish()?;
    let spec = MlpSpec { input_dim, hidden, classes };
    Ok(Classifier::Mlp(Mlp::from_parts(spec, params)?))
}

fn decode_cnn<T: Scalar>(payload: &[u8]) -> Result<Classifier<T>> {
    let mut dec = Dec::new(payload);
    let spec = CnnSpec {
        in_channels: dec.usize("cnn input channels")?,
        height: dec.usize("cnn height")?,
        width: dec.usize("cnn width")?,
        conv1_channels: dec.usize("cnn conv1 channels")?,
        conv2_channels: dec.usize("cnn conv2 channels")?,
        fc1_width: dec.usize("cnn fc1 width")?,
        fc2_width: dec.usize("cnn fc2 width")?,
        classes: dec.usize("cnn classes")?,
    };
    let params = decode_params(&mut dec, "cnn parameters")?;
    dec.finish()?;
    Ok(Classifier::Cnn(Cnn::from_parts(spec, params)?))
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

/// Serializes a flow model to `bytes` (no filesystem involved).
pub fn flow_to_bytes<T: Scalar>(model: &FlowModel<T>) -> Vec<u8> {
    encode_flow(model)
}

/// Decodes a flow model from checkpoint bytes.
pub fn flow_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<FlowModel<T>> {
    decode_flow(open_container::<T>(bytes, KIND_FLOW)?)
}

/// Serializes a classifier to `bytes` (no filesystem involved).
pub fn classifier_to_bytes<T: Scalar>(clf: &Classifier<T>) -> Vec<u8> {
    encode_classifier(clf)
}

/// Decodes a classifier from checkpoint bytes (either architecture).
pub fn classifier_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Classifier<T>> {
    // Accept whichever classifier kind the file declares; reuse the container
    // check against the declared kind so flows are still rejected by name.
    let declared = if bytes.len() > 12 && bytes[12] == KIND_CNN {
        KIND_CNN
    } else {
        KIND_MLP
    };
    let payload = open_container::<T>(bytes, declared)?;
    match declared {
        KIND_CNN => decode_cnn(payload),
        _ => decode_mlp(payload),
    }
}

/// Writes a flow checkpoint; the round trip through [`load_flow`] is
/// bit-exact in the model's own precision.
pub fn save_flow<T: Scalar>(model: &FlowModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_flow(model)).map_err(|e| Error::io(path, e))
}

/// Reads a flow checkpoint written by [`save_flow`].
pub fn load_flow<T: Scalar>(path: impl AsRef<Path>) -> Result<FlowModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    flow_from_bytes(&bytes)
}

/// Reads a flow checkpoint and requires its structure to match `expected`;
/// any disagreement (block count, width, conditioning, extras) is a
/// descriptor-mismatch error naming every differing field.
pub fn load_flow_checked<T: Scalar>(
    path: impl AsRef<Path>,
    expected: &FlowConfig,
) -> Result<FlowModel<T>> {
    let model = load_flow::<T>(path)?;
    let stored = model.config();
    let mut diffs = Vec::new();
    if stored.dim != expected.dim {
        diffs.push(format!("dim stored {} vs expected {}", stored.dim, expected.dim));
    }
    if stored.blocks != expected.blocks {
        diffs.push(format!(
            "blocks stored {} vs expected {}",
            stored.blocks, expected.blocks
        ));
    }
    if stored.hidden != expected.hidden {
        diffs.push(format!(
            "hidden stored {} vs expected {}",
            stored.hidden, expected.hidden
        ));
    }
    if stored.label_width != expected.label_width {
        diffs.push(format!(
            "label_width stored {} vs expected {}",
            stored.label_width, expected.label_width
        ));
    }
    if stored.use_actnorm != expected.use_actnorm {
        diffs.push(format!(
            "use_actnorm stored {} vs expected {}",
            stored.use_actnorm, expected.use_actnorm
        ));
    }
    if stored.use_invlinear != expected.use_invlinear {
        diffs.push(format!(
            "use_invlinear stored {} vs expected {}",
            stored.use_invlinear, expected.use_invlinear
        ));
    }
    if stored.scale_clamp != expected.scale_clamp {
        diffs.push(format!(
            "scale_clamp stored {} vs expected {}",
            stored.scale_clamp, expected.scale_clamp
        ));
    }
    if !diffs.is_empty() {
        return Err(bad(format!("flow descriptor mismatch: {}", diffs.join("; "))));
    }
    Ok(model)
}

/// Writes a classifier checkpoint; the round trip through
/// [`load_classifier`] is bit-exact in the model's own precision.
pub fn save_classifier<T: Scalar>(clf: &Classifier<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_classifier(clf)).map_err(|e| Error::io(path, e))
}

/// Reads a classifier checkpoint written by [`save_classifier`].
pub fn load_classifier<T: Scalar>(path: impl AsRef<Path>) -> Result<Classifier<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    classifier_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Cnn, Mlp};
    use crate::data::one_hot;
    use crate::rng::{self, fill_standard_normal, standard_normal};
    use crate::tensor::Tensor;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    /// A trained-looking conditional flow with every layer kind present.
    fn full_flow<T: Scalar>(seed: u64) -> FlowModel<T> {
        let config = FlowConfig {
            dim: 5,
            blocks: 2,
            hidden: 7,
            label_width: 3,
            use_actnorm: true,
            use_invlinear: true,
            scale_clamp: 2.0,
        };
        let mut r = rng::rng_from(seed);
        let mut model = FlowModel::new(config, &mut r).expect("construct flow");
        // Make every parameter nonzero so the round trip is meaningful.
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v = *v + T::narrow(0.3 * standard_normal::<f64>(&mut r));
            }
        }
        let mut batch = Tensor::zeros(&[16, 5]);
        fill_standard_normal(&mut r, batch.data_mut());
        let labels = one_hot::<T>(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 3);
        model
            .initialize_actnorms(&batch, Some(&labels))
            .expect("actnorm init");
        model
    }

    fn assert_params_bit_equal<T: Scalar>(a: &[&Tensor<T>], b: &[&Tensor<T>]) {
        assert_eq!(a.len(), b.len(), "parameter tensor counts differ");
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.shape(), y.shape());
            for (u, v) in x.data().iter().zip(y.data()) {
                assert_eq!(u.widen().to_bits(), v.widen().to_bits());
            }
        }
    }

    fn flow_round_trip<T: Scalar>(seed: u64) {
        let dir = tmp();
        let path = dir.path().join("flow.ckpt");
        let model = full_flow::<T>(seed);
        save_flow(&model, &path).expect("save");
        let loaded = load_flow::<T>(&path).expect("load");

        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.layers(), model.layers());
        assert!(loaded.is_initialized());
        assert_params_bit_equal(&model.params(), &loaded.params());

        // End to end: the loaded model computes bit-identical encodings.
        let mut r = rng::rng_from(seed ^ 0xDEAD);
        let mut x = Tensor::zeros(&[4, 5]);
        fill_standard_normal(&mut r, x.data_mut());
        let label = one_hot::<T>(&[2, 0, 1, 1], 3);
        let (z0, ld0) = model.forward(&x, Some(&label)).expect("original forward");
        let (z1, ld1) = loaded.forward(&x, Some(&label)).expect("loaded forward");
        for (u, v) in z0.data().iter().zip(z1.data()) {
            assert_eq!(u.widen().to_bits(), v.widen().to_bits());
        }
        for (u, v) in ld0.data().iter().zip(ld1.data()) {
            assert_eq!(u.widen().to_bits(), v.widen().to_bits());
        }
    }

    #[test]
    fn flow_round_trip_is_bit_exact_in_f64() {
        flow_round_trip::<f64>(11);
    }

    #[test]
    fn flow_round_trip_is_bit_exact_in_f32() {
        flow_round_trip::<f32>(12);
    }

    #[test]
    fn degenerate_flows_round_trip() {
        let dir = tmp();

        // Identity flow: empty stack.
        let path = dir.path().join("identity.ckpt");
        let ident = FlowModel::<f64>::identity(3);
        save_flow(&ident, &path).expect("save identity");
        let loaded = load_flow::<f64>(&path).expect("load identity");
        assert_eq!(loaded.config(), ident.config());
        assert!(loaded.layers().is_empty());

        // 1-D flow: extras only (no couplings possible), actnorm left
        // uninitialized so the stored flag's `false` state is exercised.
        let config = FlowConfig {
            dim: 1,
            blocks: 2,
            hidden: 0,
            label_width: 0,
            use_actnorm: true,
            use_invlinear: true,
            scale_clamp: 2.0,
        };
        let mut r = rng::rng_from(7);
        let oned = FlowModel::<f64>::new(config, &mut r).expect("1-d flow");
        let path = dir.path().join("oned.ckpt");
        save_flow(&oned, &path).expect("save 1-d");
        let loaded = load_flow::<f64>(&path).expect("load 1-d");
        assert_eq!(loaded.layers(), oned.layers());
        assert!(!loaded.is_initialized());
    }

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("mlp.ckpt");
        let spec = MlpSpec { input_dim: 2, hidden: vec![8, 5], classes: 3 };
        let mut r = rng::rng_from(21);
        let clf = Classifier::Mlp(Mlp::<f64>::new(spec, &mut r).expect("mlp"));
        save_classifier(&clf, &path).expect("save");
        let loaded = load_classifier::<f64>(&path).expect("load");
        assert_eq!(loaded, clf);
        assert_params_bit_equal(&clf.params(), &loaded.params());
    }

    #[test]
    fn cnn_round_trip_is_bit_exact() {
        let dir = tmp();
        let path = dir.path().join("cnn.ckpt");
        let spec = CnnSpec {
            in_channels: 1,
            height: 12,
            width: 12,
            conv1_channels: 2,
            conv2_channels: 3,
            fc1_width: 10,
            fc2_width: 7,
            classes: 4,
        };
        let mut r = rng::rng_from(22);
        let clf = Classifier::Cnn(Cnn::<f32>::new(spec, &mut r).expect("cnn"));
        save_classifier(&clf, &path).expect("save");
        let loaded = load_classifier::<f32>(&path).expect("load");
        assert_eq!(loaded, clf);

        // The loaded network classifies identically.
        let mut x = Tensor::zeros(&[2, 144]);
        let mut r = rng::rng_from(23);
        for v in x.data_mut() {
            *v = rng::uniform::<f32>(&mut r, 0.0, 1.0);
        }
        let a = clf.logits(&x).expect("logits");
        let b = loaded.logits(&x).expect("logits");
        for (u, v) in a.data().iter().zip(b.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    /// Rewrites the checksum tail after a deliberate header/payload edit so
    /// tests can reach the checks that run after checksum verification.
    fn reseal(bytes: &mut Vec<u8>) {
        let body = bytes.len() - CHECKSUM_LEN;
        let digest = Sha256::digest(&bytes[..body]);
        bytes[body..].copy_from_slice(&digest);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = flow_to_bytes(&FlowModel::<f64>::identity(2));
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        reseal(&mut bytes);
        let err = flow_from_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "missing stored version: {err}");
        assert!(err.contains("version 1"), "missing supported version: {err}");
    }

    #[test]
    fn precision_mismatch_names_both_precisions() {
        let bytes = flow_to_bytes(&FlowModel::<f32>::identity(2));
        let err = flow_from_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(err.contains("f32"), "missing stored precision: {err}");
        assert!(err.contains("f64"), "missing requested precision: {err}");
    }

    #[test]
    fn model_kind_mismatch_is_rejected_by_name() {
        let dir = tmp();
        let spec = MlpSpec { input_dim: 2, hidden: vec![4], classes: 2 };
        let mut r = rng::rng_from(31);
        let clf = Classifier::Mlp(Mlp::<f64>::new(spec, &mut r).expect("mlp"));
        let clf_path = dir.path().join("clf.ckpt");
        save_classifier(&clf, &clf_path).expect("save classifier");
        let err = load_flow::<f64>(&clf_path).unwrap_err().to_string();
        assert!(err.contains("mlp classifier"), "missing stored kind: {err}");
        assert!(err.contains("flow"), "missing requested kind: {err}");

        let flow_path = dir.path().join("flow.ckpt");
        save_flow(&FlowModel::<f64>::identity(2), &flow_path).expect("save flow");
        let err = load_classifier::<f64>(&flow_path).unwrap_err().to_string();
        assert!(err.contains("flow"), "missing stored kind: {err}");
    }

    #[test]
    fn truncation_fails_the_checksum() {
        let bytes = flow_to_bytes(&full_flow::<f64>(41));
        // Cut mid-payload: the tail is now payload bytes, not a digest.
        let cut = &bytes[..bytes.len() - 7];
        let err = flow_from_bytes::<f64>(cut).unwrap_err().to_string();
        assert!(err.contains("checksum"), "not a checksum error: {err}");

        // Cut below the minimum container size.
        let err = flow_from_bytes::<f64>(&bytes[..10]).unwrap_err().to_string();
        assert!(err.contains("checksum"), "not a checksum error: {err}");
    }

    #[test]
    fn corruption_fails_the_checksum() {
        let good = flow_to_bytes(&full_flow::<f64>(42));

        // Flip one bit in the payload region.
        let mut corrupt = good.clone();
        let mid = 14 + (corrupt.len() - MIN_LEN) / 2;
        corrupt[mid] ^= 0x40;
        let err = flow_from_bytes::<f64>(&corrupt).unwrap_err().to_string();
        assert!(err.contains("checksum"), "not a checksum error: {err}");

        // Flip one bit in the stored digest itself.
        let mut corrupt = good.clone();
        let last = corrupt.len() - 1;
        corrupt[last] ^= 0x01;
        let err = flow_from_bytes::<f64>(&corrupt).unwrap_err().to_string();
        assert!(err.contains("checksum"), "not a checksum error: {err}");

        // The pristine bytes still load.
        flow_from_bytes::<f64>(&good).expect("uncorrupted bytes load");
    }

    #[test]
    fn descriptor_mismatch_is_reported_with_both_shapes() {
        let dir = tmp();
        let path = dir.path().join("twelve.ckpt");
        let config = FlowConfig {
            dim: 2,
            blocks: 12,
            hidden: 4,
            label_width: 0,
            use_actnorm: false,
            use_invlinear: false,
            scale_clamp: 2.0,
        };
        let mut r = rng::rng_from(51);
        let model = FlowModel::<f64>::new(config.clone(), &mut r).expect("flow");
        save_flow(&model, &path).expect("save");

        // The true description loads.
        load_flow_checked::<f64>(&path, &config).expect("matching descriptor");

        // An 11-block expectation is refused, naming both counts.
        let expected = FlowConfig { blocks: 11, ..config };
        let err = load_flow_checked::<f64>(&path, &expected).unwrap_err().to_string();
        assert!(err.contains("descriptor mismatch"), "wrong error: {err}");
        assert!(err.contains("stored 12"), "missing stored blocks: {err}");
        assert!(err.contains("expected 11"), "missing expected blocks: {err}");
    }

    #[test]
    fn malformed_structural_bytes_are_rejected_cleanly() {
        // A flag byte outside {0, 1}: the use_actnorm byte sits at a fixed
        // offset (header 14, then four u64 config fields).
        let mut bytes = flow_to_bytes(&FlowModel::<f64>::identity(2));
        let flag_at = 14 + 4 * 8;
        bytes[flag_at] = 7;
        reseal(&mut bytes);
        let err = flow_from_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(err.contains("flag byte is 7"), "wrong error: {err}");

        // Unknown magic is identified before any checksum complaint.
        let mut bytes = flow_to_bytes(&FlowModel::<f64>::identity(2));
        bytes[0] = b'X';
        reseal(&mut bytes);
        let err = flow_from_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(err.contains("not a model checkpoint"), "wrong error: {err}");

        // Trailing garbage after a structurally complete payload.
        let mut bytes = flow_to_bytes(&FlowModel::<f64>::identity(2));
        let insert_at = bytes.len() - CHECKSUM_LEN;
        bytes.splice(insert_at..insert_at, [0u8; 3]);
        reseal(&mut bytes);
        let err = flow_from_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(err.contains("trailing bytes"), "wrong error: {err}");
    }

    #[test]
    fn missing_file_reports_the_path() {
        let dir = tmp();
        let path = dir.path().join("nope.ckpt");
        let err = load_flow::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("nope.ckpt"), "missing path in: {err}");
    }
}
