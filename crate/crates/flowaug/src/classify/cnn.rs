//! Small convolutional classifier: two 5×5 conv + average-pool stages, then
//! three fully connected layers with linear logits.
//!
//! Images are row vectors in channel-major flat layout
//! (`flat = c·H·W + y·W + x`). Convolutions run as gather (im2col) + matmul,
//! so the same index tables drive both the plain and the traced path.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops::{self, GATHER_ZERO};
use crate::rng::{standard_normal, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Fixed square kernel edge for both conv stages.
const KERNEL: usize = 5;
/// First conv pads to preserve the spatial size; second conv is unpadded.
const PAD_1: usize = 2;
const PAD_2: usize = 0;

/// Architecture description of a [`Cnn`].
#[derive(Clone, Debug, PartialEq)]
pub struct CnnSpec {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub fc1_width: usize,
    pub fc2_width: usize,
    pub classes: usize,
}

impl CnnSpec {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.in_channels,
            self.conv1_channels,
            self.conv2_channels,
            self.fc1_width,
            self.fc2_width,
            self.classes,
        ];
        if widths.contains(&0) {
            return Err(Error::invalid("cnn spec", format!("zero width in {self:?}")));
        }
        // conv1 (pad 2) keeps H×W, pool halves, conv2 (unpadded) trims 4,
        // pool halves again; every stage must stay at least 1 pixel.
        for (name, extent) in [("height", self.height), ("width", self.width)] {
            if extent / 2 < KERNEL || (extent / 2 - KERNEL + 1) / 2 == 0 {
                return Err(Error::invalid(
                    "cnn spec",
                    format!("{name} {extent} too small for two 5×5 conv + pool stages"),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.in_channels * self.height * self.width
    }
}

/// One convolution stage's geometry; stride is always 1.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_h(&self) -> usize {
        self.in_h + 2 * self.pad + 1 - KERNEL
    }

    fn out_w(&self) -> usize {
        self.in_w + 2 * self.pad + 1 - KERNEL
    }

    fn patch_len(&self) -> usize {
        self.in_c * KERNEL * KERNEL
    }

    /// Flat gather table turning `[n, in_c·in_h·in_w]` into im2col patches
    /// `[n·out_h·out_w, in_c·K·K]`; out-of-image taps become [`GATHER_ZERO`].
    fn im2col_indices(&self, n: usize) -> Vec<usize> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let sample = self.in_c * self.in_h * self.in_w;
        let mut ix = Vec::with_capacity(n * oh * ow * self.patch_len());
        for i in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for c in 0..self.in_c {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let y = (oy + ky).checked_sub(self.pad);
                                let x = (ox + kx).checked_sub(self.pad);
                                ix.push(match (y, x) {
                                    (Some(y), Some(x)) if y < self.in_h && x < self.in_w => {
                                        i * sample + (c * self.in_h + y) * self.in_w + x
                                    }
                                    _ => GATHER_ZERO,
                                });
                            }
                        }
                    }
                }
            }
        }
        ix
    }

    /// Gather table rearranging the matmul result `[n·out_h·out_w, out_c]`
    /// into channel-major rows `[n, out_c·out_h·out_w]`.
    fn rearrange_indices(&self, n: usize) -> Vec<usize> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut ix = Vec::with_capacity(n * self.out_c * oh * ow);
        for i in 0..n {
            for c in 0..self.out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        ix.push(((i * oh + oy) * ow + ox) * self.out_c + c);
                    }
                }
            }
        }
        ix
    }
}

/// 2×2 average pool with stride 2 (floor semantics: a trailing odd row or
/// column is dropped).
#[derive(Clone, Copy, Debug)]
struct PoolGeom {
    c: usize,
    in_h: usize,
    in_w: usize,
}

impl PoolGeom {
    fn out_h(&self) -> usize {
        self.in_h / 2
    }

    fn out_w(&self) -> usize {
        self.in_w / 2
    }

    /// Gather table for the `(dy, dx)` corner of every pooling window,
    /// shaped `[n, c·out_h·out_w]`.
    fn corner_indices(&self, n: usize, dy: usize, dx: usize) -> Vec<usize> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let sample = self.c * self.in_h * self.in_w;
        let mut ix = Vec::with_capacity(n * self.c * oh * ow);
        for i in 0..n {
            for c in 0..self.c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        ix.push(i * sample + (c * self.in_h + 2 * oy + dy) * self.in_w + 2 * ox + dx);
                    }
                }
            }
        }
        ix
    }
}

/// Convolutional classifier; parameters order as
/// `conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b`.
/// Conv weights are stored matmul-ready as `[in_c·K·K, out_c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn<T: Scalar> {
    spec: CnnSpec,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

/// Standard normal truncated to ±2σ by rejection, then scaled.
fn truncated_normal(rng: &mut Rng, sigma: f64) -> f64 {
    loop {
        let v: f64 = standard_normal(rng);
        if v.abs() <= 2.0 {
            return sigma * v;
        }
    }
}

impl<T: Scalar> Cnn<T> {
    const INIT_SIGMA: f64 = 0.1;

    fn geometry(spec: &CnnSpec) -> (ConvGeom, PoolGeom, ConvGeom, PoolGeom) {
        let conv1 = ConvGeom {
            in_c: spec.in_channels,
            in_h: spec.height,
            in_w: spec.width,
            out_c: spec.conv1_channels,
            pad: PAD_1,
        };
        let pool1 = PoolGeom { c: conv1.out_c, in_h: conv1.out_h(), in_w: conv1.out_w() };
        let conv2 = ConvGeom {
            in_c: pool1.c,
            in_h: pool1.out_h(),
            in_w: pool1.out_w(),
            out_c: spec.conv2_channels,
            pad: PAD_2,
        };
        let pool2 = PoolGeom { c: conv2.out_c, in_h: conv2.out_h(), in_w: conv2.out_w() };
        (conv1, pool1, conv2, pool2)
    }

    /// Flattened width entering the first fully connected layer.
    fn flat_dim(spec: &CnnSpec) -> usize {
        let (_, _, _, pool2) = Self::geometry(spec);
        pool2.c * pool2.out_h() * pool2.out_w()
    }

    /// Expected parameter shapes in declaration order.
    fn param_shapes(spec: &CnnSpec) -> Vec<Vec<usize>> {
        let flat = Self::flat_dim(spec);
        vec![
            vec![spec.in_channels * KERNEL * KERNEL, spec.conv1_channels],
            vec![spec.conv1_channels],
            vec![spec.conv1_channels * KERNEL * KERNEL, spec.conv2_channels],
            vec![spec.conv2_channels],
            vec![flat, spec.fc1_width],
            vec![spec.fc1_width],
            vec![spec.fc1_width, spec.fc2_width],
            vec![spec.fc2_width],
            vec![spec.fc2_width, spec.classes],
            vec![spec.classes],
        ]
    }

    /// Truncated-normal weights (σ = 0.1, resampled beyond ±2σ), zero biases.
    pub fn new(spec: CnnSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for shape in Self::param_shapes(&spec) {
            if shape.len() == 2 {
                let mut w = Tensor::zeros(&shape);
                for v in w.data_mut() {
                    *v = T::narrow(truncated_normal(rng, Self::INIT_SIGMA));
                }
                weights.push(w);
            } else {
                biases.push(Tensor::zeros(&shape));
            }
        }
        Ok(Cnn { spec, weights, biases })
    }

    /// Restores from stored parameters (checkpoint loading).
    pub fn from_parts(spec: CnnSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = Self::param_shapes(&spec);
        if params.len() != shapes.len() {
            return Err(Error::invalid(
                "cnn parameters",
                format!("{} tensors, expected {}", params.len(), shapes.len()),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, (p, shape)) in params.into_iter().zip(&shapes).enumerate() {
            if p.shape() != shape.as_slice() {
                return Err(Error::invalid(
                    "cnn parameters",
                    format!("tensor {i} has shape {:?}, expected {shape:?}", p.shape()),
                ));
            }
            if shape.len() == 2 {
                weights.push(p);
            } else {
                biases.push(p);
            }
        }
        Ok(Cnn { spec, weights, biases })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w as &mut Tensor<T>, b as &mut Tensor<T>])
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.spec.input_dim() {
            return Err(Error::shape(
                "cnn",
                format!("need [n, {}], got {:?}", self.spec.input_dim(), x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }

    fn conv_plain(
        x: &Tensor<T>,
        geom: &ConvGeom,
        w: &Tensor<T>,
        b: &Tensor<T>,
        n: usize,
    ) -> Result<Tensor<T>> {
        let patches = ops::gather(x, &geom.im2col_indices(n), &[n * geom.out_h() * geom.out_w(), geom.patch_len()])?;
        let lin = ops::add_row(&ops::matmul(&patches, w)?, b)?;
        ops::gather(&lin, &geom.rearrange_indices(n), &[n, geom.out_c * geom.out_h() * geom.out_w()])
    }

    fn pool_plain(x: &Tensor<T>, geom: &PoolGeom, n: usize) -> Result<Tensor<T>> {
        let shape = [n, geom.c * geom.out_h() * geom.out_w()];
        let tl = ops::gather(x, &geom.corner_indices(n, 0, 0), &shape)?;
        let tr = ops::gather(x, &geom.corner_indices(n, 0, 1), &shape)?;
        let bl = ops::gather(x, &geom.corner_indices(n, 1, 0), &shape)?;
        let br = ops::gather(x, &geom.corner_indices(n, 1, 1), &shape)?;
        Ok(ops::scale(&ops::add(&ops::add(&tl, &tr)?, &ops::add(&bl, &br)?)?, T::narrow(0.25)))
    }

    /// `(logits, penultimate features)` — features are the second fully
    /// connected layer's post-ReLU activations.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.check_input(x)?;
        let (conv1, pool1, conv2, pool2) = Self::geometry(&self.spec);
        let h = ops::relu(&Self::conv_plain(x, &conv1, &self.weights[0], &self.biases[0], n)?);
        let h = Self::pool_plain(&h, &pool1, n)?;
        let h = ops::relu(&Self::conv_plain(&h, &conv2, &self.weights[1], &self.biases[1], n)?);
        let h = Self::pool_plain(&h, &pool2, n)?;
        let h = ops::relu(&ops::add_row(&ops::matmul(&h, &self.weights[2])?, &self.biases[2])?);
        let feats = ops::relu(&ops::add_row(&ops::matmul(&h, &self.weights[3])?, &self.biases[3])?);
        let logits = ops::add_row(&ops::matmul(&feats, &self.weights[4])?, &self.biases[4])?;
        Ok((logits, feats))
    }

    fn conv_traced(
        g: &mut Graph<T>,
        x: NodeId,
        geom: &ConvGeom,
        w: NodeId,
        b: NodeId,
        n: usize,
    ) -> Result<NodeId> {
        let patches = g.gather(x, &geom.im2col_indices(n), &[n * geom.out_h() * geom.out_w(), geom.patch_len()])?;
        let mm = g.matmul(patches, w)?;
        let lin = g.add_row(mm, b)?;
        g.gather(lin, &geom.rearrange_indices(n), &[n, geom.out_c * geom.out_h() * geom.out_w()])
    }

    fn pool_traced(g: &mut Graph<T>, x: NodeId, geom: &PoolGeom, n: usize) -> Result<NodeId> {
        let shape = [n, geom.c * geom.out_h() * geom.out_w()];
        let tl = g.gather(x, &geom.corner_indices(n, 0, 0), &shape)?;
        let tr = g.gather(x, &geom.corner_indices(n, 0, 1), &shape)?;
        let bl = g.gather(x, &geom.corner_indices(n, 1, 0), &shape)?;
        let br = g.gather(x, &geom.corner_indices(n, 1, 1), &shape)?;
        let top = g.add(tl, tr)?;
        let bottom = g.add(bl, br)?;
        let sum = g.add(top, bottom)?;
        g.scale(sum, T::narrow(0.25))
    }

    /// Traced logits. `param_ids` must align with [`Self::params`] order;
    /// `None` bakes the current parameters in as constants.
    pub fn traced_logits(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        param_ids: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        let n = self.check_input(g.value(x))?;
        let ids: Vec<NodeId> = match param_ids {
            Some(ids) => {
                if ids.len() != 10 {
                    return Err(Error::invalid(
                        "cnn binding",
                        format!("{} ids for 10 tensors", ids.len()),
                    ));
                }
                ids.to_vec()
            }
            None => self
                .params()
                .into_iter()
                .map(|p| g.constant(p.clone()))
                .collect::<Result<_>>()?,
        };
        let (conv1, pool1, conv2, pool2) = Self::geometry(&self.spec);
        let c1 = Self::conv_traced(g, x, &conv1, ids[0], ids[1], n)?;
        let h = g.relu(c1)?;
        let h = Self::pool_traced(g, h, &pool1, n)?;
        let c2 = Self::conv_traced(g, h, &conv2, ids[2], ids[3], n)?;
        let h = g.relu(c2)?;
        let h = Self::pool_traced(g, h, &pool2, n)?;
        let mm = g.matmul(h, ids[4])?;
        let pre = g.add_row(mm, ids[5])?;
        let h = g.relu(pre)?;
        let mm = g.matmul(h, ids[6])?;
        let pre = g.add_row(mm, ids[7])?;
        let feats = g.relu(pre)?;
        let mm = g.matmul(feats, ids[8])?;
        g.add_row(mm, ids[9])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::finite_difference_check;
    use crate::rng::rng_from;

    fn small_spec() -> CnnSpec {
        CnnSpec {
            in_channels: 2,
            height: 12,
            width: 14,
            conv1_channels: 3,
            conv2_channels: 4,
            fc1_width: 8,
            fc2_width: 5,
            classes: 4,
        }
    }

    /// Direct nested-loop convolution over one channel-major sample.
    fn conv_reference(
        x: &[f64],
        geom: &ConvGeom,
        w: &Tensor<f64>, // [in_c·K·K, out_c]
        b: &Tensor<f64>,
    ) -> Vec<f64> {
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = vec![0.0; geom.out_c * oh * ow];
        for oc in 0..geom.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for c in 0..geom.in_c {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let (y, x_pos) = (
                                    (oy + ky) as isize - geom.pad as isize,
                                    (ox + kx) as isize - geom.pad as isize,
                                );
                                if y < 0 || x_pos < 0 || y >= geom.in_h as isize || x_pos >= geom.in_w as isize {
                                    continue;
                                }
                                let flat = (c * geom.in_h + y as usize) * geom.in_w + x_pos as usize;
                                let wix = ((c * KERNEL + ky) * KERNEL + kx) * geom.out_c + oc;
                                acc += x[flat] * w.data()[wix];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn lenet_widths_have_classic_parameter_count() {
        let spec = CnnSpec {
            in_channels: 1,
            height: 28,
            width: 28,
            conv1_channels: 6,
            conv2_channels: 16,
            fc1_width: 120,
            fc2_width: 84,
            classes: 10,
        };
        assert_eq!(Cnn::<f64>::flat_dim(&spec), 400);
        let mut rng = rng_from(7);
        let net = Cnn::<f64>::new(spec, &mut rng).unwrap();
        let count: usize = net.params().iter().map(|p| p.numel()).sum();
        assert_eq!(count, 61_706);
        let x = Tensor::zeros(&[2, 784]);
        let (logits, feats) = net.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 10]);
        assert_eq!(feats.shape(), &[2, 84]);
    }

    #[test]
    fn im2col_conv_matches_nested_loop_reference() {
        let geom = ConvGeom { in_c: 2, in_h: 6, in_w: 7, out_c: 3, pad: 2 };
        let mut rng = rng_from(11);
        let n = 2;
        let mut x = Tensor::zeros(&[n, geom.in_c * geom.in_h * geom.in_w]);
        for v in x.data_mut() {
            *v = standard_normal(&mut rng);
        }
        let mut w = Tensor::zeros(&[geom.patch_len(), geom.out_c]);
        for v in w.data_mut() {
            *v = standard_normal(&mut rng);
        }
        let b = Tensor::vector(vec![0.3, -0.1, 0.7]);

        let got = Cnn::conv_plain(&x, &geom, &w, &b, n).unwrap();
        for i in 0..n {
            let want = conv_reference(x.row(i).unwrap().data(), &geom, &w, &b);
            let got_row = got.row(i).unwrap();
            for (a, e) in got_row.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }

        // Unpadded variant too.
        let geom = ConvGeom { in_c: 2, in_h: 6, in_w: 7, out_c: 3, pad: 0 };
        let got = Cnn::conv_plain(&x, &geom, &w, &b, n).unwrap();
        for i in 0..n {
            let want = conv_reference(x.row(i).unwrap().data(), &geom, &w, &b);
            for (a, e) in got.row(i).unwrap().data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn centered_delta_kernel_reproduces_input() {
        // Weight 1 at the kernel centre of the matching channel: the padded
        // stage becomes the identity map.
        let geom = ConvGeom { in_c: 2, in_h: 6, in_w: 6, out_c: 2, pad: 2 };
        let mut w = Tensor::zeros(&[geom.patch_len(), geom.out_c]);
        for c in 0..2 {
            let centre = (c * KERNEL + 2) * KERNEL + 2;
            w.data_mut()[centre * geom.out_c + c] = 1.0;
        }
        let b = Tensor::zeros(&[2]);
        let mut rng = rng_from(3);
        let mut x = Tensor::zeros(&[1, 72]);
        for v in x.data_mut() {
            *v = standard_normal(&mut rng);
        }
        let y = Cnn::conv_plain(&x, &geom, &w, &b, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn average_pool_means_and_floor_semantics() {
        // One channel, 2×5 image: odd trailing column is dropped.
        let geom = PoolGeom { c: 1, in_h: 2, in_w: 5 };
        let x = Tensor::matrix(1, 10, (1..=10).map(f64::from).collect()).unwrap();
        let y = Cnn::pool_plain(&x, &geom, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        // Windows {1,2,6,7} and {3,4,8,9}; column 5/10 is dropped.
        assert_eq!(y.data(), &[4.0, 6.0]);
    }

    #[test]
    fn traced_logits_match_plain_bitwise() {
        let mut rng = rng_from(5);
        let net = Cnn::<f64>::new(small_spec(), &mut rng).unwrap();
        let mut x = Tensor::zeros(&[3, small_spec().input_dim()]);
        for v in x.data_mut() {
            *v = standard_normal::<f64>(&mut rng).abs().min(1.0);
        }
        let (plain, _) = net.forward(&x).unwrap();

        let mut g = Graph::new();
        let x_id = g.constant(x.clone()).unwrap();
        let traced = net.traced_logits(&mut g, x_id, None).unwrap();
        assert_eq!(g.value(traced).data(), plain.data());

        let mut g = Graph::new();
        let ids: Vec<NodeId> = net.params().into_iter().map(|p| g.input(p).unwrap()).collect();
        let x_id = g.constant(x).unwrap();
        let traced = net.traced_logits(&mut g, x_id, Some(&ids)).unwrap();
        assert_eq!(g.value(traced).data(), plain.data());
    }

    #[test]
    fn input_gradient_passes_finite_difference_check() {
        let mut rng = rng_from(9);
        let net = Cnn::<f64>::new(small_spec(), &mut rng).unwrap();
        let mut x = Tensor::zeros(&[1, small_spec().input_dim()]);
        for v in x.data_mut() {
            *v = 0.5 + 0.1 * standard_normal::<f64>(&mut rng);
        }
        let report = finite_difference_check(
            |g: &mut Graph<f64>, inputs: &[NodeId]| {
                let logits = net.traced_logits(g, inputs[0], None)?;
                g.mean_all(logits)
            },
            &[x.requiring_grad()],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
    }

    #[test]
    fn weight_gradients_pass_finite_difference_check() {
        let mut rng = rng_from(13);
        let net = Cnn::<f64>::new(small_spec(), &mut rng).unwrap();
        let mut x = Tensor::zeros(&[2, small_spec().input_dim()]);
        for v in x.data_mut() {
            *v = 0.5 + 0.1 * standard_normal::<f64>(&mut rng);
        }
        // Check gradients w.r.t. the conv1 weight and the last bias.
        let conv1_w = net.params()[0].clone().requiring_grad();
        let fc3_b = net.params()[9].clone().requiring_grad();
        let report = finite_difference_check(
            |g: &mut Graph<f64>, inputs: &[NodeId]| {
                let mut ids: Vec<NodeId> =
                    net.params().into_iter().map(|p| g.constant(p.clone())).collect::<Result<_>>()?;
                ids[0] = inputs[0];
                ids[9] = inputs[1];
                let x_id = g.constant(x.clone())?;
                let logits = net.traced_logits(g, x_id, Some(&ids))?;
                g.mean_all(logits)
            },
            &[conv1_w, fc3_b],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
    }

    #[test]
    fn truncated_init_bounds_weights_and_zeroes_biases() {
        let mut rng = rng_from(21);
        let net = Cnn::<f64>::new(small_spec(), &mut rng).unwrap();
        for w in &net.weights {
            assert!(w.data().iter().all(|v| v.abs() <= 0.2 + 1e-12));
            assert!(w.data().iter().any(|v| *v != 0.0));
        }
        for b in &net.biases {
            assert!(b.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn spec_validation_rejects_tiny_images() {
        let mut spec = small_spec();
        spec.height = 11;
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.conv2_channels = 0;
        assert!(spec.validate().is_err());
    }
}
