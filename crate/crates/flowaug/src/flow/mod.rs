//! Exactly invertible flows with tractable likelihoods.
//!
//! A [`FlowModel`] is an ordered stack of invertible layers mapping data `x`
//! to a latent `z = F(x)` under a standard-normal prior:
//!
//! ```text
//! log p(x) = -0.5 * ||F(x)||² - (C/2) * ln(2π) + log|det ∂F/∂x|
//! ```
//!
//! The stack is built in blocks. Each block is
//! `[actnorm?] [invlinear?] coupling permutation`, where the two optional
//! extras are config switches; 1-D models (which cannot host a coupling)
//! consist of the enabled extras only. Encoding (`forward`) applies layers
//! first-to-last; decoding (`inverse`) applies exact layer inverses
//! last-to-first, so `inverse(forward(x)) = x` up to float noise.
//!
//! Both a plain evaluation path and a traced path (for gradients) exist for
//! every layer; they compose the same kernels in the same order, so their
//! outputs agree bit for bit.

pub mod actnorm;
pub mod coupling;
pub mod invlinear;
pub mod permute;

pub use actnorm::ActNormLayer;
pub use coupling::{CouplingLayer, CouplingNodes};
pub use invlinear::{InvLinearLayer, InvLinearNodes};
pub use permute::PermutationLayer;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::rng::{fill_standard_normal, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `ln(2π)`, the normal-prior normalization constant per coordinate.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Structural description of a flow stack.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    /// Data dimensionality `C`.
    pub dim: usize,
    /// Number of blocks.
    pub blocks: usize,
    /// Hidden width of each coupling subnet.
    pub hidden: usize,
    /// One-hot label width; `0` for an unconditional model.
    pub label_width: usize,
    /// Prepend a data-initialized affine normalization to each block.
    pub use_actnorm: bool,
    /// Prepend a learnable LU-form linear mix to each block.
    pub use_invlinear: bool,
    /// Soft bound (nats) on coupling log-scales.
    pub scale_clamp: f64,
}

impl FlowConfig {
    /// Validates internal consistency.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("flow dim", "zero".to_string()));
        }
        if self.blocks > 0 {
            if self.dim == 1 && !self.use_actnorm && !self.use_invlinear {
                return Err(Error::invalid(
                    "flow config",
                    "1-D blocks cannot host couplings; enable actnorm or invlinear".to_string(),
                ));
            }
            if self.dim >= 2 && self.hidden == 0 {
                return Err(Error::invalid("flow hidden width", "zero".to_string()));
            }
            if !(self.scale_clamp > 0.0) {
                return Err(Error::invalid(
                    "scale clamp",
                    format!("{}; need > 0", self.scale_clamp),
                ));
            }
        }
        if self.label_width > 0 && (self.dim < 2 || self.blocks == 0) {
            return Err(Error::invalid(
                "flow config",
                "label conditioning requires at least one coupling block (dim >= 2)".to_string(),
            ));
        }
        Ok(())
    }
}

/// One invertible layer of a flow stack.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Scalar> {
    ActNorm(ActNormLayer<T>),
    InvLinear(InvLinearLayer<T>),
    Coupling(CouplingLayer<T>),
    Permutation(PermutationLayer),
}

impl<T: Scalar> Layer<T> {
    /// Learnable tensors of this layer, declaration order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::ActNorm(l) => l.params().to_vec(),
            Layer::InvLinear(l) => l.params(),
            Layer::Coupling(l) => l.params().to_vec(),
            Layer::Permutation(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::ActNorm(l) => l.params_mut().into_iter().collect(),
            Layer::InvLinear(l) => l.params_mut(),
            Layer::Coupling(l) => l.params_mut().into_iter().collect(),
            Layer::Permutation(_) => Vec::new(),
        }
    }
}

/// Per-layer graph handles produced by [`FlowModel::bind`].
#[derive(Clone, Debug)]
pub enum LayerNodes {
    ActNorm { log_scale: NodeId, bias: NodeId },
    InvLinear(InvLinearNodes),
    Coupling(CouplingNodes),
    Permutation,
}

/// Graph handles for every learnable tensor of a flow, in parameter order.
#[derive(Clone, Debug)]
pub struct FlowBinding {
    layers: Vec<LayerNodes>,
    flat: Vec<NodeId>,
}

impl FlowBinding {
    /// Node ids aligned with [`FlowModel::params`] order.
    pub fn flat(&self) -> &[NodeId] {
        &self.flat
    }
}

/// An invertible flow: layer stack plus standard-normal prior.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel<T: Scalar> {
    config: FlowConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> FlowModel<T> {
    /// Builds a freshly initialized stack per `config`. Couplings start as
    /// identity maps; permutations and LU mixes draw from `rng`.
    pub fn new(config: FlowConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        for _ in 0..config.blocks {
            if config.use_actnorm {
                layers.push(Layer::ActNorm(ActNormLayer::new(config.dim)));
            }
            if config.use_invlinear {
                layers.push(Layer::InvLinear(InvLinearLayer::new(config.dim, rng)?));
            }
            if config.dim >= 2 {
                layers.push(Layer::Coupling(CouplingLayer::new(
                    config.dim,
                    config.dim / 2,
                    config.hidden,
                    config.label_width,
                    config.scale_clamp,
                    rng,
                )?));
                layers.push(Layer::Permutation(PermutationLayer::new(config.dim, rng)));
            }
        }
        Ok(FlowModel { config, layers })
    }

    /// The identity flow on `dim` coordinates (empty stack; the prior is
    /// evaluated directly on the data).
    pub fn identity(dim: usize) -> Self {
        FlowModel {
            config: FlowConfig {
                dim,
                blocks: 0,
                hidden: 0,
                label_width: 0,
                use_actnorm: false,
                use_invlinear: false,
                scale_clamp: 2.0,
            },
            layers: Vec::new(),
        }
    }

    /// Reassembles a model from a config and an explicit layer list
    /// (checkpoint loading); the layer kind sequence must match what
    /// [`Self::new`] would generate for the config.
    pub fn from_layers(config: FlowConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        config.validate()?;
        let expected = expected_kinds(&config);
        let got: Vec<&'static str> = layers.iter().map(kind_name).collect();
        if expected != got {
            return Err(Error::invalid(
                "flow layers",
                format!("layer kinds {got:?} do not match config-implied {expected:?}"),
            ));
        }
        for layer in &layers {
            let ok = match layer {
                Layer::ActNorm(l) => l.dim() == config.dim,
                Layer::InvLinear(l) => l.dim() == config.dim,
                Layer::Coupling(l) => {
                    l.dim() == config.dim
                        && l.split() == config.dim / 2
                        && l.label_width() == config.label_width
                }
                Layer::Permutation(l) => l.dim() == config.dim,
            };
            if !ok {
                return Err(Error::invalid(
                    "flow layers",
                    "layer shape disagrees with config".to_string(),
                ));
            }
        }
        Ok(FlowModel { config, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn label_width(&self) -> usize {
        self.config.label_width
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn is_conditional(&self) -> bool {
        self.config.label_width > 0
    }

    /// All learnable tensors, layer order then per-layer declaration order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// True once every data-initialized layer has seen its first batch
    /// (vacuously true without such layers).
    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::ActNorm(a) => a.initialized(),
            _ => true,
        })
    }

    fn check_batch(&self, x: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.config.dim {
            return Err(Error::shape(
                "flow",
                format!("need [n, {}], got {:?}", self.config.dim, x.shape()),
            ));
        }
        match (self.config.label_width, label) {
            (0, None) => Ok(()),
            (0, Some(_)) => Err(Error::invalid(
                "label",
                "flow is unconditional but a label was supplied".to_string(),
            )),
            (w, Some(l)) => {
                if l.shape() != [x.shape()[0], w] {
                    return Err(Error::shape(
                        "flow label",
                        format!("need [{}, {w}], got {:?}", x.shape()[0], l.shape()),
                    ));
                }
                Ok(())
            }
            (_, None) => Err(Error::invalid(
                "label",
                "conditional flow evaluated without a label".to_string(),
            )),
        }
    }

    /// Initializes every uninitialized data-dependent layer by propagating
    /// `batch` through the stack and standardizing at each such layer's
    /// position. Call once before training a model with actnorm extras.
    pub fn initialize_actnorms(
        &mut self,
        batch: &Tensor<T>,
        label: Option<&Tensor<T>>,
    ) -> Result<()> {
        self.check_batch(batch, label)?;
        let mut cur = batch.clone();
        for layer in &mut self.layers {
            cur = match layer {
                Layer::ActNorm(l) => {
                    if !l.initialized() {
                        l.init_from_batch(&cur)?;
                    }
                    l.forward(&cur)?.0
                }
                Layer::InvLinear(l) => l.forward(&cur)?.0,
                Layer::Coupling(l) => l.forward(&cur, label)?.0,
                Layer::Permutation(l) => l.forward(&cur)?,
            };
        }
        Ok(())
    }

    /// Encodes a batch, returning `(z, per-sample logdet [n,1], scalar
    /// logdet)`; the scalar part applies to every sample.
    fn encode_parts(
        &self,
        x: &Tensor<T>,
        label: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>, T)> {
        self.check_batch(x, label)?;
        let n = x.shape()[0];
        let mut cur = x.clone();
        let mut per_sample = Tensor::zeros(&[n, 1]);
        let mut scalar = T::zero();
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(l) => {
                    let (y, ld) = l.forward(&cur)?;
                    cur = y;
                    scalar = scalar + ld;
                }
                Layer::InvLinear(l) => {
                    let (y, ld) = l.forward(&cur)?;
                    cur = y;
                    scalar = scalar + ld.item()?;
                }
                Layer::Coupling(l) => {
                    let (y, ld) = l.forward(&cur, label)?;
                    cur = y;
                    per_sample = ops::add(&per_sample, &ld)?;
                }
                Layer::Permutation(l) => {
                    cur = l.forward(&cur)?;
                }
            }
        }
        Ok((cur, per_sample, scalar))
    }

    /// Encode: `z = F(x)` with the per-sample total log-determinant `[n,1]`.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        label: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (z, per_sample, scalar) = self.encode_parts(x, label)?;
        let total = ops::add_scalar(&per_sample, scalar);
        Ok((z, total))
    }

    /// Decode: `x = F⁻¹(z)`, exact inverse of [`Self::forward`].
    pub fn inverse(&self, z: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_batch(z, label)?;
        let mut cur = z.clone();
        for layer in self.layers.iter().rev() {
            cur = match layer {
                Layer::ActNorm(l) => l.inverse(&cur)?,
                Layer::InvLinear(l) => l.inverse(&cur)?,
                Layer::Coupling(l) => l.inverse(&cur, label)?,
                Layer::Permutation(l) => l.inverse(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Per-sample log-density `[n,1]` under the standard-normal prior plus
    /// volume correction.
    pub fn log_prob(&self, x: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (z, per_sample, scalar) = self.encode_parts(x, label)?;
        let half_sq = ops::scale(&ops::row_sum(&ops::mul(&z, &z)?)?, T::narrow(0.5));
        let ld = ops::sub(&per_sample, &half_sq)?;
        let shift = scalar - T::narrow(self.config.dim as f64 * 0.5 * LN_2PI);
        Ok(ops::add_scalar(&ld, shift))
    }

    /// Mean negative log-likelihood of a batch, in nats per sample.
    ///
    /// Composes the same kernels in the same order as [`Self::traced_nll`],
    /// so the two agree bit for bit.
    pub fn nll(&self, batch: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<T> {
        let (z, per_sample, scalar) = self.encode_parts(batch, label)?;
        let half_sq = ops::scale(&ops::row_sum(&ops::mul(&z, &z)?)?, T::narrow(0.5));
        let mean_sq = ops::mean_all(&half_sq).item()?;
        let ld_mean = ops::mean_all(&per_sample).item()?;
        let with_const = mean_sq + T::narrow(self.config.dim as f64 * 0.5 * LN_2PI);
        Ok(with_const - ld_mean - scalar)
    }

    /// Creates gradient-tracked graph inputs for every learnable tensor
    /// (parameter order) and groups them per layer for the traced paths.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<FlowBinding> {
        let flat: Vec<NodeId> = self
            .params()
            .into_iter()
            .map(|p| g.input(&p.clone().requiring_grad()))
            .collect::<Result<_>>()?;
        self.binding_from_ids(&flat)
    }

    /// Groups pre-created node ids (aligned with [`Self::params`] order) into
    /// a per-layer binding; used by gradient checkers that own the inputs.
    pub fn binding_from_ids(&self, ids: &[NodeId]) -> Result<FlowBinding> {
        let want: usize = self.layers.iter().map(|l| l.params().len()).sum();
        if ids.len() != want {
            return Err(Error::invalid(
                "flow binding",
                format!("{} node ids for {want} parameters", ids.len()),
            ));
        }
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            layers.push(match layer {
                Layer::ActNorm(_) => LayerNodes::ActNorm { log_scale: next(), bias: next() },
                Layer::InvLinear(l) => LayerNodes::InvLinear(InvLinearNodes {
                    lower: (l.dim() > 1).then(&mut next),
                    upper: (l.dim() > 1).then(&mut next),
                    log_mag: next(),
                }),
                Layer::Coupling(_) => LayerNodes::Coupling(CouplingNodes {
                    w1: next(),
                    b1: next(),
                    w2: next(),
                    b2: next(),
                }),
                Layer::Permutation(_) => LayerNodes::Permutation,
            });
        }
        Ok(FlowBinding { layers, flat: ids.to_vec() })
    }

    /// Traced encode over bound parameters; returns `(z, per-sample logdet,
    /// scalar logdet)` node ids.
    pub fn traced_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        label: Option<NodeId>,
        binding: &FlowBinding,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        if binding.layers.len() != self.layers.len() {
            return Err(Error::invalid(
                "flow binding",
                "binding layer count does not match the model".to_string(),
            ));
        }
        let n = g.value(x).shape()[0];
        let mut cur = x;
        let mut per_sample = g.constant(Tensor::zeros(&[n, 1]))?;
        let mut scalar = g.constant(Tensor::scalar(T::zero()))?;
        for (layer, nodes) in self.layers.iter().zip(&binding.layers) {
            match (layer, nodes) {
                (Layer::ActNorm(l), LayerNodes::ActNorm { log_scale, bias }) => {
                    let (y, ld) = l.traced_forward(g, cur, *log_scale, *bias)?;
                    cur = y;
                    scalar = g.add(scalar, ld)?;
                }
                (Layer::InvLinear(l), LayerNodes::InvLinear(nodes)) => {
                    let (y, ld) = l.traced_forward(g, cur, nodes)?;
                    cur = y;
                    scalar = g.add(scalar, ld)?;
                }
                (Layer::Coupling(l), LayerNodes::Coupling(nodes)) => {
                    let (y, ld) = l.traced_forward(g, cur, label, nodes)?;
                    cur = y;
                    per_sample = g.add(per_sample, ld)?;
                }
                (Layer::Permutation(l), LayerNodes::Permutation) => {
                    cur = l.traced_forward(g, cur)?;
                }
                _ => {
                    return Err(Error::invalid(
                        "flow binding",
                        "binding kinds out of step with the layer stack".to_string(),
                    ))
                }
            }
        }
        Ok((cur, per_sample, scalar))
    }

    /// Traced mean NLL; gradients flow to every bound parameter.
    pub fn traced_nll(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        label: Option<NodeId>,
        binding: &FlowBinding,
    ) -> Result<NodeId> {
        let (z, per_sample, scalar) = self.traced_forward(g, x, label, binding)?;
        let sq = g.mul(z, z)?;
        let rs = g.row_sum(sq)?;
        let half_sq = g.scale(rs, T::narrow(0.5))?;
        let mean_sq = g.mean_all(half_sq)?;
        let ld_mean = g.mean_all(per_sample)?;
        let with_const =
            g.add_scalar(mean_sq, T::narrow(self.config.dim as f64 * 0.5 * LN_2PI))?;
        let minus_ld = g.sub(with_const, ld_mean)?;
        g.sub(minus_ld, scalar)
    }

    /// Traced decode `x = F⁻¹(z)` with all parameters baked in as constants;
    /// gradients flow through `z` only (perturbation search).
    pub fn traced_decode(
        &self,
        g: &mut Graph<T>,
        z: NodeId,
        label: Option<NodeId>,
    ) -> Result<NodeId> {
        let mut cur = z;
        for layer in self.layers.iter().rev() {
            cur = match layer {
                Layer::ActNorm(l) => l.traced_inverse(g, cur)?,
                Layer::InvLinear(l) => l.traced_inverse(g, cur)?,
                Layer::Coupling(l) => l.traced_inverse(g, cur, label)?,
                Layer::Permutation(l) => l.traced_inverse(g, cur)?,
            };
        }
        Ok(cur)
    }

    /// Draws `n` prior samples and decodes them. Deterministic given `rng`.
    pub fn sample(
        &self,
        n: usize,
        label: Option<&Tensor<T>>,
        rng: &mut Rng,
    ) -> Result<Tensor<T>> {
        if n == 0 {
            return Err(Error::invalid("sample count", "zero".to_string()));
        }
        let mut z = Tensor::zeros(&[n, self.config.dim]);
        fill_standard_normal(rng, z.data_mut());
        self.inverse(&z, label)
    }
}

fn kind_name<T: Scalar>(layer: &Layer<T>) -> &'static str {
    match layer {
        Layer::ActNorm(_) => "actnorm",
        Layer::InvLinear(_) => "invlinear",
        Layer::Coupling(_) => "coupling",
        Layer::Permutation(_) => "permutation",
    }
}

/// Layer kind sequence [`FlowModel::new`] generates for a config.
fn expected_kinds(config: &FlowConfig) -> Vec<&'static str> {
    let mut kinds = Vec::new();
    for _ in 0..config.blocks {
        if config.use_actnorm {
            kinds.push("actnorm");
        }
        if config.use_invlinear {
            kinds.push("invlinear");
        }
        if config.dim >= 2 {
            kinds.push("coupling");
            kinds.push("permutation");
        }
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from, standard_normal};
    use approx::assert_abs_diff_eq;

    fn full_config(dim: usize, blocks: usize, label_width: usize) -> FlowConfig {
        FlowConfig {
            dim,
            blocks,
            hidden: 8,
            label_width,
            use_actnorm: true,
            use_invlinear: true,
            scale_clamp: 2.0,
        }
    }

    fn random_batch(n: usize, dim: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rng_from(seed);
        let mut x = Tensor::zeros(&[n, dim]);
        fill_standard_normal(&mut rng, x.data_mut());
        x
    }

    /// Fully initialized random model: actnorms initialized on a batch, then
    /// all parameters jittered so nothing is at its identity init.
    fn trained_like_model(dim: usize, blocks: usize, label_width: usize, seed: u64) -> FlowModel<f64> {
        let mut rng = rng_from(seed);
        let mut model = FlowModel::new(full_config(dim, blocks, label_width), &mut rng).unwrap();
        let batch = random_batch(16, dim, seed + 1);
        let label = (label_width > 0).then(|| one_hot_cycle(16, label_width));
        model.initialize_actnorms(&batch, label.as_ref()).unwrap();
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v += 0.1 * standard_normal::<f64>(&mut rng);
            }
        }
        model
    }

    fn one_hot_cycle(n: usize, width: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[n, width]);
        for i in 0..n {
            t.data_mut()[i * width + i % width] = 1.0;
        }
        t
    }

    #[test]
    fn identity_flow_is_the_standard_normal() {
        let model = FlowModel::<f64>::identity(2);
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let (z, ld) = model.forward(&x, None).unwrap();
        assert_eq!(z.data(), x.data());
        assert_eq!(ld.data(), &[0.0]);
        let lp = model.log_prob(&x, None).unwrap();
        assert_abs_diff_eq!(lp.data()[0], -LN_2PI, epsilon = 1e-12);
        // Mean NLL of the single origin point is the positive of that.
        let nll = model.nll(&x, None).unwrap();
        assert_abs_diff_eq!(nll, 1.8379, epsilon = 1e-4);
    }

    #[test]
    fn one_dimensional_affine_log_prob_by_hand() {
        // z = 2x: at x = 0, log p = -0.5 ln(2π) + ln 2.
        let config = FlowConfig {
            dim: 1,
            blocks: 1,
            hidden: 0,
            label_width: 0,
            use_actnorm: true,
            use_invlinear: false,
            scale_clamp: 2.0,
        };
        let actnorm = ActNormLayer::from_parts(
            Tensor::vector(vec![2.0f64.ln()]),
            Tensor::vector(vec![0.0]),
            true,
        )
        .unwrap();
        let model = FlowModel::from_layers(config, vec![Layer::ActNorm(actnorm)]).unwrap();
        let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let lp = model.log_prob(&x, None).unwrap();
        assert_abs_diff_eq!(lp.data()[0], -0.5 * LN_2PI + 2.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(lp.data()[0], -0.2258, epsilon = 1e-4);
    }

    #[test]
    fn inverse_applies_layers_in_reverse_order() {
        // Stack [scale-by-2, swap columns]: forward doubles then swaps, so
        // the inverse must unswap then halve.
        let config = FlowConfig {
            dim: 2,
            blocks: 0,
            hidden: 0,
            label_width: 0,
            use_actnorm: false,
            use_invlinear: false,
            scale_clamp: 2.0,
        };
        // from_layers enforces the config pattern, so assemble directly.
        let mut model = FlowModel::from_layers(config, Vec::new()).unwrap();
        model.layers.push(Layer::ActNorm(
            ActNormLayer::from_parts(
                Tensor::vector(vec![2.0f64.ln(), 2.0f64.ln()]),
                Tensor::vector(vec![0.0, 0.0]),
                true,
            )
            .unwrap(),
        ));
        model.layers.push(Layer::Permutation(PermutationLayer::from_perm(vec![1, 0]).unwrap()));
        let x = Tensor::matrix(1, 2, vec![3.0, 5.0]).unwrap();
        let (z, _) = model.forward(&x, None).unwrap();
        assert_eq!(z.data(), &[10.0, 6.0]);
        let back = model.inverse(&z, None).unwrap();
        assert_eq!(back.data(), &[3.0, 5.0]);
    }

    #[test]
    fn deep_stack_round_trips_tightly() {
        let model = trained_like_model(6, 4, 0, 30);
        let x = random_batch(32, 6, 31);
        let (z, _) = model.forward(&x, None).unwrap();
        let back = model.inverse(&z, None).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in back.data().iter().zip(x.data()) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst <= 1e-9, "round-trip error {worst}");
    }

    #[test]
    fn conditional_stack_round_trips_and_depends_on_label() {
        let model = trained_like_model(4, 2, 3, 32);
        let x = random_batch(6, 4, 33);
        let label = one_hot_cycle(6, 3);
        let (z, _) = model.forward(&x, Some(&label)).unwrap();
        let back = model.inverse(&z, Some(&label)).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let other = one_hot_cycle(6, 3);
        let mut shifted = other.clone();
        shifted.data_mut().rotate_left(3);
        let (z2, _) = model.forward(&x, Some(&shifted)).unwrap();
        assert_ne!(z.data(), z2.data());
        assert!(model.forward(&x, None).is_err());
    }

    #[test]
    fn total_logdet_matches_numerical_jacobian() {
        let model = trained_like_model(4, 2, 0, 34);
        let x = random_batch(1, 4, 35);
        let (_, ld) = model.forward(&x, None).unwrap();
        let dim = 4;
        let h = 1e-6;
        let mut jac = vec![0.0f64; dim * dim];
        for j in 0..dim {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let (zp, _) = model.forward(&xp, None).unwrap();
            let (zm, _) = model.forward(&xm, None).unwrap();
            for i in 0..dim {
                jac[i * dim + j] = (zp.data()[i] - zm.data()[i]) / (2.0 * h);
            }
        }
        let mut a = jac;
        let mut log_abs = 0.0f64;
        for k in 0..dim {
            let mut piv = k;
            for r in k + 1..dim {
                if a[r * dim + k].abs() > a[piv * dim + k].abs() {
                    piv = r;
                }
            }
            if piv != k {
                for c in 0..dim {
                    a.swap(k * dim + c, piv * dim + c);
                }
            }
            let d = a[k * dim + k];
            assert!(d.abs() > 1e-12);
            log_abs += d.abs().ln();
            for r in k + 1..dim {
                let f = a[r * dim + k] / d;
                for c in k..dim {
                    a[r * dim + c] -= f * a[k * dim + c];
                }
            }
        }
        assert_abs_diff_eq!(ld.data()[0], log_abs, epsilon = 1e-5);
    }

    #[test]
    fn traced_nll_value_is_bit_identical_to_plain() {
        let model = trained_like_model(4, 2, 0, 36);
        let x = random_batch(8, 4, 37);
        let plain = model.nll(&x, None).unwrap();
        let mut g = Graph::new();
        let binding = model.bind(&mut g).unwrap();
        let x_id = g.constant(x).unwrap();
        let nll_id = model.traced_nll(&mut g, x_id, None, &binding).unwrap();
        assert_eq!(g.value(nll_id).item().unwrap().to_bits(), plain.to_bits());
    }

    #[test]
    fn traced_nll_gradients_match_finite_differences() {
        use crate::check::finite_difference_check;
        let model = trained_like_model(2, 1, 0, 38);
        let x = random_batch(5, 2, 39);
        let point: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
        let report = finite_difference_check(
            |g, ids| {
                let binding = model.binding_from_ids(ids)?;
                let x_id = g.constant(x.clone())?;
                model.traced_nll(g, x_id, None, &binding)
            },
            &point,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.failures().is_empty(), "{:?}", report.failures());
    }

    #[test]
    fn traced_decode_matches_plain_inverse_and_differentiates() {
        let model = trained_like_model(4, 2, 0, 40);
        let x = random_batch(3, 4, 41);
        let (z, _) = model.forward(&x, None).unwrap();
        let plain = model.inverse(&z, None).unwrap();
        let mut g = Graph::new();
        let z_id = g.input(&z.clone().requiring_grad()).unwrap();
        let x_id = model.traced_decode(&mut g, z_id, None).unwrap();
        let sum = g.sum_all(x_id).unwrap();
        assert_eq!(g.value(x_id).data(), plain.data());
        g.backward(sum).unwrap();
        let grad = g.grad(z_id).unwrap();
        assert!(grad.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn actnorm_initialization_standardizes_the_first_batch() {
        let mut rng = rng_from(42);
        let mut model = FlowModel::<f64>::new(full_config(4, 1, 0), &mut rng).unwrap();
        let mut batch = random_batch(64, 4, 43);
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = *v * 3.0 + (i % 4) as f64; // skewed input stats
        }
        assert!(!model.is_initialized());
        assert!(model.forward(&batch, None).is_err());
        model.initialize_actnorms(&batch, None).unwrap();
        assert!(model.is_initialized());
        // Couplings start as identities and the rest is volume-preserving
        // linear mixing, so z should be standardized up to the mixing.
        let (z, _) = model.forward(&batch, None).unwrap();
        let n = z.shape()[0] as f64;
        for j in 0..4 {
            let mut mean = 0.0;
            for i in 0..z.shape()[0] {
                mean += z.at2(i, j);
            }
            mean /= n;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_identity_flow_returns_raw_normals() {
        let model = FlowModel::<f64>::identity(3);
        let mut rng = rng_from(44);
        let s1 = model.sample(5, None, &mut rng).unwrap();
        let mut rng = rng_from(44);
        let s2 = model.sample(5, None, &mut rng).unwrap();
        assert_eq!(s1.data(), s2.data());
        let mut rng = rng_from(44);
        let mut raw = Tensor::<f64>::zeros(&[5, 3]);
        fill_standard_normal(&mut rng, raw.data_mut());
        assert_eq!(s1.data(), raw.data());
    }

    #[test]
    fn config_validation_rejects_inconsistent_shapes() {
        let mut c = full_config(1, 2, 0);
        c.use_actnorm = false;
        c.use_invlinear = false;
        assert!(c.validate().is_err());
        let mut c = full_config(4, 2, 0);
        c.hidden = 0;
        assert!(c.validate().is_err());
        let c = full_config(1, 0, 1);
        assert!(c.validate().is_err());
        assert!(full_config(4, 2, 3).validate().is_ok());
    }

    #[test]
    fn from_layers_rejects_wrong_kind_sequence() {
        let mut rng = rng_from(45);
        let model = FlowModel::<f64>::new(full_config(4, 1, 0), &mut rng).unwrap();
        let mut layers: Vec<Layer<f64>> = model.layers().to_vec();
        layers.swap(0, 1);
        assert!(FlowModel::from_layers(full_config(4, 1, 0), layers).is_err());
    }
}
