//! The parametric regularizer: a strided convolutional encoder that maps an
//! image to a scalar energy.
//!
//! The stack is one stride-1 3×3 layer, up to five stride-2 4×4 layers that
//! each halve the spatial extent, and a final valid 4×4 layer that collapses
//! the remaining 4×4 map to a single value. Channel widths grow as
//! `1 → n_f → 2n_f → 4n_f → 8n_f → 12n_f → 16n_f → 1`; for inputs smaller
//! than 128×128 trailing stride-2 stages are dropped until the map in front
//! of the final layer is exactly 4×4, and the final layer then consumes the
//! width of the last kept stage. A leaky ReLU follows every layer except the
//! last, and the output is divided by the temperature `T`, so the energy is
//! `R(x, φ)/T`.
//!
//! At `n_f = 48` and 128×128 inputs the stack has 12,179,905 parameters.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::tensor::{
    conv2d_backward, conv2d_backward_input, conv2d_forward, leaky_relu, leaky_relu_backward,
    ConvLayer, Tensor,
};
use crate::Real;
use rand_distr::{Distribution, Normal};

/// Channel-width multipliers for the stride-1 stage and the five stride-2
/// stages.
const WIDTH_MULTIPLIERS: [usize; 6] = [1, 2, 4, 8, 12, 16];

/// Default ReLU leak coefficient.
pub const DEFAULT_LEAK: Real = 0.05;

/// Shape of one convolution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k + self.out_ch
    }
}

/// Number of stride-2 stages needed for `extent`, or `None` when the extent
/// cannot reach a 4×4 pre-final map.
fn halvings_for(extent: usize) -> Option<usize> {
    let mut e = extent;
    let mut j = 0;
    while e > 4 && e % 2 == 0 && j < 5 {
        e /= 2;
        j += 1;
    }
    (e == 4).then_some(j)
}

/// The layer shapes for a given base width and input size.
pub fn architecture(n_f: usize, input_size: (usize, usize)) -> Result<Vec<LayerSpec>> {
    if n_f == 0 {
        return Err(Error::config("n_f", "base feature count must be >= 1"));
    }
    let (h, w) = input_size;
    let reject = || {
        Error::config(
            "input size",
            format!(
                "{h}x{w} is not supported: inputs must be square with extent 4·2^j \
                 for j in 0..=5 (4, 8, 16, 32, 64 or 128), so that the stride-2 \
                 stages reduce the map to exactly 4x4 before the final layer"
            ),
        )
    };
    if h != w {
        return Err(reject());
    }
    let j = halvings_for(h).ok_or_else(reject)?;

    let mut widths = vec![1];
    widths.extend(WIDTH_MULTIPLIERS[..=j].iter().map(|m| m * n_f));
    widths.push(1);

    let mut specs = Vec::with_capacity(j + 2);
    specs.push(LayerSpec { out_ch: widths[1], in_ch: 1, k: 3, stride: 1, padding: 1 });
    for i in 0..j {
        specs.push(LayerSpec {
            out_ch: widths[i + 2],
            in_ch: widths[i + 1],
            k: 4,
            stride: 2,
            padding: 1,
        });
    }
    specs.push(LayerSpec {
        out_ch: 1,
        in_ch: widths[j + 1],
        k: 4,
        stride: 1,
        padding: 0,
    });
    Ok(specs)
}

/// The energy network `R(·, φ)`: layer stack, leak coefficient and
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<ConvLayer>,
    n_f: usize,
    leak: Real,
    temperature: Real,
    input_size: (usize, usize),
}

/// Build a model with seeded random kernels.
///
/// Kernels are drawn from a zero-mean normal with per-layer scale
/// `1/sqrt(in_ch·k²)`; biases start at zero. The same seed reproduces the
/// same parameters.
pub fn build_model(n_f: usize, input_size: (usize, usize), seed: u64) -> Result<ModelParams> {
    let specs = architecture(n_f, input_size)?;
    let mut layers = Vec::with_capacity(specs.len());
    for (idx, spec) in specs.iter().enumerate() {
        let fan_in = spec.in_ch * spec.k * spec.k;
        let scale = 1.0 / (fan_in as Real).sqrt();
        let normal = Normal::new(0.0, scale).expect("positive std");
        let mut stream = rng::derive(seed, rng::purpose::MODEL_INIT, idx as u64, 0);
        let weights = (0..spec.out_ch * fan_in)
            .map(|_| normal.sample(&mut stream))
            .collect();
        layers.push(ConvLayer::new(
            spec.out_ch,
            spec.in_ch,
            spec.k,
            spec.stride,
            spec.padding,
            weights,
            vec![0.0; spec.out_ch],
        )?);
    }
    Ok(ModelParams {
        layers,
        n_f,
        leak: DEFAULT_LEAK,
        temperature: 1.0,
        input_size,
    })
}

struct ForwardCache {
    /// `activations[l]` is the input to layer `l`; the final entry is the
    /// network output.
    activations: Vec<Tensor>,
    /// Pre-activation output of each layer.
    pre: Vec<Tensor>,
}

impl ModelParams {
    /// Reassemble a model from loaded layers, validating them against the
    /// architecture table.
    pub fn from_parts(
        n_f: usize,
        input_size: (usize, usize),
        leak: Real,
        temperature: Real,
        layers: Vec<ConvLayer>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::config("leak", format!("must be in [0, 1), got {leak}")));
        }
        if !(temperature > 0.0) {
            return Err(Error::config("temperature", format!("must be positive, got {temperature}")));
        }
        let specs = architecture(n_f, input_size)?;
        if layers.len() != specs.len() {
            return Err(Error::shape("layer count", specs.len(), layers.len()));
        }
        for (layer, spec) in layers.iter().zip(&specs) {
            let got = LayerSpec {
                out_ch: layer.out_ch,
                in_ch: layer.in_ch,
                k: layer.k,
                stride: layer.stride,
                padding: layer.padding,
            };
            if got != *spec {
                return Err(Error::shape("layer shape", format!("{spec:?}"), format!("{got:?}")));
            }
        }
        Ok(ModelParams { layers, n_f, leak, temperature, input_size })
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn leak(&self) -> Real {
        self.leak
    }

    pub fn temperature(&self) -> Real {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: Real) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::config("temperature", format!("must be positive, got {t}")));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn with_temperature(mut self, t: Real) -> Result<Self> {
        self.set_temperature(t)?;
        Ok(self)
    }

    pub fn set_leak(&mut self, leak: Real) -> Result<()> {
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::config("leak", format!("must be in [0, 1), got {leak}")));
        }
        self.leak = leak;
        Ok(())
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Total learnable parameter count `Σ (out·in·k² + out)`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        if x.size() != self.input_size {
            return Err(Error::shape(
                "model input size",
                format!("{}x{}", self.input_size.0, self.input_size.1),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(())
    }

    fn forward(&self, x: &Image) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        activations.push(Tensor::from_image(x));
        for (l, layer) in self.layers.iter().enumerate() {
            let z = conv2d_forward(&activations[l], layer)?;
            let a = if l + 1 < n { leaky_relu(&z, self.leak) } else { z.clone() };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardCache { activations, pre })
    }

    /// The scalar energy `R(x, φ)/T`.
    pub fn energy(&self, x: &Image) -> Result<Real> {
        let cache = self.forward(x)?;
        Ok(cache.pre.last().expect("non-empty stack").data()[0] / self.temperature)
    }

    fn backward(&self, cache: &ForwardCache, want_params: bool) -> Result<(Image, Option<Vec<Real>>)> {
        let n = self.layers.len();
        let out = cache.pre.last().expect("non-empty stack");
        let mut g = Tensor::from_vec(1, out.height(), out.width(), vec![1.0 / self.temperature])?;

        // Per-layer kernel/bias gradients collected in reverse, flattened
        // layer-major afterwards.
        let mut layer_grads: Vec<(Vec<Real>, Vec<Real>)> = Vec::new();
        for l in (0..n).rev() {
            let g_pre = if l + 1 == n {
                g
            } else {
                leaky_relu_backward(&cache.pre[l], self.leak, &g)
            };
            if want_params {
                let (gi, gw, gb) = conv2d_backward(&cache.activations[l], &self.layers[l], &g_pre)?;
                layer_grads.push((gw, gb));
                g = gi;
            } else {
                g = conv2d_backward_input(
                    cache.activations[l].height(),
                    cache.activations[l].width(),
                    &self.layers[l],
                    &g_pre,
                )?;
            }
        }

        let grad_input = g.into_image()?;
        let grad_params = want_params.then(|| {
            let mut flat = Vec::with_capacity(self.param_count());
            for (gw, gb) in layer_grads.into_iter().rev() {
                flat.extend(gw);
                flat.extend(gb);
            }
            flat
        });
        Ok((grad_input, grad_params))
    }

    /// Gradient of the energy w.r.t. the input image (`∇₁R`).
    pub fn grad_input(&self, x: &Image) -> Result<Image> {
        let cache = self.forward(x)?;
        Ok(self.backward(&cache, false)?.0)
    }

    /// Gradient of the energy w.r.t. the flat parameter vector (`∇₂R`).
    ///
    /// Ordering: layers first to last; within a layer the kernel entries in
    /// `(out_ch, in_ch, ky, kx)` row-major order, then the biases. The same
    /// ordering is used by [`params_vec`](Self::params_vec) and the `TEBM`
    /// checkpoint format.
    pub fn grad_params(&self, x: &Image) -> Result<Vec<Real>> {
        let cache = self.forward(x)?;
        Ok(self.backward(&cache, true)?.1.expect("params requested"))
    }

    /// Energy plus both gradients in one backward pass.
    pub fn energy_with_grads(&self, x: &Image) -> Result<(Real, Image, Vec<Real>)> {
        let cache = self.forward(x)?;
        let e = cache.pre.last().expect("non-empty stack").data()[0] / self.temperature;
        let (gi, gp) = self.backward(&cache, true)?;
        Ok((e, gi, gp.expect("params requested")))
    }

    /// Current parameters flattened in the documented order.
    pub fn params_vec(&self) -> Vec<Real> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.weights());
            flat.extend_from_slice(layer.bias());
        }
        flat
    }

    /// Overwrite the parameters from a flat vector in the documented order.
    pub fn set_params_vec(&mut self, flat: &[Real]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("parameter vector length", self.param_count(), flat.len()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights().len();
            layer.weights_mut().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias().len();
            layer.bias_mut().copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }
}

/// A scalar energy over images with a gradient: the prior term of the
/// variational problems and the drift of Langevin sampling.
pub trait Regularizer: Sync {
    fn energy(&self, x: &Image) -> Result<Real>;
    fn grad(&self, x: &Image) -> Result<Image>;
}

impl Regularizer for ModelParams {
    fn energy(&self, x: &Image) -> Result<Real> {
        ModelParams::energy(self, x)
    }

    fn grad(&self, x: &Image) -> Result<Image> {
        self.grad_input(x)
    }
}

/// A regularizer that additionally exposes its parameter vector, so it can
/// be trained by maximum likelihood.
pub trait EnergyModel: Regularizer {
    fn param_count(&self) -> usize;
    fn grad_params(&self, x: &Image) -> Result<Vec<Real>>;
    fn params_vec(&self) -> Vec<Real>;
    fn set_params_vec(&mut self, flat: &[Real]) -> Result<()>;

    /// Energy and parameter gradient together; implementations with a shared
    /// forward pass should override this.
    fn energy_and_grad_params(&self, x: &Image) -> Result<(Real, Vec<Real>)> {
        Ok((self.energy(x)?, self.grad_params(x)?))
    }
}

impl EnergyModel for ModelParams {
    fn param_count(&self) -> usize {
        ModelParams::param_count(self)
    }

    fn grad_params(&self, x: &Image) -> Result<Vec<Real>> {
        ModelParams::grad_params(self, x)
    }

    fn params_vec(&self) -> Vec<Real> {
        ModelParams::params_vec(self)
    }

    fn set_params_vec(&mut self, flat: &[Real]) -> Result<()> {
        ModelParams::set_params_vec(self, flat)
    }

    fn energy_and_grad_params(&self, x: &Image) -> Result<(Real, Vec<Real>)> {
        let (e, _, gp) = self.energy_with_grads(x)?;
        Ok((e, gp))
    }
}

/// `R ≡ 0`; turns the variational solvers into plain least squares.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegularizer;

impl Regularizer for ZeroRegularizer {
    fn energy(&self, _x: &Image) -> Result<Real> {
        Ok(0.0)
    }

    fn grad(&self, x: &Image) -> Result<Image> {
        Ok(Image::zeros(x.height(), x.width()))
    }
}

/// `R(x) = ‖x − mean‖² / (2·variance)`, the analytically solvable test
/// energy: its Gibbs density is Gaussian and Langevin chains on it are
/// discrete Ornstein-Uhlenbeck recursions with closed-form moments.
#[derive(Debug, Clone)]
pub struct QuadraticRegularizer {
    pub mean: Image,
    pub variance: Real,
}

impl QuadraticRegularizer {
    pub fn new(mean: Image, variance: Real) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::config("variance", format!("must be positive, got {variance}")));
        }
        Ok(QuadraticRegularizer { mean, variance })
    }
}

impl Regularizer for QuadraticRegularizer {
    fn energy(&self, x: &Image) -> Result<Real> {
        x.check_same_size(&self.mean, "quadratic regularizer input")?;
        let d = x.sub(&self.mean);
        Ok(d.dot(&d) / (2.0 * self.variance))
    }

    fn grad(&self, x: &Image) -> Result<Image> {
        x.check_same_size(&self.mean, "quadratic regularizer input")?;
        Ok(x.sub(&self.mean).scale(1.0 / self.variance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_128_matches_published_count() {
        let specs = architecture(48, (128, 128)).unwrap();
        assert_eq!(specs.len(), 7);
        let count: usize = specs.iter().map(|s| s.param_count()).sum();
        assert_eq!(count, 12_179_905);
    }

    #[test]
    fn architecture_widths_follow_the_pyramid() {
        let specs = architecture(48, (128, 128)).unwrap();
        let widths: Vec<(usize, usize)> = specs.iter().map(|s| (s.in_ch, s.out_ch)).collect();
        assert_eq!(
            widths,
            vec![(1, 48), (48, 96), (96, 192), (192, 384), (384, 576), (576, 768), (768, 1)]
        );
    }

    #[test]
    fn smaller_inputs_drop_trailing_stages() {
        let specs = architecture(8, (64, 64)).unwrap();
        assert_eq!(specs.len(), 6);
        assert_eq!(specs.last().unwrap().in_ch, 12 * 8);
        let specs16 = architecture(8, (16, 16)).unwrap();
        assert_eq!(specs16.len(), 4);
        assert_eq!(specs16.last().unwrap().in_ch, 4 * 8);
    }

    #[test]
    fn unsupported_sizes_are_rejected() {
        assert!(architecture(8, (127, 127)).is_err());
        assert!(architecture(8, (96, 96)).is_err());
        assert!(architecture(8, (64, 32)).is_err());
        assert!(architecture(8, (256, 256)).is_err());
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = build_model(2, (16, 16), 9).unwrap();
        let b = build_model(2, (16, 16), 9).unwrap();
        let c = build_model(2, (16, 16), 10).unwrap();
        assert_eq!(a.params_vec(), b.params_vec());
        assert_ne!(a.params_vec(), c.params_vec());
    }

    #[test]
    fn zero_network_has_zero_energy_and_gradient() {
        let mut m = build_model(2, (16, 16), 1).unwrap();
        m.set_params_vec(&vec![0.0; m.param_count()]).unwrap();
        let x = Image::constant(16, 16, 0.37);
        assert_eq!(m.energy(&x).unwrap(), 0.0);
        assert!(m.grad_input(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temperature_scales_energy_and_gradient() {
        let m = build_model(2, (16, 16), 3).unwrap();
        let x = Image::from_fn(16, 16, |r, c| ((r * 31 + c * 7) % 13) as Real / 13.0);
        let e1 = m.energy(&x).unwrap();
        let g1 = m.grad_input(&x).unwrap();
        let m2 = m.clone().with_temperature(2.0).unwrap();
        assert_eq!(m2.energy(&x).unwrap(), e1 / 2.0);
        let g2 = m2.grad_input(&x).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a / 2.0 - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let m = build_model(2, (16, 16), 3).unwrap();
        assert!(m.energy(&Image::zeros(8, 8)).is_err());
    }

    #[test]
    fn params_roundtrip() {
        let m = build_model(3, (32, 32), 5).unwrap();
        let flat = m.params_vec();
        assert_eq!(flat.len(), m.param_count());
        let mut m2 = build_model(3, (32, 32), 6).unwrap();
        m2.set_params_vec(&flat).unwrap();
        assert_eq!(m2.params_vec(), flat);
    }
}
