//! Dense channel-major arrays and 2-D convolution with exact reverse-mode
//! derivatives.
//!
//! Every gradient in the crate — the energy network's image and parameter
//! gradients, and through them the Langevin drift and the training update —
//! is assembled from the two primitives here: [`conv2d_forward`] /
//! [`conv2d_backward`] and the leaky ReLU pair.
//!
//! Convolution is cross-correlation (no kernel flip) with zero padding. The
//! backward pass is the exact adjoint of the forward linearization, so
//! `⟨conv(u) − bias, w⟩ = ⟨u, grad_input(w)⟩` holds to rounding error.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::Real;

/// A dense `(channels, height, width)` array, row-major with the channel
/// index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                "tensor data length",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Tensor { channels, height, width, data })
    }

    pub fn from_image(image: &Image) -> Self {
        Tensor {
            channels: 1,
            height: image.height(),
            width: image.width(),
            data: image.data().to_vec(),
        }
    }

    /// Single-channel tensor back to an image.
    pub fn into_image(self) -> Result<Image> {
        if self.channels != 1 {
            return Err(Error::shape("channel count", 1usize, self.channels));
        }
        Image::from_vec(self.height, self.width, self.data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[Real] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [Real] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> Real {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }
}

/// One convolution layer: kernel of shape `(out_ch, in_ch, k, k)` stored
/// row-major, a per-output-channel bias, stride and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    weights: Vec<Real>,
    bias: Vec<Real>,
}

impl ConvLayer {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        weights: Vec<Real>,
        bias: Vec<Real>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("kernel size", "k must be >= 1"));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::config("stride", format!("must be 1 or 2, got {stride}")));
        }
        if weights.len() != out_ch * in_ch * k * k {
            return Err(Error::shape(
                "kernel weight count",
                out_ch * in_ch * k * k,
                weights.len(),
            ));
        }
        if bias.len() != out_ch {
            return Err(Error::shape("bias length", out_ch, bias.len()));
        }
        Ok(ConvLayer { out_ch, in_ch, k, stride, padding, weights, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        ConvLayer::new(
            out_ch,
            in_ch,
            k,
            stride,
            padding,
            vec![0.0; out_ch * in_ch * k * k],
            vec![0.0; out_ch],
        )
    }

    pub fn weights(&self) -> &[Real] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Real] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[Real] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [Real] {
        &mut self.bias
    }

    /// Number of learnable parameters (`out·in·k² + out`).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Output spatial extent: `floor((in + 2·padding − k)/stride) + 1`.
    pub fn output_extent(&self, in_extent: usize) -> Result<usize> {
        let padded = in_extent + 2 * self.padding;
        if padded < self.k {
            return Err(Error::shape(
                "input extent for convolution",
                format!(">= {}", self.k.saturating_sub(2 * self.padding)),
                in_extent,
            ));
        }
        Ok((padded - self.k) / self.stride + 1)
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        if input.channels() != self.in_ch {
            return Err(Error::shape("input channel count", self.in_ch, input.channels()));
        }
        Ok((self.output_extent(input.height())?, self.output_extent(input.width())?))
    }

    /// Valid `ox` range for a kernel column offset `off = kx − padding`,
    /// i.e. all `ox` with `0 <= ox·stride + off < in_w`.
    #[inline]
    fn ox_range(&self, off: isize, in_w: usize, out_w: usize) -> (usize, usize) {
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(self.stride)
        };
        let max_i = in_w as isize - 1 - off;
        if max_i < 0 {
            return (0, 0);
        }
        let hi = (max_i as usize / self.stride + 1).min(out_w);
        (lo.min(hi), hi)
    }
}

/// Cross-correlate `input` with the layer kernel (zero padding, bias added
/// per output channel).
pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (out_h, out_w) = layer.check_input(input)?;
    let (in_h, in_w) = (input.height(), input.width());
    let (k, s, p) = (layer.k, layer.stride, layer.padding);
    let mut out = Tensor::zeros(layer.out_ch, out_h, out_w);

    for oc in 0..layer.out_ch {
        let b = layer.bias[oc];
        let out_plane = out.plane_mut(oc);
        out_plane.fill(b);
        for ic in 0..layer.in_ch {
            let in_plane = input.plane(ic);
            let w_base = (oc * layer.in_ch + ic) * k * k;
            for oy in 0..out_h {
                let out_row = &mut out_plane[oy * out_w..(oy + 1) * out_w];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let in_row = &in_plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    let w_row = &layer.weights[w_base + ky * k..w_base + (ky + 1) * k];
                    for (kx, &w) in w_row.iter().enumerate() {
                        let off = kx as isize - p as isize;
                        let (lo, hi) = layer.ox_range(off, in_w, out_w);
                        if lo >= hi {
                            continue;
                        }
                        if s == 1 {
                            let src = &in_row[(lo as isize + off) as usize..(hi as isize - 1 + off) as usize + 1];
                            for (o, &i) in out_row[lo..hi].iter_mut().zip(src) {
                                *o += w * i;
                            }
                        } else {
                            for ox in lo..hi {
                                out_row[ox] += w * in_row[((ox * s) as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. the convolution inputs: `(grad_input,
/// grad_kernel, grad_bias)` given the loss gradient at the output.
///
/// `grad_input` is the exact adjoint of the forward linearization;
/// `grad_bias` is the per-channel sum of `grad_out`.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<Real>, Vec<Real>)> {
    let (out_h, out_w) = layer.check_input(input)?;
    if grad_out.shape() != (layer.out_ch, out_h, out_w) {
        return Err(Error::shape(
            "grad_out shape",
            format!("{}x{}x{}", layer.out_ch, out_h, out_w),
            format!("{}x{}x{}", grad_out.channels(), grad_out.height(), grad_out.width()),
        ));
    }
    let (in_h, in_w) = (input.height(), input.width());
    let (k, s, p) = (layer.k, layer.stride, layer.padding);

    let mut grad_input = Tensor::zeros(layer.in_ch, in_h, in_w);
    let mut grad_weights = vec![0.0; layer.weights.len()];
    let mut grad_bias = vec![0.0; layer.out_ch];

    for oc in 0..layer.out_ch {
        let go_plane = grad_out.plane(oc);
        grad_bias[oc] = go_plane.iter().sum();
        for ic in 0..layer.in_ch {
            let in_plane = input.plane(ic);
            let gi_plane = grad_input.plane_mut(ic);
            let w_base = (oc * layer.in_ch + ic) * k * k;
            for oy in 0..out_h {
                let go_row = &go_plane[oy * out_w..(oy + 1) * out_w];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let row_start = iy as usize * in_w;
                    let in_row = &in_plane[row_start..row_start + in_w];
                    let gi_row = &mut gi_plane[row_start..row_start + in_w];
                    for kx in 0..k {
                        let off = kx as isize - p as isize;
                        let (lo, hi) = layer.ox_range(off, in_w, out_w);
                        if lo >= hi {
                            continue;
                        }
                        let w = layer.weights[w_base + ky * k + kx];
                        let mut gw = 0.0;
                        if s == 1 {
                            let src_lo = (lo as isize + off) as usize;
                            let src_hi = (hi as isize - 1 + off) as usize + 1;
                            for ((&go, &i), gi) in go_row[lo..hi]
                                .iter()
                                .zip(&in_row[src_lo..src_hi])
                                .zip(&mut gi_row[src_lo..src_hi])
                            {
                                gw += go * i;
                                *gi += w * go;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ((ox * s) as isize + off) as usize;
                                let go = go_row[ox];
                                gw += go * in_row[ix];
                                gi_row[ix] += w * go;
                            }
                        }
                        grad_weights[w_base + ky * k + kx] += gw;
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

/// Input gradient only. The convolution is linear in its input, so this
/// needs the input shape but not its values; the Langevin drift uses it in
/// the hot loop where kernel gradients would be wasted work.
pub fn conv2d_backward_input(
    in_h: usize,
    in_w: usize,
    layer: &ConvLayer,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let out_h = layer.output_extent(in_h)?;
    let out_w = layer.output_extent(in_w)?;
    if grad_out.shape() != (layer.out_ch, out_h, out_w) {
        return Err(Error::shape(
            "grad_out shape",
            format!("{}x{}x{}", layer.out_ch, out_h, out_w),
            format!("{}x{}x{}", grad_out.channels(), grad_out.height(), grad_out.width()),
        ));
    }
    let (k, s, p) = (layer.k, layer.stride, layer.padding);
    let mut grad_input = Tensor::zeros(layer.in_ch, in_h, in_w);

    for oc in 0..layer.out_ch {
        let go_plane = grad_out.plane(oc);
        for ic in 0..layer.in_ch {
            let gi_plane = grad_input.plane_mut(ic);
            let w_base = (oc * layer.in_ch + ic) * k * k;
            for oy in 0..out_h {
                let go_row = &go_plane[oy * out_w..(oy + 1) * out_w];
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let row_start = iy as usize * in_w;
                    let gi_row = &mut gi_plane[row_start..row_start + in_w];
                    for kx in 0..k {
                        let off = kx as isize - p as isize;
                        let (lo, hi) = layer.ox_range(off, in_w, out_w);
                        if lo >= hi {
                            continue;
                        }
                        let w = layer.weights[w_base + ky * k + kx];
                        if s == 1 {
                            let src_lo = (lo as isize + off) as usize;
                            let src_hi = (hi as isize - 1 + off) as usize + 1;
                            for (&go, gi) in go_row[lo..hi].iter().zip(&mut gi_row[src_lo..src_hi]) {
                                *gi += w * go;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ((ox * s) as isize + off) as usize;
                                gi_row[ix] += w * go_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_input)
}

/// Elementwise `x ↦ x` for `x >= 0`, `leak·x` otherwise.
pub fn leaky_relu(input: &Tensor, leak: Real) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= leak;
        }
    }
    out
}

/// Chain-rule companion of [`leaky_relu`]: multiplies `grad_out` by the
/// elementwise slope (1 for `pre >= 0`, `leak` below; the slope at exactly 0
/// is defined as 1).
pub fn leaky_relu_backward(pre: &Tensor, leak: Real, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(pre.shape(), grad_out.shape());
    let mut out = grad_out.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(pre.data()) {
        if x < 0.0 {
            *g *= leak;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_layer(w: Real, b: Real) -> ConvLayer {
        ConvLayer::new(1, 1, 1, 1, 0, vec![w], vec![b]).unwrap()
    }

    #[test]
    fn scalar_case() {
        let input = Tensor::from_vec(1, 1, 1, vec![3.0]).unwrap();
        let out = conv2d_forward(&input, &scalar_layer(2.0, 0.5)).unwrap();
        assert_eq!(out.data(), &[3.0 * 2.0 + 0.5]);
    }

    #[test]
    fn sum_of_ones() {
        let input = Tensor::from_vec(1, 4, 4, vec![1.0; 16]).unwrap();
        let layer = ConvLayer::new(1, 1, 4, 1, 0, vec![1.0; 16], vec![0.0]).unwrap();
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), (1, 1, 1));
        assert_eq!(out.data(), &[16.0]);
    }

    #[test]
    fn stride2_k4_pad1_halves_even_extents() {
        for extent in [4usize, 8, 16, 64] {
            let layer = ConvLayer::zeros(3, 2, 4, 2, 1).unwrap();
            assert_eq!(layer.output_extent(extent).unwrap(), extent / 2);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let input = Tensor::zeros(2, 4, 4);
        let layer = ConvLayer::zeros(1, 3, 3, 1, 1).unwrap();
        assert!(matches!(
            conv2d_forward(&input, &layer),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn too_small_input_is_rejected() {
        let layer = ConvLayer::zeros(1, 1, 4, 1, 0).unwrap();
        let input = Tensor::zeros(1, 3, 3);
        assert!(conv2d_forward(&input, &layer).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let input = Tensor::from_vec(1, 3, 3, (0..9).map(|i| i as Real).collect()).unwrap();
        let layer = ConvLayer::new(1, 1, 3, 1, 1, (0..9).map(|i| 0.1 * i as Real).collect(), vec![0.7]).unwrap();
        let go = Tensor::zeros(1, 3, 3);
        let (gi, gw, gb) = conv2d_backward(&input, &layer, &go).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.iter().all(|&v| v == 0.0));
        assert_eq!(gb, vec![0.0]);
    }

    #[test]
    fn scalar_product_rule() {
        let v = 3.0;
        let w = -1.5;
        let input = Tensor::from_vec(1, 1, 1, vec![v]).unwrap();
        let layer = scalar_layer(w, 0.25);
        let go = Tensor::from_vec(1, 1, 1, vec![1.0]).unwrap();
        let (gi, gw, gb) = conv2d_backward(&input, &layer, &go).unwrap();
        assert_eq!(gi.data(), &[w]);
        assert_eq!(gw, vec![v]);
        assert_eq!(gb, vec![1.0]);
    }

    #[test]
    fn grad_out_shape_is_checked() {
        let input = Tensor::zeros(1, 4, 4);
        let layer = ConvLayer::zeros(2, 1, 3, 1, 1).unwrap();
        let bad = Tensor::zeros(2, 3, 3);
        assert!(conv2d_backward(&input, &layer, &bad).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let t = Tensor::from_vec(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let out = leaky_relu(&t, 0.05);
        assert_eq!(out.data(), &[-0.05, 0.0, 2.0]);
    }

    #[test]
    fn leaky_relu_slope() {
        let pre = Tensor::from_vec(1, 1, 3, vec![-3.0, 0.0, 1.5]).unwrap();
        let go = Tensor::from_vec(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let out = leaky_relu_backward(&pre, 0.05, &go);
        assert_eq!(out.data(), &[0.05, 1.0, 1.0]);
    }
}
