//! Shared oracles for the integration tests: finite differences, dense
//! operator materialization, a dense SPD solver, and an independently
//! coded Adam reference. Everything here is deliberately written from
//! first principles, separate from the library's own code paths.

#![allow(dead_code)]

use ctprior::image::Image;
use ctprior::tensor::{ConvLayer, Tensor};
use ctprior::tomo::{forward_project, Geometry, Sinogram};
use ctprior::Real;

/// Central finite-difference gradient of a scalar function.
pub fn finite_difference_grad(
    f: &mut dyn FnMut(&[Real]) -> Real,
    x: &[Real],
    step: Real,
) -> Vec<Real> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Central finite differences with a validity mask. The derivative is
/// estimated at `step` and `step/2`; where the two estimates disagree the
/// probe interval straddles a kink (piecewise-linear activations) and the
/// finite difference is not a valid reference there.
pub fn finite_difference_grad_filtered(
    f: &mut dyn FnMut(&[Real]) -> Real,
    x: &[Real],
    step: Real,
) -> (Vec<Real>, Vec<bool>) {
    let coarse = finite_difference_grad(f, x, step);
    let fine = finite_difference_grad(f, x, step / 2.0);
    let scale = fine.iter().fold(0.0 as Real, |m, &v| m.max(v.abs())).max(1.0);
    let valid = coarse
        .iter()
        .zip(&fine)
        .map(|(&a, &b)| (a - b).abs() <= 1e-6 * scale)
        .collect();
    (fine, valid)
}

/// As [`assert_grads_close`] but only over masked components; also checks
/// that the mask keeps at least `min_valid` of the components.
pub fn assert_grads_close_masked(
    analytic: &[Real],
    reference: &[Real],
    valid: &[bool],
    tol: Real,
    min_valid: f64,
    what: &str,
) {
    let kept: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    assert!(
        kept.len() as f64 >= min_valid * valid.len() as f64,
        "{what}: only {}/{} components have a valid finite-difference reference",
        kept.len(),
        valid.len()
    );
    let a: Vec<Real> = kept.iter().map(|&i| analytic[i]).collect();
    let r: Vec<Real> = kept.iter().map(|&i| reference[i]).collect();
    assert_grads_close(&a, &r, tol, what);
}

/// Assert two gradients agree to `tol` relative error componentwise.
/// Near-zero components (relative to the gradient's sup norm) are compared
/// absolutely at the same tolerance.
pub fn assert_grads_close(analytic: &[Real], reference: &[Real], tol: Real, what: &str) {
    assert_eq!(analytic.len(), reference.len(), "{what}: length mismatch");
    let ginf = reference
        .iter()
        .chain(analytic)
        .fold(0.0 as Real, |m, &v| m.max(v.abs()))
        .max(1e-8);
    for (i, (&a, &r)) in analytic.iter().zip(reference).enumerate() {
        let diff = (a - r).abs();
        let denom = a.abs().max(r.abs());
        if denom >= 1e-6 * ginf {
            assert!(
                diff / denom <= tol,
                "{what}: component {i}: analytic {a}, reference {r}, rel err {}",
                diff / denom
            );
        } else {
            assert!(
                diff <= tol * ginf,
                "{what}: near-zero component {i}: analytic {a}, reference {r}"
            );
        }
    }
}

/// Dense matrix and bias of a convolution layer, built from the index
/// arithmetic alone (row `o`, column `i`): the independent oracle for
/// `conv2d_forward`.
pub fn dense_conv_matrix(
    layer: &ConvLayer,
    in_ch: usize,
    in_h: usize,
    in_w: usize,
) -> (Vec<Vec<Real>>, Vec<Real>) {
    assert_eq!(in_ch, layer.in_ch);
    let out_h = (in_h + 2 * layer.padding - layer.k) / layer.stride + 1;
    let out_w = (in_w + 2 * layer.padding - layer.k) / layer.stride + 1;
    let rows = layer.out_ch * out_h * out_w;
    let cols = in_ch * in_h * in_w;
    let mut m = vec![vec![0.0; cols]; rows];
    let mut bias = vec![0.0; rows];
    for oc in 0..layer.out_ch {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let row = (oc * out_h + oy) * out_w + ox;
                bias[row] = layer.bias()[oc];
                for ic in 0..in_ch {
                    for ky in 0..layer.k {
                        for kx in 0..layer.k {
                            let iy = (oy * layer.stride + ky) as isize - layer.padding as isize;
                            let ix = (ox * layer.stride + kx) as isize - layer.padding as isize;
                            if iy < 0 || ix < 0 || iy >= in_h as isize || ix >= in_w as isize {
                                continue;
                            }
                            let col = (ic * in_h + iy as usize) * in_w + ix as usize;
                            let widx = ((oc * in_ch + ic) * layer.k + ky) * layer.k + kx;
                            m[row][col] += layer.weights()[widx];
                        }
                    }
                }
            }
        }
    }
    (m, bias)
}

pub fn matvec(m: &[Vec<Real>], x: &[Real]) -> Vec<Real> {
    m.iter().map(|row| row.iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
}

/// Materialize the acquisition operator by projecting unit pixels.
pub fn dense_tomo_matrix(g: &Geometry) -> Vec<Vec<Real>> {
    let (h, w) = g.image_size();
    let rows = g.n_theta() * g.n_d();
    let mut columns = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut e = Image::zeros(h, w);
            e.set(r, c, 1.0);
            columns.push(forward_project(&e, g).unwrap().values().to_vec());
        }
    }
    // Transpose columns into rows.
    (0..rows)
        .map(|ray| columns.iter().map(|col| col[ray]).collect())
        .collect()
}

/// Solve a dense SPD (or at least nonsingular) system by Gaussian
/// elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<Real>>, mut b: Vec<Real>) -> Vec<Real> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-14, "singular system at column {col}");
        for row in col + 1..n {
            let factor = a[row][col] / p;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Textbook Adam, coded independently of the library version.
pub struct ReferenceAdam {
    pub m: Vec<Real>,
    pub v: Vec<Real>,
    pub t: u32,
}

impl ReferenceAdam {
    pub fn new(n: usize) -> Self {
        ReferenceAdam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [Real], grad: &[Real], lr: Real, b1: Real, b2: Real, eps: Real) {
        self.t += 1;
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t as i32));
            let vh = self.v[i] / (1.0 - b2.powi(self.t as i32));
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

pub fn mean(xs: &[Real]) -> Real {
    xs.iter().sum::<Real>() / xs.len() as Real
}

pub fn variance(xs: &[Real]) -> Real {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<Real>() / (xs.len() as Real - 1.0)
}

/// Two-pass mean/variance maps over a stream of images (oracle for the
/// Welford accumulator).
pub fn two_pass_moments(samples: &[Image]) -> (Image, Image) {
    let n = samples.len() as Real;
    let (h, w) = samples[0].size();
    let mut mean = Image::zeros(h, w);
    for s in samples {
        mean = mean.add(s);
    }
    mean = mean.scale(1.0 / n);
    let mut var = Image::zeros(h, w);
    for s in samples {
        let d = s.sub(&mean);
        for (v, &dv) in var.data_mut().iter_mut().zip(d.data()) {
            *v += dv * dv;
        }
    }
    (mean, var.scale(1.0 / (n - 1.0)))
}

/// Random image with entries in [-0.5, 0.5] from a seeded stream.
pub fn random_image(h: usize, w: usize, stream: &mut ctprior::rng::Stream) -> Image {
    use rand::Rng;
    Image::from_fn(h, w, |_, _| stream.random::<Real>() - 0.5)
}

/// Random sinogram with entries in [-0.5, 0.5].
pub fn random_sinogram(g: &Geometry, stream: &mut ctprior::rng::Stream) -> Sinogram {
    use rand::Rng;
    let n = g.n_theta() * g.n_d();
    let values = (0..n).map(|_| stream.random::<Real>() - 0.5).collect();
    Sinogram::from_vec(g.clone(), values).unwrap()
}

/// Random dense tensor in [-0.5, 0.5].
pub fn random_tensor(c: usize, h: usize, w: usize, stream: &mut ctprior::rng::Stream) -> Tensor {
    use rand::Rng;
    let data = (0..c * h * w).map(|_| stream.random::<Real>() - 0.5).collect();
    Tensor::from_vec(c, h, w, data).unwrap()
}
