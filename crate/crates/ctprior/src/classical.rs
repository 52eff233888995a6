//! Classical reconstruction baselines: SART, TV-regularized least squares,
//! and the PSNR metric.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::tomo::{back_project, forward_project, Sinogram};
use crate::Real;
use rand::Rng;

/// Diagonal weights below this are clamped to it when inverted.
const WEIGHT_FLOOR: Real = 1e-12;

/// Update ordering for [`sart_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SartOrdering {
    /// Simultaneous update over all rays per sweep.
    #[default]
    All,
    /// Classic angle-block sweeps, one projection at a time.
    PerAngle,
}

/// Full SART configuration; [`sart`] is the plain simultaneous variant.
#[derive(Debug, Clone)]
pub struct SartConfig {
    pub iterations: usize,
    pub relax: Real,
    pub nonneg: bool,
    pub ordering: SartOrdering,
}

impl SartConfig {
    pub fn new(iterations: usize, relax: Real, nonneg: bool) -> Self {
        SartConfig { iterations, relax, nonneg, ordering: SartOrdering::All }
    }

    fn validate(&self) -> Result<()> {
        if !(self.relax > 0.0 && self.relax <= 2.0) {
            return Err(Error::config("sart relaxation", format!("must be in (0, 2], got {}", self.relax)));
        }
        Ok(())
    }
}

/// Simultaneous algebraic reconstruction:
/// `x ← x + relax · C⁻¹ Aᵀ R⁻¹ (f − A x)` per sweep, where `R` and `C` are
/// the diagonal row and column sums of `A`.
pub fn sart(
    sino: &Sinogram,
    iterations: usize,
    relax: Real,
    x0: &Image,
    nonneg: bool,
) -> Result<Image> {
    let mut cfg = SartConfig::new(iterations, relax, nonneg);
    cfg.ordering = SartOrdering::All;
    sart_with(sino, &cfg, x0)
}

pub fn sart_with(sino: &Sinogram, cfg: &SartConfig, x0: &Image) -> Result<Image> {
    cfg.validate()?;
    let g = sino.geometry();
    if x0.size() != g.image_size() {
        return Err(Error::shape(
            "sart initial image size",
            format!("{}x{}", g.image_size().0, g.image_size().1),
            format!("{}x{}", x0.height(), x0.width()),
        ));
    }
    let (n_h, n_w) = g.image_size();

    // Row sums R = A·1 and column sums C = Aᵀ·1.
    let ones_image = Image::constant(n_h, n_w, 1.0);
    let row_sums = forward_project(&ones_image, g)?;
    let ones_sino = Sinogram::from_vec(g.clone(), vec![1.0; g.n_theta() * g.n_d()])?;
    let col_sums = back_project(&ones_sino);

    let mut x = x0.clone();
    match cfg.ordering {
        SartOrdering::All => {
            for _ in 0..cfg.iterations {
                let fx = forward_project(&x, g)?;
                let mut weighted = sino.clone();
                for ((w, &fxv), &r) in weighted
                    .values_mut()
                    .iter_mut()
                    .zip(fx.values())
                    .zip(row_sums.values())
                {
                    *w = (*w - fxv) / r.max(WEIGHT_FLOOR);
                }
                let correction = back_project(&weighted);
                for ((xv, &cv), &col) in x
                    .data_mut()
                    .iter_mut()
                    .zip(correction.data())
                    .zip(col_sums.data())
                {
                    *xv += cfg.relax * cv / col.max(WEIGHT_FLOOR);
                }
                if cfg.nonneg {
                    x = x.clamp(0.0, Real::INFINITY);
                }
            }
        }
        SartOrdering::PerAngle => {
            // Per-block column sums: Aᵀ_block · 1.
            let block_cols: Vec<Image> = (0..g.n_theta())
                .map(|a| {
                    let mut vals = vec![0.0; g.n_theta() * g.n_d()];
                    vals[a * g.n_d()..(a + 1) * g.n_d()].fill(1.0);
                    back_project(&Sinogram::from_vec(g.clone(), vals).expect("consistent"))
                })
                .collect();
            for _ in 0..cfg.iterations {
                for a in 0..g.n_theta() {
                    let fx = forward_project(&x, g)?;
                    let mut vals = vec![0.0; g.n_theta() * g.n_d()];
                    for d in 0..g.n_d() {
                        let idx = a * g.n_d() + d;
                        let r = row_sums.values()[idx].max(WEIGHT_FLOOR);
                        vals[idx] = (sino.values()[idx] - fx.values()[idx]) / r;
                    }
                    let correction = back_project(&Sinogram::from_vec(g.clone(), vals)?);
                    for ((xv, &cv), &col) in x
                        .data_mut()
                        .iter_mut()
                        .zip(correction.data())
                        .zip(block_cols[a].data())
                    {
                        *xv += cfg.relax * cv / col.max(WEIGHT_FLOOR);
                    }
                }
                if cfg.nonneg {
                    x = x.clamp(0.0, Real::INFINITY);
                }
            }
        }
    }
    Ok(x)
}

/// Forward-difference gradient with Neumann boundary (last row/column
/// differences are zero).
pub(crate) fn image_gradient(x: &Image) -> (Image, Image) {
    let (h, w) = x.size();
    let mut gx = Image::zeros(h, w);
    let mut gy = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                gx.set(r, c, x.get(r, c + 1) - x.get(r, c));
            }
            if r + 1 < h {
                gy.set(r, c, x.get(r + 1, c) - x.get(r, c));
            }
        }
    }
    (gx, gy)
}

/// Adjoint of [`image_gradient`]: `⟨∇x, (qx, qy)⟩ = ⟨x, gradient_adjoint(qx, qy)⟩`.
pub(crate) fn gradient_adjoint(qx: &Image, qy: &Image) -> Image {
    let (h, w) = qx.size();
    let mut out = Image::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut v = 0.0;
            if c + 1 < w {
                v -= qx.get(r, c);
            }
            if c >= 1 {
                v += qx.get(r, c - 1);
            }
            if r + 1 < h {
                v -= qy.get(r, c);
            }
            if r >= 1 {
                v += qy.get(r - 1, c);
            }
            out.set(r, c, v);
        }
    }
    out
}

/// Isotropic total variation: sum of pixelwise gradient magnitudes.
pub fn tv_norm(x: &Image) -> Real {
    let (gx, gy) = image_gradient(x);
    gx.data()
        .iter()
        .zip(gy.data())
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .sum()
}

/// `½‖Ax − f‖² + λ·TV(x)`, the objective [`tv_reconstruct`] minimizes.
pub fn tv_objective(sino: &Sinogram, x: &Image, lambda: Real) -> Result<Real> {
    let res = forward_project(x, sino.geometry())?;
    let mut data = 0.0;
    for (&a, &b) in res.values().iter().zip(sino.values()) {
        data += (a - b) * (a - b);
    }
    Ok(0.5 * data + lambda * tv_norm(x))
}

/// TV reconstruction configuration. When the step sizes are left `None`
/// they are set to `1/L` with `L` a power-iteration estimate of the
/// combined operator norm `‖(A, ∇)‖`, which satisfies `σ·τ·L² <= 1`.
#[derive(Debug, Clone)]
pub struct TvConfig {
    pub lambda: Real,
    pub iterations: usize,
    pub sigma: Option<Real>,
    pub tau: Option<Real>,
}

impl TvConfig {
    pub fn new(lambda: Real, iterations: usize) -> Self {
        TvConfig { lambda, iterations, sigma: None, tau: None }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::config("tv lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::config("tv iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// Power-iteration estimate of `‖(A, ∇)‖` for the given geometry.
pub fn operator_norm_estimate(sino: &Sinogram) -> Result<Real> {
    let g = sino.geometry();
    let (h, w) = g.image_size();
    let mut stream = rng::stream(0xC0FFEE, rng::purpose::MISC);
    let mut z = Image::from_fn(h, w, |_, _| stream.random::<Real>() - 0.5);
    let mut norm_sq = 1.0;
    for _ in 0..30 {
        let az = forward_project(&z, g)?;
        let (gx, gy) = image_gradient(&z);
        let back = back_project(&az);
        let div = gradient_adjoint(&gx, &gy);
        let next = back.add(&div);
        norm_sq = next.dot(&z) / z.dot(&z).max(WEIGHT_FLOOR);
        let n = next.norm();
        if n == 0.0 {
            break;
        }
        z = next.scale(1.0 / n);
    }
    Ok(norm_sq.max(0.0).sqrt())
}

/// Approximately minimize `½‖Ax − f‖² + λ·TV(x)` by the primal-dual
/// (Chambolle-Pock) iteration. Returns the primal iterate.
pub fn tv_reconstruct(sino: &Sinogram, cfg: &TvConfig) -> Result<Image> {
    cfg.validate()?;
    let g = sino.geometry();
    let (h, w) = g.image_size();

    let (sigma, tau) = match (cfg.sigma, cfg.tau) {
        (Some(s), Some(t)) => (s, t),
        _ => {
            let l = operator_norm_estimate(sino)?.max(1e-6) * 1.02;
            (1.0 / l, 1.0 / l)
        }
    };

    let mut x = Image::zeros(h, w);
    let mut x_bar = x.clone();
    let mut p = Sinogram::zeros(g.clone());
    let mut qx = Image::zeros(h, w);
    let mut qy = Image::zeros(h, w);

    for _ in 0..cfg.iterations {
        // Dual ascent on the data term: prox of σF₁*, F₁(p) = ½‖p − f‖².
        let ax = forward_project(&x_bar, g)?;
        for ((pv, &av), &fv) in p.values_mut().iter_mut().zip(ax.values()).zip(sino.values()) {
            *pv = (*pv + sigma * (av - fv)) / (1.0 + sigma);
        }
        // Dual ascent on the TV term: project onto the λ-ball pixelwise.
        let (gx, gy) = image_gradient(&x_bar);
        for i in 0..qx.len() {
            let nx = qx.data()[i] + sigma * gx.data()[i];
            let ny = qy.data()[i] + sigma * gy.data()[i];
            let mag = (nx * nx + ny * ny).sqrt();
            let scale = if mag > cfg.lambda { cfg.lambda / mag } else { 1.0 };
            qx.data_mut()[i] = nx * scale;
            qy.data_mut()[i] = ny * scale;
        }
        // Primal descent and extrapolation.
        let back = back_project(&p);
        let div = gradient_adjoint(&qx, &qy);
        let x_new = x.axpy(-tau, &back.add(&div));
        x_bar = x_new.scale(2.0).axpy(-1.0, &x);
        x = x_new;
    }
    Ok(x)
}

/// Peak signal-to-noise ratio `10·log10(peak²/MSE)` in dB. A zero MSE is
/// reported as the `+∞` sentinel.
pub fn psnr(x: &Image, reference: &Image, peak: Real) -> Result<Real> {
    x.check_same_size(reference, "psnr input size")?;
    if !(peak > 0.0) {
        return Err(Error::config("psnr peak", format!("must be positive, got {peak}")));
    }
    let n = x.len() as Real;
    let mse: Real = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<Real>()
        / n;
    if mse == 0.0 {
        return Ok(Real::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomo::Geometry;

    #[test]
    fn psnr_identical_images_is_infinite() {
        let x = Image::constant(4, 4, 0.3);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), Real::INFINITY);
    }

    #[test]
    fn psnr_uniform_error() {
        let x = Image::constant(8, 8, 0.1);
        let r = Image::zeros(8, 8);
        let db = psnr(&x, &r, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-12, "got {db}");
    }

    #[test]
    fn psnr_checkerboard_error() {
        let x = Image::from_fn(8, 8, |r, c| if (r + c) % 2 == 0 { 0.5 } else { -0.5 });
        let r = Image::zeros(8, 8);
        let db = psnr(&x, &r, 1.0).unwrap();
        assert!((db - 10.0 * (4.0 as Real).log10()).abs() < 1e-12, "got {db}");
    }

    #[test]
    fn psnr_is_shift_invariant() {
        let x = Image::from_fn(6, 6, |r, c| (r + 2 * c) as Real / 20.0);
        let y = Image::from_fn(6, 6, |r, c| (2 * r + c) as Real / 20.0);
        let a = psnr(&x, &y, 1.0).unwrap();
        let xs = x.map(|v| v + 0.37);
        let ys = y.map(|v| v + 0.37);
        let b = psnr(&xs, &ys, 1.0).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_size_mismatch() {
        assert!(psnr(&Image::zeros(4, 4), &Image::zeros(4, 5), 1.0).is_err());
    }

    #[test]
    fn sart_rejects_bad_relax() {
        let g = Geometry::few_view(4, (8, 8)).unwrap();
        let sino = Sinogram::zeros(g);
        assert!(sart(&sino, 1, 0.0, &Image::zeros(8, 8), false).is_err());
        assert!(sart(&sino, 1, 2.5, &Image::zeros(8, 8), false).is_err());
    }

    #[test]
    fn sart_zero_sinogram_stays_zero() {
        let g = Geometry::few_view(6, (8, 8)).unwrap();
        let sino = Sinogram::zeros(g);
        let x = sart(&sino, 3, 1.0, &Image::zeros(8, 8), false).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_adjoint_identity() {
        let mut stream = rng::stream(11, rng::purpose::MISC);
        let x = Image::from_fn(7, 9, |_, _| stream.random::<Real>() - 0.5);
        let qx = Image::from_fn(7, 9, |_, _| stream.random::<Real>() - 0.5);
        let qy = Image::from_fn(7, 9, |_, _| stream.random::<Real>() - 0.5);
        let (gx, gy) = image_gradient(&x);
        let lhs = gx.dot(&qx) + gy.dot(&qy);
        let rhs = x.dot(&gradient_adjoint(&qx, &qy));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn tv_norm_of_constant_is_zero() {
        assert_eq!(tv_norm(&Image::constant(9, 9, 0.4)), 0.0);
    }
}
