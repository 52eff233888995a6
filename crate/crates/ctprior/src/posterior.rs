//! Posterior exploration: Langevin sampling of `D + R`, streaming
//! mean/variance maps, the corruption-variance experiment, and the
//! rotated-denoising out-of-distribution sweep.

use crate::classical::psnr;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Regularizer;
use crate::rng;
use crate::sampler::{ula_step, SamplerConfig};
use crate::solve::{map_reconstruct, DataTerm, SolverConfig};
use crate::tomo::{add_noise, forward_project, Geometry};
use crate::Real;
use rand_distr::{Distribution, Normal};

/// Streaming mean and variance of an image-valued sample sequence
/// (single-pass Welford update).
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: u64,
    mean: Image,
    m2: Image,
}

impl MomentAccumulator {
    pub fn new(height: usize, width: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: Image::zeros(height, width),
            m2: Image::zeros(height, width),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &Image) -> Result<()> {
        x.check_same_size(&self.mean, "accumulator sample size")?;
        self.count += 1;
        let n = self.count as Real;
        for ((m, s), &v) in self.mean.data_mut().iter_mut().zip(self.m2.data_mut()).zip(x.data()) {
            let delta = v - *m;
            *m += delta / n;
            let delta2 = v - *m;
            *s += delta * delta2;
        }
        Ok(())
    }

    /// Combine two accumulators (the parallel Welford rule); associative
    /// and order-independent up to rounding.
    pub fn merge(&self, other: &MomentAccumulator) -> Result<MomentAccumulator> {
        self.mean.check_same_size(&other.mean, "accumulator merge size")?;
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as Real, other.count as Real);
        let n = na + nb;
        let mut mean = Image::zeros(self.mean.height(), self.mean.width());
        let mut m2 = Image::zeros(self.mean.height(), self.mean.width());
        for i in 0..mean.len() {
            let d = other.mean.data()[i] - self.mean.data()[i];
            mean.data_mut()[i] = self.mean.data()[i] + d * nb / n;
            m2.data_mut()[i] = self.m2.data()[i] + other.m2.data()[i] + d * d * na * nb / n;
        }
        Ok(MomentAccumulator { count: self.count + other.count, mean, m2 })
    }

    pub fn mean(&self) -> &Image {
        &self.mean
    }

    /// Sample variance `M2/(count − 1)`; `None` until two samples are in.
    pub fn variance(&self) -> Option<Image> {
        if self.count < 2 {
            return None;
        }
        let denom = (self.count - 1) as Real;
        Some(self.m2.map(|v| v / denom))
    }
}

/// Outcome of a posterior sampling run. `partial` is set when the chain
/// diverged before the sample budget was reached; the moments then cover
/// what was accumulated so far.
#[derive(Debug, Clone)]
pub struct PosteriorRun {
    pub moments: MomentAccumulator,
    pub partial: bool,
    pub diverged_at: Option<usize>,
}

/// Langevin-sample the posterior energy `D(x, f) + R(x)`.
///
/// Runs `burn_in + n_samples·stride` steps of ULA with drift
/// `∇₁D + ∇₁R`, feeding every `stride`-th post-burn-in state to the
/// accumulator and to `tap`. The chain starts at the data term's default
/// start (FBP / the observation). `cfg.steps` is ignored; the budget comes
/// from the explicit arguments.
pub fn posterior_sample<R, T>(
    data: &DataTerm,
    reg: &R,
    cfg: &SamplerConfig,
    burn_in: usize,
    n_samples: usize,
    stride: usize,
    seed: u64,
    mut tap: T,
) -> Result<PosteriorRun>
where
    R: Regularizer,
    T: FnMut(usize, &Image),
{
    cfg.validate()?;
    if n_samples < 2 {
        return Err(Error::config("posterior sample count", "must be >= 2"));
    }
    let stride = stride.max(1);
    let (h, w) = data.image_size();
    let mut moments = MomentAccumulator::new(h, w);
    let mut x = data.default_x0()?;
    let mut stream = rng::stream(seed, rng::purpose::POSTERIOR);
    let grad = |x: &Image| -> Result<Image> { Ok(data.grad(x)?.add(&reg.grad(x)?)) };

    let total = burn_in + n_samples * stride;
    for k in 1..=total {
        match ula_step(&x, grad, cfg, &mut stream) {
            Ok(next) => x = next,
            Err(Error::NonFinite { .. }) => {
                log::warn!("posterior chain diverged at step {k}; returning partial moments");
                return Ok(PosteriorRun { moments, partial: true, diverged_at: Some(k) });
            }
            Err(e) => return Err(e),
        }
        if k > burn_in && (k - burn_in) % stride == 0 {
            moments.push(&x)?;
            tap(moments.count() as usize, &x);
        }
    }
    Ok(PosteriorRun { moments, partial: false, diverged_at: None })
}

/// A few-view acquisition setup for the posterior experiments: geometry,
/// relative noise level, and the data-term variance.
#[derive(Debug, Clone)]
pub struct CtProblem {
    pub geometry: Geometry,
    pub noise_level: Real,
    pub noise_seed: u64,
    pub sigma2: Real,
}

impl CtProblem {
    /// Project `x` and apply measurement noise, returning the data term.
    pub fn observe(&self, x: &Image) -> Result<DataTerm> {
        let sino = forward_project(x, &self.geometry)?;
        let noisy = add_noise(&sino, self.noise_level, self.noise_seed)?;
        DataTerm::tomographic(noisy, self.sigma2)
    }
}

/// Mean posterior variance inside/outside the corruption mask for the
/// clean and the corrupted scan. Inside statistics are `None` for an empty
/// mask.
#[derive(Debug, Clone)]
pub struct CorruptionReport {
    pub clean_inside: Option<Real>,
    pub clean_outside: Option<Real>,
    pub corrupted_inside: Option<Real>,
    pub corrupted_outside: Option<Real>,
    pub n_samples: u64,
    pub clean_partial: bool,
    pub corrupted_partial: bool,
}

impl CorruptionReport {
    pub fn to_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "scan,region,mean_variance")?;
        let cell = |v: Option<Real>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
        writeln!(w, "clean,inside,{}", cell(self.clean_inside))?;
        writeln!(w, "clean,outside,{}", cell(self.clean_outside))?;
        writeln!(w, "corrupted,inside,{}", cell(self.corrupted_inside))?;
        writeln!(w, "corrupted,outside,{}", cell(self.corrupted_outside))?;
        Ok(())
    }
}

fn masked_mean(map: &Image, mask: &Image, inside: bool) -> Option<Real> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&v, &m) in map.data().iter().zip(mask.data()) {
        if (m > 0.5) == inside {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as Real)
}

/// Blend `overlay` into `reference` where the mask is set (opaque
/// replacement), then compare posterior variance maps of the clean and
/// corrupted few-view scans.
#[allow(clippy::too_many_arguments)]
pub fn corruption_experiment<R: Regularizer>(
    reference: &Image,
    overlay: &Image,
    mask: &Image,
    problem: &CtProblem,
    reg: &R,
    cfg: &SamplerConfig,
    burn_in: usize,
    n_samples: usize,
    stride: usize,
    seed: u64,
) -> Result<(CorruptionReport, Image, Image)> {
    reference.check_same_size(overlay, "corruption overlay size")?;
    reference.check_same_size(mask, "corruption mask size")?;

    let mut corrupted = reference.clone();
    for (v, (&o, &m)) in corrupted
        .data_mut()
        .iter_mut()
        .zip(overlay.data().iter().zip(mask.data()))
    {
        if m > 0.5 {
            *v = o;
        }
    }

    let run = |scan: &Image, run_seed: u64| -> Result<PosteriorRun> {
        let data = problem.observe(scan)?;
        posterior_sample(&data, reg, cfg, burn_in, n_samples, stride, run_seed, |_, _| {})
    };
    let clean = run(reference, seed)?;
    let dirty = run(&corrupted, seed.wrapping_add(1))?;

    let clean_var = clean
        .moments
        .variance()
        .ok_or_else(|| Error::config("posterior samples", "fewer than two samples accumulated"))?;
    let dirty_var = dirty
        .moments
        .variance()
        .ok_or_else(|| Error::config("posterior samples", "fewer than two samples accumulated"))?;

    let report = CorruptionReport {
        clean_inside: masked_mean(&clean_var, mask, true),
        clean_outside: masked_mean(&clean_var, mask, false),
        corrupted_inside: masked_mean(&dirty_var, mask, true),
        corrupted_outside: masked_mean(&dirty_var, mask, false),
        n_samples: clean.moments.count().min(dirty.moments.count()),
        clean_partial: clean.partial,
        corrupted_partial: dirty.partial,
    };
    Ok((report, clean_var, dirty_var))
}

/// Rotate about the image center with bilinear interpolation;
/// out-of-bounds reads are zero.
///
/// The direction is aligned with the projector's angle convention:
/// projecting `rotate(x, θ)` at angle 0 agrees with projecting `x` at
/// angle θ. Sample coordinates within 1e-9 of the pixel lattice are
/// snapped onto it, so right-angle rotations are exact pixel permutations.
pub fn rotate(x: &Image, degrees: Real) -> Image {
    let (h, w) = x.size();
    let cy = (h as Real - 1.0) / 2.0;
    let cx = (w as Real - 1.0) / 2.0;
    let rad = degrees * crate::PI / 180.0;
    let (sin, cos) = (rad.sin(), rad.cos());
    let snap = |v: Real| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    Image::from_fn(h, w, |r, c| {
        let xo = c as Real - cx;
        let yo = r as Real - cy;
        let xi = snap(cos * xo - sin * yo + cx);
        let yi = snap(sin * xo + cos * yo + cy);
        let c0 = xi.floor();
        let r0 = yi.floor();
        let fc = xi - c0;
        let fr = yi - r0;
        let mut acc = 0.0;
        for (dr, wr) in [(0isize, 1.0 - fr), (1, fr)] {
            if wr == 0.0 {
                continue;
            }
            let rr = r0 as isize + dr;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for (dc, wc) in [(0isize, 1.0 - fc), (1, fc)] {
                if wc == 0.0 {
                    continue;
                }
                let cc = c0 as isize + dc;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                acc += wr * wc * x.get(rr as usize, cc as usize);
            }
        }
        acc
    })
}

/// One `(κ, mean PSNR)` row of the out-of-distribution sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub kappa_degrees: Real,
    pub mean_psnr: Real,
}

/// Rotated-denoising sweep: for each angle κ corrupt
/// `x_κ = rot_κ(x) + η` with relative Gaussian noise, MAP-denoise with the
/// identity operator, and record PSNR against `rot_κ(x)`.
///
/// The data-term variance is the true noise variance (`1` in the noiseless
/// degenerate case).
pub fn ood_denoise_sweep<R: Regularizer>(
    dataset: &[Image],
    reg: &R,
    kappas: &[Real],
    noise_level: Real,
    solver: &SolverConfig,
    seed: u64,
) -> Result<Vec<OodRow>> {
    if dataset.is_empty() {
        return Err(Error::config("dataset", "must contain at least one image"));
    }
    if noise_level < 0.0 {
        return Err(Error::config("noise level", "must be >= 0"));
    }
    let mut rows = Vec::with_capacity(kappas.len());
    for (ki, &kappa) in kappas.iter().enumerate() {
        let mut psnr_sum = 0.0;
        let mut finite = true;
        for (ii, x) in dataset.iter().enumerate() {
            let target = rotate(x, kappa);
            let sigma = noise_level * target.max().max(0.0);
            let mut noisy = target.clone();
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("positive std");
                let mut stream = rng::derive(seed, rng::purpose::NOISE, ki as u64, ii as u64);
                for v in noisy.data_mut() {
                    *v += normal.sample(&mut stream);
                }
            }
            let sigma2 = if sigma > 0.0 { sigma * sigma } else { 1.0 };
            let data = DataTerm::identity(noisy, sigma2)?;
            let (recon, _) = map_reconstruct(&data, reg, solver, None)?;
            let p = psnr(&recon, &target, 1.0)?;
            if p.is_finite() {
                psnr_sum += p;
            } else {
                finite = false;
            }
        }
        let mean = if finite {
            psnr_sum / dataset.len() as Real
        } else {
            Real::INFINITY
        };
        rows.push(OodRow { kappa_degrees: kappa, mean_psnr: mean });
    }
    Ok(rows)
}

/// Write the sweep as CSV (`kappa_degrees, mean_psnr`).
pub fn ood_rows_to_csv(rows: &[OodRow], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "kappa_degrees,mean_psnr")?;
    for row in rows {
        writeln!(w, "{},{}", row.kappa_degrees, row.mean_psnr)?;
    }
    Ok(())
}
