//! Parallel-beam acquisition: the linear projection operator, its exact
//! adjoint, Gaussian measurement noise, and filtered backprojection.
//!
//! Conventions (shared by every operation here and documented once):
//!
//! * Pixel `(r, c)` sits at centered coordinates `x = c − (n_w−1)/2`,
//!   `y = r − (n_h−1)/2`; the image origin is the grid center.
//! * For angle `θ` the detector axis is `u(θ) = (cos θ, sin θ)` and rays
//!   travel along `v(θ) = (−sin θ, cos θ)`; at `θ = 0` rays run down image
//!   columns and the detector spans `x`.
//! * Detector bin `i` has offset `s_i = (i − (n_d−1)/2)·det_spacing` from
//!   the detector-array center.
//!
//! Line integrals use Joseph's method: unit steps along the ray's dominant
//! axis, linear interpolation across the other axis, scaled by the step
//! length. The integrals are in pixel-length units, so a unit disc of
//! radius `r` projects to a central value of about `2r`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::Real;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Acquisition geometry: projection angles, detector layout and the image
/// grid the rays traverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    angles: Vec<Real>,
    n_d: usize,
    det_spacing: Real,
    image_size: (usize, usize),
}

impl Geometry {
    /// Angles must be strictly increasing within `[0, π]`. Logs a warning
    /// when the detector array does not cover the image diagonal.
    pub fn new(
        angles: Vec<Real>,
        n_d: usize,
        det_spacing: Real,
        image_size: (usize, usize),
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::config("geometry", "at least one projection angle is required"));
        }
        if n_d == 0 {
            return Err(Error::config("geometry", "detector count must be >= 1"));
        }
        if !(det_spacing > 0.0) {
            return Err(Error::config("geometry", format!("detector spacing must be positive, got {det_spacing}")));
        }
        for pair in angles.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::config(
                    "geometry",
                    format!("angles must be strictly increasing, got {} after {}", pair[1], pair[0]),
                ));
            }
        }
        let lo = *angles.first().unwrap();
        let hi = *angles.last().unwrap();
        if lo < 0.0 || hi > crate::PI + 1e-12 {
            return Err(Error::config(
                "geometry",
                format!("angles must lie in [0, pi], got range [{lo}, {hi}]"),
            ));
        }
        let g = Geometry { angles, n_d, det_spacing, image_size };
        if !g.covers_image() {
            log::warn!(
                "detector array ({} bins x {} spacing) does not cover the image diagonal {:.1}; \
                 outer image regions will be invisible to some projections",
                g.n_d,
                g.det_spacing,
                g.image_diagonal(),
            );
        }
        Ok(g)
    }

    /// Uniformly spaced angles over `[start, stop]`; with
    /// `include_endpoint = false` the spacing is `(stop − start)/n_theta`
    /// and `stop` itself is excluded (the half-circle convention).
    pub fn with_span(
        start: Real,
        stop: Real,
        n_theta: usize,
        include_endpoint: bool,
        n_d: usize,
        det_spacing: Real,
        image_size: (usize, usize),
    ) -> Result<Self> {
        if n_theta == 0 {
            return Err(Error::config("geometry", "n_theta must be >= 1"));
        }
        if stop <= start {
            return Err(Error::config("geometry", "angle span must be non-empty"));
        }
        let denom = if include_endpoint { (n_theta - 1).max(1) } else { n_theta };
        let step = (stop - start) / denom as Real;
        let angles = (0..n_theta).map(|i| start + step * i as Real).collect();
        Geometry::new(angles, n_d, det_spacing, image_size)
    }

    /// Detector count covering the image diagonal at unit spacing.
    pub fn default_detector_count(image_size: (usize, usize)) -> usize {
        let (h, w) = image_size;
        ((h * h + w * w) as Real).sqrt().ceil() as usize
    }

    /// Few-view setup: `n_theta` angles uniform over the half-circle
    /// `[0, π)`, detector covering the diagonal.
    pub fn few_view(n_theta: usize, image_size: (usize, usize)) -> Result<Self> {
        let n_d = Self::default_detector_count(image_size);
        Geometry::with_span(0.0, crate::PI, n_theta, false, n_d, 1.0, image_size)
    }

    /// Limited-angle setup: `n_theta` angles uniform over the quarter-circle
    /// `[0, π/2]`, endpoint included.
    pub fn limited_angle(n_theta: usize, image_size: (usize, usize)) -> Result<Self> {
        let n_d = Self::default_detector_count(image_size);
        Geometry::with_span(0.0, crate::PI / 2.0, n_theta, true, n_d, 1.0, image_size)
    }

    pub fn angles(&self) -> &[Real] {
        &self.angles
    }

    pub fn n_theta(&self) -> usize {
        self.angles.len()
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn det_spacing(&self) -> Real {
        self.det_spacing
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn image_diagonal(&self) -> Real {
        let (h, w) = self.image_size;
        ((h * h + w * w) as Real).sqrt()
    }

    pub fn covers_image(&self) -> bool {
        self.n_d as Real * self.det_spacing >= self.image_diagonal()
    }

    /// Detector offset of bin `i` from the array center.
    #[inline]
    fn det_offset(&self, i: usize) -> Real {
        (i as Real - (self.n_d as Real - 1.0) / 2.0) * self.det_spacing
    }
}

/// Projection data indexed `(angle, detector)`, row-major by angle.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    values: Vec<Real>,
}

impl Sinogram {
    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.n_theta() * geometry.n_d();
        Sinogram { geometry, values: vec![0.0; n] }
    }

    pub fn from_vec(geometry: Geometry, values: Vec<Real>) -> Result<Self> {
        let n = geometry.n_theta() * geometry.n_d();
        if values.len() != n {
            return Err(Error::shape("sinogram value count", n, values.len()));
        }
        Ok(Sinogram { geometry, values })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn values(&self) -> &[Real] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Real] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, angle: usize, det: usize) -> Real {
        self.values[angle * self.geometry.n_d() + det]
    }

    pub fn row(&self, angle: usize) -> &[Real] {
        let n_d = self.geometry.n_d();
        &self.values[angle * n_d..(angle + 1) * n_d]
    }

    pub fn max(&self) -> Real {
        self.values.iter().copied().fold(Real::NEG_INFINITY, Real::max)
    }

    pub fn dot(&self, other: &Sinogram) -> Real {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> Real {
        self.dot(self).sqrt()
    }
}

/// One projection row by Joseph's method.
fn project_angle(image: &Image, g: &Geometry, theta: Real) -> Vec<Real> {
    let (n_h, n_w) = g.image_size;
    let cy = (n_h as Real - 1.0) / 2.0;
    let cx = (n_w as Real - 1.0) / 2.0;
    let (ux, uy) = (theta.cos(), theta.sin());
    let (vx, vy) = (-uy, ux);
    let mut row = vec![0.0; g.n_d];

    if vx.abs() >= vy.abs() {
        // March across columns, interpolate between rows.
        let slope = vy / vx;
        let inv = 1.0 / vx.abs();
        for (i, out) in row.iter_mut().enumerate() {
            let s = g.det_offset(i);
            // y as a function of centered x along the ray
            let y0 = s * uy - s * ux * slope;
            let mut acc = 0.0;
            let mut r = y0 + (0.0 - cx) * slope + cy;
            for c in 0..n_w {
                let r0 = r.floor();
                let fr = r - r0;
                let r0 = r0 as isize;
                if r0 >= 0 && (r0 as usize) < n_h {
                    acc += (1.0 - fr) * image.get(r0 as usize, c);
                }
                if fr > 0.0 && r0 + 1 >= 0 && ((r0 + 1) as usize) < n_h {
                    acc += fr * image.get((r0 + 1) as usize, c);
                }
                r += slope;
            }
            *out = acc * inv;
        }
    } else {
        // March across rows, interpolate between columns.
        let slope = vx / vy;
        let inv = 1.0 / vy.abs();
        for (i, out) in row.iter_mut().enumerate() {
            let s = g.det_offset(i);
            let x0 = s * ux - s * uy * slope;
            let mut acc = 0.0;
            let mut x = x0 + (0.0 - cy) * slope + cx;
            for rr in 0..n_h {
                let c0 = x.floor();
                let fc = x - c0;
                let c0 = c0 as isize;
                if c0 >= 0 && (c0 as usize) < n_w {
                    acc += (1.0 - fc) * image.get(rr, c0 as usize);
                }
                if fc > 0.0 && c0 + 1 >= 0 && ((c0 + 1) as usize) < n_w {
                    acc += fc * image.get(rr, (c0 + 1) as usize);
                }
                x += slope;
            }
            *out = acc * inv;
        }
    }
    row
}

/// Scatter one sinogram row back along its rays (exact transpose of
/// [`project_angle`]).
fn backproject_angle(acc: &mut Image, row: &[Real], g: &Geometry, theta: Real) {
    let (n_h, n_w) = g.image_size;
    let cy = (n_h as Real - 1.0) / 2.0;
    let cx = (n_w as Real - 1.0) / 2.0;
    let (ux, uy) = (theta.cos(), theta.sin());
    let (vx, vy) = (-uy, ux);

    if vx.abs() >= vy.abs() {
        let slope = vy / vx;
        let inv = 1.0 / vx.abs();
        for (i, &val) in row.iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            let v = val * inv;
            let s = g.det_offset(i);
            let y0 = s * uy - s * ux * slope;
            let mut r = y0 + (0.0 - cx) * slope + cy;
            for c in 0..n_w {
                let r0 = r.floor();
                let fr = r - r0;
                let r0 = r0 as isize;
                if r0 >= 0 && (r0 as usize) < n_h {
                    let p = r0 as usize;
                    acc.set(p, c, acc.get(p, c) + (1.0 - fr) * v);
                }
                if fr > 0.0 && r0 + 1 >= 0 && ((r0 + 1) as usize) < n_h {
                    let p = (r0 + 1) as usize;
                    acc.set(p, c, acc.get(p, c) + fr * v);
                }
                r += slope;
            }
        }
    } else {
        let slope = vx / vy;
        let inv = 1.0 / vy.abs();
        for (i, &val) in row.iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            let v = val * inv;
            let s = g.det_offset(i);
            let x0 = s * ux - s * uy * slope;
            let mut x = x0 + (0.0 - cy) * slope + cx;
            for rr in 0..n_h {
                let c0 = x.floor();
                let fc = x - c0;
                let c0 = c0 as isize;
                if c0 >= 0 && (c0 as usize) < n_w {
                    let p = c0 as usize;
                    acc.set(rr, p, acc.get(rr, p) + (1.0 - fc) * v);
                }
                if fc > 0.0 && c0 + 1 >= 0 && ((c0 + 1) as usize) < n_w {
                    let p = (c0 + 1) as usize;
                    acc.set(rr, p, acc.get(rr, p) + fc * v);
                }
                x += slope;
            }
        }
    }
}

/// Angle-block size for the parallel adjoint. Fixed so that results do not
/// depend on the thread count.
const ADJOINT_CHUNK: usize = 16;

/// Apply the acquisition operator `A`: line integrals for every
/// (angle, detector) pair.
pub fn forward_project(image: &Image, g: &Geometry) -> Result<Sinogram> {
    if image.size() != g.image_size {
        return Err(Error::shape(
            "projection input size",
            format!("{}x{}", g.image_size.0, g.image_size.1),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    let rows: Vec<Vec<Real>> = g
        .angles
        .par_iter()
        .map(|&theta| project_angle(image, g, theta))
        .collect();
    let mut values = Vec::with_capacity(g.n_theta() * g.n_d());
    for row in rows {
        values.extend(row);
    }
    Sinogram::from_vec(g.clone(), values)
}

/// Apply the exact adjoint `Aᵀ`: transpose of [`forward_project`]'s
/// interpolation weights.
pub fn back_project(sino: &Sinogram) -> Image {
    let g = &sino.geometry;
    let (n_h, n_w) = g.image_size;
    let partials: Vec<Image> = (0..g.n_theta())
        .collect::<Vec<_>>()
        .par_chunks(ADJOINT_CHUNK)
        .map(|chunk| {
            let mut acc = Image::zeros(n_h, n_w);
            for &a in chunk {
                backproject_angle(&mut acc, sino.row(a), g, g.angles[a]);
            }
            acc
        })
        .collect();
    let mut out = Image::zeros(n_h, n_w);
    for p in partials {
        out = out.add(&p);
    }
    out
}

/// Reconstruction filter for [`fbp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbpFilter {
    /// The `|ω|` ramp discretized on a zero-padded grid.
    RamLak,
    /// No filtering: plain (smeared) backprojection.
    None,
}

/// Filtered backprojection: Ram-Lak filter each detector row in the
/// frequency domain, backproject with pixel-driven linear interpolation,
/// scale by `π/n_θ`.
///
/// Assumes approximately uniform angles over the half-circle; logs a
/// warning when the spacing is visibly non-uniform.
pub fn fbp(sino: &Sinogram, filter: FbpFilter) -> Image {
    let g = &sino.geometry;
    let n_d = g.n_d;
    let n_theta = g.n_theta();

    if n_theta >= 3 {
        let steps: Vec<Real> = g.angles.windows(2).map(|w| w[1] - w[0]).collect();
        let min = steps.iter().copied().fold(Real::INFINITY, Real::min);
        let max = steps.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        if max > 1.5 * min {
            log::warn!("fbp: projection angles are not approximately uniform (spacing {min:.4}..{max:.4})");
        }
    }

    let filtered: Vec<Vec<Real>> = match filter {
        FbpFilter::None => (0..n_theta).map(|a| sino.row(a).to_vec()).collect(),
        FbpFilter::RamLak => {
            let m = (2 * n_d).next_power_of_two();
            let mut planner = FftPlanner::<Real>::new();
            let fwd = planner.plan_fft_forward(m);
            let inv = planner.plan_fft_inverse(m);
            // |ω| in cycles per physical detector unit.
            let ramp: Vec<Real> = (0..m)
                .map(|k| k.min(m - k) as Real / (m as Real * g.det_spacing))
                .collect();
            (0..n_theta)
                .map(|a| {
                    let mut buf: Vec<Complex<Real>> = sino
                        .row(a)
                        .iter()
                        .map(|&v| Complex::new(v, 0.0))
                        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
                        .take(m)
                        .collect();
                    fwd.process(&mut buf);
                    for (b, &h) in buf.iter_mut().zip(&ramp) {
                        *b *= h;
                    }
                    inv.process(&mut buf);
                    buf[..n_d].iter().map(|c| c.re / m as Real).collect()
                })
                .collect()
        }
    };

    let (n_h, n_w) = g.image_size;
    let cy = (n_h as Real - 1.0) / 2.0;
    let cx = (n_w as Real - 1.0) / 2.0;
    let scale = crate::PI / n_theta as Real;
    let trig: Vec<(Real, Real)> = g.angles.iter().map(|&t| (t.cos(), t.sin())).collect();
    let det_center = (n_d as Real - 1.0) / 2.0;

    let rows: Vec<Vec<Real>> = (0..n_h)
        .into_par_iter()
        .map(|r| {
            let y = r as Real - cy;
            let mut out_row = vec![0.0; n_w];
            for (c, out) in out_row.iter_mut().enumerate() {
                let x = c as Real - cx;
                let mut acc = 0.0;
                for (row, &(ct, st)) in filtered.iter().zip(&trig) {
                    let s = x * ct + y * st;
                    let d = s / g.det_spacing + det_center;
                    let d0 = d.floor();
                    let fd = d - d0;
                    let d0 = d0 as isize;
                    if d0 >= 0 && (d0 as usize) < n_d {
                        acc += (1.0 - fd) * row[d0 as usize];
                    }
                    if fd > 0.0 && d0 + 1 >= 0 && ((d0 + 1) as usize) < n_d {
                        acc += fd * row[(d0 + 1) as usize];
                    }
                }
                *out = acc * scale;
            }
            out_row
        })
        .collect();

    let mut data = Vec::with_capacity(n_h * n_w);
    for row in rows {
        data.extend(row);
    }
    Image::from_vec(n_h, n_w, data).expect("consistent size")
}

/// Add i.i.d. zero-mean Gaussian noise with `σ = level · max(values)`.
/// Deterministic per seed; `level = 0` returns the input unchanged.
pub fn add_noise(sino: &Sinogram, level: Real, seed: u64) -> Result<Sinogram> {
    if level < 0.0 {
        return Err(Error::config("noise level", format!("must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(sino.clone());
    }
    let sigma = level * sino.max();
    let mut out = sino.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("positive std");
    let mut stream = rng::stream(seed, rng::purpose::NOISE);
    for v in out.values_mut() {
        *v += normal.sample(&mut stream);
    }
    Ok(out)
}
