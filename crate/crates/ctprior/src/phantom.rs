//! Synthetic images and datasets.
//!
//! * `shepp-logan` — the modified ten-ellipse head phantom, supersampled.
//! * `discs` — random soft-edged discs; the desk-scale training
//!   distribution.
//! * `grid-overlay` — axis-aligned grid lines, the stand-in for the grid
//!   texture used in the corruption experiment.
//! * `blobs` — smooth anisotropic Gaussian bumps plus axis-aligned
//!   rectangles; a stand-in for natural scenes with oriented structure,
//!   used as overlay material and as a rotation-sensitive training
//!   distribution.
//!
//! All generators are deterministic per seed and produce values in [0, 1].

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::Real;
use rand::Rng;

/// Supersampling factor per axis for ellipse rendering.
const SUPERSAMPLE: usize = 4;

/// Minimum supported phantom size.
const MIN_SIZE: usize = 16;

/// Phantom/dataset kinds understood by [`make_phantom`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    SheppLogan,
    Discs,
    GridOverlay,
    Blobs,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp-logan" => Ok(PhantomKind::SheppLogan),
            "discs" => Ok(PhantomKind::Discs),
            "grid-overlay" => Ok(PhantomKind::GridOverlay),
            "blobs" => Ok(PhantomKind::Blobs),
            other => Err(Error::config(
                "phantom kind",
                format!("unknown kind '{other}' (expected shepp-logan, discs, grid-overlay or blobs)"),
            )),
        }
    }
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_SIZE {
        return Err(Error::config(
            "phantom size",
            format!("must be >= {MIN_SIZE}, got {size}"),
        ));
    }
    Ok(())
}

/// Generate one image of the requested kind. The seed matters for the
/// random kinds and is ignored by `shepp-logan`.
pub fn make_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<Image> {
    check_size(size)?;
    Ok(match kind {
        PhantomKind::SheppLogan => shepp_logan(size),
        PhantomKind::Discs => discs_image(size, &mut rng::derive(seed, rng::purpose::PHANTOM, 0, 0)),
        PhantomKind::GridOverlay => grid_overlay(size, &mut rng::derive(seed, rng::purpose::PHANTOM, 1, 0)),
        PhantomKind::Blobs => blobs_image(size, &mut rng::derive(seed, rng::purpose::PHANTOM, 2, 0)),
    })
}

/// Generate a dataset of `count` images of the given kind.
pub fn make_dataset(kind: PhantomKind, size: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    check_size(size)?;
    (0..count)
        .map(|i| match kind {
            PhantomKind::SheppLogan => Ok(shepp_logan(size)),
            PhantomKind::Discs => Ok(discs_image(
                size,
                &mut rng::derive(seed, rng::purpose::PHANTOM, 0, i as u64),
            )),
            PhantomKind::GridOverlay => Ok(grid_overlay(
                size,
                &mut rng::derive(seed, rng::purpose::PHANTOM, 1, i as u64),
            )),
            PhantomKind::Blobs => Ok(blobs_image(
                size,
                &mut rng::derive(seed, rng::purpose::PHANTOM, 2, i as u64),
            )),
        })
        .collect()
}

/// Random soft-edged discs (dataset convenience wrapper).
pub fn discs_dataset(size: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    make_dataset(PhantomKind::Discs, size, count, seed)
}

/// Anisotropic blobs dataset (rotation-sensitive statistics).
pub fn blobs_dataset(size: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    make_dataset(PhantomKind::Blobs, size, count, seed)
}

/// Modified Shepp-Logan ellipse table:
/// (intensity, a, b, x0, y0, phi in degrees), coordinates in [-1, 1] with
/// y pointing up.
const SHEPP_LOGAN: [(Real, Real, Real, Real, Real, Real); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
];

/// The modified Shepp-Logan head phantom: background 0, skull value 1,
/// interior structures in between. Supersampled for smooth edges.
pub fn shepp_logan(size: usize) -> Image {
    let trig: Vec<(Real, Real)> = SHEPP_LOGAN
        .iter()
        .map(|&(_, _, _, _, _, phi)| {
            let rad = phi * crate::PI / 180.0;
            (rad.cos(), rad.sin())
        })
        .collect();
    let sub = SUPERSAMPLE as Real;
    let inv_n = 1.0 / (sub * sub);
    Image::from_fn(size, size, |r, c| {
        let mut acc = 0.0;
        for sr in 0..SUPERSAMPLE {
            for sc in 0..SUPERSAMPLE {
                // Sample position in [-1, 1], y up.
                let x = ((c as Real + (sc as Real + 0.5) / sub) / size as Real) * 2.0 - 1.0;
                let y = 1.0 - ((r as Real + (sr as Real + 0.5) / sub) / size as Real) * 2.0;
                let mut v = 0.0;
                for (e, &(ct, st)) in SHEPP_LOGAN.iter().zip(&trig) {
                    let (intensity, a, b, x0, y0, _) = *e;
                    let dx = x - x0;
                    let dy = y - y0;
                    let xr = ct * dx + st * dy;
                    let yr = -st * dx + ct * dy;
                    if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                        v += intensity;
                    }
                }
                acc += v;
            }
        }
        (acc * inv_n).clamp(0.0, 1.0)
    })
}

/// Smoothstep edge profile over one pixel.
fn soft_edge(signed_distance: Real) -> Real {
    // 1 inside, 0 outside, smooth over [-0.5, 0.5].
    let t = (0.5 - signed_distance).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// One random discs image: 3-8 soft-edged discs painted back to front.
fn discs_image(size: usize, stream: &mut rng::Stream) -> Image {
    let s = size as Real;
    let count = stream.random_range(3..=8usize);
    let discs: Vec<(Real, Real, Real, Real)> = (0..count)
        .map(|_| {
            let radius = (0.07 + 0.13 * stream.random::<Real>()) * s;
            let max_off = 0.5 * s - radius - 1.0;
            let (cx, cy) = loop {
                let x = (stream.random::<Real>() * 2.0 - 1.0) * max_off;
                let y = (stream.random::<Real>() * 2.0 - 1.0) * max_off;
                if (x * x + y * y).sqrt() <= max_off {
                    break (x + (s - 1.0) / 2.0, y + (s - 1.0) / 2.0);
                }
            };
            let intensity = 0.25 + 0.7 * stream.random::<Real>();
            (cx, cy, radius, intensity)
        })
        .collect();
    Image::from_fn(size, size, |r, c| {
        let mut v = 0.0;
        for &(cx, cy, radius, intensity) in &discs {
            let d = ((c as Real - cx).powi(2) + (r as Real - cy).powi(2)).sqrt() - radius;
            let alpha = soft_edge(d);
            if alpha > 0.0 {
                v = v * (1.0 - alpha) + intensity * alpha;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Axis-aligned grid lines with random period, width, phase and intensity.
fn grid_overlay(size: usize, stream: &mut rng::Stream) -> Image {
    let period = stream.random_range(5..=10usize) as Real;
    let half_width = 0.5 + 0.5 * stream.random::<Real>();
    let phase_x = stream.random::<Real>() * period;
    let phase_y = stream.random::<Real>() * period;
    let intensity = 0.6 + 0.4 * stream.random::<Real>();
    let line = |coord: Real, phase: Real| {
        let t = (coord + phase).rem_euclid(period);
        let d = (t - period / 2.0).abs();
        // Distance from the line center running through period/2.
        soft_edge(period / 2.0 - d - half_width + 0.5)
    };
    Image::from_fn(size, size, |r, c| {
        let lx = line(c as Real, phase_x);
        let ly = line(r as Real, phase_y);
        (intensity * lx.max(ly)).clamp(0.0, 1.0)
    })
}

/// Smooth anisotropic Gaussian bumps plus a few axis-aligned rectangles.
fn blobs_image(size: usize, stream: &mut rng::Stream) -> Image {
    let s = size as Real;
    let n_blobs = stream.random_range(4..=8usize);
    let blobs: Vec<(Real, Real, Real, Real, Real)> = (0..n_blobs)
        .map(|_| {
            let cx = (0.15 + 0.7 * stream.random::<Real>()) * s;
            let cy = (0.15 + 0.7 * stream.random::<Real>()) * s;
            let sx = (0.05 + 0.13 * stream.random::<Real>()) * s;
            let sy = (0.05 + 0.13 * stream.random::<Real>()) * s;
            let amp = 0.25 + 0.5 * stream.random::<Real>();
            (cx, cy, sx, sy, amp)
        })
        .collect();
    let n_rects = stream.random_range(1..=3usize);
    let rects: Vec<(Real, Real, Real, Real, Real)> = (0..n_rects)
        .map(|_| {
            let w = (0.12 + 0.23 * stream.random::<Real>()) * s;
            let h = (0.12 + 0.23 * stream.random::<Real>()) * s;
            let cx = w / 2.0 + stream.random::<Real>() * (s - w - 1.0);
            let cy = h / 2.0 + stream.random::<Real>() * (s - h - 1.0);
            let intensity = 0.3 + 0.6 * stream.random::<Real>();
            (cx, cy, w, h, intensity)
        })
        .collect();
    Image::from_fn(size, size, |r, c| {
        let mut v = 0.0;
        for &(cx, cy, sx, sy, amp) in &blobs {
            let dx = (c as Real - cx) / sx;
            let dy = (r as Real - cy) / sy;
            v += amp * (-0.5 * (dx * dx + dy * dy)).exp();
        }
        for &(cx, cy, w, h, intensity) in &rects {
            let dx = (c as Real - cx).abs() - w / 2.0;
            let dy = (r as Real - cy).abs() - h / 2.0;
            let alpha = soft_edge(dx.max(dy));
            if alpha > 0.0 {
                v = v * (1.0 - alpha) + intensity * alpha;
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// A centered soft-edged disc of the given radius and value; shared by
/// several oracle tests.
pub fn centered_disc(size: usize, radius: Real, value: Real) -> Image {
    let center = (size as Real - 1.0) / 2.0;
    Image::from_fn(size, size, |r, c| {
        let d = ((c as Real - center).powi(2) + (r as Real - center).powi(2)).sqrt() - radius;
        value * soft_edge(d)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_small_sizes_are_rejected() {
        assert!(make_phantom(PhantomKind::SheppLogan, 15, 0).is_err());
        assert!(make_phantom(PhantomKind::Discs, 8, 0).is_err());
    }

    #[test]
    fn shepp_logan_max_one_background_zero() {
        let x = shepp_logan(64);
        assert_eq!(x.get(0, 0), 0.0);
        assert_eq!(x.get(63, 63), 0.0);
        assert_eq!(x.max(), 1.0);
        assert!(x.min() >= 0.0);
    }

    #[test]
    fn discs_dataset_is_deterministic() {
        let a = discs_dataset(16, 4, 7).unwrap();
        let b = discs_dataset(16, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = discs_dataset(16, 4, 8).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn discs_mean_intensity_is_calibrated() {
        let dataset = discs_dataset(32, 64, 123).unwrap();
        let mean: Real =
            dataset.iter().map(|im| im.mean()).sum::<Real>() / dataset.len() as Real;
        assert!(
            (0.05..=0.4).contains(&mean),
            "dataset mean intensity {mean} outside the calibrated range"
        );
    }

    #[test]
    fn all_kinds_stay_in_unit_range() {
        for kind in [
            PhantomKind::SheppLogan,
            PhantomKind::Discs,
            PhantomKind::GridOverlay,
            PhantomKind::Blobs,
        ] {
            let x = make_phantom(kind, 32, 3).unwrap();
            assert!(x.min() >= 0.0 && x.max() <= 1.0, "{kind:?} out of range");
            assert!(x.max() > 0.0, "{kind:?} is empty");
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("discs".parse::<PhantomKind>().unwrap(), PhantomKind::Discs);
        assert!("ellipses".parse::<PhantomKind>().is_err());
    }
}
