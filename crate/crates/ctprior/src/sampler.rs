//! Unadjusted Langevin dynamics over arbitrary energy gradients, and the
//! persistent replay buffer that keeps chain states alive across parameter
//! updates.
//!
//! One step moves `x' = x − (ε/2)·∇R(x) + sqrt(β·ε)·ξ` with `ξ ~ N(0, Id)`.
//! On the quadratic energy `R(x) = ‖x − μ‖²/(2s²)` each pixel is a discrete
//! Ornstein-Uhlenbeck recursion with stationary mean `μ` and variance
//! `β·s²/(1 − ε/(4s²))` — the closed form the tests check against.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::Real;
use rand::Rng;
use rand_distr::StandardNormal;

/// Langevin step size, noise scale and step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Step size ε.
    pub epsilon: Real,
    /// Noise scale β. Strictly positive for sampling; β = 0 is accepted as
    /// the degenerate noise-free (gradient flow) limit.
    pub beta: Real,
    /// Number of steps K.
    pub steps: usize,
    /// Optional per-step value clamp, a divergence guard that is off by
    /// default. When set it must be recorded in run metadata.
    pub clamp: Option<(Real, Real)>,
}

impl SamplerConfig {
    pub fn new(epsilon: Real, beta: Real, steps: usize) -> Self {
        SamplerConfig { epsilon, beta, steps, clamp: None }
    }

    /// ε = 1, β = 7.5e-3, K = 500: the training-time sampling settings.
    pub fn paper() -> Self {
        SamplerConfig::new(1.0, 7.5e-3, 500)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("sampler epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("sampler beta", format!("must be >= 0, got {}", self.beta)));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return Err(Error::config("sampler clamp", format!("empty range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// One Langevin step. The gradient evaluator receives the current state and
/// must return a same-shaped finite gradient of the energy (the negative
/// log-density up to a constant).
pub fn ula_step<G>(x: &Image, grad_energy: G, cfg: &SamplerConfig, stream: &mut rng::Stream) -> Result<Image>
where
    G: FnOnce(&Image) -> Result<Image>,
{
    cfg.validate()?;
    let grad = grad_energy(x)?;
    x.check_same_size(&grad, "energy gradient size")?;
    if !grad.is_finite() {
        return Err(Error::NonFinite { what: "energy gradient", step: None });
    }
    let noise_scale = (cfg.beta * cfg.epsilon).sqrt();
    let mut next = x.axpy(-cfg.epsilon / 2.0, &grad);
    if noise_scale > 0.0 {
        for v in next.data_mut() {
            let xi: Real = stream.sample(StandardNormal);
            *v += noise_scale * xi;
        }
    }
    if let Some((lo, hi)) = cfg.clamp {
        next = next.clamp(lo, hi);
    }
    Ok(next)
}

/// Run `cfg.steps` Langevin steps from `x0`.
pub fn ula_run<G>(x0: &Image, grad_energy: G, cfg: &SamplerConfig, stream: &mut rng::Stream) -> Result<Image>
where
    G: Fn(&Image) -> Result<Image>,
{
    ula_run_tapped(x0, grad_energy, cfg, stream, usize::MAX, |_, _| {})
}

/// As [`ula_run`], additionally feeding the initial state and every
/// `stride`-th iterate to `tap` (called as `tap(step_index, state)`, with
/// the initial state at index 0).
pub fn ula_run_tapped<G, T>(
    x0: &Image,
    grad_energy: G,
    cfg: &SamplerConfig,
    stream: &mut rng::Stream,
    stride: usize,
    mut tap: T,
) -> Result<Image>
where
    G: Fn(&Image) -> Result<Image>,
    T: FnMut(usize, &Image),
{
    cfg.validate()?;
    let stride = stride.max(1);
    let mut x = x0.clone();
    tap(0, &x);
    for k in 1..=cfg.steps {
        x = ula_step(&x, &grad_energy, cfg, stream).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, step: Some(k) },
            other => other,
        })?;
        if k % stride == 0 {
            tap(k, &x);
        }
    }
    Ok(x)
}

/// Proof of an outstanding buffer draw; consumed by
/// [`ReplayBuffer::refill`], so every draw is paired with exactly one
/// refill.
#[derive(Debug)]
pub struct DrawTicket {
    slot: usize,
}

impl DrawTicket {
    pub fn slot(&self) -> usize {
        self.slot
    }
}

/// The persistent pool of Langevin chain states.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: Vec<Image>,
    p_re: Real,
    image_size: (usize, usize),
}

impl ReplayBuffer {
    /// Fill `capacity` slots with i.i.d. uniform noise on `[0, 1]` per
    /// pixel.
    pub fn init(
        capacity: usize,
        image_size: (usize, usize),
        p_re: Real,
        stream: &mut rng::Stream,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer capacity", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&p_re) {
            return Err(Error::config("buffer p_re", format!("must be in [0, 1], got {p_re}")));
        }
        let (h, w) = image_size;
        let entries = (0..capacity)
            .map(|_| Image::from_fn(h, w, |_, _| stream.random::<Real>()))
            .collect();
        Ok(ReplayBuffer { entries, p_re, image_size })
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn p_re(&self) -> Real {
        self.p_re
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn entry(&self, slot: usize) -> &Image {
        &self.entries[slot]
    }

    /// Draw one chain start from a uniformly random slot. The returned
    /// ticket must be passed back to [`refill`](Self::refill) once the
    /// chain has run.
    pub fn draw(&self, stream: &mut rng::Stream) -> (DrawTicket, Image) {
        let slot = stream.random_range(0..self.entries.len());
        (DrawTicket { slot }, self.entries[slot].clone())
    }

    /// Draw a batch from distinct slots (uniform without replacement).
    pub fn draw_batch(&self, count: usize, stream: &mut rng::Stream) -> Result<Vec<(DrawTicket, Image)>> {
        if count > self.entries.len() {
            return Err(Error::config(
                "buffer draw",
                format!("batch of {count} exceeds capacity {}", self.entries.len()),
            ));
        }
        let idx = rand::seq::index::sample(stream, self.entries.len(), count);
        Ok(idx
            .iter()
            .map(|slot| (DrawTicket { slot }, self.entries[slot].clone()))
            .collect())
    }

    /// Complete a draw/refill transaction. With probability `1 − p_re` the
    /// chain result replaces the drawn slot; otherwise the slot is
    /// reinitialized with uniform noise or a data sample with equal
    /// probability.
    pub fn refill<D>(
        &mut self,
        ticket: DrawTicket,
        x_minus: &Image,
        data_sample: D,
        stream: &mut rng::Stream,
    ) -> Result<()>
    where
        D: FnOnce(&mut rng::Stream) -> Image,
    {
        if x_minus.size() != self.image_size {
            return Err(Error::shape(
                "buffer refill image size",
                format!("{}x{}", self.image_size.0, self.image_size.1),
                format!("{}x{}", x_minus.height(), x_minus.width()),
            ));
        }
        let r: Real = stream.random();
        let value = if r > self.p_re {
            x_minus.clone()
        } else {
            let r2: Real = stream.random();
            if r2 > 0.5 {
                let sample = data_sample(stream);
                if sample.size() != self.image_size {
                    return Err(Error::shape(
                        "buffer data sample size",
                        format!("{}x{}", self.image_size.0, self.image_size.1),
                        format!("{}x{}", sample.height(), sample.width()),
                    ));
                }
                sample
            } else {
                let (h, w) = self.image_size;
                Image::from_fn(h, w, |_, _| stream.random::<Real>())
            }
        };
        self.entries[ticket.slot] = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> rng::Stream {
        rng::stream(seed, rng::purpose::MISC)
    }

    #[test]
    fn zero_gradient_zero_beta_is_identity() {
        let x = Image::constant(4, 4, 0.3);
        let cfg = SamplerConfig::new(0.5, 0.0, 1);
        let out = ula_step(&x, |x| Ok(Image::zeros(x.height(), x.width())), &cfg, &mut stream(1)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn steps_are_deterministic_per_stream() {
        let x = Image::constant(4, 4, 0.3);
        let cfg = SamplerConfig::new(0.1, 1.0, 5);
        let g = |x: &Image| Ok(x.scale(1.0));
        let a = ula_run(&x, g, &cfg, &mut stream(7)).unwrap();
        let b = ula_run(&x, g, &cfg, &mut stream(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_steps_returns_x0() {
        let x = Image::constant(3, 3, 0.9);
        let cfg = SamplerConfig::new(0.1, 1.0, 0);
        let out = ula_run(&x, |x| Ok(x.clone()), &cfg, &mut stream(3)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let x = Image::constant(2, 2, 0.1);
        let cfg = SamplerConfig::new(0.1, 1.0, 10);
        let res = ula_run(
            &x,
            |x| Ok(x.map(|_| Real::NAN)),
            &cfg,
            &mut stream(5),
        );
        assert!(matches!(res, Err(Error::NonFinite { step: Some(1), .. })));
    }

    #[test]
    fn tap_sees_initial_state_and_strides() {
        let x = Image::constant(2, 2, 0.5);
        let cfg = SamplerConfig::new(0.1, 0.0, 6);
        let mut seen = Vec::new();
        ula_run_tapped(
            &x,
            |x| Ok(Image::zeros(x.height(), x.width())),
            &cfg,
            &mut stream(2),
            2,
            |k, _| seen.push(k),
        )
        .unwrap();
        assert_eq!(seen, vec![0, 2, 4, 6]);
    }

    #[test]
    fn buffer_init_examples() {
        let mut s = stream(11);
        let buf = ReplayBuffer::init(100, (4, 4), 0.01, &mut s).unwrap();
        assert_eq!(buf.capacity(), 100);
        for i in 0..buf.capacity() {
            assert!(buf.entry(i).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let mut s2 = stream(12);
        let buf2 = ReplayBuffer::init(100, (4, 4), 0.01, &mut s2).unwrap();
        assert_ne!(buf.entry(0), buf2.entry(0));
    }

    #[test]
    fn p_re_zero_always_keeps_chain_result() {
        let mut s = stream(21);
        let mut buf = ReplayBuffer::init(8, (2, 2), 0.0, &mut s).unwrap();
        let x_minus = Image::constant(2, 2, 0.77);
        for _ in 0..50 {
            let (ticket, _) = buf.draw(&mut s);
            let slot = ticket.slot();
            buf.refill(ticket, &x_minus, |_| Image::zeros(2, 2), &mut s).unwrap();
            assert_eq!(buf.entry(slot), &x_minus);
        }
    }

    #[test]
    fn buffer_size_is_invariant_under_transactions() {
        let mut s = stream(31);
        let mut buf = ReplayBuffer::init(16, (2, 2), 0.5, &mut s).unwrap();
        for _ in 0..200 {
            let (ticket, x0) = buf.draw(&mut s);
            buf.refill(ticket, &x0, |st| Image::from_fn(2, 2, |_, _| st.random()), &mut s).unwrap();
            assert_eq!(buf.capacity(), 16);
        }
    }

    #[test]
    fn batch_draw_uses_distinct_slots() {
        let mut s = stream(41);
        let buf = ReplayBuffer::init(10, (2, 2), 0.0, &mut s).unwrap();
        let batch = buf.draw_batch(10, &mut s).unwrap();
        let mut slots: Vec<usize> = batch.iter().map(|(t, _)| t.slot()).collect();
        slots.sort_unstable();
        slots.dedup();
        assert_eq!(slots.len(), 10);
        assert!(buf.draw_batch(11, &mut s).is_err());
    }
}
