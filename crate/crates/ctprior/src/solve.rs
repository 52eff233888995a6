//! Variational reconstruction: accelerated proximal gradient descent with
//! Lipschitz backtracking.
//!
//! The regularizer is handled by gradient steps; the quadratic data term is
//! handled by its proximal map, which for the tomographic operator means
//! solving the SPD system `(Id + (α/σ²)AᵀA)x = y + (α/σ²)Aᵀf` with a few
//! conjugate-gradient iterations.
//!
//! The outer loop extrapolates with weight `t/(t+3)`, steps against the
//! regularizer gradient, and accepts a candidate when
//! `R(candidate) ≤ R(x̄) + ⟨g, candidate − x̄⟩ + ‖candidate − x̄‖²/(2α)`,
//! growing the step on acceptance and shrinking it otherwise.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Regularizer;
use crate::tomo::{back_project, fbp, forward_project, FbpFilter, Sinogram};
use crate::Real;

/// Step size below which the backtracking loop gives up.
const ALPHA_FLOOR: Real = 1e-12;

/// The data-fidelity term `D(x, f)` of the variational energy.
#[derive(Debug, Clone)]
pub enum DataTerm {
    /// `‖Ax − f‖²/(2σ²)` with the parallel-beam operator.
    Tomographic { sinogram: Sinogram, sigma2: Real },
    /// `‖x − f‖²/(2σ²)`: denoising with the identity operator.
    Identity { observation: Image, sigma2: Real },
    /// `D ≡ 0`: prior-only problems (mode finding).
    Zero { size: (usize, usize) },
}

/// Result of one proximal solve; `warning` is set when conjugate gradient
/// hit a zero-curvature direction and returned its current iterate.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub x: Image,
    pub warning: bool,
}

impl DataTerm {
    pub fn tomographic(sinogram: Sinogram, sigma2: Real) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::config("noise variance", format!("must be positive, got {sigma2}")));
        }
        Ok(DataTerm::Tomographic { sinogram, sigma2 })
    }

    pub fn identity(observation: Image, sigma2: Real) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::config("noise variance", format!("must be positive, got {sigma2}")));
        }
        Ok(DataTerm::Identity { observation, sigma2 })
    }

    pub fn zero(size: (usize, usize)) -> Self {
        DataTerm::Zero { size }
    }

    pub fn image_size(&self) -> (usize, usize) {
        match self {
            DataTerm::Tomographic { sinogram, .. } => sinogram.geometry().image_size(),
            DataTerm::Identity { observation, .. } => observation.size(),
            DataTerm::Zero { size } => *size,
        }
    }

    fn check_size(&self, x: &Image, what: &'static str) -> Result<()> {
        let (h, w) = self.image_size();
        if x.size() != (h, w) {
            return Err(Error::shape(
                what,
                format!("{h}x{w}"),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(())
    }

    /// `D(x, f)`.
    pub fn value(&self, x: &Image) -> Result<Real> {
        self.check_size(x, "data term input size")?;
        match self {
            DataTerm::Tomographic { sinogram, sigma2 } => {
                let ax = forward_project(x, sinogram.geometry())?;
                let r: Real = ax
                    .values()
                    .iter()
                    .zip(sinogram.values())
                    .map(|(&a, &f)| (a - f) * (a - f))
                    .sum();
                Ok(r / (2.0 * sigma2))
            }
            DataTerm::Identity { observation, sigma2 } => {
                let d = x.sub(observation);
                Ok(d.dot(&d) / (2.0 * sigma2))
            }
            DataTerm::Zero { .. } => Ok(0.0),
        }
    }

    /// `∇₁D(x, f)`.
    pub fn grad(&self, x: &Image) -> Result<Image> {
        self.check_size(x, "data term input size")?;
        match self {
            DataTerm::Tomographic { sinogram, sigma2 } => {
                let mut ax = forward_project(x, sinogram.geometry())?;
                for (a, &f) in ax.values_mut().iter_mut().zip(sinogram.values()) {
                    *a -= f;
                }
                Ok(back_project(&ax).scale(1.0 / sigma2))
            }
            DataTerm::Identity { observation, sigma2 } => {
                Ok(x.sub(observation).scale(1.0 / sigma2))
            }
            DataTerm::Zero { size } => Ok(Image::zeros(size.0, size.1)),
        }
    }

    /// `argmin_x α·D(x, f) + ½‖x − y‖²`.
    ///
    /// Identity uses the closed form `(y + (α/σ²)f)/(1 + α/σ²)`; the
    /// tomographic case runs `cg_iters` conjugate-gradient iterations on
    /// the normal equations starting from `y`.
    pub fn prox(&self, y: &Image, alpha: Real, cg_iters: usize) -> Result<ProxResult> {
        self.check_size(y, "prox input size")?;
        if alpha < 0.0 {
            return Err(Error::config("prox step", format!("must be >= 0, got {alpha}")));
        }
        if alpha == 0.0 {
            return Ok(ProxResult { x: y.clone(), warning: false });
        }
        match self {
            DataTerm::Zero { .. } => Ok(ProxResult { x: y.clone(), warning: false }),
            DataTerm::Identity { observation, sigma2 } => {
                let w = alpha / sigma2;
                let x = y.axpy(w, observation).scale(1.0 / (1.0 + w));
                Ok(ProxResult { x, warning: false })
            }
            DataTerm::Tomographic { sinogram, sigma2 } => {
                let g = sinogram.geometry();
                let w = alpha / sigma2;
                // M x = x + w·AᵀA x
                let apply = |x: &Image| -> Result<Image> {
                    let ax = forward_project(x, g)?;
                    Ok(x.axpy(w, &back_project(&ax)))
                };
                let b = y.axpy(w, &back_project(sinogram));

                let mut x = y.clone();
                let mut r = b.sub(&apply(&x)?);
                let mut p = r.clone();
                let mut rr = r.dot(&r);
                let b_norm2 = b.dot(&b).max(Real::MIN_POSITIVE);
                let mut warning = false;
                for _ in 0..cg_iters {
                    if rr <= 1e-30 * b_norm2 {
                        break;
                    }
                    let mp = apply(&p)?;
                    let p_mp = p.dot(&mp);
                    if p_mp <= 0.0 || !p_mp.is_finite() {
                        log::warn!("prox cg breakdown (pᵀMp = {p_mp:.3e}); returning current iterate");
                        warning = true;
                        break;
                    }
                    let a = rr / p_mp;
                    x = x.axpy(a, &p);
                    r = r.axpy(-a, &mp);
                    let rr_new = r.dot(&r);
                    p = r.axpy(rr_new / rr, &p);
                    rr = rr_new;
                }
                Ok(ProxResult { x, warning })
            }
        }
    }

    /// The default solver start: FBP for tomographic problems, the
    /// observation for identity problems. Prior-only problems have no
    /// natural start and require an explicit one.
    pub fn default_x0(&self) -> Result<Image> {
        match self {
            DataTerm::Tomographic { sinogram, .. } => Ok(fbp(sinogram, FbpFilter::RamLak)),
            DataTerm::Identity { observation, .. } => Ok(observation.clone()),
            DataTerm::Zero { .. } => Err(Error::config(
                "solver start",
                "a prior-only problem needs an explicit initial image",
            )),
        }
    }
}

/// Iteration budget, initial step and backtracking factors.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Outer iterations J.
    pub max_iters: usize,
    /// Initial step size; carried across outer iterations.
    pub alpha0: Real,
    /// Step growth on acceptance: `α ← α/γ1`.
    pub gamma1: Real,
    /// Step shrink on rejection: `α ← γ2·α`.
    pub gamma2: Real,
    /// Conjugate-gradient iterations per proximal solve.
    pub cg_iters: usize,
}

impl Default for SolverConfig {
    /// J = 1000, γ1 = 0.5, γ2 = 1/1.5, 10 CG iterations.
    fn default() -> Self {
        SolverConfig {
            max_iters: 1000,
            alpha0: 1e-2,
            gamma1: 0.5,
            gamma2: 1.0 / 1.5,
            cg_iters: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > 0.0 && self.gamma1 < 1.0) {
            return Err(Error::config("gamma1", format!("must be in (0, 1), got {}", self.gamma1)));
        }
        if !(self.gamma2 > 0.0 && self.gamma2 < 1.0) {
            return Err(Error::config("gamma2", format!("must be in (0, 1), got {}", self.gamma2)));
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::config("alpha0", "must be positive"));
        }
        if self.cg_iters == 0 {
            return Err(Error::config("cg_iters", "must be >= 1"));
        }
        Ok(())
    }
}

/// One iterate-log row: iteration, total energy, its two parts, and the
/// accepted step size.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRow {
    pub iteration: usize,
    pub energy: Real,
    pub regularizer: Real,
    pub data: Real,
    pub alpha: Real,
}

/// Iterate log plus counters.
#[derive(Debug, Clone, Default)]
pub struct SolveLog {
    pub rows: Vec<SolveRow>,
    pub backtracks: usize,
    pub prox_warnings: usize,
}

impl SolveLog {
    /// CSV columns: t, E, R, D, α.
    pub fn to_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "t,energy,regularizer,data,alpha")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                row.iteration, row.energy, row.regularizer, row.data, row.alpha
            )?;
        }
        Ok(())
    }

    pub fn final_energy(&self) -> Option<Real> {
        self.rows.last().map(|r| r.energy)
    }
}

/// Accelerated proximal gradient descent with Lipschitz backtracking.
pub fn apgd<R: Regularizer>(
    data: &DataTerm,
    reg: &R,
    x0: &Image,
    cfg: &SolverConfig,
) -> Result<(Image, SolveLog)> {
    cfg.validate()?;
    data.check_size(x0, "solver start size")?;

    let mut log = SolveLog::default();
    let mut x_prev = x0.clone();
    let mut x_cur = x0.clone();
    let mut alpha = cfg.alpha0;

    for t in 1..=cfg.max_iters {
        let momentum = t as Real / (t as Real + 3.0);
        let x_bar = x_cur.axpy(momentum, &x_cur.sub(&x_prev));
        let g = reg.grad(&x_bar)?;
        if !g.is_finite() {
            return Err(Error::NonFinite { what: "regularizer gradient", step: Some(t) });
        }
        let r_bar = reg.energy(&x_bar)?;
        if !r_bar.is_finite() {
            return Err(Error::NonFinite { what: "regularizer energy", step: Some(t) });
        }

        let (next, r_next, accepted_alpha) = loop {
            if alpha < ALPHA_FLOOR {
                return Err(Error::StepUnderflow { iteration: t, alpha: alpha as f64 });
            }
            let prox = data.prox(&x_bar.axpy(-alpha, &g), alpha, cfg.cg_iters)?;
            if prox.warning {
                log.prox_warnings += 1;
            }
            let candidate = prox.x;
            let diff = candidate.sub(&x_bar);
            let quad = r_bar + g.dot(&diff) + diff.dot(&diff) / (2.0 * alpha);
            let r_cand = reg.energy(&candidate)?;
            if !r_cand.is_finite() {
                return Err(Error::NonFinite { what: "regularizer energy", step: Some(t) });
            }
            if r_cand <= quad {
                // The acceptance condition must hold at every accepted step.
                assert!(r_cand <= quad);
                let used = alpha;
                alpha /= cfg.gamma1;
                break (candidate, r_cand, used);
            }
            alpha *= cfg.gamma2;
            log.backtracks += 1;
        };

        x_prev = x_cur;
        x_cur = next;
        let d_val = data.value(&x_cur)?;
        log.rows.push(SolveRow {
            iteration: t,
            energy: r_next + d_val,
            regularizer: r_next,
            data: d_val,
            alpha: accepted_alpha,
        });
    }
    Ok((x_cur, log))
}

/// Convenience wrapper: pick the default start for the problem kind (or use
/// `x0` when given) and run [`apgd`].
pub fn map_reconstruct<R: Regularizer>(
    data: &DataTerm,
    reg: &R,
    cfg: &SolverConfig,
    x0: Option<Image>,
) -> Result<(Image, SolveLog)> {
    let start = match x0 {
        Some(x) => x,
        None => data.default_x0()?,
    };
    apgd(data, reg, &start, cfg)
}
