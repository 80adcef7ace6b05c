//! Constrained minimization of the discrete energy on the unit `L²` sphere.
//!
//! Two descent schemes share the same stopping rule, sign fix and peak
//! refinement: an explicit normalized gradient flow with backtracking, and a
//! Riemannian nonlinear conjugate gradient preconditioned by a fast
//! shifted-Laplacian solve.

use std::cell::RefCell;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::{
    self, energy_parts, gradient_into, inner, EnergyBreakdown, EnergyError, Field,
};
use crate::geometry::{DomainGrid, PotentialSpec, Shape};
use crate::spectral::BoxSolver;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinimizeError {
    #[error("b = 0 with beta = {beta} >= beta* = {beta_star}: no minimizer exists")]
    IllPosed { beta: f64, beta_star: f64 },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("gaussian and eigenmode starts end at energies {gaussian} and {eigenmode}")]
    AmbiguousMinimum { gaussian: f64, eigenmode: f64 },
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowScheme {
    /// `u ← (u − τg)/‖u − τg‖`, halving `τ` on energy increase.
    Explicit,
    /// Polak–Ribière conjugate directions preconditioned by
    /// `(σ + (1 + bK)(−Δ_h))^{-1}` on the bounding box.
    Preconditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    Gaussian { center: [f64; 2], width: f64 },
    /// Principal Dirichlet mode of the discrete Laplacian.
    Eigenmode,
    WarmStart(Field),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Initial step; scheme-dependent default when `None`.
    pub step0: Option<f64>,
    pub max_iters: usize,
    /// Relative energy change over `stall_window` iterations treated as a stall.
    pub energy_tol: f64,
    /// Norm of the projected gradient that counts as converged.
    pub grad_tol: f64,
    pub backtracking: f64,
    pub init: InitKind,
    pub seed: u64,
    /// Relative amplitude of seeded multiplicative noise added to the
    /// initial field.
    pub noise: f64,
    pub scheme: FlowScheme,
    pub stall_window: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step0: None,
            max_iters: 5000,
            energy_tol: 1e-12,
            grad_tol: 1e-6,
            backtracking: 0.5,
            init: InitKind::Eigenmode,
            seed: 0,
            noise: 0.0,
            scheme: FlowScheme::Preconditioned,
            stall_window: 50,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), MinimizeError> {
        let bad = |m: &str| Err(MinimizeError::InvalidConfig(m.to_string()));
        if !(self.energy_tol > 0.0) || !(self.grad_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.backtracking > 0.0 && self.backtracking < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if let Some(s) = self.step0 {
            if !(s > 0.0) {
                return bad("step0 must be positive");
            }
        }
        if self.max_iters == 0 || self.stall_window == 0 {
            return bad("max_iters and stall_window must be positive");
        }
        if !(self.noise >= 0.0) {
            return bad("noise amplitude must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Converged,
    MaxItersExceeded,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub u: Field,
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub status: FlowStatus,
    /// Peak location refined below grid scale.
    pub max_point: [f64; 2],
    /// `(∫|∇u|²)^{-1/2}`
    pub eps_b: f64,
    /// Energy after every accepted step, starting with the initial field.
    pub history: Vec<f64>,
    /// Final projected-gradient norm.
    pub grad_norm: f64,
    /// Euler–Lagrange residual of the returned field.
    pub residual: f64,
    /// Largest `|∫u² − 1|` seen over all accepted iterates.
    pub max_mass_drift: f64,
    /// Line searches that found no decrease.
    pub failed_searches: usize,
}

const STEP_FLOOR: f64 = 1e-14;
const PREC_STEP0: f64 = 1.0;

struct Workspace<'a> {
    grid: &'a DomainGrid,
    v: &'a [f64],
    b: f64,
    beta: f64,
    scratch: RefCell<(Vec<f64>, Vec<f64>)>,
}

impl Workspace<'_> {
    fn energy(&self, u: &[f64]) -> EnergyBreakdown {
        energy_parts(&self.grid.layout, u, self.v, self.b, self.beta)
    }

    fn gradient(&self, u: &[f64], kin: f64, out: &mut [f64]) {
        gradient_into(self.grid, u, self.v, self.b, self.beta, kin, out);
    }

    /// `E(v) − E(u)` resolved below the roundoff of the totals, with the
    /// first-order effect of normalisation roundoff (`λ/2·Δm`, where
    /// `λ = ⟨g, u⟩`) removed.
    fn change(
        &self,
        u: &[f64],
        eu: &EnergyBreakdown,
        lam: f64,
        v: &[f64],
        ev: &EnergyBreakdown,
    ) -> f64 {
        let mut s = self.scratch.borrow_mut();
        let (diff, sum) = &mut *s;
        let c = energy::energy_change(
            &self.grid.layout,
            u,
            v,
            self.v,
            self.b,
            self.beta,
            eu.kinetic,
            ev.kinetic,
            diff,
            sum,
        );
        c.energy - 0.5 * lam * c.mass
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        inner(&self.grid.layout, a, b)
    }

    /// `(u + t·d)/‖u + t·d‖` into `out`.
    fn retract(&self, u: &[f64], d: &[f64], t: f64, out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(u).zip(d) {
            *o = a + t * b;
        }
        let s = 1.0 / self.dot(out, out).sqrt();
        out.iter_mut().for_each(|o| *o *= s);
    }
}

/// Builds the normalized initial field for a run.
pub fn initial_field(
    grid: &DomainGrid,
    init: &InitKind,
    seed: u64,
    noise: f64,
) -> Result<Field, MinimizeError> {
    let mut u = match init {
        InitKind::Gaussian { center, width } => {
            if !(*width > 0.0) {
                return Err(MinimizeError::InvalidConfig("gaussian width must be positive".into()));
            }
            let w2 = 2.0 * width * width;
            Field::from_fn(grid, |x| {
                (-((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / w2).exp()
            })
        }
        InitKind::Eigenmode => principal_mode(grid)?,
        InitKind::WarmStart(f) => {
            if f.layout == grid.layout {
                let mut u = f.clone();
                for (k, m) in grid.interior_mask.iter().enumerate() {
                    if !m {
                        u.values[k] = 0.0;
                    }
                }
                u
            } else {
                Field::from_fn(grid, |x| f.sample(x))
            }
        }
    };
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (k, m) in grid.interior_mask.iter().enumerate() {
            if *m {
                u.values[k] *= 1.0 + noise * rng.gen_range(-1.0..1.0);
            }
        }
    }
    if !u.is_finite() {
        return Err(MinimizeError::Energy(EnergyError::InvalidArgument(
            "initial field is not finite".into(),
        )));
    }
    u.normalize()?;
    Ok(u)
}

/// Principal Dirichlet mode: exact on rectangles, otherwise computed by the
/// preconditioned solver on the linear problem.
fn principal_mode(grid: &DomainGrid) -> Result<Field, MinimizeError> {
    if let Shape::Rectangle { x0, x1, y0, y1 } = grid.shape {
        let pi = std::f64::consts::PI;
        return Ok(Field::from_fn(grid, |x| {
            (pi * (x[0] - x0) / (x1 - x0)).sin() * (pi * (x[1] - y0) / (y1 - y0)).sin()
        }));
    }
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (i, j, _) in grid.interior_nodes() {
        let p = grid.layout.coords(i, j);
        sx += p[0];
        sy += p[1];
        n += 1.0;
    }
    let cfg = FlowConfig {
        init: InitKind::Gaussian {
            center: [sx / n, sy / n],
            width: 0.25 * grid.diameter(),
        },
        grad_tol: 1e-8,
        max_iters: 500,
        ..FlowConfig::default()
    };
    let zero = PotentialSpec::zero(grid);
    let r = minimize(grid, &zero, 0.0, 0.0, f64::INFINITY, &cfg)?;
    Ok(r.u)
}

/// Minimizes `E_b` over unit-mass fields on `grid`.
///
/// `beta_star` is only used to refuse the ill-posed case `b = 0, β ≥ β*`.
pub fn minimize(
    grid: &DomainGrid,
    spec: &PotentialSpec,
    b: f64,
    beta: f64,
    beta_star: f64,
    cfg: &FlowConfig,
) -> Result<MinimizeResult, MinimizeError> {
    cfg.validate()?;
    if !(b >= 0.0) || !(beta >= 0.0) {
        return Err(MinimizeError::InvalidConfig(format!(
            "need b >= 0 and beta >= 0, got b = {b}, beta = {beta}"
        )));
    }
    if b == 0.0 && beta >= beta_star * (1.0 - 1e-9) {
        return Err(MinimizeError::IllPosed { beta, beta_star });
    }
    if spec.layout != grid.layout {
        return Err(EnergyError::GridMismatch.into());
    }
    let u0 = initial_field(grid, &cfg.init, cfg.seed, cfg.noise)?;
    let n = grid.layout.len();
    let ws = Workspace {
        grid,
        v: &spec.values,
        b,
        beta,
        scratch: RefCell::new((vec![0.0; n], vec![0.0; n])),
    };
    let out = match cfg.scheme {
        FlowScheme::Explicit => explicit_flow(&ws, u0.values, cfg),
        FlowScheme::Preconditioned => preconditioned_flow(&ws, u0.values, cfg),
    };
    finish(grid, spec, b, beta, out)
}

struct FlowOutcome {
    u: Vec<f64>,
    iterations: usize,
    status: FlowStatus,
    history: Vec<f64>,
    grad_norm: f64,
    max_mass_drift: f64,
    failed_searches: usize,
}

/// Shared stopping rule: small projected gradient, or an energy stall with a
/// gradient within ten times the tolerance.
fn stopping(history: &[f64], grad_norm: f64, cfg: &FlowConfig) -> bool {
    if grad_norm < cfg.grad_tol {
        return true;
    }
    let n = history.len();
    if n > cfg.stall_window && grad_norm < 10.0 * cfg.grad_tol {
        let old = history[n - 1 - cfg.stall_window];
        let new = history[n - 1];
        return (old - new).abs() <= cfg.energy_tol * new.abs().max(f64::MIN_POSITIVE);
    }
    false
}

fn explicit_flow(ws: &Workspace, mut u: Vec<f64>, cfg: &FlowConfig) -> FlowOutcome {
    let n = u.len();
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut e = ws.energy(&u);
    let h2 = ws.grid.hx().min(ws.grid.hy()).powi(2);
    let tau0 = cfg
        .step0
        .unwrap_or(h2 / 8.0 / (1.0 + ws.b * e.kinetic));
    let mut tau = tau0;
    let mut level = e.total;
    let mut history = vec![level];
    let mut drift: f64 = (e.mass - 1.0).abs();
    let mut failed = 0;
    let mut status = FlowStatus::MaxItersExceeded;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it;
        ws.gradient(&u, e.kinetic, &mut g);
        let lam = ws.dot(&g, &u);
        let r2 = pairwise_norm2(ws, &g, &u, lam);
        grad_norm = r2.sqrt();
        if stopping(&history, grad_norm, cfg) {
            status = FlowStatus::Converged;
            break;
        }
        // Explicit stability bound tracks the Kirchhoff coefficient.
        let cap = 4.0 * h2 / 8.0 / (1.0 + ws.b * e.kinetic);
        tau = tau.min(cap);
        let mut accepted = false;
        while tau >= STEP_FLOOR {
            for k in 0..n {
                trial[k] = u[k] - tau * g[k];
            }
            let s = 1.0 / ws.dot(&trial, &trial).sqrt();
            trial.iter_mut().for_each(|t| *t *= s);
            let et = ws.energy(&trial);
            let de = ws.change(&u, &e, lam, &trial, &et);
            if de < 0.0 {
                std::mem::swap(&mut u, &mut trial);
                e = et;
                level += de;
                accepted = true;
                break;
            }
            tau *= cfg.backtracking;
        }
        if !accepted {
            failed += 1;
            status = if grad_norm < 10.0 * cfg.grad_tol {
                FlowStatus::Converged
            } else {
                FlowStatus::StepUnderflow
            };
            break;
        }
        drift = drift.max((e.mass - 1.0).abs());
        history.push(level);
        tau /= cfg.backtracking.sqrt();
        iterations = it + 1;
    }
    FlowOutcome {
        u,
        iterations,
        status,
        history,
        grad_norm,
        max_mass_drift: drift,
        failed_searches: failed,
    }
}

/// `‖g − λu‖²` in the weighted norm.
fn pairwise_norm2(ws: &Workspace, g: &[f64], u: &[f64], lam: f64) -> f64 {
    let w = ws.grid.layout.cell_area();
    w * energy::pairwise_sum(g.len(), |k| {
        let r = g[k] - lam * u[k];
        r * r
    })
}

fn preconditioned_flow(ws: &Workspace, mut u: Vec<f64>, cfg: &FlowConfig) -> FlowOutcome {
    let n = u.len();
    let mut solver = BoxSolver::new(&ws.grid.layout);
    let mut g = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut z_old = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut best = vec![0.0; n];
    let mut rz_old = 0.0;
    let mut have_dir = false;
    let mut t_prev = cfg.step0.unwrap_or(PREC_STEP0);

    let mut e = ws.energy(&u);
    let mut level = e.total;
    let mut history = vec![level];
    let mut drift: f64 = (e.mass - 1.0).abs();
    let mut failed = 0;
    let mut status = FlowStatus::MaxItersExceeded;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for it in 0..cfg.max_iters {
        iterations = it;
        ws.gradient(&u, e.kinetic, &mut g);
        let lam = ws.dot(&g, &u);
        for k in 0..n {
            r[k] = g[k] - lam * u[k];
        }
        grad_norm = ws.dot(&r, &r).sqrt();
        if stopping(&history, grad_norm, cfg) {
            status = FlowStatus::Converged;
            break;
        }

        let c = 1.0 + ws.b * e.kinetic;
        let sigma = (-0.5 * lam).max(0.1 * c * e.kinetic).max(1e-3 * c * solver.lowest_eigenvalue());
        solver.apply(ws.grid, &r, sigma, 0.5 * c, &mut z);
        let zu = ws.dot(&z, &u);
        for k in 0..n {
            z[k] -= zu * u[k];
        }
        let rz = ws.dot(&r, &z);

        let mut use_cg = false;
        if have_dir && rz_old > 0.0 {
            let beta_pr = ((rz - ws.dot(&r, &z_old)) / rz_old).max(0.0);
            if beta_pr > 0.0 {
                let du = ws.dot(&d, &u);
                for k in 0..n {
                    d[k] = -z[k] + beta_pr * (d[k] - du * u[k]);
                }
                use_cg = ws.dot(&r, &d) < 0.0;
            }
        }
        if !use_cg {
            for k in 0..n {
                d[k] = -z[k];
            }
        }
        let slope = ws.dot(&r, &d);
        std::mem::swap(&mut z, &mut z_old);
        rz_old = rz;

        // Parabolic step from φ(0), φ'(0), φ(t1); halve on failure.
        let t1 = t_prev;
        ws.retract(&u, &d, t1, &mut trial);
        let e1 = ws.energy(&trial);
        let d1 = ws.change(&u, &e, lam, &trial, &e1);
        let (mut best_e, mut best_d, mut best_t) = (e1, d1, t1);
        best.copy_from_slice(&trial);
        let curv = d1 - slope * t1;
        let second = if curv > 0.0 {
            Some((-slope * t1 * t1 / (2.0 * curv)).clamp(0.1 * t1, 10.0 * t1))
        } else if d1 < 0.0 {
            Some(2.0 * t1)
        } else {
            None
        };
        if let Some(ts) = second.filter(|ts| (ts - t1).abs() > 1e-3 * t1) {
            ws.retract(&u, &d, ts, &mut trial);
            let es = ws.energy(&trial);
            let ds = ws.change(&u, &e, lam, &trial, &es);
            if ds < best_d {
                (best_e, best_d, best_t) = (es, ds, ts);
                best.copy_from_slice(&trial);
            }
        }
        let mut t = best_t.min(t1);
        while best_d >= 0.0 && t >= STEP_FLOOR {
            t *= cfg.backtracking;
            ws.retract(&u, &d, t, &mut trial);
            let es = ws.energy(&trial);
            let ds = ws.change(&u, &e, lam, &trial, &es);
            if ds < 0.0 {
                (best_e, best_d, best_t) = (es, ds, t);
                best.copy_from_slice(&trial);
            }
        }
        if best_d >= 0.0 {
            if use_cg {
                // Retry along steepest descent before giving up.
                have_dir = false;
                failed += 1;
                continue;
            }
            failed += 1;
            status = if grad_norm < 10.0 * cfg.grad_tol {
                FlowStatus::Converged
            } else {
                FlowStatus::StepUnderflow
            };
            break;
        }
        std::mem::swap(&mut u, &mut best);
        e = best_e;
        level += best_d;
        drift = drift.max((e.mass - 1.0).abs());
        history.push(level);
        t_prev = best_t;
        have_dir = true;
        iterations = it + 1;
    }
    FlowOutcome {
        u,
        iterations,
        status,
        history,
        grad_norm,
        max_mass_drift: drift,
        failed_searches: failed,
    }
}

fn finish(
    grid: &DomainGrid,
    spec: &PotentialSpec,
    b: f64,
    beta: f64,
    out: FlowOutcome,
) -> Result<MinimizeResult, MinimizeError> {
    // |u| never raises the discrete energy, so the sign fix is free.
    let mut u = Field {
        layout: grid.layout,
        values: out.u,
    };
    u.values.iter_mut().for_each(|x| *x = x.abs());
    let breakdown = energy::evaluate(grid, &u, b, beta, spec)?;
    let residual = energy::euler_lagrange_residual(grid, &u, b, beta, spec)?;
    let history = out.history;
    let converged = out.status == FlowStatus::Converged;
    match out.status {
        FlowStatus::Converged => debug!(
            "converged in {} iterations, E = {:.12e}, |grad| = {:.3e}",
            out.iterations, breakdown.total, out.grad_norm
        ),
        s => warn!(
            "flow stopped with {s:?} after {} iterations, |grad| = {:.3e}",
            out.iterations, out.grad_norm
        ),
    }
    Ok(MinimizeResult {
        max_point: max_point(grid, &u),
        eps_b: 1.0 / breakdown.kinetic.sqrt(),
        u,
        breakdown,
        iterations: out.iterations,
        converged,
        status: out.status,
        history,
        grad_norm: out.grad_norm,
        residual,
        max_mass_drift: out.max_mass_drift,
        failed_searches: out.failed_searches,
    })
}

/// Discrete argmax refined by a least-squares quadratic over its 3×3
/// neighbourhood; falls back to the node when the fit has no interior
/// maximum within one cell.
pub fn max_point(grid: &DomainGrid, u: &Field) -> [f64; 2] {
    let l = &grid.layout;
    let (kmax, _) = u
        .values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
    let (i0, j0) = (kmax % l.nx, kmax / l.nx);
    let node = l.coords(i0, j0);
    if i0 == 0 || j0 == 0 || i0 + 1 >= l.nx || j0 + 1 >= l.ny {
        return node;
    }
    let mut a = DMatrix::<f64>::zeros(9, 6);
    let mut y = DVector::<f64>::zeros(9);
    let mut row = 0;
    for dj in -1i64..=1 {
        for di in -1i64..=1 {
            let (x, z) = (di as f64, dj as f64);
            let k = l.index((i0 as i64 + di) as usize, (j0 as i64 + dj) as usize);
            let vals = [1.0, x, z, x * x, x * z, z * z];
            for (c, v) in vals.iter().enumerate() {
                a[(row, c)] = *v;
            }
            y[row] = u.values[k];
            row += 1;
        }
    }
    let Ok(coef) = a.svd(true, true).solve(&y, 1e-12) else {
        return node;
    };
    let hess = Matrix2::new(2.0 * coef[3], coef[4], coef[4], 2.0 * coef[5]);
    if !(hess[(0, 0)] < 0.0 && hess.determinant() > 0.0) {
        return node;
    }
    let Some(inv) = hess.try_inverse() else {
        return node;
    };
    let s = -(inv * Vector2::new(coef[1], coef[2]));
    if s[0].abs() > 1.0 || s[1].abs() > 1.0 {
        return node;
    }
    [node[0] + s[0] * l.hx, node[1] + s[1] * l.hy]
}

/// One entry of a continuation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub b: f64,
    pub outcome: Result<MinimizeResult, MinimizeError>,
}

impl SweepEntry {
    pub fn converged(&self) -> Option<&MinimizeResult> {
        self.outcome.as_ref().ok().filter(|r| r.converged)
    }
}

/// Field `x ↦ ρ^{-1}·u(z + (x − z)/ρ)`, resampled bilinearly on `grid`.
pub fn rescale_about(grid: &DomainGrid, u: &Field, z: [f64; 2], ratio: f64) -> Field {
    rescale_to(grid, u, z, z, ratio)
}

/// Rescales `u` about `from` as in `rescale_about` and moves that point to `to`.
pub fn rescale_to(grid: &DomainGrid, u: &Field, from: [f64; 2], to: [f64; 2], ratio: f64) -> Field {
    Field::from_fn(grid, |x| {
        u.sample([
            from[0] + (x[0] - to[0]) / ratio,
            from[1] + (x[1] - to[1]) / ratio,
        ]) / ratio
    })
}

/// Minimum of the `V ≡ 0` problem on the same grid, started from `u` moved
/// onto the deepest interior node. The discrete counterpart of `ē(b)`.
pub fn auxiliary_minimum(
    grid: &DomainGrid,
    u: &MinimizeResult,
    b: f64,
    beta: f64,
    beta_star: f64,
    cfg: &FlowConfig,
) -> Result<MinimizeResult, MinimizeError> {
    let zero = PotentialSpec::zero(grid);
    let start = rescale_to(grid, &u.u, u.max_point, grid.deepest_node(), 1.0);
    let cfg = FlowConfig {
        init: InitKind::WarmStart(start),
        ..cfg.clone()
    };
    minimize(grid, &zero, b, beta, beta_star, &cfg)
}

/// Minimizes from a gaussian at `center` and from the principal eigenmode.
/// Both results are returned when their energies agree within
/// `10·energy_tol` relative; otherwise `AmbiguousMinimum` carries both.
#[allow(clippy::too_many_arguments)]
pub fn compare_inits(
    grid: &DomainGrid,
    spec: &PotentialSpec,
    b: f64,
    beta: f64,
    beta_star: f64,
    cfg: &FlowConfig,
    center: [f64; 2],
    width: f64,
) -> Result<(MinimizeResult, MinimizeResult), MinimizeError> {
    let run = |init| minimize(grid, spec, b, beta, beta_star, &FlowConfig { init, ..cfg.clone() });
    let g = run(InitKind::Gaussian { center, width })?;
    let e = run(InitKind::Eigenmode)?;
    let (eg, ee) = (g.breakdown.total, e.breakdown.total);
    if (eg - ee).abs() > 10.0 * cfg.energy_tol * eg.abs().max(ee.abs()).max(1.0) {
        return Err(MinimizeError::AmbiguousMinimum {
            gaussian: eg,
            eigenmode: ee,
        });
    }
    Ok((g, e))
}

/// Predictors steering the warm starts of a sweep.
#[derive(Clone, Copy, Default)]
pub struct SweepGuide<'a> {
    /// Predicted blow-up length as a function of `b`.
    pub eps: Option<&'a dyn Fn(f64) -> f64>,
    /// A point and the predicted distance of the peak from it.
    pub anchor: Option<([f64; 2], &'a dyn Fn(f64) -> f64)>,
    /// Divide the gradient tolerance by the predicted `ε(b)²`.
    pub relative_grad_tol: bool,
}

/// Runs `minimize` along a strictly decreasing list of `b`, each run
/// warm-started from the previous minimizer rescaled by the ratio of the
/// predicted blow-up lengths and, with an anchor, moved radially so that its
/// distance from the anchor follows the predicted ratio. Failures are recorded and the sweep goes on
/// from the last good field.
pub fn continuation_sweep(
    grid: &DomainGrid,
    spec: &PotentialSpec,
    beta: f64,
    beta_star: f64,
    b_list: &[f64],
    cfg: &FlowConfig,
    guide: SweepGuide<'_>,
) -> Result<Vec<SweepEntry>, MinimizeError> {
    continuation_sweep_with(grid, spec, beta, beta_star, b_list, cfg, guide, &mut |_| {})
}

/// `continuation_sweep` reporting each entry as soon as it is computed.
#[allow(clippy::too_many_arguments)]
pub fn continuation_sweep_with(
    grid: &DomainGrid,
    spec: &PotentialSpec,
    beta: f64,
    beta_star: f64,
    b_list: &[f64],
    cfg: &FlowConfig,
    guide: SweepGuide<'_>,
    on_entry: &mut dyn FnMut(&SweepEntry),
) -> Result<Vec<SweepEntry>, MinimizeError> {
    if b_list.is_empty() {
        return Err(MinimizeError::InvalidConfig("empty b list".into()));
    }
    if b_list.iter().any(|b| !(*b > 0.0)) || b_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(MinimizeError::InvalidConfig(
            "b list must be positive and strictly decreasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(b_list.len());
    let mut last: Option<(f64, MinimizeResult)> = None;
    for &b in b_list {
        let mut run_cfg = cfg.clone();
        if let (true, Some(f)) = (guide.relative_grad_tol, guide.eps) {
            run_cfg.grad_tol = cfg.grad_tol / f(b).powi(2);
        }
        if let Some((b_prev, prev)) = &last {
            let ratio = guide.eps.map_or(1.0, |f| f(b) / f(*b_prev));
            let z = prev.max_point;
            let to = guide.anchor.map_or(z, |(a, d)| {
                let s = (d(b) / d(*b_prev)).clamp(0.25, 1.0);
                let s = if s.is_finite() { s } else { 1.0 };
                [a[0] + s * (z[0] - a[0]), a[1] + s * (z[1] - a[1])]
            });
            let mut warm = rescale_to(grid, &prev.u, z, to, ratio);
            if warm.mass() < 0.5 {
                warn!("moved warm start lost its mass at b = {b:.3e}; rescaling in place");
                warm = rescale_about(grid, &prev.u, z, ratio);
            }
            run_cfg.init = InitKind::WarmStart(warm);
        }
        let outcome = minimize(grid, spec, b, beta, beta_star, &run_cfg);
        if let Ok(r) = &outcome {
            if r.u.values.iter().any(|v| *v > 0.0) {
                last = Some((b, r.clone()));
            }
        }
        let entry = SweepEntry { b, outcome };
        on_entry(&entry);
        out.push(entry);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, sample_potential, HKind, Well};
    use std::f64::consts::PI;

    fn square(h: f64) -> DomainGrid {
        build_grid(
            &Shape::Rectangle {
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 1.0,
            },
            h,
        )
        .unwrap()
    }

    fn discrete_eig(n: f64) -> f64 {
        2.0 * 4.0 * n * n * (PI / (2.0 * n)).sin().powi(2)
    }

    #[test]
    fn linear_problem_recovers_principal_eigenvalue() {
        let g = square(1.0 / 32.0);
        let v = PotentialSpec::zero(&g);
        for scheme in [FlowScheme::Explicit, FlowScheme::Preconditioned] {
            let cfg = FlowConfig {
                init: InitKind::Gaussian {
                    center: [0.4, 0.55],
                    width: 0.2,
                },
                scheme,
                grad_tol: 1e-7,
                max_iters: 20000,
                ..FlowConfig::default()
            };
            let r = minimize(&g, &v, 0.0, 0.0, 11.7, &cfg).unwrap();
            assert!(r.converged, "{scheme:?}: {:?} {} {:e} {}", r.status, r.iterations, r.grad_norm, r.breakdown.total);
            assert!((r.breakdown.total - discrete_eig(32.0)).abs() < 1e-8, "{scheme:?}");
            assert!(r.max_mass_drift < 1e-12);
            assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn eigenmode_init_on_disk_is_positive() {
        let g = build_grid(
            &Shape::Disk {
                center: [0.0, 0.0],
                radius: 1.0,
            },
            1.0 / 16.0,
        )
        .unwrap();
        let u = initial_field(&g, &InitKind::Eigenmode, 0, 0.0).unwrap();
        assert!((u.mass() - 1.0).abs() < 1e-12);
        let p = max_point(&g, &u);
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn ill_posed_refused() {
        let g = square(1.0 / 8.0);
        let v = PotentialSpec::zero(&g);
        let err = minimize(&g, &v, 0.0, 12.0, 11.7, &FlowConfig::default()).unwrap_err();
        assert!(matches!(err, MinimizeError::IllPosed { .. }));
    }

    #[test]
    fn quadratic_peak_is_located_below_grid_scale() {
        let g = square(1.0 / 32.0);
        let c = [0.513, 0.471];
        let u = Field::from_fn(&g, |x| 1.0 - 20.0 * ((x[0] - c[0]).powi(2) + 2.0 * (x[1] - c[1]).powi(2)));
        let p = max_point(&g, &u);
        assert!((p[0] - c[0]).abs() < 1e-10 && (p[1] - c[1]).abs() < 1e-10, "{p:?}");
    }

    #[test]
    fn single_entry_sweep_matches_minimize() {
        let g = square(1.0 / 24.0);
        let v = sample_potential(&g, &[Well { x: [0.5, 0.5], p: 2.0 }], HKind::Constant(1.0)).unwrap();
        let cfg = FlowConfig {
            init: InitKind::Gaussian {
                center: [0.5, 0.5],
                width: 0.15,
            },
            ..FlowConfig::default()
        };
        let direct = minimize(&g, &v, 0.05, 5.0, 11.7, &cfg).unwrap();
        let sweep = continuation_sweep(&g, &v, 5.0, 11.7, &[0.05], &cfg, SweepGuide::default()).unwrap();
        assert_eq!(sweep[0].outcome.as_ref().unwrap(), &direct);
    }

    #[test]
    fn gaussian_and_eigenmode_starts_agree() {
        let g = square(1.0 / 32.0);
        let v = sample_potential(&g, &[Well { x: [0.5, 0.5], p: 2.0 }], HKind::Constant(1.0)).unwrap();
        let cfg = FlowConfig {
            grad_tol: 1e-9,
            ..FlowConfig::default()
        };
        let (a, e) = compare_inits(&g, &v, 0.05, 8.0, 11.7, &cfg, [0.5, 0.5], 0.15).unwrap();
        assert!(a.converged && e.converged);
        assert!(a.u.values.iter().zip(&e.u.values).all(|(x, y)| (x - y).abs() < 1e-5));
    }

    #[test]
    fn distinct_local_minima_are_flagged() {
        let g = build_grid(
            &Shape::Rectangle {
                x0: 0.0,
                x1: 2.0,
                y0: 0.0,
                y1: 1.0,
            },
            1.0 / 32.0,
        )
        .unwrap();
        let wells = [Well { x: [0.5, 0.5], p: 2.0 }, Well { x: [1.5, 0.5], p: 2.0 }];
        let v = sample_potential(&g, &wells, HKind::Constant(1.0)).unwrap();
        let cfg = FlowConfig {
            grad_tol: 1e-9,
            ..FlowConfig::default()
        };
        let err = compare_inits(&g, &v, 0.01, 20.0, 11.7, &cfg, [1.5, 0.5], 0.1).unwrap_err();
        assert!(matches!(err, MinimizeError::AmbiguousMinimum { .. }), "{err:?}");
    }

    #[test]
    fn sweep_rejects_increasing_b() {
        let g = square(1.0 / 8.0);
        let v = PotentialSpec::zero(&g);
        assert!(continuation_sweep(&g, &v, 1.0, 11.7, &[0.1, 0.2], &FlowConfig::default(), SweepGuide::default()).is_err());
        assert!(continuation_sweep(&g, &v, 1.0, 11.7, &[], &FlowConfig::default(), SweepGuide::default()).is_err());
    }
}
