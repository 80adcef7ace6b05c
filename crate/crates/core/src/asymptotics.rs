//! Limit constants for the four concentration regimes, scaling fits over
//! sweeps, profile comparison against `Q`, trial-function upper bounds and
//! blow-up diagnostics.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{self, Field};
use crate::geometry::{DomainGrid, PotentialSpec, WellClassification};
use crate::groundstate::RadialProfile;
use crate::minimizer::MinimizeResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("regime {regime} is inconsistent with the inputs: {reason}")]
    RegimeMismatch { regime: Regime, reason: String },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("no interior minimum of h on (0, 1/(e+1)) for a = {a}")]
    BracketFailure { a: f64 },
    #[error("trial function support leaves the domain")]
    TrialOutsideDomain,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Energy(#[from] energy::EnergyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Regime {
    /// `β = β*`, an interior flattest well.
    CritInterior,
    /// `β = β*`, flattest wells only on the boundary.
    CritBoundary,
    /// `β > β*`, an interior flattest well.
    SuperInterior,
    /// `β > β*`, flattest wells only on the boundary.
    SuperBoundary,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::CritInterior,
        Regime::CritBoundary,
        Regime::SuperInterior,
        Regime::SuperBoundary,
    ];

    pub fn is_critical(self) -> bool {
        matches!(self, Regime::CritInterior | Regime::CritBoundary)
    }

    pub fn is_interior(self) -> bool {
        matches!(self, Regime::CritInterior | Regime::SuperInterior)
    }

    /// Regime implied by `β` and the well classification. `β` within a
    /// relative `1e-9` of `β*` counts as critical.
    pub fn detect(
        beta: f64,
        beta_star: f64,
        wells: &WellClassification,
    ) -> Result<Regime, AsymptoticsError> {
        let crit = (beta - beta_star).abs() <= 1e-9 * beta_star;
        if !crit && beta < beta_star {
            return Err(AsymptoticsError::InvalidArgument(format!(
                "beta = {beta} lies below beta* = {beta_star}; no concentration regime applies"
            )));
        }
        Ok(match (crit, wells.has_interior()) {
            (true, true) => Regime::CritInterior,
            (true, false) => Regime::CritBoundary,
            (false, true) => Regime::SuperInterior,
            (false, false) => Regime::SuperBoundary,
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::CritInterior => "CRIT_INTERIOR",
            Regime::CritBoundary => "CRIT_BOUNDARY",
            Regime::SuperInterior => "SUPER_INTERIOR",
            Regime::SuperBoundary => "SUPER_BOUNDARY",
        })
    }
}

impl FromStr for Regime {
    type Err = AsymptoticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AsymptoticsError::InvalidArgument(format!("unknown regime '{s}'")))
    }
}

impl TryFrom<String> for Regime {
    type Error = AsymptoticsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

/// Constants entering a regime's limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeInputs {
    pub p: f64,
    /// Required for the interior regimes.
    pub lambda: Option<f64>,
    pub kappa: f64,
    pub beta: f64,
    pub beta_star: f64,
}

/// Limits of the normalized energy, blow-up length and peak offset.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePrediction {
    pub regime: Regime,
    pub inputs: RegimeInputs,
    /// Limit of the normalized energy, as stated for the regime.
    pub energy_limit: f64,
    /// Energy limit recomputed by minimising the two-term bound
    /// `b/(2ε⁴) + (κ m_p/β*)·ε^p` over `ε`. Differs from `energy_limit`
    /// only in `CritInterior`, where it carries `(p+4)/(2p)` in place of
    /// `(p+2)/(2p)`.
    pub energy_limit_rederived: f64,
    pub eps_limit: f64,
    pub dist_limit: f64,
    pub energy_normalizer: &'static str,
    pub eps_normalizer: &'static str,
    pub dist_normalizer: &'static str,
}

/// Normalized observables of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub energy: f64,
    pub eps: f64,
    pub dist: f64,
}

pub fn predict(regime: Regime, inputs: RegimeInputs) -> Result<RegimePrediction, AsymptoticsError> {
    let RegimeInputs {
        p,
        lambda,
        kappa,
        beta,
        beta_star,
    } = inputs;
    let mismatch = |reason: &str| AsymptoticsError::RegimeMismatch {
        regime,
        reason: reason.to_string(),
    };
    if !(p > 0.0) || !(kappa > 0.0) || !(beta_star > 0.0) {
        return Err(AsymptoticsError::InvalidArgument(
            "p, kappa and beta* must be positive".into(),
        ));
    }
    if regime.is_critical() {
        if (beta - beta_star).abs() > 1e-9 * beta_star {
            return Err(mismatch("critical regimes need beta = beta*"));
        }
    } else if !(beta > beta_star) {
        return Err(mismatch("supercritical regimes need beta > beta*"));
    }
    let lam = if regime.is_interior() {
        let l = lambda.ok_or_else(|| mismatch("interior regimes need lambda"))?;
        if !(l > 0.0) {
            return Err(mismatch("lambda must be positive"));
        }
        l
    } else {
        f64::NAN
    };
    let q = p + 4.0;
    let log_dist = (p + 2.0) / 2.0;
    let pred = match regime {
        Regime::CritInterior => {
            let scale = lam.powf(4.0 * (p + 2.0) / q);
            RegimePrediction {
                regime,
                inputs,
                energy_limit: (p + 2.0) / (2.0 * p) * scale,
                energy_limit_rederived: (p + 4.0) / (2.0 * p) * scale,
                eps_limit: lam.powf(-(p + 2.0) / q),
                dist_limit: 0.0,
                energy_normalizer: "b^(p/(p+4))",
                eps_normalizer: "b^(1/(p+4))",
                dist_normalizer: "eps_b",
            }
        }
        Regime::CritBoundary => {
            let bracket = (p / 4.0).powf(4.0 / q) + (4.0 / p).powf(p / q);
            let e = kappa.powf(4.0 / q)
                * 2f64.powf(-5.0 * p / q)
                * ((p + 2.0) / q).powf(4.0 * p / q)
                * bracket;
            RegimePrediction {
                regime,
                inputs,
                energy_limit: e,
                energy_limit_rederived: e,
                eps_limit: (2f64.powf(p + 1.0) / (p * kappa)).powf(1.0 / q)
                    * (q / (p + 2.0)).powf(p / q),
                dist_limit: log_dist,
                energy_normalizer: "b^(p/(p+4))*ln(2/b)^(4p/(p+4))",
                eps_normalizer: "b^(1/(p+4))*ln(2/b)^(p/(p+4))",
                dist_normalizer: "eps_b*|ln eps_b|",
            }
        }
        Regime::SuperInterior => {
            let e = 2.0 * lam.powf(p + 2.0) / p;
            RegimePrediction {
                regime,
                inputs,
                energy_limit: e,
                energy_limit_rederived: e,
                eps_limit: 1.0,
                dist_limit: 0.0,
                energy_normalizer: "eps^p",
                eps_normalizer: "(beta* b/(beta-beta*))^(1/2)",
                dist_normalizer: "eps",
            }
        }
        Regime::SuperBoundary => {
            let e = kappa * log_dist.powf(p);
            RegimePrediction {
                regime,
                inputs,
                energy_limit: e,
                energy_limit_rederived: e,
                eps_limit: 1.0,
                dist_limit: log_dist,
                energy_normalizer: "eps^p*|ln eps|^p",
                eps_normalizer: "(beta* b/(beta-beta*))^(1/2)",
                dist_normalizer: "eps*|ln eps|",
            }
        }
    };
    Ok(pred)
}

impl RegimePrediction {
    /// `(β*b/(β−β*))^{1/2}`; only meaningful for `β > β*`.
    pub fn closed_form_eps(&self, b: f64) -> f64 {
        let i = &self.inputs;
        (i.beta_star * b / (i.beta - i.beta_star)).sqrt()
    }

    /// Length used in the distance normalizer: the measured blow-up length
    /// at `β = β*`, the closed form at `β > β*`.
    pub fn rate(&self, b: f64, eps_measured: f64) -> f64 {
        if self.regime.is_critical() {
            eps_measured
        } else {
            self.closed_form_eps(b)
        }
    }

    pub fn energy_scale(&self, b: f64, eps_measured: f64) -> f64 {
        let p = self.inputs.p;
        let q = p + 4.0;
        match self.regime {
            Regime::CritInterior => b.powf(p / q),
            Regime::CritBoundary => b.powf(p / q) * (2.0 / b).ln().powf(4.0 * p / q),
            Regime::SuperInterior => self.rate(b, eps_measured).powf(p),
            Regime::SuperBoundary => {
                let e = self.rate(b, eps_measured);
                (e * e.ln().abs()).powf(p)
            }
        }
    }

    pub fn eps_scale(&self, b: f64) -> f64 {
        let p = self.inputs.p;
        let q = p + 4.0;
        match self.regime {
            Regime::CritInterior => b.powf(1.0 / q),
            Regime::CritBoundary => b.powf(1.0 / q) * (2.0 / b).ln().powf(p / q),
            Regime::SuperInterior | Regime::SuperBoundary => self.closed_form_eps(b),
        }
    }

    pub fn dist_scale(&self, b: f64, eps_measured: f64) -> f64 {
        let e = self.rate(b, eps_measured);
        if self.regime.is_interior() {
            e
        } else {
            e * e.ln().abs()
        }
    }

    /// Normalizes one sweep point. `energy` is `e(b)` at `β = β*` and
    /// `e(b) − ē(b)` at `β > β*` (the caller picks the reference energy).
    pub fn normalize(&self, b: f64, energy: f64, eps_measured: f64, dist: f64) -> Normalized {
        Normalized {
            energy: energy / self.energy_scale(b, eps_measured),
            eps: eps_measured / self.eps_scale(b),
            dist: dist / self.dist_scale(b, eps_measured),
        }
    }
}

/// Least-squares fit of `|v| ≈ C·b^α·(ln(2/b))^γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    /// Zero when the log term is disabled.
    pub log_power: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    /// `(smallest b, largest b)` of the fitted points.
    pub window: (f64, f64),
}

pub fn fit_scaling(points: &[(f64, f64)], with_log: bool) -> Result<ScalingFit, AsymptoticsError> {
    if points.len() < 4 {
        return Err(AsymptoticsError::DegenerateFit(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(b, v)| !(*b > 0.0) || !b.is_finite() || !v.is_finite()) {
        return Err(AsymptoticsError::InvalidArgument(
            "b must be positive and values finite".into(),
        ));
    }
    if points.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(AsymptoticsError::InvalidArgument("b must be strictly decreasing".into()));
    }
    let sign = points[0].1.signum();
    if sign == 0.0 || points.iter().any(|(_, v)| v.signum() != sign) {
        return Err(AsymptoticsError::InvalidArgument(
            "values must be nonzero and of one sign".into(),
        ));
    }
    let cols = if with_log { 3 } else { 2 };
    let n = points.len();
    let mut a = DMatrix::<f64>::zeros(n, cols);
    let mut y = DVector::<f64>::zeros(n);
    for (k, (b, v)) in points.iter().enumerate() {
        a[(k, 0)] = 1.0;
        a[(k, 1)] = b.ln();
        if with_log {
            let l = (2.0 / b).ln();
            if !(l > 0.0) {
                return Err(AsymptoticsError::InvalidArgument(
                    "log-corrected fits need b < 2".into(),
                ));
            }
            a[(k, 2)] = l.ln();
        }
        y[k] = v.abs().ln();
    }
    // Column scaling keeps the rank test meaningful.
    let mut scale = vec![1.0; cols];
    for c in 0..cols {
        let norm = a.column(c).norm();
        if norm > 0.0 {
            scale[c] = norm;
            a.column_mut(c).scale_mut(1.0 / norm);
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(AsymptoticsError::DegenerateFit(format!(
            "design matrix is rank deficient (condition {:.3e})",
            smax / smin
        )));
    }
    let coef = svd
        .solve(&y, 1e-14)
        .map_err(|e| AsymptoticsError::DegenerateFit(e.to_string()))?;
    let coef: Vec<f64> = (0..cols).map(|c| coef[c] / scale[c]).collect();
    let fitted = DVector::from_iterator(
        n,
        points.iter().map(|(b, _)| {
            let mut f = coef[0] + coef[1] * b.ln();
            if with_log {
                f += coef[2] * (2.0 / b).ln().ln();
            }
            f
        }),
    );
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(ScalingFit {
        exponent: coef[1],
        log_power: if with_log { coef[2] } else { 0.0 },
        prefactor: sign * coef[0].exp(),
        r_squared,
        window: (points[n - 1].0, points[0].0),
    })
}

/// Fit over the smallest `window` entries of a sweep (points ordered by
/// decreasing `b`).
pub fn fit_tail(
    points: &[(f64, f64)],
    window: usize,
    with_log: bool,
) -> Result<ScalingFit, AsymptoticsError> {
    let start = points.len().saturating_sub(window);
    fit_scaling(&points[start..], with_log)
}

/// Distances between a rescaled field and `Q/√β*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileDistance {
    /// Relative `L²` distance.
    pub l2: f64,
    /// Relative `H¹`-seminorm distance.
    pub h1: f64,
    /// Fraction of the comparison window lying outside the domain.
    pub clipped_fraction: f64,
    pub clipped: bool,
}

const PROFILE_WINDOW: f64 = 10.0;

/// Compares `w(x) = ε·u(εx + z)` with `Q(|x|)/√β*` on `|x| ≤ 10`, using the
/// grid nodes inside the window (nodes outside the domain carry `u = 0`).
pub fn profile_distance(
    grid: &DomainGrid,
    u: &Field,
    center: [f64; 2],
    eps: f64,
    profile: &RadialProfile,
) -> Result<ProfileDistance, AsymptoticsError> {
    if !(eps > 0.0) {
        return Err(AsymptoticsError::InvalidArgument("eps must be positive".into()));
    }
    let l = &grid.layout;
    let norm = 1.0 / profile.beta_star().sqrt();
    let radius = PROFILE_WINDOW * eps;
    let (i0, j0) = grid.nearest_node(center);
    let ri = (radius / l.hx).ceil() as usize + 1;
    let rj = (radius / l.hy).ceil() as usize + 1;
    let (ilo, ihi) = (i0.saturating_sub(ri), (i0 + ri).min(l.nx - 1));
    let (jlo, jhi) = (j0.saturating_sub(rj), (j0 + rj).min(l.ny - 1));
    let target = |y: [f64; 2]| -> (f64, [f64; 2]) {
        let x = [(y[0] - center[0]) / eps, (y[1] - center[1]) / eps];
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let q = norm * profile.value(r);
        let dq = norm * profile.derivative(r);
        let g = if r > 0.0 { [dq * x[0] / r, dq * x[1] / r] } else { [0.0, 0.0] };
        (q, g)
    };
    let inside = |y: [f64; 2]| ((y[0] - center[0]).powi(2) + (y[1] - center[1]).powi(2)).sqrt() <= radius;
    let (mut d0, mut n0, mut d1, mut n1) = (0.0, 0.0, 0.0, 0.0);
    let (mut total, mut outside) = (0usize, 0usize);
    let (sx, sy) = (l.hx / eps, l.hy / eps);
    for j in jlo..=jhi {
        for i in ilo..=ihi {
            let y = l.coords(i, j);
            if !inside(y) {
                continue;
            }
            total += 1;
            let k = l.index(i, j);
            if !grid.interior_mask[k] {
                outside += 1;
            }
            let w = eps * u.values[k];
            let (q, _) = target(y);
            d0 += (w - q).powi(2);
            n0 += q * q;
            // Forward differences against the exact gradient at edge midpoints.
            if i < ihi {
                let ym = [y[0] + 0.5 * l.hx, y[1]];
                let dw = eps * (u.values[k + 1] - u.values[k]) / sx;
                let (_, g) = target(ym);
                d1 += (dw - g[0]).powi(2);
                n1 += g[0] * g[0];
            }
            if j < jhi {
                let ym = [y[0], y[1] + 0.5 * l.hy];
                let dw = eps * (u.values[k + l.nx] - u.values[k]) / sy;
                let (_, g) = target(ym);
                d1 += (dw - g[1]).powi(2);
                n1 += g[1] * g[1];
            }
        }
    }
    if total == 0 || n0 == 0.0 {
        return Err(AsymptoticsError::InvalidArgument(
            "comparison window contains no nodes".into(),
        ));
    }
    // Window nodes beyond the lattice are outside the domain as well.
    let full = std::f64::consts::PI * radius * radius / l.cell_area();
    let clipped_fraction = ((outside as f64 + (full - total as f64).max(0.0)) / full).clamp(0.0, 1.0);
    let clipped = clipped_fraction > 0.5;
    if clipped {
        warn!("profile window leaves the domain ({:.0}% outside)", 100.0 * clipped_fraction);
    }
    Ok(ProfileDistance {
        l2: (d0 / n0).sqrt(),
        h1: if n1 > 0.0 { (d1 / n1).sqrt() } else { 0.0 },
        clipped_fraction,
        clipped,
    })
}

/// `profile_distance` about the result's peak with the regime's rate.
pub fn result_profile_distance(
    grid: &DomainGrid,
    result: &MinimizeResult,
    eps: f64,
    profile: &RadialProfile,
) -> Result<ProfileDistance, AsymptoticsError> {
    profile_distance(grid, &result.u, result.max_point, eps, profile)
}

/// `1` on `[0, 1]`, `0` beyond `1 + width`, quintic `C²` blend between.
fn cutoff(s: f64, width: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 1.0 + width {
        0.0
    } else {
        let t = (s - 1.0) / width;
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// A regime's trial function and its discrete energy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBound {
    pub energy: f64,
    pub tau: f64,
    pub center: [f64; 2],
    /// Outer radius of the cutoff support.
    pub support: f64,
    pub field: Field,
}

/// Builds the regime's cut-off, rescaled `Q` trial function on the grid,
/// normalizes it and returns its discrete energy (an upper bound for the
/// discrete minimum).
pub fn trial_upper_bound(
    pred: &RegimePrediction,
    grid: &DomainGrid,
    spec: &PotentialSpec,
    wells: &WellClassification,
    profile: &RadialProfile,
    b: f64,
) -> Result<TrialBound, AsymptoticsError> {
    if !(b > 0.0) {
        return Err(AsymptoticsError::InvalidArgument("b must be positive".into()));
    }
    let RegimeInputs {
        p, beta, beta_star, ..
    } = pred.inputs;
    let q = p + 4.0;
    let h = grid.hx().max(grid.hy());
    let (tau, center, inner, outer) = match pred.regime {
        Regime::CritInterior | Regime::SuperInterior => {
            let well = wells.lambda_well.ok_or_else(|| AsymptoticsError::RegimeMismatch {
                regime: pred.regime,
                reason: "no interior flattest well".into(),
            })?;
            let x = spec.wells[well].x;
            let tau = if pred.regime == Regime::CritInterior {
                wells.lambda_i[wells.z1.iter().position(|w| *w == well).unwrap()]
                    .powf((p + 2.0) / q)
                    * b.powf(-1.0 / q)
            } else {
                1.0 / pred.closed_form_eps(b)
            };
            // B_{2R}(x_i) stays one cell inside the domain.
            let r = 0.5 * (grid.signed_distance(x) - h);
            if !(r > 0.0) {
                return Err(AsymptoticsError::TrialOutsideDomain);
            }
            (tau, x, r, 2.0 * r)
        }
        Regime::CritBoundary | Regime::SuperBoundary => {
            let well = wells.boundary_well().ok_or_else(|| AsymptoticsError::RegimeMismatch {
                regime: pred.regime,
                reason: "no boundary flattest well".into(),
            })?;
            let x = spec.wells[well].x;
            let kappa = wells.kappa[well];
            let tau = if pred.regime == Regime::CritBoundary {
                (p * kappa / 2f64.powf(p + 1.0)).powf(1.0 / q)
                    * ((p + 2.0) / q).powf(p / q)
                    * b.powf(-1.0 / q)
                    * (2.0 / b).ln().powf(p / q)
            } else {
                1.0 / pred.closed_form_eps(b)
            };
            if !(tau > std::f64::consts::E) {
                return Err(AsymptoticsError::InvalidArgument(format!(
                    "tau = {tau} too small for the boundary construction"
                )));
            }
            let r_tau = (p + 2.0) / 2.0 * tau.ln() / tau;
            let xi = tau.ln().powf(-0.5);
            let n = grid.outward_normal(x);
            let c = [x[0] - (1.0 + xi) * r_tau * n[0], x[1] - (1.0 + xi) * r_tau * n[1]];
            (tau, c, r_tau, (1.0 + xi) * r_tau)
        }
    };
    if tau < 10.0 / grid.diameter() {
        return Err(AsymptoticsError::InvalidArgument(format!(
            "tau = {tau:.3} below 10/diam: b is too large for the trial construction"
        )));
    }
    let width = outer / inner - 1.0;
    let norm = tau / beta_star.sqrt();
    let mut field = Field::zeros(grid);
    let l = &grid.layout;
    for j in 0..l.ny {
        for i in 0..l.nx {
            let y = l.coords(i, j);
            let r = ((y[0] - center[0]).powi(2) + (y[1] - center[1]).powi(2)).sqrt();
            let psi = cutoff(r / inner, width);
            if psi == 0.0 {
                continue;
            }
            let k = l.index(i, j);
            if !grid.interior_mask[k] {
                // The boundary construction touches ∂Ω at x_i only.
                if pred.regime.is_interior() || r < outer * (1.0 - 1e-9) - h {
                    return Err(AsymptoticsError::TrialOutsideDomain);
                }
                continue;
            }
            field.values[k] = norm * psi * profile.value(tau * r);
        }
    }
    field.normalize()?;
    let e = energy::evaluate(grid, &field, b, beta, spec)?;
    Ok(TrialBound {
        energy: e.total,
        tau,
        center,
        support: outer,
        field,
    })
}

/// Numerical and asymptotic minimizers of `h(t) = a t⁻⁴ + γ t^p (ln 1/t)^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HMinimizer {
    pub t0: f64,
    pub h_t0: f64,
    pub t0_asymptotic: f64,
    pub h_asymptotic: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes `h` on `(0, 1/(e+1))` by golden-section search in `ln t`.
pub fn h_minimizer(a: f64, gamma: f64, p: f64) -> Result<HMinimizer, AsymptoticsError> {
    if !(a > 0.0 && gamma > 0.0 && p > 0.0) {
        return Err(AsymptoticsError::InvalidArgument(
            "a, gamma and p must be positive".into(),
        ));
    }
    // log h as a function of s = ln t, stable for very small t.
    let log_h = |s: f64| -> f64 {
        let x = a.ln() - 4.0 * s;
        let y = gamma.ln() + p * s + p * (-s).ln();
        let m = x.max(y);
        m + ((x - m).exp() + (y - m).exp()).ln()
    };
    let s_hi = -(std::f64::consts::E + 1.0).ln();
    // Coarse scan down to where the a-term alone exceeds the value at s_hi.
    let s_lo = (a.ln() - log_h(s_hi)) / 4.0 - 1.0;
    let s_lo = s_lo.min(s_hi - 1.0);
    let n = 2000;
    let step = (s_hi - s_lo) / n as f64;
    let (k_best, _) = (0..=n)
        .map(|k| (k, log_h(s_lo + k as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    if k_best == n || k_best == 0 {
        return Err(AsymptoticsError::BracketFailure { a });
    }
    let (mut lo, mut hi) = (
        s_lo + (k_best - 1) as f64 * step,
        s_lo + (k_best + 1) as f64 * step,
    );
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (log_h(x1), log_h(x2));
    for _ in 0..200 {
        if hi - lo < 1e-15 * (1.0 + lo.abs()) {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = log_h(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = log_h(x2);
        }
    }
    let s = 0.5 * (lo + hi);
    let q = p + 4.0;
    let la = (1.0 / a).ln();
    Ok(HMinimizer {
        t0: s.exp(),
        h_t0: log_h(s).exp(),
        t0_asymptotic: (4.0 / (p * gamma)).powf(1.0 / q)
            * q.powf(p / q)
            * a.powf(1.0 / q)
            * la.powf(-p / q),
        h_asymptotic: gamma.powf(4.0 / q)
            * (1.0 / q).powf(4.0 * p / q)
            * ((p / 4.0).powf(4.0 / q) + (4.0 / p).powf(p / q))
            * a.powf(p / q)
            * la.powf(4.0 * p / q),
    })
}

/// Per-`b` quantities that should blow up or vanish along a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUpRow {
    pub b: f64,
    pub kinetic: f64,
    /// `b·(∫|∇u|²)²`
    pub kirchhoff_scaled: f64,
    pub potential: f64,
    /// `∫u⁴`
    pub l4: f64,
    /// `∫|∇u|²/r_b` when `β > β*`.
    pub kinetic_over_rb: Option<f64>,
    /// `∫u⁴/(2r_b/β*)` when `β > β*`.
    pub quartic_over_rb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowUpTable {
    pub rows: Vec<BlowUpRow>,
    /// Kinetic term strictly increasing as `b` decreases (`None` for one row).
    pub kinetic_increasing: Option<bool>,
    /// `b·K²` strictly decreasing as `b` decreases (`None` for one row).
    pub kirchhoff_decreasing: Option<bool>,
}

/// Rows must be ordered by decreasing `b`.
pub fn blow_up_diagnostics(
    sweep: &[(f64, &MinimizeResult)],
    beta: f64,
    beta_star: f64,
) -> BlowUpTable {
    let rows: Vec<BlowUpRow> = sweep
        .iter()
        .map(|(b, r)| {
            let e = &r.breakdown;
            let rb = (beta > beta_star).then(|| (beta - beta_star) / (b * beta_star));
            BlowUpRow {
                b: *b,
                kinetic: e.kinetic,
                kirchhoff_scaled: b * e.kinetic * e.kinetic,
                potential: e.potential,
                l4: e.l4,
                kinetic_over_rb: rb.map(|rb| e.kinetic / rb),
                quartic_over_rb: rb.map(|rb| e.l4 / (2.0 * rb / beta_star)),
            }
        })
        .collect();
    let trend = |f: &dyn Fn(&BlowUpRow, &BlowUpRow) -> bool| {
        (rows.len() > 1).then(|| rows.windows(2).all(|w| f(&w[0], &w[1])))
    };
    BlowUpTable {
        kinetic_increasing: trend(&|a, b| b.kinetic > a.kinetic),
        kirchhoff_decreasing: trend(&|a, b| b.kirchhoff_scaled < a.kirchhoff_scaled),
        rows,
    }
}
