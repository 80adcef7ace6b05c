//! Radial ground state of `-Δu + u - u³ = 0` in the plane.
//!
//! The profile `Q` is found by shooting on `Q(0)` and bisecting between
//! trajectories that cross zero (too large a start) and trajectories that turn
//! back up before decaying (too small a start). Past the radius where double
//! precision can no longer hold the separatrix, the tail is continued by the
//! matched linear decay `c·K₀(r)`.
//!
//! All norms are radial integrals with the `2πr` Jacobian, evaluated with the
//! endpoint-corrected trapezoid rule on the shooting grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower end of the shooting bracket for `Q(0)`.
pub const BRACKET_LO: f64 = 1.0;
/// Upper end of the shooting bracket for `Q(0)`.
pub const BRACKET_HI: f64 = 10.0;
/// Trajectories with `|Q|` above this are treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 50.0;

/// Smallest radius at which the asymptotic Bessel tail is trusted.
const MIN_MATCH_RADIUS: f64 = 8.0;
/// Relative split between the two bracketing trajectories that marks the end
/// of the trustworthy shooting region.
const SPLIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundStateError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shooting bracket could not be established within [{lo}, {hi}]")]
    NonConvergence { lo: f64, hi: f64 },
    #[error("{n_nodes} nodes cannot resolve the profile to relative tolerance {tol:e} (step {step:e})")]
    ResolutionError { n_nodes: usize, tol: f64, step: f64 },
    #[error("moment of order {0} not present in table")]
    MissingMoment(f64),
}

/// The radial ground state sampled on a uniform grid `[0, r_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub r_nodes: Vec<f64>,
    pub q_values: Vec<f64>,
    pub q_prime: Vec<f64>,
    pub r_max: f64,
    /// `∫Q²` over the plane, i.e. the critical coupling `β*`.
    pub mass: f64,
    /// `∫|∇Q|²` over the plane.
    pub grad_norm: f64,
    /// `∫Q⁴` over the plane.
    pub quartic: f64,
    pub q_at_zero: f64,
    /// Coefficient `c` of the decay `c·K₀(r)` used beyond the matching radius.
    pub tail_coeff: f64,
    /// Radius from which the Bessel tail replaces the shooting trajectory.
    pub match_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShotOutcome {
    /// Start value too large: the trajectory reaches zero.
    CrossesZero,
    /// Start value too small: the trajectory turns back before decaying.
    TurnsBack,
    /// Reached the end of the grid without either event.
    Undecided,
}

struct Shot {
    outcome: ShotOutcome,
    q: Vec<f64>,
    qp: Vec<f64>,
}

#[inline]
fn rhs(r: f64, q: f64, qp: f64) -> (f64, f64) {
    (qp, -qp / r + q - q * q * q)
}

/// Integrates the radial ODE from `Q(0) = s`, stopping at the first event.
fn shoot(s: f64, dr: f64, n: usize) -> Shot {
    let mut q = Vec::with_capacity(n);
    let mut qp = Vec::with_capacity(n);
    q.push(s);
    qp.push(0.0);
    // Series start removes the 1/r singularity at the origin.
    let c2 = (s - s * s * s) / 4.0;
    q.push(s + c2 * dr * dr);
    qp.push(2.0 * c2 * dr);

    let mut outcome = ShotOutcome::Undecided;
    for k in 1..n - 1 {
        let r = k as f64 * dr;
        let (y, yp) = (q[k], qp[k]);
        let (k1a, k1b) = rhs(r, y, yp);
        let (k2a, k2b) = rhs(r + 0.5 * dr, y + 0.5 * dr * k1a, yp + 0.5 * dr * k1b);
        let (k3a, k3b) = rhs(r + 0.5 * dr, y + 0.5 * dr * k2a, yp + 0.5 * dr * k2b);
        let (k4a, k4b) = rhs(r + dr, y + dr * k3a, yp + dr * k3b);
        let ny = y + dr / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        let nyp = yp + dr / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        q.push(ny);
        qp.push(nyp);
        if ny <= 0.0 {
            outcome = ShotOutcome::CrossesZero;
            break;
        }
        if nyp > 0.0 || ny.abs() > DIVERGENCE_THRESHOLD {
            outcome = ShotOutcome::TurnsBack;
            break;
        }
    }
    if q.len() == 2 && s <= 1.0 {
        outcome = ShotOutcome::TurnsBack;
    }
    if outcome == ShotOutcome::Undecided && s <= 1.0 {
        // Q ≡ 1 is an equilibrium; it never decays.
        outcome = ShotOutcome::TurnsBack;
    }
    Shot { outcome, q, qp }
}

/// Asymptotic series of `e^r·sqrt(2r/π)·K_ν(r)` for large `r`.
fn bessel_k_scaled(nu: f64, r: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=12 {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (k as f64 * 8.0 * r);
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
    }
    sum
}

/// `K₀(r)` up to the constant `sqrt(π/2)`, valid for `r ≳ 8`.
fn k0_shape(r: f64) -> f64 {
    bessel_k_scaled(0.0, r) * (-r).exp() / r.sqrt()
}

/// `K₁(r)` up to the same constant.
fn k1_shape(r: f64) -> f64 {
    bessel_k_scaled(1.0, r) * (-r).exp() / r.sqrt()
}

/// Trapezoid rule on a uniform grid with the leading Euler–Maclaurin
/// endpoint correction `-(dx²/12)(f′(b) − f′(a))`.
///
/// Radial integrands `r·g(r)` have a nonzero slope at the origin, so the plain
/// rule is only second order there; the slopes are taken from second-order
/// one-sided differences, which makes the rule fourth order on smooth data.
pub(crate) fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..n - 1].iter().sum();
    let plain = dx * (0.5 * (values[0] + values[n - 1]) + interior);
    if n < 3 {
        return plain;
    }
    let slope_a = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx);
    let slope_b = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx);
    plain - dx * dx / 12.0 * (slope_b - slope_a)
}

/// Solves for the positive radial ground state on `[0, r_max]`.
pub fn solve_ground_state(
    r_max: f64,
    n_nodes: usize,
    shoot_tol: f64,
) -> Result<RadialProfile, GroundStateError> {
    if !(r_max >= 10.0) {
        return Err(GroundStateError::InvalidArgument(format!(
            "r_max must be at least 10, got {r_max}"
        )));
    }
    if n_nodes < 1000 {
        return Err(GroundStateError::InvalidArgument(format!(
            "n_nodes must be at least 1000, got {n_nodes}"
        )));
    }
    if !(shoot_tol > 0.0 && shoot_tol <= 1e-3) {
        return Err(GroundStateError::InvalidArgument(format!(
            "shoot_tol must lie in (0, 1e-3], got {shoot_tol}"
        )));
    }
    let dr = r_max / (n_nodes - 1) as f64;
    // RK4 global error ~ C·dr⁴ with C = O(1) for this profile; a start value
    // cannot be pinned more finely than the integrator resolves it.
    if dr.powi(4) > shoot_tol.max(1e-14) * 1e4 {
        return Err(GroundStateError::ResolutionError {
            n_nodes,
            tol: shoot_tol,
            step: dr,
        });
    }

    let mut lo = BRACKET_LO;
    let mut hi = BRACKET_HI;
    let lo_shot = shoot(lo, dr, n_nodes);
    let hi_shot = shoot(hi, dr, n_nodes);
    if lo_shot.outcome != ShotOutcome::TurnsBack || hi_shot.outcome != ShotOutcome::CrossesZero {
        return Err(GroundStateError::NonConvergence { lo, hi });
    }

    // Bisect to exhaustion: the radius at which the two bracketing
    // trajectories separate grows only logarithmically with the bracket width.
    let mut undecided: Option<Shot> = None;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let shot = shoot(mid, dr, n_nodes);
        match shot.outcome {
            ShotOutcome::CrossesZero => hi = mid,
            ShotOutcome::TurnsBack => lo = mid,
            ShotOutcome::Undecided => {
                undecided = Some(shot);
                break;
            }
        }
    }
    if undecided.is_none() && hi - lo > shoot_tol * lo {
        return Err(GroundStateError::NonConvergence { lo, hi });
    }

    let (q_traj, qp_traj, usable) = match undecided {
        Some(shot) => {
            let len = shot.q.len();
            (shot.q, shot.qp, len)
        }
        None => {
            let a = shoot(lo, dr, n_nodes);
            let b = shoot(hi, dr, n_nodes);
            let len = a.q.len().min(b.q.len());
            let mut usable = 0;
            for k in 0..len {
                let qa = a.q[k];
                let qb = b.q[k];
                if qa <= 0.0 || qb <= 0.0 || (k > 0 && (a.qp[k] >= 0.0 || b.qp[k] >= 0.0)) {
                    break;
                }
                if (qa - qb).abs() > SPLIT_TOLERANCE * qa.min(qb) {
                    break;
                }
                usable = k + 1;
            }
            let q: Vec<f64> = (0..usable).map(|k| 0.5 * (a.q[k] + b.q[k])).collect();
            let qp: Vec<f64> = (0..usable).map(|k| 0.5 * (a.qp[k] + b.qp[k])).collect();
            (q, qp, usable)
        }
    };

    // Back off from the split point so the matched tail starts on a clean
    // stretch of trajectory.
    let back_off = (1.0 / dr).ceil() as usize;
    let match_idx = usable.saturating_sub(back_off).min(n_nodes - 1);
    let match_radius = match_idx as f64 * dr;
    if match_idx + 1 < n_nodes && match_radius < MIN_MATCH_RADIUS {
        return Err(GroundStateError::NonConvergence { lo, hi });
    }

    let tail_coeff = if match_idx + 1 < n_nodes || match_radius >= MIN_MATCH_RADIUS {
        q_traj[match_idx] / k0_shape(match_radius.max(MIN_MATCH_RADIUS))
    } else {
        0.0
    };

    let mut r_nodes = Vec::with_capacity(n_nodes);
    let mut q_values = Vec::with_capacity(n_nodes);
    let mut q_prime = Vec::with_capacity(n_nodes);
    for k in 0..n_nodes {
        let r = k as f64 * dr;
        r_nodes.push(r);
        if k <= match_idx && k < q_traj.len() {
            q_values.push(q_traj[k]);
            q_prime.push(qp_traj[k]);
        } else {
            q_values.push(tail_coeff * k0_shape(r));
            q_prime.push(-tail_coeff * k1_shape(r));
        }
    }

    let radial = |f: &dyn Fn(usize) -> f64| -> f64 {
        let integrand: Vec<f64> = (0..n_nodes).map(|k| r_nodes[k] * f(k)).collect();
        2.0 * PI * trapezoid(&integrand, dr)
    };
    let mass = radial(&|k| q_values[k] * q_values[k]);
    let grad_norm = radial(&|k| q_prime[k] * q_prime[k]);
    let quartic = radial(&|k| q_values[k].powi(4));

    Ok(RadialProfile {
        q_at_zero: q_values[0],
        r_nodes,
        q_values,
        q_prime,
        r_max,
        mass,
        grad_norm,
        quartic,
        tail_coeff,
        match_radius,
    })
}

impl RadialProfile {
    /// The critical coupling `β* = ∫Q²`.
    pub fn beta_star(&self) -> f64 {
        self.mass
    }

    pub fn step(&self) -> f64 {
        self.r_nodes[1] - self.r_nodes[0]
    }

    /// `Q(r)` by cubic Hermite interpolation; Bessel tail beyond `r_max`.
    pub fn value(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= self.r_max {
            return self.tail_coeff * k0_shape(r);
        }
        let (k, s, dr) = self.locate(r);
        let (h00, h10, h01, h11) = hermite_basis(s);
        h00 * self.q_values[k]
            + h10 * dr * self.q_prime[k]
            + h01 * self.q_values[k + 1]
            + h11 * dr * self.q_prime[k + 1]
    }

    /// `Q′(r)` from the same Hermite interpolant.
    pub fn derivative(&self, r: f64) -> f64 {
        let r = r.abs();
        if r >= self.r_max {
            return -self.tail_coeff * k1_shape(r);
        }
        let (k, s, dr) = self.locate(r);
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -6.0 * s * s + 6.0 * s;
        let d11 = 3.0 * s * s - 2.0 * s;
        (d00 * self.q_values[k] + d01 * self.q_values[k + 1]) / dr
            + d10 * self.q_prime[k]
            + d11 * self.q_prime[k + 1]
    }

    fn locate(&self, r: f64) -> (usize, f64, f64) {
        let dr = self.step();
        let n = self.r_nodes.len();
        let k = ((r / dr).floor() as usize).min(n - 2);
        let s = (r - self.r_nodes[k]) / dr;
        (k, s, dr)
    }

    /// Least-squares `c` in `Q ≈ c·r^{-1/2}e^{-r}` over `[r_max/2, r_max]`,
    /// and the worst relative deviation from that fit.
    pub fn tail_fit(&self) -> (f64, f64) {
        let half = self.r_max / 2.0;
        let pts: Vec<(f64, f64)> = self
            .r_nodes
            .iter()
            .zip(&self.q_values)
            .filter(|(r, _)| **r >= half)
            .map(|(r, q)| (r.powf(-0.5) * (-r).exp(), *q))
            .collect();
        let num: f64 = pts.iter().map(|(g, q)| g * q).sum();
        let den: f64 = pts.iter().map(|(g, _)| g * g).sum();
        let c = num / den;
        let worst = pts
            .iter()
            .map(|(g, q)| ((q - c * g) / (c * g)).abs())
            .fold(0.0, f64::max);
        (c, worst)
    }
}

fn hermite_basis(s: f64) -> (f64, f64, f64, f64) {
    let s2 = s * s;
    let s3 = s2 * s;
    (
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    )
}

/// A moment `m_p = ∫|x|^p Q²` together with its truncation diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moment {
    pub p: f64,
    pub value: f64,
    /// Share of the integral coming from the outer 10% of radii.
    pub tail_share: f64,
    /// Set when `tail_share` exceeds `1e-6`, i.e. `r_max` is too small for `p`.
    pub truncated: bool,
}

/// `m_p = 2π ∫₀^{r_max} r^{p+1} Q(r)² dr` by the (endpoint-corrected) trapezoid rule.
pub fn moment(profile: &RadialProfile, p: f64) -> Result<Moment, GroundStateError> {
    if !(p >= 0.0) {
        return Err(GroundStateError::InvalidArgument(format!(
            "moment order must be nonnegative, got {p}"
        )));
    }
    let dr = profile.step();
    let integrand: Vec<f64> = profile
        .r_nodes
        .iter()
        .zip(&profile.q_values)
        .map(|(r, q)| 2.0 * PI * r.powf(p + 1.0) * q * q)
        .collect();
    let value = trapezoid(&integrand, dr);
    let cut = (0.9 * (integrand.len() - 1) as f64).floor() as usize;
    let tail = trapezoid(&integrand[cut..], dr);
    let tail_share = if value > 0.0 { tail / value } else { 0.0 };
    let truncated = tail_share > 1e-6;
    if truncated {
        log::warn!("moment p={p}: outer 10% of radii carry {tail_share:.3e} of the integral");
    }
    Ok(Moment {
        p,
        value,
        tail_share,
        truncated,
    })
}

/// Precomputed moments `m_p`, always including `m_0 = β*`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    entries: Vec<(f64, f64)>,
}

impl MomentTable {
    pub fn new(profile: &RadialProfile, exponents: &[f64]) -> Result<Self, GroundStateError> {
        let mut entries = vec![(0.0, moment(profile, 0.0)?.value)];
        for &p in exponents {
            if entries.iter().all(|(q, _)| *q != p) {
                entries.push((p, moment(profile, p)?.value));
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { entries })
    }

    pub fn get(&self, p: f64) -> Option<f64> {
        self.entries.iter().find(|(q, _)| *q == p).map(|(_, m)| *m)
    }

    pub fn beta_star(&self) -> f64 {
        self.entries[0].1
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }
}

/// `λ_i = (p·κ_i·m_p / (2β*))^{1/(p+2)}`.
pub fn lambda_constant(kappa: f64, p: f64, moments: &MomentTable) -> Result<f64, GroundStateError> {
    if !(kappa > 0.0) || !(p > 0.0) {
        return Err(GroundStateError::InvalidArgument(format!(
            "lambda needs kappa > 0 and p > 0, got kappa={kappa}, p={p}"
        )));
    }
    let m_p = moments.get(p).ok_or(GroundStateError::MissingMoment(p))?;
    Ok((p * kappa * m_p / (2.0 * moments.beta_star())).powf(1.0 / (p + 2.0)))
}
