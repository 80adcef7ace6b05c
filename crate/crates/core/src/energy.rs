//! Discrete Kirchhoff energy on a masked grid.
//!
//! `E_b(u) = ∫|∇u|² + (b/2)(∫|∇u|²)² + ∫V u² − (β/2)∫u⁴`
//!
//! The kinetic term is the forward-difference quadratic form summed over all
//! lattice edges; every volume term is a nodal sum weighted by `hx·hy`. The
//! gradient below is the exact gradient of this discrete functional.

use thiserror::Error;

use crate::geometry::{DomainGrid, GridLayout, PotentialSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("field and potential live on different grids")]
    GridMismatch,
    #[error("closed form needs beta > beta*, got beta = {beta}, beta* = {beta_star}")]
    DomainError { beta: f64, beta_star: f64 },
    #[error("field has zero L2 norm")]
    ZeroField,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A real function on the lattice, zero outside the interior mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub layout: GridLayout,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &DomainGrid) -> Self {
        Field {
            layout: grid.layout,
            values: vec![0.0; grid.layout.len()],
        }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(grid: &DomainGrid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let mut u = Field::zeros(grid);
        for (i, j, k) in grid.interior_nodes() {
            u.values[k] = f(grid.layout.coords(i, j));
        }
        u
    }

    /// `∫u²` by nodal quadrature.
    pub fn mass(&self) -> f64 {
        self.layout.cell_area() * pairwise_sum(self.values.len(), |k| self.values[k] * self.values[k])
    }

    /// Rescales to unit `L²` norm.
    pub fn normalize(&mut self) -> Result<(), EnergyError> {
        let m = self.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(EnergyError::ZeroField);
        }
        let s = 1.0 / m.sqrt();
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear interpolation, zero outside the lattice.
    pub fn sample(&self, x: [f64; 2]) -> f64 {
        let l = &self.layout;
        let fx = (x[0] - l.origin[0]) / l.hx;
        let fy = (x[1] - l.origin[1]) / l.hy;
        if !(fx >= 0.0 && fy >= 0.0) || fx > (l.nx - 1) as f64 || fy > (l.ny - 1) as f64 {
            return 0.0;
        }
        let i = (fx.floor() as usize).min(l.nx.saturating_sub(2));
        let j = (fy.floor() as usize).min(l.ny.saturating_sub(2));
        let (s, t) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| self.values[l.index(a, b)];
        (1.0 - s) * (1.0 - t) * v(i, j)
            + s * (1.0 - t) * v(i + 1, j)
            + (1.0 - s) * t * v(i, j + 1)
            + s * t * v(i + 1, j + 1)
    }

    fn check(&self, grid: &DomainGrid) -> Result<(), EnergyError> {
        if self.layout != grid.layout || self.values.len() != grid.layout.len() {
            return Err(EnergyError::GridMismatch);
        }
        Ok(())
    }
}

/// Weighted inner product `hx·hy·Σ a·b`.
pub fn inner(layout: &GridLayout, a: &[f64], b: &[f64]) -> f64 {
    layout.cell_area() * pairwise_sum(a.len(), |k| a[k] * b[k])
}

const PAIRWISE_BLOCK: usize = 256;

/// Pairwise (cascade) summation of `f(0) + … + f(n−1)`.
pub fn pairwise_sum(n: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
    fn go(lo: usize, hi: usize, f: impl Fn(usize) -> f64 + Copy) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut s = 0.0;
            for k in lo..hi {
                s += f(k);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, f)
}

/// Forward-difference Dirichlet energy `∫|∇u|²`.
pub fn kinetic(layout: &GridLayout, u: &[f64]) -> f64 {
    let (nx, ny) = (layout.nx, layout.ny);
    let (ax, ay) = (1.0 / (layout.hx * layout.hx), 1.0 / (layout.hy * layout.hy));
    let s = pairwise_sum(u.len(), |k| {
        let i = k % nx;
        let mut e = 0.0;
        if i + 1 < nx {
            let d = u[k + 1] - u[k];
            e += ax * d * d;
        }
        if k + nx < nx * ny {
            let d = u[k + nx] - u[k];
            e += ay * d * d;
        }
        e
    });
    layout.cell_area() * s
}

/// Edge bilinear form `∫∇a·∇b` of the forward-difference kinetic term.
pub fn kinetic_bilinear(layout: &GridLayout, a: &[f64], b: &[f64]) -> f64 {
    let (nx, ny) = (layout.nx, layout.ny);
    let (ax, ay) = (1.0 / (layout.hx * layout.hx), 1.0 / (layout.hy * layout.hy));
    let s = pairwise_sum(a.len(), |k| {
        let i = k % nx;
        let mut e = 0.0;
        if i + 1 < nx {
            e += ax * (a[k + 1] - a[k]) * (b[k + 1] - b[k]);
        }
        if k + nx < nx * ny {
            e += ay * (a[k + nx] - a[k]) * (b[k + nx] - b[k]);
        }
        e
    });
    layout.cell_area() * s
}

/// Energy and mass differences between two nearby fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyChange {
    pub energy: f64,
    pub mass: f64,
}

/// `E(v) − E(u)` and `∫v² − ∫u²` evaluated from difference fields, so that
/// changes far below the roundoff of either total are still resolved. `ku`,
/// `kv` are the kinetic terms of `u` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn energy_change(
    layout: &GridLayout,
    u: &[f64],
    v: &[f64],
    pot: &[f64],
    b: f64,
    beta: f64,
    ku: f64,
    kv: f64,
    diff: &mut [f64],
    sum: &mut [f64],
) -> EnergyChange {
    for k in 0..u.len() {
        diff[k] = v[k] - u[k];
        sum[k] = v[k] + u[k];
    }
    let w = layout.cell_area();
    let dk = kinetic_bilinear(layout, diff, sum);
    let (diff, sum) = (&*diff, &*sum);
    let dp = w * pairwise_sum(u.len(), |k| pot[k] * diff[k] * sum[k]);
    let dq = w * pairwise_sum(u.len(), |k| diff[k] * sum[k] * (u[k] * u[k] + v[k] * v[k]));
    let dm = w * pairwise_sum(u.len(), |k| diff[k] * sum[k]);
    EnergyChange {
        energy: dk + 0.5 * b * dk * (ku + kv) + dp - 0.5 * beta * dq,
        mass: dm,
    }
}

/// Masked 5-point Laplacian; zero outside the mask.
pub fn laplacian(grid: &DomainGrid, u: &[f64], out: &mut [f64]) {
    let l = &grid.layout;
    let nx = l.nx;
    let (ax, ay) = (1.0 / (l.hx * l.hx), 1.0 / (l.hy * l.hy));
    for (k, o) in out.iter_mut().enumerate() {
        *o = if grid.interior_mask[k] {
            ax * (u[k - 1] - 2.0 * u[k] + u[k + 1]) + ay * (u[k - nx] - 2.0 * u[k] + u[k + nx])
        } else {
            0.0
        };
    }
}

/// Parts of the discrete energy of one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    /// `∫|∇u|²`
    pub kinetic: f64,
    /// `(b/2)(∫|∇u|²)²`
    pub kirchhoff: f64,
    /// `∫V u²`
    pub potential: f64,
    /// `(β/2)∫u⁴`
    pub quartic: f64,
    pub total: f64,
    /// `∫|∇u|² + ∫Vu² + b(∫|∇u|²)² − β∫u⁴`
    pub mu: f64,
    /// `∫u⁴`
    pub l4: f64,
    /// `∫u²`
    pub mass: f64,
}

fn breakdown(kin: f64, pot: f64, l4: f64, mass: f64, b: f64, beta: f64) -> EnergyBreakdown {
    let kirchhoff = 0.5 * b * kin * kin;
    let quartic = 0.5 * beta * l4;
    EnergyBreakdown {
        kinetic: kin,
        kirchhoff,
        potential: pot,
        quartic,
        total: kin + kirchhoff + pot - quartic,
        mu: kin + pot + 2.0 * kirchhoff - 2.0 * quartic,
        l4,
        mass,
    }
}

fn check_coeffs(b: f64, beta: f64) -> Result<(), EnergyError> {
    if !(b >= 0.0) || !(beta >= 0.0) || !b.is_finite() || !beta.is_finite() {
        return Err(EnergyError::InvalidArgument(format!(
            "need b >= 0 and beta >= 0, got b = {b}, beta = {beta}"
        )));
    }
    Ok(())
}

/// Raw sums shared by evaluation and the solver's inner loop.
pub(crate) fn energy_parts(
    layout: &GridLayout,
    u: &[f64],
    v: &[f64],
    b: f64,
    beta: f64,
) -> EnergyBreakdown {
    let w = layout.cell_area();
    let kin = kinetic(layout, u);
    let pot = w * pairwise_sum(u.len(), |k| v[k] * u[k] * u[k]);
    let l4 = w * pairwise_sum(u.len(), |k| {
        let s = u[k] * u[k];
        s * s
    });
    let mass = w * pairwise_sum(u.len(), |k| u[k] * u[k]);
    breakdown(kin, pot, l4, mass, b, beta)
}

pub fn evaluate(
    grid: &DomainGrid,
    u: &Field,
    b: f64,
    beta: f64,
    spec: &PotentialSpec,
) -> Result<EnergyBreakdown, EnergyError> {
    check_coeffs(b, beta)?;
    u.check(grid)?;
    if spec.layout != grid.layout {
        return Err(EnergyError::GridMismatch);
    }
    Ok(energy_parts(&grid.layout, &u.values, &spec.values, b, beta))
}

/// Writes `g = −2(1 + b·K)Δ_h u + 2Vu − 2βu³` into `out`, given `K`.
pub(crate) fn gradient_into(
    grid: &DomainGrid,
    u: &[f64],
    v: &[f64],
    b: f64,
    beta: f64,
    kin: f64,
    out: &mut [f64],
) {
    laplacian(grid, u, out);
    let c = 1.0 + b * kin;
    for (k, o) in out.iter_mut().enumerate() {
        if grid.interior_mask[k] {
            let x = u[k];
            *o = -2.0 * c * *o + 2.0 * v[k] * x - 2.0 * beta * x * x * x;
        }
    }
}

/// Unconstrained `L²` gradient of the discrete energy (with respect to the
/// `hx·hy`-weighted inner product).
pub fn gradient(
    grid: &DomainGrid,
    u: &Field,
    b: f64,
    beta: f64,
    spec: &PotentialSpec,
) -> Result<Field, EnergyError> {
    check_coeffs(b, beta)?;
    u.check(grid)?;
    if spec.layout != grid.layout {
        return Err(EnergyError::GridMismatch);
    }
    let kin = kinetic(&grid.layout, &u.values);
    let mut g = Field::zeros(grid);
    gradient_into(grid, &u.values, &spec.values, b, beta, kin, &mut g.values);
    Ok(g)
}

/// Closed-form whole-plane energy for `β > β*` and its companion rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarEnergy {
    /// `−(1/(2b))·((β − β*)/β*)²`
    pub energy: f64,
    /// `(β − β*)/(b·β*)`
    pub r_b: f64,
}

pub fn bar_energy(b: f64, beta: f64, beta_star: f64) -> Result<BarEnergy, EnergyError> {
    if !(b > 0.0) {
        return Err(EnergyError::InvalidArgument(format!("need b > 0, got {b}")));
    }
    if !(beta > beta_star) {
        return Err(EnergyError::DomainError { beta, beta_star });
    }
    let q = (beta - beta_star) / beta_star;
    Ok(BarEnergy {
        energy: -q * q / (2.0 * b),
        r_b: q / b,
    })
}

/// `∫u⁴ / (∫|∇u|²·∫u²)`, bounded by `2/β*` in the continuum.
pub fn gn_ratio(grid: &DomainGrid, u: &Field) -> Result<f64, EnergyError> {
    u.check(grid)?;
    let mass = u.mass();
    let kin = kinetic(&grid.layout, &u.values);
    if !(mass > 0.0) || !(kin > 0.0) {
        return Err(EnergyError::ZeroField);
    }
    let w = grid.layout.cell_area();
    let l4 = w * pairwise_sum(u.values.len(), |k| u.values[k].powi(4));
    Ok(l4 / (kin * mass))
}

/// Euler–Lagrange residual `‖−(1+bK)Δ_h u + Vu − μu − βu³‖₂`.
pub fn euler_lagrange_residual(
    grid: &DomainGrid,
    u: &Field,
    b: f64,
    beta: f64,
    spec: &PotentialSpec,
) -> Result<f64, EnergyError> {
    let e = evaluate(grid, u, b, beta, spec)?;
    let mut g = gradient(grid, u, b, beta, spec)?;
    for (gk, uk) in g.values.iter_mut().zip(&u.values) {
        *gk = 0.5 * *gk - e.mu * uk;
    }
    Ok(g.mass().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, sample_potential, HKind, Shape, Well};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
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

    fn sine(grid: &DomainGrid) -> Field {
        Field::from_fn(grid, |x| 2.0 * (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    #[test]
    fn sine_mode_closed_forms() {
        let mut prev = f64::INFINITY;
        for n in [32.0, 64.0, 128.0] {
            let g = square(1.0 / n);
            let v = PotentialSpec::zero(&g);
            let e = evaluate(&g, &sine(&g), 0.0, 2.0, &v).unwrap();
            let err = (e.total - (2.0 * PI * PI - 2.25)).abs();
            assert!(err < prev / 3.5, "no second-order decay: {err} after {prev}");
            prev = err;
        }
        assert!(prev < 2e-3);
        let g = square(1.0 / 128.0);
        let v = PotentialSpec::zero(&g);
        let e = evaluate(&g, &sine(&g), 0.1, 0.0, &v).unwrap();
        let k = 2.0 * PI * PI;
        assert!((e.total - (k + 0.05 * k * k)).abs() / e.total < 2e-3);
    }

    #[test]
    fn zero_field_has_zero_parts() {
        let g = square(1.0 / 16.0);
        let v = PotentialSpec::zero(&g);
        let e = evaluate(&g, &Field::zeros(&g), 0.3, 2.0, &v).unwrap();
        assert_eq!(
            (e.kinetic, e.kirchhoff, e.potential, e.quartic, e.total),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(gn_ratio(&g, &Field::zeros(&g)), Err(EnergyError::ZeroField));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = square(1.0 / 24.0);
        let v = sample_potential(&g, &[Well { x: [0.4, 0.5], p: 2.0 }], HKind::Constant(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Field::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
        let (b, beta) = (0.05, 3.0);
        let grad = gradient(&g, &u, b, beta, &v).unwrap();
        let eps = 1e-5;
        let shifted = |s: f64| {
            let mut f = u.clone();
            f.values.iter_mut().zip(&w.values).for_each(|(a, d)| *a += s * d);
            evaluate(&g, &f, b, beta, &v).unwrap().total
        };
        let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        let an = inner(&g.layout, &grad.values, &w.values);
        assert!((fd - an).abs() / an.abs() < 1e-6, "fd {fd} vs {an}");
    }

    #[test]
    fn eigenmode_gradient_is_parallel() {
        let g = square(1.0 / 32.0);
        let v = PotentialSpec::zero(&g);
        let mut u = sine(&g);
        u.normalize().unwrap();
        let grad = gradient(&g, &u, 0.0, 0.0, &v).unwrap();
        let lam = 2.0 * 4.0 * (PI / 64.0).sin().powi(2) * 32.0 * 32.0;
        for (a, b) in grad.values.iter().zip(&u.values) {
            assert!((a - 2.0 * lam * b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn kirchhoff_part_of_gradient_is_linear_in_b() {
        let g = square(1.0 / 16.0);
        let v = PotentialSpec::zero(&g);
        let u = Field::from_fn(&g, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * (1.0 + x[0]));
        let b = 0.2;
        let g1 = gradient(&g, &u, b, 1.0, &v).unwrap();
        let g2 = gradient(&g, &u, 2.0 * b, 1.0, &v).unwrap();
        let kin = kinetic(&g.layout, &u.values);
        let mut lap = vec![0.0; u.values.len()];
        laplacian(&g, &u.values, &mut lap);
        for k in 0..lap.len() {
            let expect = -2.0 * b * kin * lap[k];
            assert!((g2.values[k] - g1.values[k] - expect).abs() < 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn bar_energy_values() {
        let bs = 11.7;
        assert_eq!(bar_energy(0.5, 2.0 * bs, bs).unwrap(), BarEnergy { energy: -1.0, r_b: 2.0 });
        assert_eq!(bar_energy(0.1, 2.0 * bs, bs).unwrap().energy, -5.0);
        assert!(matches!(
            bar_energy(0.1, bs, bs),
            Err(EnergyError::DomainError { .. })
        ));
        let a = bar_energy(0.01, 1.5 * bs, bs).unwrap().energy * 0.01;
        let c = bar_energy(0.003, 1.5 * bs, bs).unwrap().energy * 0.003;
        assert!((a - c).abs() < 1e-15);
    }

    #[test]
    fn gn_ratio_of_sine_mode() {
        let g = square(1.0 / 128.0);
        let r = gn_ratio(&g, &sine(&g)).unwrap();
        assert!((r - 2.25 / (2.0 * PI * PI)).abs() < 1e-3);
        let mut s = sine(&g);
        s.values.iter_mut().for_each(|v| *v *= -3.7);
        assert!((gn_ratio(&g, &s).unwrap() - r).abs() < 1e-14);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let a = square(1.0 / 16.0);
        let b = square(1.0 / 8.0);
        let v = PotentialSpec::zero(&a);
        assert_eq!(
            evaluate(&a, &Field::zeros(&b), 0.0, 0.0, &v),
            Err(EnergyError::GridMismatch)
        );
    }
}
