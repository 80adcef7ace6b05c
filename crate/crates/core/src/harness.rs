//! Run configuration, the sweep pipeline and its on-disk artifacts.
//!
//! A run directory holds `q_profile.csv`, `sweep.csv` (one row per `b`,
//! flushed as soon as the row is known), `report.csv`, `fits.csv` and the
//! last converged field as `final.kfld`. The ground state is cached under
//! `KMINLAB_CACHE_DIR`, the configured cache directory, or `<out>/cache`.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticsError, Regime, RegimeInputs, RegimePrediction};
use crate::energy::{self, EnergyError, Field};
use crate::geometry::{
    self, DomainGrid, GeometryError, GridLayout, HKind, PotentialSpec, Shape, Well,
    WellClassification,
};
use crate::groundstate::{self, GroundStateError, MomentTable, RadialProfile};
use crate::minimizer::{
    self, FlowConfig, FlowScheme, InitKind, MinimizeError, MinimizeResult, SweepEntry, SweepGuide,
};

pub const CACHE_ENV: &str = "KMINLAB_CACHE_DIR";

/// A configuration problem, located by line and/or field when known.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config")?;
        if let Some(l) = self.line {
            write!(f, " line {l}")?;
        }
        if let Some(k) = &self.field {
            write!(f, " field '{k}'")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            field: Some(field.to_string()),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: malformed field file: {reason}")]
    Kfld { path: PathBuf, reason: String },
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Minimize(#[from] MinimizeError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// `β` given directly or as a multiple of `β*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaSpec {
    Absolute(f64),
    Ratio(f64),
}

impl BetaSpec {
    pub fn value(self, beta_star: f64) -> f64 {
        match self {
            BetaSpec::Absolute(b) => b,
            BetaSpec::Ratio(r) => r * beta_star,
        }
    }
}

/// Strictly decreasing list of `b` values.
///
/// Written as `hi:lo:geometric:n`, `hi:lo:linear:n` or `list:b1,b2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BGrid {
    Geometric { hi: f64, lo: f64, n: usize },
    Linear { hi: f64, lo: f64, n: usize },
    List(Vec<f64>),
}

impl BGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            BGrid::List(v) => v.clone(),
            BGrid::Geometric { hi, n: 1, .. } | BGrid::Linear { hi, n: 1, .. } => vec![*hi],
            BGrid::Geometric { hi, lo, n } => (0..*n)
                .map(|k| hi * (lo / hi).powf(k as f64 / (*n - 1) as f64))
                .collect(),
            BGrid::Linear { hi, lo, n } => (0..*n)
                .map(|k| hi + (lo - hi) * k as f64 / (*n - 1) as f64)
                .collect(),
        }
    }

    fn check(&self) -> Result<(), String> {
        let v = self.values();
        if v.is_empty() {
            return Err("b grid is empty".into());
        }
        if v.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err("b values must be positive and finite".into());
        }
        if v.windows(2).any(|w| !(w[1] < w[0])) {
            return Err("b values must be strictly decreasing".into());
        }
        Ok(())
    }
}

impl fmt::Display for BGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BGrid::Geometric { hi, lo, n } => write!(f, "{hi:e}:{lo:e}:geometric:{n}"),
            BGrid::Linear { hi, lo, n } => write!(f, "{hi:e}:{lo:e}:linear:{n}"),
            BGrid::List(v) => {
                let items: Vec<String> = v.iter().map(|b| format!("{b:e}")).collect();
                write!(f, "list:{}", items.join(","))
            }
        }
    }
}

impl FromStr for BGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{}' is not a number", t.trim()))
        };
        let grid = if let Some(rest) = s.strip_prefix("list:") {
            let v = if rest.trim().is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(num).collect::<Result<Vec<_>, _>>()?
            };
            BGrid::List(v)
        } else {
            let parts: Vec<&str> = s.split(':').collect();
            let [hi, lo, kind, n] = parts[..] else {
                return Err(format!("expected 'hi:lo:geometric|linear:n' or 'list:...', got '{s}'"));
            };
            let (hi, lo) = (num(hi)?, num(lo)?);
            let n = n
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("'{}' is not a point count", n.trim()))?;
            match kind.trim() {
                "geometric" => BGrid::Geometric { hi, lo, n },
                "linear" => BGrid::Linear { hi, lo, n },
                k => return Err(format!("unknown spacing '{k}'")),
            }
        };
        grid.check()?;
        Ok(grid)
    }
}

impl TryFrom<String> for BGrid {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BGrid> for String {
    fn from(g: BGrid) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShapeBlock {
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    Disk {
        center: [f64; 2],
        radius: f64,
    },
    /// Rows of `#` (interior) and `.` (exterior), first row at `y = origin.y`.
    Mask {
        origin: [f64; 2],
        hx: f64,
        hy: f64,
        rows: Vec<String>,
        #[serde(default)]
        assume_interior_ball: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    /// Lattice spacing (ignored by masks, which carry their own).
    pub h: f64,
    pub shape: ShapeBlock,
}

impl DomainBlock {
    pub fn to_shape(&self) -> Result<Shape, ConfigError> {
        Ok(match &self.shape {
            ShapeBlock::Rectangle { x0, x1, y0, y1 } => Shape::Rectangle {
                x0: *x0,
                x1: *x1,
                y0: *y0,
                y1: *y1,
            },
            ShapeBlock::Disk { center, radius } => Shape::Disk {
                center: *center,
                radius: *radius,
            },
            ShapeBlock::Mask {
                origin,
                hx,
                hy,
                rows,
                assume_interior_ball,
            } => {
                let ny = rows.len();
                let nx = rows.first().map_or(0, |r| r.chars().count());
                let mut mask = Vec::with_capacity(nx * ny);
                for (j, row) in rows.iter().enumerate() {
                    if row.chars().count() != nx {
                        return Err(ConfigError::field(
                            &format!("domain.shape.rows[{j}]"),
                            format!("row has {} cells, expected {nx}", row.chars().count()),
                        ));
                    }
                    for c in row.chars() {
                        mask.push(match c {
                            '#' => true,
                            '.' => false,
                            other => {
                                return Err(ConfigError::field(
                                    &format!("domain.shape.rows[{j}]"),
                                    format!("unexpected character '{other}'"),
                                ))
                            }
                        });
                    }
                }
                Shape::Mask {
                    nx,
                    ny,
                    hx: *hx,
                    hy: *hy,
                    origin: *origin,
                    mask,
                    assume_interior_ball: *assume_interior_ball,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellBlock {
    pub x: [f64; 2],
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    /// `const:c` or `bump:eps,cx,cy,w`.
    pub h: String,
    pub wells: Vec<WellBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateBlock {
    pub r_max: f64,
    pub n_nodes: usize,
    pub tol: f64,
}

impl Default for GroundStateBlock {
    fn default() -> Self {
        GroundStateBlock {
            r_max: 20.0,
            n_nodes: 8000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    /// Gaussian at the predicted peak with the predicted width.
    Auto,
    Eigenmode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Preconditioned,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowBlock {
    pub scheme: SchemeName,
    pub init: InitName,
    pub max_iters: usize,
    pub energy_tol: f64,
    pub grad_tol: f64,
    /// Divide `grad_tol` by the predicted `ε(b)²` at each `b`.
    pub relative_grad_tol: bool,
    pub backtracking: f64,
    pub stall_window: usize,
    pub noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step0: Option<f64>,
}

impl Default for FlowBlock {
    fn default() -> Self {
        FlowBlock {
            scheme: SchemeName::Preconditioned,
            init: InitName::Auto,
            max_iters: 4000,
            energy_tol: 1e-12,
            grad_tol: 1e-6,
            relative_grad_tol: true,
            backtracking: 0.5,
            stall_window: 50,
            noise: 0.0,
            step0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("kminlab-out"),
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub beta: BetaSpec,
    pub b_grid: BGrid,
    /// Forces a regime instead of detecting it; must still be consistent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    pub domain: DomainBlock,
    pub potential: PotentialBlock,
    #[serde(default)]
    pub groundstate: GroundStateBlock,
    #[serde(default)]
    pub flow: FlowBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    /// Parses and validates a TOML config.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            field: None,
            message: e.message().trim().to_string(),
        })?;
        cfg.validate().map_err(|mut err| {
            if err.line.is_none() {
                err.line = err.field.as_deref().and_then(|f| locate(text, f));
            }
            err
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(RunConfig::parse(&text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that does not need the ground state.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.b_grid
            .check()
            .map_err(|m| ConfigError::field("b_grid", m))?;
        match self.beta {
            BetaSpec::Absolute(b) | BetaSpec::Ratio(b) if !(b >= 0.0) || !b.is_finite() => {
                return Err(ConfigError::field("beta", "beta must be finite and nonnegative"))
            }
            _ => {}
        }
        let g = &self.groundstate;
        if !(g.r_max >= 10.0) || g.n_nodes < 100 || !(g.tol > 0.0) {
            return Err(ConfigError::field(
                "groundstate",
                "need r_max >= 10, n_nodes >= 100 and tol > 0",
            ));
        }
        self.flow_config(InitKind::Eigenmode)
            .validate()
            .map_err(|e| ConfigError::field("flow", e.to_string()))?;
        let hkind: HKind = self
            .potential
            .h
            .parse()
            .map_err(|e: GeometryError| ConfigError::field("potential.h", e.to_string()))?;
        if self.potential.wells.is_empty() {
            return Err(ConfigError::field("potential.wells", "at least one well is required"));
        }
        let grid = self.build_grid()?;
        let wells = self.wells();
        geometry::sample_potential(&grid, &wells, hkind).map_err(|e| {
            let field = match &e {
                GeometryError::WellOutsideClosure { index, .. } => {
                    format!("potential.wells[{index}]")
                }
                _ => "potential".to_string(),
            };
            ConfigError::field(&field, e.to_string())
        })?;
        Ok(())
    }

    pub fn build_grid(&self) -> Result<DomainGrid, ConfigError> {
        let shape = self.domain.to_shape()?;
        geometry::build_grid(&shape, self.domain.h)
            .map_err(|e| ConfigError::field("domain", e.to_string()))
    }

    pub fn wells(&self) -> Vec<Well> {
        self.potential
            .wells
            .iter()
            .map(|w| Well { x: w.x, p: w.p })
            .collect()
    }

    pub fn flow_config(&self, init: InitKind) -> FlowConfig {
        let f = &self.flow;
        FlowConfig {
            step0: f.step0,
            max_iters: f.max_iters,
            energy_tol: f.energy_tol,
            grad_tol: f.grad_tol,
            backtracking: f.backtracking,
            init,
            seed: self.seed,
            noise: f.noise,
            scheme: match f.scheme {
                SchemeName::Preconditioned => FlowScheme::Preconditioned,
                SchemeName::Explicit => FlowScheme::Explicit,
            },
            stall_window: f.stall_window,
        }
    }

    /// Cache directory: the environment override, the configured one, or
    /// `<out>/cache`.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.output.cache_dir.clone())
            .unwrap_or_else(|| self.output.dir.join("cache"))
    }
}

/// Line defining a dotted field (or its nearest defined parent).
fn locate(text: &str, field: &str) -> Option<usize> {
    let mut path = field.split('[').next()?.to_string();
    loop {
        let (section, key) = path.rsplit_once('.').unwrap_or(("", path.as_str()));
        let mut current = "";
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if let Some(h) = t.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
                current = h.trim();
                if current == path {
                    return Some(i + 1);
                }
            } else if current == section
                && t.split_once('=').is_some_and(|(k, _)| k.trim() == key)
            {
                return Some(i + 1);
            }
        }
        path = path.rsplit_once('.')?.0.to_string();
    }
}

/// Hex SHA-256 of the canonical TOML form of `inputs`.
pub fn cache_key<T: Serialize>(inputs: &T) -> String {
    let canonical = toml::to_string(inputs).expect("cache inputs serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// `cache_key` of a TOML document, insensitive to layout and key order.
pub fn cache_key_text(text: &str) -> Result<String, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(text, s.start)),
        field: None,
        message: e.message().trim().to_string(),
    })?;
    Ok(cache_key(&table))
}

/// Loads the ground state from the cache or solves and stores it.
pub fn cached_ground_state(
    block: &GroundStateBlock,
    cache_dir: &Path,
) -> Result<RadialProfile, HarnessError> {
    let path = cache_dir.join(format!("groundstate-{}.json", cache_key(block)));
    if let Ok(text) = fs::read_to_string(&path) {
        match serde_json::from_str::<RadialProfile>(&text) {
            Ok(p) => {
                info!("ground state from cache {}", path.display());
                return Ok(p);
            }
            Err(e) => warn!("ignoring unreadable cache entry {}: {e}", path.display()),
        }
    }
    let profile = groundstate::solve_ground_state(block.r_max, block.n_nodes, block.tol)?;
    fs::create_dir_all(cache_dir).map_err(io_err(cache_dir))?;
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string(&profile).expect("profile serializes");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(profile)
}

/// Everything a sweep needs besides the `b` values.
pub struct Setup {
    pub profile: RadialProfile,
    pub grid: DomainGrid,
    pub spec: PotentialSpec,
    pub wells: WellClassification,
    pub beta: f64,
    pub prediction: RegimePrediction,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Setup, HarnessError> {
        cfg.validate()?;
        let profile = cached_ground_state(&cfg.groundstate, &cfg.cache_dir())?;
        Setup::with_profile(cfg, profile)
    }

    pub fn with_profile(cfg: &RunConfig, profile: RadialProfile) -> Result<Setup, HarnessError> {
        let grid = cfg.build_grid()?;
        let hkind: HKind = cfg.potential.h.parse()?;
        let spec = geometry::sample_potential(&grid, &cfg.wells(), hkind)?;
        let wells = geometry::classify_wells(&spec, &grid, &profile)?;
        let beta_star = profile.beta_star();
        let beta = cfg.beta.value(beta_star);
        let detected = Regime::detect(beta, beta_star, &wells)?;
        let regime = match cfg.regime {
            Some(r) if r != detected => {
                return Err(AsymptoticsError::RegimeMismatch {
                    regime: r,
                    reason: format!("the configuration describes {detected}"),
                }
                .into())
            }
            Some(r) => r,
            None => detected,
        };
        let prediction = asymptotics::predict(
            regime,
            RegimeInputs {
                p: wells.p,
                lambda: wells.lambda,
                kappa: wells.kappa_min,
                beta,
                beta_star,
            },
        )?;
        Ok(Setup {
            profile,
            grid,
            spec,
            wells,
            beta,
            prediction,
        })
    }

    pub fn regime(&self) -> Regime {
        self.prediction.regime
    }

    pub fn beta_star(&self) -> f64 {
        self.profile.beta_star()
    }

    /// The well the mass is expected to concentrate at.
    pub fn target_well(&self) -> [f64; 2] {
        let i = if self.regime().is_interior() {
            self.wells.lambda_well
        } else {
            self.wells.boundary_well()
        };
        self.spec.wells[i.expect("regime implies a flattest well")].x
    }

    /// Predicted blow-up length.
    pub fn eps_predicted(&self, b: f64) -> f64 {
        let p = &self.prediction;
        p.eps_limit * p.eps_scale(b)
    }

    /// Predicted distance of the peak from the target well.
    pub fn dist_predicted(&self, b: f64) -> f64 {
        let e = self.eps_predicted(b);
        self.prediction.dist_limit * e * e.ln().abs()
    }

    pub fn initial_guess(&self, b: f64) -> InitKind {
        let cap = 0.25 * self.grid.diameter();
        let width = self.eps_predicted(b).min(cap);
        let x = self.target_well();
        let center = if self.regime().is_interior() {
            x
        } else {
            let n = self.grid.outward_normal(x);
            let d = self.dist_predicted(b).clamp(2.0 * self.grid.hx(), cap);
            [x[0] - d * n[0], x[1] - d * n[1]]
        };
        InitKind::Gaussian { center, width }
    }
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub b: f64,
    /// 1 when the run converged to a finite field.
    pub valid: u8,
    pub status: String,
    pub iterations: usize,
    pub energy: Option<f64>,
    pub kinetic: Option<f64>,
    pub kirchhoff: Option<f64>,
    pub potential: Option<f64>,
    pub quartic: Option<f64>,
    pub l4: Option<f64>,
    pub mu: Option<f64>,
    pub eps_b: Option<f64>,
    pub z_x: Option<f64>,
    pub z_y: Option<f64>,
    pub grad_norm: Option<f64>,
    pub residual: Option<f64>,
    pub mass_drift: Option<f64>,
    pub gn_ratio: Option<f64>,
    /// Closed-form whole-plane energy (`β > β*` only).
    pub bar_energy: Option<f64>,
    /// Minimum of the `V ≡ 0` problem on the same grid (`β > β*` only).
    pub aux_energy: Option<f64>,
}

impl SweepRow {
    fn failed(b: f64, status: String) -> SweepRow {
        SweepRow {
            b,
            valid: 0,
            status,
            iterations: 0,
            energy: None,
            kinetic: None,
            kirchhoff: None,
            potential: None,
            quartic: None,
            l4: None,
            mu: None,
            eps_b: None,
            z_x: None,
            z_y: None,
            grad_norm: None,
            residual: None,
            mass_drift: None,
            gn_ratio: None,
            bar_energy: None,
            aux_energy: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.valid == 1
    }

    pub fn max_point(&self) -> Option<[f64; 2]> {
        Some([self.z_x?, self.z_y?])
    }
}

fn describe_row(
    setup: &Setup,
    cfg: &RunConfig,
    entry: &SweepEntry,
) -> SweepRow {
    let b = entry.b;
    let r = match &entry.outcome {
        Ok(r) => r,
        Err(e) => return SweepRow::failed(b, format!("error: {e}")),
    };
    let e = &r.breakdown;
    let (bar, aux) = if setup.regime().is_critical() {
        (None, None)
    } else {
        let bar = energy::bar_energy(b, setup.beta, setup.beta_star()).ok().map(|x| x.energy);
        let aux_cfg = cfg.flow_config(InitKind::Eigenmode);
        let mut aux_cfg = aux_cfg;
        if cfg.flow.relative_grad_tol {
            aux_cfg.grad_tol /= setup.eps_predicted(b).powi(2);
        }
        let aux = minimizer::auxiliary_minimum(
            &setup.grid,
            r,
            b,
            setup.beta,
            setup.beta_star(),
            &aux_cfg,
        );
        let aux = match aux {
            Ok(a) if a.converged => Some(a.breakdown.total),
            Ok(a) => {
                warn!("auxiliary problem at b = {b:e} stopped with {:?}", a.status);
                Some(a.breakdown.total)
            }
            Err(err) => {
                warn!("auxiliary problem at b = {b:e} failed: {err}");
                None
            }
        };
        (bar, aux)
    };
    SweepRow {
        b,
        valid: u8::from(r.converged && r.u.is_finite()),
        status: format!("{:?}", r.status),
        iterations: r.iterations,
        energy: Some(e.total),
        kinetic: Some(e.kinetic),
        kirchhoff: Some(e.kirchhoff),
        potential: Some(e.potential),
        quartic: Some(e.quartic),
        l4: Some(e.l4),
        mu: Some(e.mu),
        eps_b: Some(r.eps_b),
        z_x: Some(r.max_point[0]),
        z_y: Some(r.max_point[1]),
        grad_norm: Some(r.grad_norm),
        residual: Some(r.residual),
        mass_drift: Some(r.max_mass_drift),
        gn_ratio: energy::gn_ratio(&setup.grid, &r.u).ok(),
        bar_energy: bar,
        aux_energy: aux,
    }
}

/// Sweep output: the rows as written and the fields of the converged runs.
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub results: Vec<Option<MinimizeResult>>,
}

impl SweepOutput {
    pub fn all_valid(&self) -> bool {
        self.rows.iter().all(SweepRow::is_valid)
    }

    /// Field of the smallest `b` that converged.
    pub fn last_field(&self) -> Option<(f64, &MinimizeResult)> {
        self.rows
            .iter()
            .zip(&self.results)
            .rev()
            .find(|(row, r)| row.is_valid() && r.is_some())
            .map(|(row, r)| (row.b, r.as_ref().unwrap()))
    }
}

/// Runs the continuation sweep, writing `sweep.csv` row by row when a path
/// is given.
pub fn run_sweep(
    setup: &Setup,
    cfg: &RunConfig,
    sweep_csv: Option<&Path>,
) -> Result<SweepOutput, HarnessError> {
    let b_list = cfg.b_grid.values();
    let init = match cfg.flow.init {
        InitName::Auto => setup.initial_guess(b_list[0]),
        InitName::Eigenmode => InitKind::Eigenmode,
    };
    let flow = cfg.flow_config(init);
    let eps = |b: f64| setup.eps_predicted(b);
    let dist = |b: f64| setup.dist_predicted(b);
    let guide = SweepGuide {
        eps: Some(&eps),
        anchor: (!setup.regime().is_interior()).then_some((setup.target_well(), &dist as &dyn Fn(f64) -> f64)),
        relative_grad_tol: cfg.flow.relative_grad_tol,
    };
    let mut writer = match sweep_csv {
        Some(path) => Some((
            csv::Writer::from_path(path).map_err(csv_err(path))?,
            path.to_path_buf(),
        )),
        None => None,
    };
    let mut rows = Vec::with_capacity(b_list.len());
    let mut write_err: Option<HarnessError> = None;
    let entries = minimizer::continuation_sweep_with(
        &setup.grid,
        &setup.spec,
        setup.beta,
        setup.beta_star(),
        &b_list,
        &flow,
        guide,
        &mut |entry| {
            let row = describe_row(setup, cfg, entry);
            info!(
                "b = {:.4e}: {} after {} iterations, e = {}",
                row.b,
                row.status,
                row.iterations,
                row.energy.map_or("-".into(), |e| format!("{e:.10e}"))
            );
            if let (Some((w, path)), None) = (writer.as_mut(), &write_err) {
                let res = w.serialize(&row).map_err(csv_err(path)).and_then(|_| {
                    w.flush().map_err(io_err(path))
                });
                if let Err(e) = res {
                    write_err = Some(e);
                }
            }
            rows.push(row);
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let results = entries.into_iter().map(|e| e.outcome.ok()).collect();
    Ok(SweepOutput { rows, results })
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .map_err(csv_err(path))
}

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub b: f64,
    pub regime: Regime,
    /// Normalized `e(b)` at `β = β*`, normalized `e(b) − ē_h(b)` at `β > β*`.
    pub e_normalized: Option<f64>,
    pub predicted_limit: f64,
    pub predicted_limit_rederived: f64,
    /// Normalized `e(b) − ē(b)` with the closed-form `ē` (`β > β*` only).
    pub e_normalized_closed_form: Option<f64>,
    pub eps_normalized: Option<f64>,
    pub eps_limit: f64,
    /// `|z_b − x₀|` over the regime's distance scale.
    pub dist_normalized: Option<f64>,
    pub dist_limit: f64,
    /// `dist(z_b, ∂Ω)` over the regime's length.
    pub depth_normalized: Option<f64>,
    pub trial_upper_bound: Option<f64>,
    pub below_trial: Option<bool>,
    pub above_bar_closed_form: Option<bool>,
    pub above_bar_discrete: Option<bool>,
    pub kinetic_over_rb: Option<f64>,
    pub quartic_over_rb: Option<f64>,
    pub profile_l2: Option<f64>,
    pub profile_h1: Option<f64>,
    pub profile_clipped_fraction: Option<f64>,
}

/// One line of `fits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub quantity: String,
    pub with_log: bool,
    pub exponent: f64,
    pub log_power: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub b_min: f64,
    pub b_max: f64,
}

pub struct Analysis {
    pub report: Vec<ReportRow>,
    pub fits: Vec<FitRow>,
}

impl Analysis {
    pub fn fit(&self, quantity: &str, with_log: bool) -> Option<&FitRow> {
        self.fits
            .iter()
            .find(|f| f.quantity == quantity && f.with_log == with_log)
    }
}

/// Energy fed to the scaling analysis: `e` at `β = β*`, `e − ē_h` above.
fn excess_energy(setup: &Setup, row: &SweepRow) -> Option<f64> {
    let e = row.energy?;
    if setup.regime().is_critical() {
        Some(e)
    } else {
        Some(e - row.aux_energy?)
    }
}

/// Builds the report from sweep rows. `final_field` is the field of the
/// smallest valid `b`, used for the profile comparison.
pub fn analyze(
    setup: &Setup,
    rows: &[SweepRow],
    final_field: Option<(f64, &Field)>,
) -> Analysis {
    let pred = &setup.prediction;
    let x0 = setup.target_well();
    let mut report = Vec::with_capacity(rows.len());
    for row in rows {
        let b = row.b;
        let ok = row.is_valid();
        let eps = row.eps_b.filter(|_| ok);
        let rate = eps.map(|e| pred.rate(b, e));
        let trial = asymptotics::trial_upper_bound(
            pred,
            &setup.grid,
            &setup.spec,
            &setup.wells,
            &setup.profile,
            b,
        )
        .map_err(|e| info!("no trial bound at b = {b:e}: {e}"))
        .ok()
        .map(|t| t.energy);
        let z = row.max_point().filter(|_| ok);
        let rb = (!pred.regime.is_critical()).then(|| (setup.beta - setup.beta_star()) / (b * setup.beta_star()));
        let profile = match (final_field, z, rate) {
            (Some((fb, u)), Some(z), Some(rate)) if fb == b => {
                asymptotics::profile_distance(&setup.grid, u, z, rate, &setup.profile)
                    .map_err(|e| warn!("profile comparison at b = {b:e} failed: {e}"))
                    .ok()
            }
            _ => None,
        };
        report.push(ReportRow {
            b,
            regime: pred.regime,
            e_normalized: eps
                .zip(excess_energy(setup, row))
                .map(|(e, v)| v / pred.energy_scale(b, e)),
            predicted_limit: pred.energy_limit,
            predicted_limit_rederived: pred.energy_limit_rederived,
            e_normalized_closed_form: eps
                .zip(row.energy)
                .zip(row.bar_energy)
                .map(|((e, v), bar)| (v - bar) / pred.energy_scale(b, e)),
            eps_normalized: eps.map(|e| e / pred.eps_scale(b)),
            eps_limit: pred.eps_limit,
            dist_normalized: z
                .zip(eps)
                .map(|(z, e)| geometry::dist(z, x0) / pred.dist_scale(b, e)),
            dist_limit: pred.dist_limit,
            depth_normalized: z
                .zip(rate)
                .map(|(z, r)| setup.grid.signed_distance(z) / r),
            trial_upper_bound: trial,
            below_trial: row.energy.filter(|_| ok).zip(trial).map(|(e, t)| e <= t),
            above_bar_closed_form: row.energy.filter(|_| ok).zip(row.bar_energy).map(|(e, bar)| e >= bar),
            above_bar_discrete: row.energy.filter(|_| ok).zip(row.aux_energy).map(|(e, a)| e >= a),
            kinetic_over_rb: row.kinetic.filter(|_| ok).zip(rb).map(|(k, rb)| k / rb),
            quartic_over_rb: row
                .l4
                .filter(|_| ok)
                .zip(rb)
                .map(|(l4, rb)| l4 / (2.0 * rb / setup.beta_star())),
            profile_l2: profile.map(|p| p.l2),
            profile_h1: profile.map(|p| p.h1),
            profile_clipped_fraction: profile.map(|p| p.clipped_fraction),
        });
    }
    let mut fits = Vec::new();
    let series: [(&str, Box<dyn Fn(&SweepRow) -> Option<f64>>); 3] = [
        ("energy", Box::new(|r: &SweepRow| excess_energy(setup, r))),
        ("eps_b", Box::new(|r: &SweepRow| r.eps_b)),
        ("kinetic", Box::new(|r: &SweepRow| r.kinetic)),
    ];
    for (name, get) in &series {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.is_valid())
            .filter_map(|r| get(r).map(|v| (r.b, v)))
            .collect();
        for with_log in [false, true] {
            match asymptotics::fit_scaling(&pts, with_log) {
                Ok(f) => fits.push(FitRow {
                    quantity: name.to_string(),
                    with_log,
                    exponent: f.exponent,
                    log_power: f.log_power,
                    prefactor: f.prefactor,
                    r_squared: f.r_squared,
                    b_min: f.window.0,
                    b_max: f.window.1,
                }),
                Err(e) => info!("no {name} fit (with_log = {with_log}): {e}"),
            }
        }
    }
    Analysis { report, fits }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Columns `r, Q, Qprime`, then footer rows `name, value,` for the norms
/// and each moment in `moments`.
pub fn write_profile_csv(
    path: &Path,
    profile: &RadialProfile,
    moments: &MomentTable,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["r", "Q", "Qprime"]).map_err(csv_err(path))?;
    for k in 0..profile.r_nodes.len() {
        w.write_record([
            format!("{:e}", profile.r_nodes[k]),
            format!("{:e}", profile.q_values[k]),
            format!("{:e}", profile.q_prime[k]),
        ])
        .map_err(csv_err(path))?;
    }
    let mut footer = vec![
        ("mass".to_string(), profile.mass),
        ("grad_norm".to_string(), profile.grad_norm),
        ("quartic".to_string(), profile.quartic),
        ("q0".to_string(), profile.q_at_zero),
    ];
    footer.extend(moments.entries().iter().map(|(p, m)| (format!("m_{p}"), *m)));
    for (name, v) in footer {
        w.write_record([name, format!("{v:e}"), String::new()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_analysis(dir: &Path, analysis: &Analysis) -> Result<(), HarnessError> {
    write_csv(&dir.join("report.csv"), &analysis.report)?;
    write_csv(&dir.join("fits.csv"), &analysis.fits)
}

/// Contents of a `.kfld` file.
#[derive(Debug, Clone, PartialEq)]
pub struct KfldFile {
    pub layout: GridLayout,
    pub values: Vec<f64>,
}

impl KfldFile {
    /// The stored field, if it was written on `grid`.
    pub fn field_on(&self, grid: &DomainGrid) -> Option<Field> {
        let fits = self.layout == grid.layout
            && self
                .values
                .iter()
                .zip(&grid.interior_mask)
                .all(|(v, m)| *m || *v == 0.0);
        fits.then(|| Field {
            layout: self.layout,
            values: self.values.clone(),
        })
    }
}

/// Header line `KFLD 1 nx ny hx hy ox oy`, then `nx*ny` little-endian `f64`
/// row by row; nodes outside the domain hold 0.
pub fn write_kfld(path: &Path, grid: &DomainGrid, u: &Field) -> Result<(), HarnessError> {
    let l = &grid.layout;
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let header = format!(
        "KFLD 1 {} {} {:e} {:e} {:e} {:e}\n",
        l.nx, l.ny, l.hx, l.hy, l.origin[0], l.origin[1]
    );
    w.write_all(header.as_bytes()).map_err(io_err(path))?;
    for (v, m) in u.values.iter().zip(&grid.interior_mask) {
        let v = if *m { *v } else { 0.0 };
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_kfld(path: &Path) -> Result<KfldFile, HarnessError> {
    let bad = |reason: &str| HarnessError::Kfld {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err(path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let nl = bytes
        .iter()
        .take(512)
        .position(|c| *c == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text"))?;
    let tok: Vec<&str> = header.split_ascii_whitespace().collect();
    if tok.len() != 8 || tok[0] != "KFLD" {
        return Err(bad("header must read `KFLD 1 nx ny hx hy ox oy`"));
    }
    if tok[1] != "1" {
        return Err(bad(&format!("unsupported version {}", tok[1])));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad size `{s}`")));
    let real = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
    let (nx, ny) = (int(tok[2])?, int(tok[3])?);
    let n = nx.checked_mul(ny).ok_or_else(|| bad("lattice too large"))?;
    let body = &bytes[nl + 1..];
    if Some(body.len()) != n.checked_mul(8) {
        return Err(bad(&format!("expected {} value bytes, found {}", 8 * n, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(KfldFile {
        layout: GridLayout {
            nx,
            ny,
            hx: real(tok[4])?,
            hy: real(tok[5])?,
            origin: [real(tok[6])?, real(tok[7])?],
        },
        values,
    })
}

/// What `run_experiment` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub regime: Regime,
    pub rows: usize,
    pub valid_rows: usize,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.valid_rows == self.rows
    }
}

/// Ground state, grid and potential, continuation sweep, analysis; all
/// artifacts land in `cfg.output.dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let setup = Setup::new(cfg)?;
    info!(
        "{} on a {} grid ({}x{}, {} interior nodes), beta = {:.8}",
        setup.regime(),
        setup.grid.shape_tag(),
        setup.grid.nx(),
        setup.grid.ny(),
        setup.grid.interior_count(),
        setup.beta
    );
    let moments = MomentTable::new(&setup.profile, &[setup.wells.p])?;
    write_profile_csv(&dir.join("q_profile.csv"), &setup.profile, &moments)?;
    let sweep = run_sweep(&setup, cfg, Some(&dir.join("sweep.csv")))?;
    let last = sweep.last_field();
    if let Some((_, r)) = last {
        write_kfld(&dir.join("final.kfld"), &setup.grid, &r.u)?;
    }
    let analysis = analyze(&setup, &sweep.rows, last.map(|(b, r)| (b, &r.u)));
    write_analysis(&dir, &analysis)?;
    Ok(RunSummary {
        out_dir: dir,
        regime: setup.regime(),
        rows: sweep.rows.len(),
        valid_rows: sweep.rows.iter().filter(|r| r.is_valid()).count(),
    })
}

/// Recomputes `report.csv` and `fits.csv` from an existing run directory.
pub fn reanalyze(cfg: &RunConfig) -> Result<Analysis, HarnessError> {
    let dir = &cfg.output.dir;
    let setup = Setup::new(cfg)?;
    let rows = read_sweep(&dir.join("sweep.csv"))?;
    let kfld_path = dir.join("final.kfld");
    let stored = if kfld_path.exists() {
        let k = read_kfld(&kfld_path)?;
        let field = k.field_on(&setup.grid);
        if field.is_none() {
            warn!("{} was written on a different grid", kfld_path.display());
        }
        let b_last = rows.iter().filter(|r| r.is_valid()).map(|r| r.b).reduce(f64::min);
        field.zip(b_last).map(|(f, b)| (b, f))
    } else {
        None
    };
    let analysis = analyze(&setup, &rows, stored.as_ref().map(|(b, f)| (*b, f)));
    write_analysis(dir, &analysis)?;
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISK: &str = r#"
seed = 7
beta = { ratio = 1.0 }
b_grid = "1e-2:1e-3:geometric:3"

[domain]
h = 0.03125
shape = { kind = "disk", center = [0.0, 0.0], radius = 1.0 }

[potential]
h = "const:1"
wells = [{ x = [0.0, 0.0], p = 2.0 }]

[flow]
max_iters = 500
"#;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::parse(DISK).unwrap();
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.b_grid.values().len(), 3);
        assert_eq!(cfg.flow.max_iters, 500);
        assert_eq!(cfg.flow.grad_tol, FlowBlock::default().grad_tol);
    }

    #[test]
    fn b_grid_forms() {
        let g: BGrid = "1e-2:1e-4:geometric:3".parse().unwrap();
        let v = g.values();
        assert!((v[1] - 1e-3).abs() < 1e-15);
        assert_eq!(g.to_string().parse::<BGrid>().unwrap(), g);
        let l: BGrid = "list:0.1, 0.05".parse().unwrap();
        assert_eq!(l.values(), vec![0.1, 0.05]);
        assert!("list:".parse::<BGrid>().is_err());
        assert!("1e-2:1e-4:geometric:0".parse::<BGrid>().is_err());
        assert!("1e-4:1e-2:geometric:3".parse::<BGrid>().is_err());
        assert!("1e-2:1e-4:cubic:3".parse::<BGrid>().is_err());
    }

    #[test]
    fn empty_b_grid_is_a_config_error_with_line() {
        let text = DISK.replace("1e-2:1e-3:geometric:3", "list:");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.line, Some(4), "{err}");
        assert!(err.message.contains("empty"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = DISK.replace("max_iters = 500", "max_iters = 500\nmax_itres = 3");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.line, Some(16), "{err}");
    }

    #[test]
    fn well_outside_domain_names_the_well() {
        let text = DISK.replace("x = [0.0, 0.0]", "x = [1.5, 0.0]");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("potential.wells[0]"), "{err}");
        assert_eq!(err.line, Some(12), "{err}");
    }

    #[test]
    fn mask_rows_are_checked() {
        let text = DISK.replace(
            r#"shape = { kind = "disk", center = [0.0, 0.0], radius = 1.0 }"#,
            r#"shape = { kind = "mask", origin = [-1.0, -1.0], hx = 0.5, hy = 0.5, rows = [".....", ".##.", "....."] }"#,
        );
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("domain.shape.rows[1]"), "{err}");
    }

    #[test]
    fn cache_key_ignores_layout_only() {
        let a = cache_key_text("r_max = 20.0\nn_nodes = 8000\ntol = 1e-10\n").unwrap();
        let b = cache_key_text("  n_nodes=8000\n\n r_max   = 20.0\ntol=1e-10").unwrap();
        let c = cache_key_text("r_max = 21.0\nn_nodes = 8000\ntol = 1e-10\n").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let d = GroundStateBlock::default();
        assert_eq!(cache_key(&d), cache_key(&d.clone()));
        assert_ne!(
            cache_key(&d),
            cache_key(&GroundStateBlock { r_max: 21.0, ..d })
        );
    }

    #[test]
    fn kfld_round_trip_and_corruption() {
        let cfg = RunConfig::parse(DISK).unwrap();
        let grid = cfg.build_grid().unwrap();
        let u = Field::from_fn(&grid, |x| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.kfld");
        write_kfld(&path, &grid, &u).unwrap();
        let k = read_kfld(&path).unwrap();
        assert_eq!(k.field_on(&grid).unwrap(), u);
        let text = fs::read(&path).unwrap();
        assert!(text.starts_with(b"KFLD 1 "));
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_kfld(&path), Err(HarnessError::Kfld { .. })));
    }

    #[test]
    fn regime_override_must_agree() {
        let text = DISK.replace("seed = 7", "seed = 7\nregime = \"SUPER_INTERIOR\"");
        let cfg = RunConfig::parse(&text).unwrap();
        let profile = groundstate::solve_ground_state(20.0, 4000, 1e-10).unwrap();
        assert!(matches!(
            Setup::with_profile(&cfg, profile),
            Err(HarnessError::Asymptotics(AsymptoticsError::RegimeMismatch { .. }))
        ));
    }
}
