//! Masked uniform grids for bounded planar domains and multi-well trapping
//! potentials `V(x) = h(x)·∏|x − x_i|^{p_i}`.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::groundstate::{self, GroundStateError, MomentTable, RadialProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("domain has no interior nodes at this resolution")]
    EmptyDomain,
    #[error("domain mask has {0} connected components, expected 1")]
    DisconnectedDomain(usize),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("well {index} at ({x}, {y}) lies outside the closed domain")]
    WellOutsideClosure { index: usize, x: f64, y: f64 },
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    #[error("flattest well {index} lies {distance:e} from the boundary: neither on it nor clearly inside")]
    AmbiguousBoundary { index: usize, distance: f64 },
    #[error("no flattest well is interior or on the boundary")]
    NoFlattestWell,
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
}

/// Continuous description of the domain before discretisation.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `(x0, x1) × (y0, y1)`.
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disk { center: [f64; 2], radius: f64 },
    /// An explicit node mask on a given lattice.
    Mask {
        nx: usize,
        ny: usize,
        hx: f64,
        hy: f64,
        origin: [f64; 2],
        mask: Vec<bool>,
        /// Declared, not verified: the mask's continuum domain satisfies the
        /// interior ball condition.
        assume_interior_ball: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeTag {
    Rectangle,
    Disk,
    PolygonMask,
}

impl fmt::Display for ShapeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ShapeTag::Rectangle => "rectangle",
            ShapeTag::Disk => "disk",
            ShapeTag::PolygonMask => "polygon-mask",
        };
        f.write_str(s)
    }
}

/// Lattice dimensions and placement; equal layouts mean fields are
/// interchangeable node for node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub origin: [f64; 2],
}

impl GridLayout {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + i as f64 * self.hx,
            self.origin[1] + j as f64 * self.hy,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }
}

/// A masked uniform grid; nodes outside the mask carry the Dirichlet value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGrid {
    pub layout: GridLayout,
    pub interior_mask: Vec<bool>,
    pub shape: Shape,
    /// Midpoints of edges joining an interior node to an exterior one.
    front: Vec<[f64; 2]>,
    n_interior: usize,
}

impl DomainGrid {
    pub fn nx(&self) -> usize {
        self.layout.nx
    }
    pub fn ny(&self) -> usize {
        self.layout.ny
    }
    pub fn hx(&self) -> f64 {
        self.layout.hx
    }
    pub fn hy(&self) -> f64 {
        self.layout.hy
    }
    pub fn origin(&self) -> [f64; 2] {
        self.layout.origin
    }

    pub fn shape_tag(&self) -> ShapeTag {
        match self.shape {
            Shape::Rectangle { .. } => ShapeTag::Rectangle,
            Shape::Disk { .. } => ShapeTag::Disk,
            Shape::Mask { .. } => ShapeTag::PolygonMask,
        }
    }

    pub fn interior_count(&self) -> usize {
        self.n_interior
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.interior_mask[self.layout.index(i, j)]
    }

    /// Iterator over `(i, j, flat index)` of interior nodes, row-major.
    pub fn interior_nodes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let nx = self.layout.nx;
        self.interior_mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(move |(k, _)| (k % nx, k / nx, k))
    }

    /// Largest extent of the domain, from its continuum description.
    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Rectangle { x0, x1, y0, y1 } => ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt(),
            Shape::Disk { radius, .. } => 2.0 * radius,
            Shape::Mask { .. } => {
                let pts: Vec<[f64; 2]> = self
                    .interior_nodes()
                    .map(|(i, j, _)| self.layout.coords(i, j))
                    .collect();
                let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
                for p in &pts {
                    for d in 0..2 {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                }
                ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
            }
        }
    }

    /// Interior node farthest from `∂Ω`. Masks are searched on a subsampled
    /// set of at most about 4096 nodes.
    pub fn deepest_node(&self) -> [f64; 2] {
        let stride = match self.shape {
            Shape::Mask { .. } => ((self.n_interior as f64 / 4096.0).sqrt().ceil() as usize).max(1),
            _ => 1,
        };
        self.interior_nodes()
            .filter(|(i, j, _)| i % stride == 0 && j % stride == 0)
            .map(|(i, j, _)| {
                let x = self.layout.coords(i, j);
                (self.signed_distance(x), x)
            })
            .fold((f64::MIN, [0.0; 2]), |a, c| if c.0 > a.0 { c } else { a })
            .1
    }

    /// Signed distance to `∂Ω`, positive inside. Exact for rectangles and
    /// disks; for masks, measured to the nearest point of the boundary front.
    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        match &self.shape {
            Shape::Rectangle { x0, x1, y0, y1 } => {
                let inside = (x[0] - x0).min(x1 - x[0]).min(x[1] - y0).min(y1 - x[1]);
                if inside >= 0.0 {
                    inside
                } else {
                    let dx = (x0 - x[0]).max(0.0).max(x[0] - x1);
                    let dy = (y0 - x[1]).max(0.0).max(x[1] - y1);
                    -(dx * dx + dy * dy).sqrt()
                }
            }
            Shape::Disk { center, radius } => radius - dist(x, *center),
            Shape::Mask { .. } => {
                let d = self.front_distance(x);
                if self.node_inside(x) {
                    d
                } else {
                    -d
                }
            }
        }
    }

    /// Distance to the nearest boundary-front point.
    pub fn front_distance(&self, x: [f64; 2]) -> f64 {
        self.nearest_front_point(x).map_or(f64::INFINITY, |p| dist(x, p))
    }

    /// The nearest point of the boundary front, refined by projecting onto
    /// the segment joining the two closest front midpoints.
    pub fn nearest_front_point(&self, x: [f64; 2]) -> Option<[f64; 2]> {
        let mut best = (f64::INFINITY, None);
        let mut second = (f64::INFINITY, None);
        for p in &self.front {
            let d = dist(x, *p);
            if d < best.0 {
                second = best;
                best = (d, Some(*p));
            } else if d < second.0 {
                second = (d, Some(*p));
            }
        }
        let a = best.1?;
        let Some(b) = second.1 else { return Some(a) };
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        if len2 == 0.0 || len2.sqrt() > 2.0 * self.layout.hx.max(self.layout.hy) {
            return Some(a);
        }
        let t = (((x[0] - a[0]) * ab[0] + (x[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
        Some([a[0] + t * ab[0], a[1] + t * ab[1]])
    }

    /// Nearest point of `∂Ω` to `x`.
    pub fn nearest_boundary_point(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.shape {
            Shape::Disk { center, radius } => {
                let r = dist(x, *center);
                if r == 0.0 {
                    [center[0] + radius, center[1]]
                } else {
                    [
                        center[0] + (x[0] - center[0]) * radius / r,
                        center[1] + (x[1] - center[1]) * radius / r,
                    ]
                }
            }
            Shape::Rectangle { x0, x1, y0, y1 } => {
                let cands = [
                    ([*x0, x[1].clamp(*y0, *y1)], (x[0] - x0).abs()),
                    ([*x1, x[1].clamp(*y0, *y1)], (x1 - x[0]).abs()),
                    ([x[0].clamp(*x0, *x1), *y0], (x[1] - y0).abs()),
                    ([x[0].clamp(*x0, *x1), *y1], (y1 - x[1]).abs()),
                ];
                cands
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|c| c.0)
                    .unwrap()
            }
            Shape::Mask { .. } => self.nearest_front_point(x).unwrap_or(x),
        }
    }

    /// Unit outward normal at the boundary point nearest to `x`.
    pub fn outward_normal(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.shape {
            Shape::Disk { center, .. } => unit([x[0] - center[0], x[1] - center[1]]),
            Shape::Rectangle { x0, x1, y0, y1 } => {
                let cands = [
                    ([-1.0, 0.0], (x[0] - x0).abs()),
                    ([1.0, 0.0], (x1 - x[0]).abs()),
                    ([0.0, -1.0], (x[1] - y0).abs()),
                    ([0.0, 1.0], (y1 - x[1]).abs()),
                ];
                cands
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|c| c.0)
                    .unwrap()
            }
            Shape::Mask { .. } => {
                // Away from the local centroid of interior nodes.
                let radius = 4.0 * self.layout.hx.max(self.layout.hy);
                let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
                for (i, j, _) in self.interior_nodes() {
                    let p = self.layout.coords(i, j);
                    if dist(p, x) <= radius {
                        sx += p[0];
                        sy += p[1];
                        n += 1;
                    }
                }
                if n == 0 {
                    return [1.0, 0.0];
                }
                unit([x[0] - sx / n as f64, x[1] - sy / n as f64])
            }
        }
    }

    fn node_inside(&self, x: [f64; 2]) -> bool {
        let l = &self.layout;
        let i = ((x[0] - l.origin[0]) / l.hx).round();
        let j = ((x[1] - l.origin[1]) / l.hy).round();
        if i < 0.0 || j < 0.0 || i >= l.nx as f64 || j >= l.ny as f64 {
            return false;
        }
        self.is_interior(i as usize, j as usize)
    }

    /// Coordinates of the lattice node closest to `x`, clamped to the grid.
    pub fn nearest_node(&self, x: [f64; 2]) -> (usize, usize) {
        let l = &self.layout;
        let i = ((x[0] - l.origin[0]) / l.hx).round().clamp(0.0, (l.nx - 1) as f64);
        let j = ((x[1] - l.origin[1]) / l.hy).round().clamp(0.0, (l.ny - 1) as f64);
        (i as usize, j as usize)
    }

    /// Translated copy of the grid (and of its continuum shape).
    pub fn translated(&self, shift: [f64; 2]) -> DomainGrid {
        let mut g = self.clone();
        g.layout.origin = [g.layout.origin[0] + shift[0], g.layout.origin[1] + shift[1]];
        for p in &mut g.front {
            p[0] += shift[0];
            p[1] += shift[1];
        }
        g.shape = match &self.shape {
            Shape::Rectangle { x0, x1, y0, y1 } => Shape::Rectangle {
                x0: x0 + shift[0],
                x1: x1 + shift[0],
                y0: y0 + shift[1],
                y1: y1 + shift[1],
            },
            Shape::Disk { center, radius } => Shape::Disk {
                center: [center[0] + shift[0], center[1] + shift[1]],
                radius: *radius,
            },
            Shape::Mask {
                nx,
                ny,
                hx,
                hy,
                origin,
                mask,
                assume_interior_ball,
            } => Shape::Mask {
                nx: *nx,
                ny: *ny,
                hx: *hx,
                hy: *hy,
                origin: [origin[0] + shift[0], origin[1] + shift[1]],
                mask: mask.clone(),
                assume_interior_ball: *assume_interior_ball,
            },
        };
        g
    }
}

#[inline]
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// Nodes along one axis for a closed interval of length `len` at spacing
/// close to `h`.
fn axis_nodes(len: f64, h: f64) -> usize {
    let cells = (len / h).round().max(1.0) as usize;
    cells + 1
}

/// Discretises `shape` at target spacing `h`.
pub fn build_grid(shape: &Shape, h: f64) -> Result<DomainGrid, GeometryError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(GeometryError::InvalidDomain(format!(
            "resolution must be positive, got {h}"
        )));
    }
    let (layout, mask) = match shape {
        Shape::Rectangle { x0, x1, y0, y1 } => {
            if !(x1 > x0 && y1 > y0) {
                return Err(GeometryError::InvalidDomain(
                    "rectangle needs x0 < x1 and y0 < y1".into(),
                ));
            }
            let nx = axis_nodes(x1 - x0, h);
            let ny = axis_nodes(y1 - y0, h);
            let layout = GridLayout {
                nx,
                ny,
                hx: (x1 - x0) / (nx - 1) as f64,
                hy: (y1 - y0) / (ny - 1) as f64,
                origin: [*x0, *y0],
            };
            let mut mask = vec![false; nx * ny];
            for j in 1..ny.saturating_sub(1) {
                for i in 1..nx.saturating_sub(1) {
                    mask[layout.index(i, j)] = true;
                }
            }
            (layout, mask)
        }
        Shape::Disk { center, radius } => {
            if !(*radius > 0.0) {
                return Err(GeometryError::InvalidDomain("disk radius must be positive".into()));
            }
            if *radius < h {
                return Err(GeometryError::EmptyDomain);
            }
            // The centre is a node; the box edge sits on or outside the rim.
            let k = radius / h;
            let half = if (k - k.round()).abs() < 1e-9 {
                k.round() as usize
            } else {
                k.floor() as usize + 1
            };
            let n = 2 * half + 1;
            let layout = GridLayout {
                nx: n,
                ny: n,
                hx: h,
                hy: h,
                origin: [center[0] - half as f64 * h, center[1] - half as f64 * h],
            };
            let mut mask = vec![false; n * n];
            let inner = radius * (1.0 - 1e-12);
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    if dist(layout.coords(i, j), *center) < inner {
                        mask[layout.index(i, j)] = true;
                    }
                }
            }
            (layout, mask)
        }
        Shape::Mask {
            nx,
            ny,
            hx,
            hy,
            origin,
            mask,
            ..
        } => {
            if mask.len() != nx * ny {
                return Err(GeometryError::InvalidDomain(format!(
                    "mask has {} entries for a {nx}x{ny} lattice",
                    mask.len()
                )));
            }
            let layout = GridLayout {
                nx: *nx,
                ny: *ny,
                hx: *hx,
                hy: *hy,
                origin: *origin,
            };
            for j in 0..*ny {
                for i in 0..*nx {
                    let edge = i == 0 || j == 0 || i + 1 == *nx || j + 1 == *ny;
                    if edge && mask[layout.index(i, j)] {
                        return Err(GeometryError::InvalidDomain(
                            "interior nodes must not touch the lattice edge".into(),
                        ));
                    }
                }
            }
            (layout, mask.clone())
        }
    };

    let n_interior = mask.iter().filter(|m| **m).count();
    if n_interior == 0 {
        return Err(GeometryError::EmptyDomain);
    }
    let components = count_components(&layout, &mask);
    if components > 1 {
        return Err(GeometryError::DisconnectedDomain(components));
    }

    let mut front = Vec::new();
    for j in 0..layout.ny {
        for i in 0..layout.nx {
            if !mask[layout.index(i, j)] {
                continue;
            }
            let p = layout.coords(i, j);
            let nbrs = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)];
            for (a, b) in nbrs {
                if !mask[layout.index(a, b)] {
                    let q = layout.coords(a, b);
                    front.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                }
            }
        }
    }

    Ok(DomainGrid {
        layout,
        interior_mask: mask,
        shape: shape.clone(),
        front,
        n_interior,
    })
}

fn count_components(layout: &GridLayout, mask: &[bool]) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            let (i, j) = (k % layout.nx, k / layout.nx);
            let mut visit = |a: usize, b: usize| {
                let m = layout.index(a, b);
                if mask[m] && !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < layout.nx {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < layout.ny {
                visit(i, j + 1);
            }
        }
    }
    components
}

/// One isolated minimum `x_i` of the potential with local exponent `p_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub x: [f64; 2],
    pub p: f64,
}

/// The bounded positive prefactor `h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HKind {
    Constant(f64),
    /// `1 + eps·exp(−|x − center|²/width²)` with `|eps| < 1`.
    Bump {
        eps: f64,
        center: [f64; 2],
        width: f64,
    },
}

impl HKind {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            HKind::Constant(c) => c,
            HKind::Bump { eps, center, width } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                1.0 + eps * (-r2 / (width * width)).exp()
            }
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            HKind::Constant(c) if c > 0.0 && c.is_finite() => Ok(()),
            HKind::Constant(c) => Err(GeometryError::InvalidPotential(format!(
                "constant prefactor must be positive, got {c}"
            ))),
            HKind::Bump { eps, width, .. } if eps.abs() < 1.0 && width > 0.0 => Ok(()),
            HKind::Bump { .. } => Err(GeometryError::InvalidPotential(
                "bump prefactor needs |eps| < 1 and width > 0".into(),
            )),
        }
    }
}

impl fmt::Display for HKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HKind::Constant(c) => write!(f, "const:{c}"),
            HKind::Bump { eps, center, width } => {
                write!(f, "bump:{eps},{},{},{width}", center[0], center[1])
            }
        }
    }
}

impl std::str::FromStr for HKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::InvalidPotential(format!("unrecognised h descriptor '{s}'"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let h = match (kind.trim(), nums.as_slice()) {
            ("const", [c]) => HKind::Constant(*c),
            ("bump", [eps, cx, cy, w]) => HKind::Bump {
                eps: *eps,
                center: [*cx, *cy],
                width: *w,
            },
            _ => return Err(bad()),
        };
        h.validate()?;
        Ok(h)
    }
}

/// The sampled potential together with the data defining it.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub wells: Vec<Well>,
    pub h_kind: HKind,
    pub layout: GridLayout,
    /// `V` at every lattice node (zero outside the mask).
    pub values: Vec<f64>,
}

impl PotentialSpec {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        potential_at(&self.wells, &self.h_kind, x)
    }

    /// A zero potential on the grid (no wells).
    pub fn zero(grid: &DomainGrid) -> Self {
        PotentialSpec {
            wells: Vec::new(),
            h_kind: HKind::Constant(1.0),
            layout: grid.layout,
            values: vec![0.0; grid.layout.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

fn potential_at(wells: &[Well], h: &HKind, x: [f64; 2]) -> f64 {
    wells
        .iter()
        .fold(h.eval(x), |acc, w| acc * dist(x, w.x).powf(w.p))
}

/// Samples `V = h·∏|x − x_i|^{p_i}` on the interior nodes of `grid`.
pub fn sample_potential(
    grid: &DomainGrid,
    wells: &[Well],
    h_kind: HKind,
) -> Result<PotentialSpec, GeometryError> {
    h_kind.validate()?;
    if wells.is_empty() {
        return Err(GeometryError::InvalidPotential("at least one well is required".into()));
    }
    for (a, w) in wells.iter().enumerate() {
        if !(w.p > 0.0) || !w.p.is_finite() {
            return Err(GeometryError::InvalidPotential(format!(
                "well {a} has non-positive exponent {}",
                w.p
            )));
        }
        for (b, v) in wells.iter().enumerate().skip(a + 1) {
            if w.x == v.x {
                return Err(GeometryError::InvalidPotential(format!(
                    "wells {a} and {b} coincide"
                )));
            }
        }
        if grid.signed_distance(w.x) < -grid.hx().max(grid.hy()) {
            return Err(GeometryError::WellOutsideClosure {
                index: a,
                x: w.x[0],
                y: w.x[1],
            });
        }
    }
    let mut values = vec![0.0; grid.layout.len()];
    for (i, j, k) in grid.interior_nodes() {
        values[k] = potential_at(wells, &h_kind, grid.layout.coords(i, j));
    }
    Ok(PotentialSpec {
        wells: wells.to_vec(),
        h_kind,
        layout: grid.layout,
        values,
    })
}

/// Flattest-well bookkeeping: which minima of `V` decide the concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct WellClassification {
    /// Largest well exponent.
    pub p: f64,
    /// Flattest wells strictly inside the domain.
    pub z1: Vec<usize>,
    /// Flattest wells on the boundary.
    pub z0: Vec<usize>,
    /// `κ_i` for every well.
    pub kappa: Vec<f64>,
    /// Smallest `κ_i` over the flattest wells.
    pub kappa_min: f64,
    /// `λ_i` for the wells in `z1` (same order).
    pub lambda_i: Vec<f64>,
    /// `min λ_i` over `z1`; `None` when `z1` is empty.
    pub lambda: Option<f64>,
    /// Well realising `lambda` (first one on ties).
    pub lambda_well: Option<usize>,
    /// Signed distance of each well to the boundary.
    pub boundary_distance: Vec<f64>,
}

impl WellClassification {
    pub fn has_interior(&self) -> bool {
        !self.z1.is_empty()
    }

    /// The flattest well with the smallest `κ_i` on the boundary.
    pub fn boundary_well(&self) -> Option<usize> {
        self.z0
            .iter()
            .copied()
            .min_by(|a, b| self.kappa[*a].total_cmp(&self.kappa[*b]))
    }
}

/// `κ_i = h(x_i)·∏_{j≠i}|x_i − x_j|^{p_j}`.
pub fn kappa(wells: &[Well], h: &HKind, i: usize) -> f64 {
    wells
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .fold(h.eval(wells[i].x), |acc, (_, w)| acc * dist(wells[i].x, w.x).powf(w.p))
}

/// Splits the flattest wells into interior and boundary sets and evaluates
/// the limit constants `κ` and `λ`.
pub fn classify_wells(
    spec: &PotentialSpec,
    grid: &DomainGrid,
    profile: &RadialProfile,
) -> Result<WellClassification, GeometryError> {
    let p = spec.wells.iter().map(|w| w.p).fold(f64::MIN, f64::max);
    let h = grid.hx().max(grid.hy());
    let kappas: Vec<f64> = (0..spec.wells.len())
        .map(|i| kappa(&spec.wells, &spec.h_kind, i))
        .collect();
    let distances: Vec<f64> = spec.wells.iter().map(|w| grid.signed_distance(w.x)).collect();

    let mut z1 = Vec::new();
    let mut z0 = Vec::new();
    for (i, w) in spec.wells.iter().enumerate() {
        if w.p != p {
            continue;
        }
        let d = distances[i];
        if d > 2.0 * h {
            z1.push(i);
        } else if d.abs() <= 0.5 * h {
            z0.push(i);
        } else {
            return Err(GeometryError::AmbiguousBoundary {
                index: i,
                distance: d,
            });
        }
    }
    if z1.is_empty() && z0.is_empty() {
        return Err(GeometryError::NoFlattestWell);
    }
    let kappa_min = z1
        .iter()
        .chain(&z0)
        .map(|&i| kappas[i])
        .fold(f64::INFINITY, f64::min);

    let mut lambda_i = Vec::with_capacity(z1.len());
    if !z1.is_empty() {
        let moments = MomentTable::new(profile, &[p])?;
        for &i in &z1 {
            lambda_i.push(groundstate::lambda_constant(kappas[i], p, &moments)?);
        }
    }
    let best = lambda_i
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, l)| (z1[k], *l));

    Ok(WellClassification {
        p,
        z1,
        z0,
        kappa: kappas,
        kappa_min,
        lambda_i,
        lambda: best.map(|b| b.1),
        lambda_well: best.map(|b| b.0),
        boundary_distance: distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Shape {
        Shape::Rectangle {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    fn unit_disk() -> Shape {
        Shape::Disk {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }

    #[test]
    fn unit_square_node_count() {
        let g = build_grid(&unit_square(), 1.0 / 64.0).unwrap();
        assert_eq!(g.interior_count(), 63 * 63);
        assert_eq!(g.shape_tag(), ShapeTag::Rectangle);
    }

    #[test]
    fn unit_disk_node_count_matches_area() {
        let h = 1.0 / 64.0;
        let g = build_grid(&unit_disk(), h).unwrap();
        let expected = std::f64::consts::PI / (h * h);
        let rel = (g.interior_count() as f64 - expected).abs() / expected;
        assert!(rel < 0.03, "relative count error {rel}");
        // centre is a node
        let (i, j) = g.nearest_node([0.0, 0.0]);
        assert_eq!(g.layout.coords(i, j), [0.0, 0.0]);
    }

    #[test]
    fn tiny_disk_is_empty() {
        let err = build_grid(
            &Shape::Disk {
                center: [0.0, 0.0],
                radius: 0.01,
            },
            1.0 / 64.0,
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::EmptyDomain);
    }

    #[test]
    fn disconnected_mask_rejected() {
        let (nx, ny) = (7, 5);
        let mut mask = vec![false; nx * ny];
        mask[2 * nx + 1] = true;
        mask[2 * nx + 5] = true;
        let shape = Shape::Mask {
            nx,
            ny,
            hx: 0.1,
            hy: 0.1,
            origin: [0.0, 0.0],
            mask,
            assume_interior_ball: false,
        };
        assert_eq!(
            build_grid(&shape, 0.1).unwrap_err(),
            GeometryError::DisconnectedDomain(2)
        );
    }

    #[test]
    fn mask_touching_edge_rejected() {
        let (nx, ny) = (4, 4);
        let mut mask = vec![false; nx * ny];
        mask[0] = true;
        let shape = Shape::Mask {
            nx,
            ny,
            hx: 0.1,
            hy: 0.1,
            origin: [0.0, 0.0],
            mask,
            assume_interior_ball: true,
        };
        assert!(matches!(
            build_grid(&shape, 0.1),
            Err(GeometryError::InvalidDomain(_))
        ));
    }

    #[test]
    fn single_centered_well_values() {
        let g = build_grid(&unit_square(), 1.0 / 64.0).unwrap();
        let wells = [Well { x: [0.5, 0.5], p: 2.0 }];
        let v = sample_potential(&g, &wells, HKind::Constant(1.0)).unwrap();
        let k = g.layout.index(1, 1);
        let x = g.layout.coords(1, 1);
        let expect = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
        assert!((v.values[k] - expect).abs() < 1e-15);
        let c = g.layout.index(32, 32);
        assert_eq!(v.values[c], 0.0);
    }

    #[test]
    fn two_wells_vanish_only_at_wells() {
        let g = build_grid(&unit_square(), 1.0 / 32.0).unwrap();
        let wells = [
            Well { x: [0.25, 0.5], p: 1.0 },
            Well { x: [0.75, 0.5], p: 2.0 },
        ];
        let v = sample_potential(&g, &wells, HKind::Constant(1.0)).unwrap();
        for (i, j, k) in g.interior_nodes() {
            let x = g.layout.coords(i, j);
            let at_well = wells.iter().any(|w| dist(w.x, x) < 1e-12);
            assert_eq!(v.values[k] == 0.0, at_well, "node {x:?}");
        }
    }

    #[test]
    fn constant_prefactor_is_linear() {
        let g = build_grid(&unit_square(), 1.0 / 16.0).unwrap();
        let wells = [Well { x: [0.3, 0.6], p: 1.5 }];
        let a = sample_potential(&g, &wells, HKind::Constant(1.5)).unwrap();
        let b = sample_potential(&g, &wells, HKind::Constant(3.0)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((2.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn well_outside_rejected() {
        let g = build_grid(&unit_disk(), 1.0 / 32.0).unwrap();
        let wells = [Well { x: [1.2, 0.0], p: 2.0 }];
        assert!(matches!(
            sample_potential(&g, &wells, HKind::Constant(1.0)),
            Err(GeometryError::WellOutsideClosure { index: 0, .. })
        ));
    }

    #[test]
    fn h_descriptor_parses() {
        assert_eq!("const:2".parse::<HKind>().unwrap(), HKind::Constant(2.0));
        let b: HKind = "bump:0.5,0,0,0.2".parse().unwrap();
        assert_eq!(b.to_string().parse::<HKind>().unwrap(), b);
        assert!("bump:1.5,0,0,0.2".parse::<HKind>().is_err());
        assert!("weird:1".parse::<HKind>().is_err());
    }

    #[test]
    fn kappa_is_one_for_single_well() {
        let wells = [Well { x: [0.1, 0.2], p: 2.0 }];
        assert_eq!(kappa(&wells, &HKind::Constant(1.0), 0), 1.0);
    }

    #[test]
    fn rim_normal_points_outward() {
        let g = build_grid(&unit_disk(), 1.0 / 32.0).unwrap();
        let n = g.outward_normal([0.0, 1.0]);
        assert!((n[0]).abs() < 1e-12 && (n[1] - 1.0).abs() < 1e-12);
        let p = g.nearest_boundary_point([0.5, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
    }
}
