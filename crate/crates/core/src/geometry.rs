//! Fluid box, solid reference body, their tensor-product grids, and the
//! prescribed solid motion.
//!
//! Both grids are uniform rectangular meshes of bilinear (Q1) cells. Node
//! `(i, j)` has index `i + j * (nx + 1)`; cell `(i, j)` has index
//! `i + j * nx` and lists its nodes in tensor order
//! `[(i, j), (i+1, j), (i, j+1), (i+1, j+1)]`.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Three-point Gauss-Legendre rule on `[0, 1]` (exact up to degree 5).
pub(crate) const GAUSS_POINTS: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
pub(crate) const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
pub const QUADRATURE_RULE_ID: &str = "gauss-legendre-3x3";

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect {
            x: [x0, x1],
            y: [y0, y1],
        }
    }

    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x[0] + self.x[1]), 0.5 * (self.y[0] + self.y[1]))
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    pub fn contains_strictly(&self, p: &Point) -> bool {
        p.x > self.x[0] && p.x < self.x[1] && p.y > self.y[0] && p.y < self.y[1]
    }

    /// Smallest distance from an interior point to the boundary.
    pub fn boundary_distance(&self, p: &Point) -> f64 {
        (p.x - self.x[0])
            .min(self.x[1] - p.x)
            .min(p.y - self.y[0])
            .min(self.y[1] - p.y)
    }

    fn validate(&self, what: &str) -> Result<()> {
        let finite = self.x.iter().chain(self.y.iter()).all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "{what} rectangle {self:?} must have finite, positive extent"
            )));
        }
        Ok(())
    }
}

/// Location of a point inside a grid: cell index and local coordinates in `[0, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLocation {
    pub cell: usize,
    pub xi: f64,
    pub eta: f64,
}

/// Uniform tensor-product mesh of a rectangle with a 3x3 Gauss rule per cell.
#[derive(Debug, Clone)]
pub struct RectGrid {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub nodes: Vec<Point>,
    pub cells: Vec<[usize; 4]>,
    /// Quadrature points, nine per cell, stored cell by cell.
    pub quad_points: Vec<Point>,
    pub quad_weights: Vec<f64>,
}

pub const QUAD_PER_CELL: usize = 9;

impl RectGrid {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        rect.validate("grid")?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGeometry(format!(
                "resolution must be positive, got {nx} x {ny}"
            )));
        }
        let hx = rect.width() / nx as f64;
        let hy = rect.height() / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Point::new(
                    rect.x[0] + i as f64 * hx,
                    rect.y[0] + j as f64 * hy,
                ));
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        let mut quad_points = Vec::with_capacity(nx * ny * QUAD_PER_CELL);
        let mut quad_weights = Vec::with_capacity(nx * ny * QUAD_PER_CELL);
        let area = hx * hy;
        for j in 0..ny {
            for i in 0..nx {
                let n0 = i + j * (nx + 1);
                cells.push([n0, n0 + 1, n0 + nx + 1, n0 + nx + 2]);
                let origin = nodes[n0];
                for (b, wy) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
                    for (a, wx) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
                        quad_points.push(origin + Point::new(a * hx, b * hy));
                        quad_weights.push(wx * wy * area);
                    }
                }
            }
        }
        Ok(RectGrid {
            rect,
            nx,
            ny,
            hx,
            hy,
            nodes,
            cells,
            quad_points,
            quad_weights,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + j * (self.nx + 1)
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Local quadrature points of the reference cell with their weights (unit area).
    pub fn reference_quadrature() -> impl Iterator<Item = (f64, f64, f64)> {
        GAUSS_POINTS
            .iter()
            .zip(GAUSS_WEIGHTS)
            .flat_map(|(&eta, wy)| {
                GAUSS_POINTS
                    .iter()
                    .zip(GAUSS_WEIGHTS)
                    .map(move |(&xi, wx)| (xi, eta, wx * wy))
            })
    }

    /// Finds the cell containing `p` (closed rectangle). Points on an
    /// interior cell edge are assigned to the cell on the upper/right side.
    pub fn locate(&self, p: &Point) -> Option<CellLocation> {
        let tol = 1e-12;
        let u = (p.x - self.rect.x[0]) / self.hx;
        let v = (p.y - self.rect.y[0]) / self.hy;
        if !(u >= -tol && u <= self.nx as f64 + tol && v >= -tol && v <= self.ny as f64 + tol) {
            return None;
        }
        let i = (u.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (v.floor().max(0.0) as usize).min(self.ny - 1);
        Some(CellLocation {
            cell: i + j * self.nx,
            xi: (u - i as f64).clamp(0.0, 1.0),
            eta: (v - j as f64).clamp(0.0, 1.0),
        })
    }
}

/// Fluid box Omega with its velocity degrees of freedom.
///
/// Velocities vanish on the boundary, so only interior nodes carry unknowns;
/// interior node `k` owns dofs `2k` (x-component) and `2k + 1` (y-component).
#[derive(Debug, Clone)]
pub struct FluidDomainGrid {
    pub grid: RectGrid,
    pub boundary_nodes: Vec<usize>,
    /// Interior node index for every mesh node, `None` on the boundary.
    pub node_to_interior: Vec<Option<usize>>,
    pub interior_nodes: Vec<usize>,
}

impl FluidDomainGrid {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::InvalidGeometry(format!(
                "fluid grid needs at least 4 cells per axis, got {nx} x {ny}"
            )));
        }
        let grid = RectGrid::new(rect, nx, ny)?;
        let mut boundary_nodes = Vec::new();
        let mut interior_nodes = Vec::new();
        let mut node_to_interior = vec![None; grid.num_nodes()];
        for j in 0..=ny {
            for i in 0..=nx {
                let n = grid.node_index(i, j);
                if i == 0 || j == 0 || i == nx || j == ny {
                    boundary_nodes.push(n);
                } else {
                    node_to_interior[n] = Some(interior_nodes.len());
                    interior_nodes.push(n);
                }
            }
        }
        Ok(FluidDomainGrid {
            grid,
            boundary_nodes,
            node_to_interior,
            interior_nodes,
        })
    }

    pub fn rect(&self) -> &Rect {
        &self.grid.rect
    }

    pub fn num_velocity_dofs(&self) -> usize {
        2 * self.interior_nodes.len()
    }

    /// Velocity dof of `(node, component)` or `None` for a boundary node.
    pub fn dof(&self, node: usize, component: usize) -> Option<usize> {
        self.node_to_interior[node].map(|k| 2 * k + component)
    }
}

/// Reference solid body B. All nodes carry unknowns (natural boundary conditions);
/// node `k` owns dofs `2k` and `2k + 1`.
#[derive(Debug, Clone)]
pub struct SolidReferenceGrid {
    pub grid: RectGrid,
    pub measure: f64,
}

impl SolidReferenceGrid {
    pub fn new(rect: Rect, nx: usize, ny: usize) -> Result<Self> {
        let grid = RectGrid::new(rect, nx, ny)?;
        Ok(SolidReferenceGrid {
            measure: rect.area(),
            grid,
        })
    }

    pub fn rect(&self) -> &Rect {
        &self.grid.rect
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.grid.num_nodes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn rect(&self) -> Rect {
        Rect {
            x: self.x,
            y: self.y,
        }
    }
}

/// Scenario geometry: the fluid box and the immersed solid body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub fluid: GridSpec,
    pub solid: GridSpec,
}

impl GeometryConfig {
    /// Unit square with B = [0.4, 0.6]^2.
    pub fn unit_square(fluid_cells: usize, solid_cells: usize) -> Self {
        GeometryConfig {
            fluid: GridSpec {
                x: [0.0, 1.0],
                y: [0.0, 1.0],
                nx: fluid_cells,
                ny: fluid_cells,
            },
            solid: GridSpec {
                x: [0.4, 0.6],
                y: [0.4, 0.6],
                nx: solid_cells,
                ny: solid_cells,
            },
        }
    }
}

/// Builds both grids, requiring B to sit strictly inside Omega with at least
/// one fluid cell of clearance.
pub fn build_grids(config: &GeometryConfig) -> Result<(FluidDomainGrid, SolidReferenceGrid)> {
    let fluid = FluidDomainGrid::new(config.fluid.rect(), config.fluid.nx, config.fluid.ny)?;
    let solid = SolidReferenceGrid::new(config.solid.rect(), config.solid.nx, config.solid.ny)?;
    let margin = fluid.grid.hx.max(fluid.grid.hy);
    let clearance = immersion_clearance(fluid.rect(), solid.rect());
    if clearance <= 0.0 {
        return Err(Error::SolidNotImmersed(format!(
            "B = {:?} touches or crosses the fluid boundary {:?}",
            solid.rect(),
            fluid.rect()
        )));
    }
    if clearance < margin {
        return Err(Error::SolidNotImmersed(format!(
            "B is {clearance:.4} from the fluid boundary, less than one fluid cell ({margin:.4})"
        )));
    }
    Ok((fluid, solid))
}

/// Distance between B and the boundary of Omega, negative if B is not strictly inside.
pub fn immersion_clearance(omega: &Rect, body: &Rect) -> f64 {
    (body.x[0] - omega.x[0])
        .min(omega.x[1] - body.x[1])
        .min(body.y[0] - omega.y[0])
        .min(omega.y[1] - body.y[1])
}

/// Position, deformation gradient and velocity of the motion at one `(s, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub position: Point,
    /// `gradient[(i, j)] = d X_i / d s_j`.
    pub gradient: Matrix2<f64>,
    pub velocity: Point,
}

/// A map `X(s, t)` of the reference body, evaluated without range checks.
pub trait Motion {
    fn final_time(&self) -> f64;
    fn sample(&self, s: &Point, t: f64) -> MotionSample;
}

/// Closed-form volume-preserving motion families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionKind {
    Identity,
    /// `X = s + amplitude * sin(omega t)`.
    Translation {
        amplitude: [f64; 2],
        omega: f64,
    },
    /// Rigid rotation by `omega t` about `center`.
    Rotation {
        center: [f64; 2],
        omega: f64,
    },
    /// `X = (s_x + rate * t * (s_y - center_y), s_y)`.
    Shear {
        rate: f64,
        center_y: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrescribedMotion {
    pub kind: MotionKind,
    pub final_time: f64,
}

impl PrescribedMotion {
    pub fn new(kind: MotionKind, final_time: f64) -> Result<Self> {
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(Error::InvalidParams(format!(
                "final time must be positive, got {final_time}"
            )));
        }
        let finite = match kind {
            MotionKind::Identity => true,
            MotionKind::Translation { amplitude, omega } => {
                amplitude.iter().all(|v| v.is_finite()) && omega.is_finite()
            }
            MotionKind::Rotation { center, omega } => {
                center.iter().all(|v| v.is_finite()) && omega.is_finite()
            }
            MotionKind::Shear { rate, center_y } => rate.is_finite() && center_y.is_finite(),
        };
        if !finite {
            return Err(Error::InvalidParams(format!(
                "non-finite motion parameters in {kind:?}"
            )));
        }
        Ok(PrescribedMotion { kind, final_time })
    }

    pub fn identity(final_time: f64) -> Self {
        PrescribedMotion {
            kind: MotionKind::Identity,
            final_time,
        }
    }

    /// `X(s, t)`, `grad_s X(s, t)` and `d_t X(s, t)`; fails outside `[0, T]`.
    pub fn evaluate(&self, s: &Point, t: f64) -> Result<MotionSample> {
        self.check_time(t)?;
        Ok(self.sample(s, t))
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.final_time.max(1.0);
        if !(t >= -slack && t <= self.final_time + slack) {
            return Err(Error::TimeOutOfRange {
                t,
                final_time: self.final_time,
            });
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        match self.kind {
            MotionKind::Identity => true,
            MotionKind::Translation { amplitude, omega } => {
                omega == 0.0 || amplitude.iter().all(|a| *a == 0.0)
            }
            MotionKind::Rotation { omega, .. } => omega == 0.0,
            MotionKind::Shear { rate, .. } => rate == 0.0,
        }
    }

    /// Largest displacement `|X(s, t) - s|` over the corners of `body` and sampled times.
    pub fn max_displacement(&self, body: &Rect, samples: usize) -> f64 {
        let corners = corners(body);
        let mut worst: f64 = 0.0;
        for k in 0..=samples.max(1) {
            let t = self.final_time * k as f64 / samples.max(1) as f64;
            for c in &corners {
                worst = worst.max((self.sample(c, t).position - c).norm());
            }
        }
        worst
    }
}

fn corners(r: &Rect) -> [Point; 4] {
    [
        Point::new(r.x[0], r.y[0]),
        Point::new(r.x[1], r.y[0]),
        Point::new(r.x[0], r.y[1]),
        Point::new(r.x[1], r.y[1]),
    ]
}

impl Motion for PrescribedMotion {
    fn final_time(&self) -> f64 {
        self.final_time
    }

    fn sample(&self, s: &Point, t: f64) -> MotionSample {
        match self.kind {
            MotionKind::Identity => MotionSample {
                position: *s,
                gradient: Matrix2::identity(),
                velocity: Point::zeros(),
            },
            MotionKind::Translation { amplitude, omega } => {
                let a = Point::new(amplitude[0], amplitude[1]);
                MotionSample {
                    position: s + a * (omega * t).sin(),
                    gradient: Matrix2::identity(),
                    velocity: a * (omega * (omega * t).cos()),
                }
            }
            MotionKind::Rotation { center, omega } => {
                let c = Point::new(center[0], center[1]);
                let (sin, cos) = (omega * t).sin_cos();
                let rot = Matrix2::new(cos, -sin, sin, cos);
                let rot_rate = Matrix2::new(-sin, -cos, cos, -sin) * omega;
                let r = s - c;
                MotionSample {
                    position: c + rot * r,
                    gradient: rot,
                    velocity: rot_rate * r,
                }
            }
            MotionKind::Shear { rate, center_y } => {
                let offset = s.y - center_y;
                MotionSample {
                    position: Point::new(s.x + rate * t * offset, s.y),
                    gradient: Matrix2::new(1.0, rate * t, 0.0, 1.0),
                    velocity: Point::new(rate * offset, 0.0),
                }
            }
        }
    }
}

/// Outcome of checking a motion against the standing assumptions on X.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `max |X(s, 0) - s|` over the solid quadrature points.
    pub initial_map_error: f64,
    /// `max |det grad_s X - 1|` over quadrature points and sample times.
    pub max_det_error: f64,
    /// Sampled lower bi-Lipschitz constant.
    pub gamma: f64,
    pub contained: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks `X(., 0) = id`, `det grad_s X = 1`, containment in `omega` and a
/// sampled lower Lipschitz bound on the solid grid.
pub fn verify_assumption<M: Motion + ?Sized>(
    motion: &M,
    solid: &SolidReferenceGrid,
    omega: &Rect,
    sample_times: &[f64],
    tol: f64,
) -> AssumptionReport {
    let points = &solid.grid.quad_points;
    let initial_map_error = points
        .iter()
        .map(|s| (motion.sample(s, 0.0).position - s).norm())
        .fold(0.0, f64::max);

    let mut max_det_error: f64 = 0.0;
    let mut contained = true;
    for &t in sample_times {
        for s in points {
            let sample = motion.sample(s, t);
            max_det_error = max_det_error.max((sample.gradient.determinant() - 1.0).abs());
        }
        for s in &solid.grid.nodes {
            if !omega.contains_strictly(&motion.sample(s, t).position) {
                contained = false;
            }
        }
    }

    // Pairs drawn from an evenly strided subset of the quadrature points.
    let stride = (points.len() / 48).max(1);
    let subset: Vec<&Point> = points.iter().step_by(stride).collect();
    let mut gamma = f64::INFINITY;
    for &t in sample_times {
        let mapped: Vec<Point> = subset
            .iter()
            .map(|s| motion.sample(s, t).position)
            .collect();
        for a in 0..subset.len() {
            for b in (a + 1)..subset.len() {
                let ds = (subset[a] - subset[b]).norm();
                if ds > 0.0 {
                    gamma = gamma.min((mapped[a] - mapped[b]).norm() / ds);
                }
            }
        }
    }
    if !gamma.is_finite() {
        gamma = 0.0;
    }

    let pass = !sample_times.is_empty()
        && initial_map_error <= tol
        && max_det_error <= tol
        && gamma > 0.0
        && contained;
    AssumptionReport {
        initial_map_error,
        max_det_error,
        gamma,
        contained,
        tolerance: tol,
        pass,
    }
}
