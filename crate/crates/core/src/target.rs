//! Target geometry and densities.
//!
//! The target of the transport is a compact convex set `Y` described by its
//! support function `sigma(e) = sup_{y in Y} <y, e>`. The discrete scheme
//! constrains gradients to the polygon `Y_n` cut out by the finitely many
//! half-planes `<y, e> <= sigma(e)`, one per stencil direction `e`; this
//! module builds that polygon and provides the support bounds, vertices,
//! areas and distances the solver and the diagnostics need.
//!
//! Target densities `g` are defined on all of the plane: outside the shape
//! they take the value at the point where the ray from the shape's center
//! exits it (a constant extension along rays), so Newton iterates whose
//! gradients step outside the target still see a positive density.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::{IVec2, Vec2};
use crate::grid::Grid;
use crate::lattice::DirectionSet;
use crate::raster::Raster;

/// Compact convex target described by its support function.
#[derive(Debug, Clone)]
pub enum TargetShape {
    Disc {
        center: Vec2,
        radius: f64,
    },
    /// Convex polygon, vertices in counter-clockwise order.
    Polygon {
        vertices: Vec<Vec2>,
    },
    /// Image of the unit disc under `y = center + R(rotation) diag(a, b) u`.
    Ellipse {
        center: Vec2,
        semi_axes: [f64; 2],
        rotation: f64,
    },
}

impl TargetShape {
    /// Support function `sigma(e) = sup_{y in Y} <y, e>`, in closed form.
    pub fn support(&self, e: Vec2) -> f64 {
        match self {
            TargetShape::Disc { center, radius } => center.dot(e) + radius * e.norm_l2(),
            TargetShape::Polygon { vertices } => vertices
                .iter()
                .map(|v| v.dot(e))
                .fold(f64::NEG_INFINITY, f64::max),
            TargetShape::Ellipse {
                center,
                semi_axes: [a, b],
                rotation,
            } => {
                let (sin, cos) = rotation.sin_cos();
                // |diag(a,b) R^T e|: the support of the centered ellipse.
                let ex = cos * e.x + sin * e.y;
                let ey = -sin * e.x + cos * e.y;
                center.dot(e) + (a * ex).hypot(b * ey)
            }
        }
    }

    /// Exact area of the shape.
    pub fn area(&self) -> f64 {
        match self {
            TargetShape::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
            TargetShape::Polygon { vertices } => shoelace_area(vertices),
            TargetShape::Ellipse { semi_axes: [a, b], .. } => std::f64::consts::PI * a * b,
        }
    }

    /// Point the constant extension of densities radiates from.
    pub fn center(&self) -> Vec2 {
        match self {
            TargetShape::Disc { center, .. } | TargetShape::Ellipse { center, .. } => *center,
            TargetShape::Polygon { vertices } => {
                let n = vertices.len() as f64;
                let sum = vertices
                    .iter()
                    .fold(Vec2::ZERO, |acc, v| acc + *v);
                sum.scale(1.0 / n)
            }
        }
    }

    /// Membership with a relative roundoff slack, so points produced by
    /// [`TargetShape::clamp_along_ray`] always count as inside.
    pub fn contains(&self, y: Vec2) -> bool {
        match self {
            TargetShape::Disc { center, radius } => {
                (y - *center).norm_l2() <= radius * (1.0 + 1e-12)
            }
            TargetShape::Polygon { vertices } => {
                edge_halfplanes(vertices).all(|(n, b)| y.dot(n) <= b + 1e-12 * (1.0 + b.abs()))
            }
            TargetShape::Ellipse {
                center,
                semi_axes: [a, b],
                rotation,
            } => {
                let (sin, cos) = rotation.sin_cos();
                let d = y - *center;
                let wx = (cos * d.x + sin * d.y) / a;
                let wy = (-sin * d.x + cos * d.y) / b;
                wx * wx + wy * wy <= 1.0 + 1e-12
            }
        }
    }

    /// Pulls `y` back onto the shape along the ray from the shape center;
    /// points inside are returned unchanged. Used to extend densities by a
    /// constant along rays.
    pub fn clamp_along_ray(&self, y: Vec2) -> Vec2 {
        let c = self.center();
        let d = y - c;
        let t = match self {
            TargetShape::Disc { radius, .. } => {
                let len = d.norm_l2();
                if len <= *radius {
                    return y;
                }
                radius / len
            }
            TargetShape::Ellipse {
                semi_axes: [a, b],
                rotation,
                ..
            } => {
                let (sin, cos) = rotation.sin_cos();
                let wx = (cos * d.x + sin * d.y) / a;
                let wy = (-sin * d.x + cos * d.y) / b;
                let len = wx.hypot(wy);
                if len <= 1.0 {
                    return y;
                }
                1.0 / len
            }
            TargetShape::Polygon { vertices } => {
                let mut t = 1.0f64;
                for (n, b) in edge_halfplanes(vertices) {
                    let along = d.dot(n);
                    if along > 0.0 {
                        t = t.min((b - c.dot(n)) / along);
                    }
                }
                if t >= 1.0 {
                    return y;
                }
                t.max(0.0)
            }
        };
        c + d.scale(t)
    }

    /// Checks the shape is usable: positive radii/axes, or at least three
    /// counter-clockwise vertices bounding a convex polygon of positive area.
    pub fn validate(&self) -> Result<()> {
        match self {
            TargetShape::Disc { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Config(format!("disc radius must be positive, got {radius}")));
                }
            }
            TargetShape::Ellipse { semi_axes: [a, b], .. } => {
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(Error::Config(format!(
                        "ellipse semi-axes must be positive, got ({a}, {b})"
                    )));
                }
            }
            TargetShape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Config(format!(
                        "polygon needs at least 3 vertices, got {}",
                        vertices.len()
                    )));
                }
                let area = shoelace_area(vertices);
                if !(area > 0.0) {
                    return Err(Error::Config(format!(
                        "polygon must be counter-clockwise with positive area, got area {area}"
                    )));
                }
                let scale = area.sqrt();
                let m = vertices.len();
                for i in 0..m {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % m];
                    let c = vertices[(i + 2) % m];
                    let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
                    if cross < -1e-12 * scale * scale {
                        return Err(Error::Config(format!(
                            "polygon is not convex at vertex {:?}",
                            b
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outward half-planes `<y, n> <= b` of a counter-clockwise polygon.
fn edge_halfplanes(vertices: &[Vec2]) -> impl Iterator<Item = (Vec2, f64)> + '_ {
    let m = vertices.len();
    (0..m).map(move |i| {
        let a = vertices[i];
        let b = vertices[(i + 1) % m];
        // Rotate the edge direction by -90 degrees: outward for ccw order.
        let n = Vec2::new(b.y - a.y, a.x - b.x);
        (n, a.dot(n))
    })
}

fn shoelace_area(vertices: &[Vec2]) -> f64 {
    let m = vertices.len();
    let mut twice = 0.0;
    for i in 0..m {
        let a = vertices[i];
        let b = vertices[(i + 1) % m];
        twice += a.x * b.y - a.y * b.x;
    }
    0.5 * twice
}

/// One linear constraint `<y, dir> <= bound` of the polygonal target.
#[derive(Debug, Clone, Copy)]
pub struct HalfPlane {
    pub dir: IVec2,
    pub bound: f64,
}

/// Polygonal approximation of the target: the intersection of the
/// half-planes `<y, e> <= sigma(e)` over all stencil directions `e`.
///
/// The constraint list is index-aligned with
/// [`DirectionSet::directions`] of the set it was built from.
#[derive(Debug, Clone)]
pub struct PolyTarget {
    constraints: Vec<HalfPlane>,
    bound_by_dir: HashMap<IVec2, f64>,
    vertices: Vec<Vec2>,
    area: f64,
}

impl PolyTarget {
    /// Intersects the support half-planes of `shape` over the directions of
    /// `dirs`. Fails if the shape is invalid or the polygon degenerates.
    pub fn from_shape(shape: &TargetShape, dirs: &DirectionSet) -> Result<Self> {
        shape.validate()?;
        let constraints: Vec<HalfPlane> = dirs
            .directions()
            .iter()
            .map(|&e| HalfPlane {
                dir: e,
                bound: shape.support(e.as_vec2()),
            })
            .collect();
        let vertices = intersect_halfplanes(&constraints)?;
        let area = shoelace_area(&vertices);
        if !(area > 0.0) {
            return Err(Error::Data(format!(
                "polygonal target degenerates to area {area}"
            )));
        }
        let bound_by_dir = constraints.iter().map(|hp| (hp.dir, hp.bound)).collect();
        Ok(PolyTarget {
            constraints,
            bound_by_dir,
            vertices,
            area,
        })
    }

    /// Support bound `sigma(e)` for a direction of the generating set.
    pub fn bound(&self, e: IVec2) -> Option<f64> {
        self.bound_by_dir.get(&e).copied()
    }

    /// Constraints, index-aligned with the generating direction set.
    pub fn constraints(&self) -> &[HalfPlane] {
        &self.constraints
    }

    /// Vertices of the polygon, counter-clockwise.
    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Membership up to a metric tolerance (`tol` in units of length).
    pub fn contains(&self, y: Vec2, tol: f64) -> bool {
        self.constraints
            .iter()
            .all(|hp| y.dot(hp.dir.as_vec2()) <= hp.bound + tol * hp.dir.norm_l2())
    }

    /// Average of the vertices; strictly inside since the polygon is convex
    /// with nonempty interior.
    pub fn interior_point(&self) -> Vec2 {
        let n = self.vertices.len() as f64;
        self.vertices
            .iter()
            .fold(Vec2::ZERO, |acc, v| acc + *v)
            .scale(1.0 / n)
    }

    /// Radius of the largest disc centered at `y` contained in the polygon
    /// (non-positive when `y` lies outside). Minimum over the constraints of
    /// the signed distance to each half-plane boundary; redundant
    /// constraints only make the minimum smaller, never wrong, because
    /// every constraint is satisfied by the polygon.
    pub fn inradius_at(&self, y: Vec2) -> f64 {
        self.constraints
            .iter()
            .map(|hp| (hp.bound - y.dot(hp.dir.as_vec2())) / hp.dir.norm_l2())
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from `y` to the polygon boundary, valid on both
    /// sides: the minimum over edges of the point-segment distance.
    pub fn distance_to_boundary(&self, y: Vec2) -> f64 {
        let m = self.vertices.len();
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % m];
            best = best.min(point_segment_distance(y, a, b));
        }
        best
    }
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (p - a).norm_l2();
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab.scale(t))).norm_l2()
}

/// Intersects the half-planes into a convex polygon by successive clipping,
/// starting from the bounding box given by the four axis constraints (the
/// direction set always contains them).
fn intersect_halfplanes(constraints: &[HalfPlane]) -> Result<Vec<Vec2>> {
    let bound_of = |dir: IVec2| -> Result<f64> {
        constraints
            .iter()
            .find(|hp| hp.dir == dir)
            .map(|hp| hp.bound)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("direction set misses axis direction {dir:?}"))
            })
    };
    let xmax = bound_of(IVec2::new(1, 0))?;
    let xmin = -bound_of(IVec2::new(-1, 0))?;
    let ymax = bound_of(IVec2::new(0, 1))?;
    let ymin = -bound_of(IVec2::new(0, -1))?;
    if !(xmin < xmax && ymin < ymax) {
        return Err(Error::Data(format!(
            "target support box is empty: [{xmin}, {xmax}] x [{ymin}, {ymax}]"
        )));
    }
    let scale = (xmax - xmin).max(ymax - ymin);
    let mut poly = vec![
        Vec2::new(xmin, ymin),
        Vec2::new(xmax, ymin),
        Vec2::new(xmax, ymax),
        Vec2::new(xmin, ymax),
    ];
    for hp in constraints {
        // The axis constraints are already satisfied by the box but feeding
        // them again is harmless.
        poly = clip_halfplane(&poly, hp.dir.as_vec2(), hp.bound);
        if poly.len() < 3 {
            return Err(Error::Data(format!(
                "target degenerates while clipping with direction {:?}",
                hp.dir
            )));
        }
    }
    Ok(dedup_vertices(poly, 1e-12 * scale))
}

/// Sutherland-Hodgman clip of a convex polygon against `<y, n> <= b`.
fn clip_halfplane(poly: &[Vec2], n: Vec2, b: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    let m = poly.len();
    for i in 0..m {
        let p = poly[i];
        let q = poly[(i + 1) % m];
        let (dp, dq) = (p.dot(n) - b, q.dot(n) - b);
        if dp <= 0.0 {
            out.push(p);
        }
        if (dp < 0.0 && dq > 0.0) || (dp > 0.0 && dq < 0.0) {
            let t = dp / (dp - dq);
            out.push(p + (q - p).scale(t));
        }
    }
    out
}

fn dedup_vertices(poly: Vec<Vec2>, eps: f64) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(poly.len());
    for v in poly {
        if out
            .last()
            .is_some_and(|last| (*last - v).norm_l2() <= eps)
        {
            continue;
        }
        out.push(v);
    }
    if out.len() >= 2 && (out[0] - *out.last().unwrap()).norm_l2() <= eps {
        out.pop();
    }
    out
}

/// Builds the polygonal target and validates that the source keeps a margin
/// of `width` grid steps from the domain boundary, so that every stencil
/// direction applied to a source node stays inside the domain.
pub fn build_polytarget(
    shape: &TargetShape,
    dirs: &DirectionSet,
    grid: &Grid,
) -> Result<PolyTarget> {
    if let Some(e) = grid.stencil_margin_violation(dirs) {
        return Err(Error::Config(format!(
            "source region is too close to the domain boundary: direction ({}, {}) of the \
             width-{} stencil leaves the domain",
            e.x,
            e.y,
            dirs.width()
        )));
    }
    PolyTarget::from_shape(shape, dirs)
}

/// Target density `g`, positive on the whole plane.
///
/// Analytic kinds evaluate the underlying formula at
/// [`TargetShape::clamp_along_ray`] of the query point, making them constant
/// along rays outside the shape; rasters use their own nearest-edge
/// extension. Densities are normalized so that the integral over the shape
/// is 1.
#[derive(Debug, Clone)]
pub struct TargetDensity {
    shape: TargetShape,
    kind: TargetDensityKind,
}

#[derive(Debug, Clone)]
enum TargetDensityKind {
    Uniform { value: f64 },
    Gaussian { center: Vec2, sigma: f64, scale: f64 },
    Raster { raster: Raster, scale: f64 },
}

/// Midpoint-quadrature resolution used to normalize non-uniform target
/// densities over the shape.
const NORMALIZATION_SAMPLES: usize = 512;

impl TargetDensity {
    /// Uniform density `1 / area(Y)`.
    pub fn uniform(shape: TargetShape) -> Result<Self> {
        shape.validate()?;
        let value = 1.0 / shape.area();
        Ok(TargetDensity {
            shape,
            kind: TargetDensityKind::Uniform { value },
        })
    }

    /// Gaussian bump `exp(-|y - center|^2 / (2 sigma^2))` restricted to the
    /// shape and normalized over it by midpoint quadrature.
    pub fn gaussian(shape: TargetShape, center: Vec2, sigma: f64) -> Result<Self> {
        shape.validate()?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Data(format!("gaussian sigma must be positive, got {sigma}")));
        }
        let raw = |y: Vec2| {
            let d = y - center;
            (-d.dot(d) / (2.0 * sigma * sigma)).exp()
        };
        let integral = integrate_over_shape(&shape, raw);
        if !(integral > 0.0) {
            return Err(Error::Data(
                "gaussian target density integrates to zero over the target".into(),
            ));
        }
        Ok(TargetDensity {
            shape,
            kind: TargetDensityKind::Gaussian {
                center,
                sigma,
                scale: 1.0 / integral,
            },
        })
    }

    /// Raster density, normalized over the shape by midpoint quadrature.
    /// Rejects rasters with non-positive samples.
    pub fn from_raster(shape: TargetShape, raster: Raster) -> Result<Self> {
        shape.validate()?;
        if let Some(bad) = raster.values().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::Data(format!(
                "target density raster must be strictly positive, found {bad}"
            )));
        }
        let integral = integrate_over_shape(&shape, |y| raster.eval(y));
        if !(integral > 0.0) {
            return Err(Error::Data(
                "raster target density integrates to zero over the target".into(),
            ));
        }
        Ok(TargetDensity {
            shape,
            kind: TargetDensityKind::Raster {
                raster,
                scale: 1.0 / integral,
            },
        })
    }

    pub fn shape(&self) -> &TargetShape {
        &self.shape
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, TargetDensityKind::Uniform { .. })
    }

    /// Evaluates `g(y)`; positive for every `y` in the plane.
    pub fn eval(&self, y: Vec2) -> f64 {
        match &self.kind {
            TargetDensityKind::Uniform { value } => *value,
            TargetDensityKind::Gaussian { center, sigma, scale } => {
                let p = self.shape.clamp_along_ray(y);
                let d = p - *center;
                scale * (-d.dot(d) / (2.0 * sigma * sigma)).exp()
            }
            TargetDensityKind::Raster { raster, scale } => {
                let p = self.shape.clamp_along_ray(y);
                scale * raster.eval(p)
            }
        }
    }

    /// Gradient of `g`. Inside the shape: analytic for the gaussian, central
    /// differences at half the raster spacing for rasters. Outside: zero,
    /// consistent with a locally constant extension.
    pub fn grad(&self, y: Vec2) -> Vec2 {
        match &self.kind {
            TargetDensityKind::Uniform { .. } => Vec2::ZERO,
            TargetDensityKind::Gaussian { center, sigma, .. } => {
                if !self.shape.contains(y) {
                    return Vec2::ZERO;
                }
                let g = self.eval(y);
                let d = y - *center;
                d.scale(-g / (sigma * sigma))
            }
            TargetDensityKind::Raster { raster, scale } => {
                if !self.shape.contains(y) {
                    return Vec2::ZERO;
                }
                let step = 0.5 * raster.spacing();
                let dx = raster.eval(Vec2::new(y.x + step, y.y))
                    - raster.eval(Vec2::new(y.x - step, y.y));
                let dy = raster.eval(Vec2::new(y.x, y.y + step))
                    - raster.eval(Vec2::new(y.x, y.y - step));
                Vec2::new(dx, dy).scale(scale / (2.0 * step))
            }
        }
    }

    /// Componentwise maximum of `|partial_i g| / g^2` over a sampled box,
    /// the density-side factor of the first-order coefficient bounds used by
    /// the Lax-Friedrichs right-hand side.
    pub fn grad_over_g2_bound(&self, lo: Vec2, hi: Vec2) -> Vec2 {
        if self.is_uniform() {
            return Vec2::ZERO;
        }
        const SAMPLES: usize = 64;
        let mut bound = Vec2::ZERO;
        for j in 0..SAMPLES {
            for i in 0..SAMPLES {
                let y = Vec2::new(
                    lo.x + (hi.x - lo.x) * (i as f64 + 0.5) / SAMPLES as f64,
                    lo.y + (hi.y - lo.y) * (j as f64 + 0.5) / SAMPLES as f64,
                );
                let g = self.eval(y);
                let dg = self.grad(y);
                bound.x = bound.x.max(dg.x.abs() / (g * g));
                bound.y = bound.y.max(dg.y.abs() / (g * g));
            }
        }
        bound
    }
}

fn integrate_over_shape(shape: &TargetShape, f: impl Fn(Vec2) -> f64) -> f64 {
    // Bounding box from the support function; midpoint rule with the
    // indicator of the shape.
    let xmax = shape.support(Vec2::new(1.0, 0.0));
    let xmin = -shape.support(Vec2::new(-1.0, 0.0));
    let ymax = shape.support(Vec2::new(0.0, 1.0));
    let ymin = -shape.support(Vec2::new(0.0, -1.0));
    let n = NORMALIZATION_SAMPLES;
    let (dx, dy) = ((xmax - xmin) / n as f64, (ymax - ymin) / n as f64);
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            let y = Vec2::new(
                xmin + dx * (i as f64 + 0.5),
                ymin + dy * (j as f64 + 0.5),
            );
            if shape.contains(y) {
                sum += f(y);
            }
        }
    }
    sum * dx * dy
}
