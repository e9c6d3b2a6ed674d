//! Brute-force measurements on discrete potentials.
//!
//! The solver is verified against oracles that share no code with it: the
//! subgradient areas of the lower convex envelope of the node values
//! (estimated by dense slope sampling), the mass they transport, slope and
//! convexity bounds, and gradient errors against known transport maps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{IVec2, Vec2};
use crate::grid::Grid;
use crate::lattice::DirectionSet;
use crate::operators::{self, GradScheme};
use crate::solver::System;
use crate::target::{PolyTarget, TargetDensity};

/// Per-node area estimates of the subgradient cells of the lower convex
/// envelope of a potential, i.e. its Monge-Ampère measure restricted to the
/// target polygon.
///
/// Slopes are sampled on a `resolution`-squared lattice of cell midpoints
/// over the bounding box of the target polygon; samples outside the polygon
/// are discarded, each remaining one is assigned to the node maximizing
/// `<y, x> - u(x)` (ties keep the first node in row-major order), and a
/// node's area is its sample count times the slope-cell area. Every kept
/// sample is assigned exactly once, so the areas sum to `samples * cell`.
#[derive(Debug, Clone)]
pub struct EnvelopeMeasure {
    /// Estimated subgradient area per grid node, in target-area units.
    pub areas: Vec<f64>,
    /// Area of one slope-sampling cell.
    pub cell: f64,
    /// Number of slope samples that landed inside the target polygon.
    pub samples: usize,
    /// Slope-lattice resolution per axis.
    pub resolution: usize,
}

impl EnvelopeMeasure {
    /// Total measured area, `samples * cell` by construction.
    pub fn total(&self) -> f64 {
        self.samples as f64 * self.cell
    }
}

/// Estimates the subgradient cell areas of the lower convex envelope of the
/// node values `u` by slope sampling at the given per-axis resolution
/// (at least 64).
pub fn envelope_subgradient_areas(
    grid: &Grid,
    u: &[f64],
    target: &PolyTarget,
    resolution: usize,
) -> Result<EnvelopeMeasure> {
    if resolution < 64 {
        return Err(Error::InvalidArgument(format!(
            "slope sampling needs a resolution of at least 64 per axis, got {resolution}"
        )));
    }
    if u.len() != grid.len() {
        return Err(Error::InvalidArgument(
            "potential does not match the grid".into(),
        ));
    }
    let (lo, hi) = polygon_bbox(target);
    let step = Vec2::new(
        (hi.x - lo.x) / resolution as f64,
        (hi.y - lo.y) / resolution as f64,
    );
    let cell = step.x * step.y;
    let pos: Vec<Vec2> = (0..grid.len()).map(|idx| grid.node_pos(idx)).collect();

    // One pass per sample row, merged by summing per-node counts; counts are
    // exact integers, so the merge order cannot affect the result.
    let counts = (0..resolution)
        .into_par_iter()
        .fold(
            || vec![0u32; grid.len()],
            |mut counts, row| {
                let y_row = lo.y + (row as f64 + 0.5) * step.y;
                for col in 0..resolution {
                    let y = Vec2::new(lo.x + (col as f64 + 0.5) * step.x, y_row);
                    if !target.contains(y, 0.0) {
                        continue;
                    }
                    let mut best = 0usize;
                    let mut score = f64::NEG_INFINITY;
                    for (idx, x) in pos.iter().enumerate() {
                        let s = y.dot(*x) - u[idx];
                        if s > score {
                            score = s;
                            best = idx;
                        }
                    }
                    counts[best] += 1;
                }
                counts
            },
        )
        .reduce(
            || vec![0u32; grid.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let samples = counts.iter().map(|&c| c as usize).sum();
    Ok(EnvelopeMeasure {
        areas: counts.iter().map(|&c| c as f64 * cell).collect(),
        cell,
        samples,
        resolution,
    })
}

/// Source nodes whose measured subgradient area exceeds the determinant
/// operator's bound `ma_lbr * h^2` by more than `tol_cells` slope cells.
/// Nodes where no stencil superbase fits are skipped.
pub fn subgradient_overestimate_violations(
    grid: &Grid,
    dirs: &DirectionSet,
    u: &[f64],
    measure: &EnvelopeMeasure,
    tol_cells: f64,
) -> Vec<usize> {
    let h2 = grid.h() * grid.h();
    grid.source_nodes()
        .iter()
        .copied()
        .filter(|&idx| {
            let Ok(ma) = operators::ma_lbr(grid, dirs, u, idx) else {
                return false;
            };
            measure.areas[idx] > ma.value * h2 + tol_cells * measure.cell
        })
        .collect()
}

/// Exterior nodes carrying more than `tol_cells` slope cells of subgradient
/// area. On a solved transport problem the envelope has no curvature outside
/// the source, so this list is empty up to sampling error.
pub fn exterior_flatness_violations(
    grid: &Grid,
    measure: &EnvelopeMeasure,
    tol_cells: f64,
) -> Vec<usize> {
    (0..grid.len())
        .filter(|&idx| !grid.is_source(idx) && measure.areas[idx] > tol_cells * measure.cell)
        .collect()
}

/// Gradient of the potential at a node, centered per component where both
/// axis neighbors exist and one-sided on the domain boundary.
pub fn map_gradient(grid: &Grid, u: &[f64], idx: usize) -> Vec2 {
    let h = grid.h();
    let axis = |e: IVec2| {
        let plus = grid.offset(idx, e);
        let minus = grid.offset(idx, -e);
        match (plus, minus) {
            (Some(p), Some(m)) => (u[p] - u[m]) / (2.0 * h),
            (Some(p), None) => (u[p] - u[idx]) / h,
            (None, Some(m)) => (u[idx] - u[m]) / h,
            (None, None) => 0.0,
        }
    };
    Vec2::new(axis(IVec2::new(1, 0)), axis(IVec2::new(0, 1)))
}

/// Distance of each exterior node's gradient to the target polygon's
/// boundary. On a solved problem the exterior is mapped onto the boundary,
/// so these distances are O(h * stencil width).
pub fn exterior_gradient_distances(
    grid: &Grid,
    u: &[f64],
    target: &PolyTarget,
) -> Vec<(usize, f64)> {
    (0..grid.len())
        .filter(|&idx| !grid.is_source(idx))
        .map(|idx| (idx, target.distance_to_boundary(map_gradient(grid, u, idx))))
        .collect()
}

/// Nodes and directions where discrete convexity fails: source nodes need a
/// strictly positive second difference in every stencil direction, exterior
/// nodes a nonnegative one (up to `exterior_slack`, which absorbs roundoff
/// on exactly flat exterior chains). Directions whose stencil leaves the
/// domain are skipped.
pub fn convexity_violations(
    grid: &Grid,
    dirs: &DirectionSet,
    u: &[f64],
    exterior_slack: f64,
) -> Vec<(usize, IVec2)> {
    let mut out = Vec::new();
    for idx in 0..grid.len() {
        for &e in half_directions(dirs) {
            let Some(sd) = operators::second_difference(grid, u, idx, e) else {
                continue;
            };
            let bad = if grid.is_source(idx) {
                sd <= 0.0
            } else {
                sd < -exterior_slack
            };
            if bad {
                out.push((idx, e));
            }
        }
    }
    out
}

/// Nodes and directions violating the slope bounds of an admissible
/// potential: along every stencil direction `e` the one-step differences
/// must be nondecreasing and confined to `[-h sigma(-e), h sigma(e)]`, where
/// `sigma` is the target polygon's support.
pub fn slope_chain_violations(
    grid: &Grid,
    dirs: &DirectionSet,
    target: &PolyTarget,
    u: &[f64],
    tol: f64,
) -> Vec<(usize, IVec2)> {
    let h = grid.h();
    let mut out = Vec::new();
    for idx in 0..grid.len() {
        for &e in half_directions(dirs) {
            let (Some(up), Some(lo)) = (target.bound(e), target.bound(-e)) else {
                continue;
            };
            let Some(fwd) = grid.offset(idx, e) else {
                continue;
            };
            let delta = u[fwd] - u[idx];
            let mut bad = delta > h * up + tol || delta < -h * lo - tol;
            if let Some(back) = grid.offset(idx, -e) {
                // Convexity along the chain: slopes never decrease.
                bad |= u[idx] - u[back] > delta + tol;
            }
            if bad {
                out.push((idx, e));
            }
        }
    }
    out
}

/// Largest excess of `|u(x) - u(x')| - C * |x - x'|_1` over node pairs,
/// where `C` is the largest axis support value of the target polygon. A
/// nonpositive value means the Lipschitz bound of admissible potentials
/// holds on every checked pair. All axis-neighbor pairs are checked, plus
/// all pairs of a coarse deterministic subgrid.
pub fn lipschitz_excess(grid: &Grid, target: &PolyTarget, u: &[f64]) -> Result<f64> {
    let axes = [
        IVec2::new(1, 0),
        IVec2::new(-1, 0),
        IVec2::new(0, 1),
        IVec2::new(0, -1),
    ];
    let mut c = f64::NEG_INFINITY;
    for e in axes {
        c = c.max(target.bound(e).ok_or_else(|| {
            Error::InvalidArgument("target polygon has no axis support bounds".into())
        })?);
    }

    let mut excess = f64::NEG_INFINITY;
    for idx in 0..grid.len() {
        for e in [IVec2::new(1, 0), IVec2::new(0, 1)] {
            if let Some(fwd) = grid.offset(idx, e) {
                excess = excess.max((u[fwd] - u[idx]).abs() - c * grid.h());
            }
        }
    }

    let stride = (grid.n() / 16).max(1);
    let picks: Vec<usize> = (0..grid.n())
        .step_by(stride)
        .flat_map(|j| (0..grid.n()).step_by(stride).map(move |i| (i, j)))
        .map(|(i, j)| grid.idx(i, j))
        .collect();
    for (k, &a) in picks.iter().enumerate() {
        for &b in &picks[k + 1..] {
            let d = (grid.node_pos(a) - grid.node_pos(b)).norm_l1();
            excess = excess.max((u[a] - u[b]).abs() - c * d);
        }
    }
    Ok(excess)
}

/// Relative L1 error of the discrete gradient against an exact transport
/// map, summed over source nodes with centered differences.
pub fn gradient_l1_error(
    grid: &Grid,
    u: &[f64],
    exact: impl Fn(Vec2) -> Vec2,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &idx in grid.source_nodes() {
        let gh = operators::gradient(grid, u, idx, GradScheme::Centered)?;
        let ge = exact(grid.node_pos(idx));
        num += (gh - ge).norm_l1();
        den += ge.norm_l1();
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument(
            "exact gradient vanishes on every source node".into(),
        ));
    }
    Ok(num / den)
}

/// Mass carried by the potential's envelope: the sum over nodes of the
/// target density at the node's mapped point times the node's subgradient
/// area. On a solved unit-mass problem this is 1 up to discretization and
/// sampling error.
pub fn mass_balance(
    grid: &Grid,
    u: &[f64],
    g: &TargetDensity,
    measure: &EnvelopeMeasure,
) -> f64 {
    (0..grid.len())
        .filter(|&idx| measure.areas[idx] > 0.0)
        .map(|idx| g.eval(map_gradient(grid, u, idx)) * measure.areas[idx])
        .sum()
}

/// Potential built as the maximum of `planes` random affine functions with
/// slopes drawn uniformly from the target polygon; such potentials coincide
/// with their lower convex envelope on many nodes, which makes them good
/// probes for the subgradient oracle.
pub fn random_envelope_potential(
    grid: &Grid,
    target: &PolyTarget,
    planes: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let (lo, hi) = polygon_bbox(target);
    let planes: Vec<(Vec2, f64)> = (0..planes.max(1))
        .map(|_| {
            let slope = loop {
                let y = Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
                if target.contains(y, 0.0) {
                    break y;
                }
            };
            (slope, rng.gen_range(-0.1..0.1))
        })
        .collect();
    (0..grid.len())
        .map(|idx| {
            let x = grid.node_pos(idx);
            planes
                .iter()
                .map(|(slope, offset)| slope.dot(x) + offset)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Per-node residual and gradient map of a potential under a system, the
/// payload of the error and deformation exports.
#[derive(Debug, Clone)]
pub struct ErrorMap {
    /// System residual at each node.
    pub residual: Vec<f64>,
    /// Gradient map at each node (centered inside, one-sided on the domain
    /// boundary).
    pub gradient: Vec<Vec2>,
}

/// Evaluates the residual and gradient map of `u` under `system`.
pub fn error_map(system: &System, u: &[f64]) -> Result<ErrorMap> {
    let residual = system.residual(u)?;
    let grid = system.grid();
    let gradient = (0..grid.len()).map(|idx| map_gradient(grid, u, idx)).collect();
    Ok(ErrorMap { residual, gradient })
}

fn polygon_bbox(target: &PolyTarget) -> (Vec2, Vec2) {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in target.vertices() {
        lo.x = lo.x.min(v.x);
        lo.y = lo.y.min(v.y);
        hi.x = hi.x.max(v.x);
        hi.y = hi.y.max(v.y);
    }
    (lo, hi)
}

fn half_directions(dirs: &DirectionSet) -> impl Iterator<Item = &IVec2> {
    dirs.directions()
        .iter()
        .filter(|e| e.x > 0 || (e.x == 0 && e.y > 0))
}
