//! Discrete Monge-Ampère operators on the grid.
//!
//! Source nodes carry a lattice determinant surrogate: a pointwise form
//! `h_ma` of three nonnegative second differences, minimized over the
//! superbases of the stencil ([`ma_lbr`]). The construction is degenerate
//! elliptic on discretely convex potentials and recovers `det(D^2 u)`
//! exactly for quadratics once the stencil is wide enough.
//!
//! Exterior nodes carry the constraint operator [`ma0_tilde`]: second
//! differences along stencil directions where off-grid values are replaced
//! by the target's support bound. Its zero set forces every difference
//! `u[x + h e] - u[x]` below `h sigma(e)`, which confines the discrete
//! gradients to the target polygon.

use crate::error::{Error, Result};
use crate::geom::{IVec2, Vec2};
use crate::grid::Grid;
use crate::lattice::DirectionSet;
use crate::target::PolyTarget;

/// Pointwise determinant surrogate of three nonnegative increments.
///
/// Equals `b c` when `a >= b + c` (and symmetrically), else the concave
/// quadratic `b c - ((b + c - a) / 2)^2`; the two branches agree on the
/// seam, and the form is symmetric, nondecreasing in each argument and
/// bounded by `min(ab, bc, ca)`.
///
/// Panics when an argument is negative: callers clamp second differences
/// at zero first.
pub fn h_ma(a: f64, b: f64, c: f64) -> f64 {
    h_ma_with_grad([a, b, c]).0
}

/// [`h_ma`] together with its gradient. On the seam between the two
/// branches the gradient of either branch applies (they agree there); at
/// points where two arguments tie for the maximum the formula is smooth,
/// so the choice of maximum does not matter.
pub fn h_ma_with_grad(d: [f64; 3]) -> (f64, [f64; 3]) {
    assert!(
        d.iter().all(|v| *v >= 0.0),
        "determinant surrogate needs nonnegative increments, got {d:?}"
    );
    let m = if d[0] >= d[1] && d[0] >= d[2] {
        0
    } else if d[1] >= d[2] {
        1
    } else {
        2
    };
    let i = (m + 1) % 3;
    let j = (m + 2) % 3;
    let (b, c) = (d[i], d[j]);
    let t = 0.5 * (b + c - d[m]);
    let mut g = [0.0; 3];
    if t <= 0.0 {
        // The largest increment dominates: the value ignores it.
        g[i] = c;
        g[j] = b;
        (b * c, g)
    } else {
        g[m] = t;
        g[i] = c - t;
        g[j] = b - t;
        (b * c - t * t, g)
    }
}

/// Evaluation of the determinant operator at one node: the scaled value,
/// the minimizing superbase and its raw (unclamped) second differences.
#[derive(Debug, Clone, Copy)]
pub struct MaEval {
    /// `h^-4 min` over superbases of the pointwise form.
    pub value: f64,
    /// Index of the minimizing superbase in `dirs.superbases()`; ties keep
    /// the earliest.
    pub superbase: usize,
    /// Second differences `u[x + h e] + u[x - h e] - 2 u[x]` along the
    /// minimizing superbase, before clamping at zero.
    pub increments: [f64; 3],
}

/// Monge-Ampère operator at `idx`: minimum of [`h_ma`] of the clamped
/// second differences over all superbases whose six stencil points lie on
/// the grid, scaled by `h^-4`.
///
/// Fails when no superbase fits, which the grid construction rules out for
/// source nodes.
pub fn ma_lbr(grid: &Grid, dirs: &DirectionSet, u: &[f64], idx: usize) -> Result<MaEval> {
    let mut best: Option<(f64, usize, [f64; 3])> = None;
    'sb: for (k, sb) in dirs.superbases().iter().enumerate() {
        let mut inc = [0.0f64; 3];
        for (slot, e) in sb.e.iter().enumerate() {
            let (Some(p), Some(q)) = (grid.offset(idx, *e), grid.offset(idx, -*e)) else {
                continue 'sb;
            };
            inc[slot] = u[p] + u[q] - 2.0 * u[idx];
        }
        let v = h_ma(inc[0].max(0.0), inc[1].max(0.0), inc[2].max(0.0));
        if best.map_or(true, |(bv, _, _)| v < bv) {
            best = Some((v, k, inc));
        }
    }
    let (raw, superbase, increments) = best.ok_or_else(|| {
        let (i, j) = grid.ij(idx);
        Error::Scheme(format!(
            "no width-{} superbase fits inside the domain at node ({i}, {j})",
            dirs.width()
        ))
    })?;
    let h2 = grid.h() * grid.h();
    Ok(MaEval {
        value: raw / (h2 * h2),
        superbase,
        increments,
    })
}

/// Derivative of [`ma_lbr`] at the minimizing superbase: appends `(column,
/// coefficient)` pairs for the six neighbors and the node itself. Where an
/// increment is nonpositive, the clamp contributes a zero derivative.
pub fn ma_lbr_derivative(
    grid: &Grid,
    dirs: &DirectionSet,
    idx: usize,
    eval: &MaEval,
    out: &mut Vec<(usize, f64)>,
) {
    let clamped = eval.increments.map(|d| d.max(0.0));
    let (_, grad) = h_ma_with_grad(clamped);
    let h2 = grid.h() * grid.h();
    let scale = 1.0 / (h2 * h2);
    let sb = &dirs.superbases()[eval.superbase];
    let mut diag = 0.0;
    for (slot, e) in sb.e.iter().enumerate() {
        let g = if eval.increments[slot] > 0.0 {
            grad[slot] * scale
        } else {
            0.0
        };
        if g == 0.0 {
            continue;
        }
        // The grid bounds were already checked by the evaluation.
        out.push((grid.offset(idx, *e).unwrap(), g));
        out.push((grid.offset(idx, -*e).unwrap(), g));
        diag -= 2.0 * g;
    }
    out.push((idx, diag));
}

/// Evaluation of the constraint operator at one node.
#[derive(Debug, Clone, Copy)]
pub struct Ma0Eval {
    /// Minimum over directions of the substituted second difference.
    pub value: f64,
    /// Minimizing direction (ties keep the earliest in the direction
    /// ordering, restricted to its lexicographically positive half).
    pub direction: IVec2,
    /// Grid indices of `x + h e` and `x - h e`; `None` marks a side whose
    /// value was substituted by the support bound.
    pub neighbors: [Option<usize>; 2],
}

/// Constraint operator at `idx`: `min` over stencil directions `e` of
/// `dtilde(e) + dtilde(-e)` where `dtilde(e) = u[x + h e] - u[x]` on the
/// grid and `h sigma(e)` past its edge. Not scaled: its zero set, not its
/// magnitude, is what the system uses.
pub fn ma0_tilde(
    grid: &Grid,
    dirs: &DirectionSet,
    target: &PolyTarget,
    u: &[f64],
    idx: usize,
) -> Result<Ma0Eval> {
    let h = grid.h();
    let mut best: Option<Ma0Eval> = None;
    for &e in dirs.directions() {
        // The operator is symmetric in e -> -e; visit each axis once.
        if !(e.x > 0 || (e.x == 0 && e.y > 0)) {
            continue;
        }
        let side = |e: IVec2| -> Result<(f64, Option<usize>)> {
            match grid.offset(idx, e) {
                Some(nb) => Ok((u[nb] - u[idx], Some(nb))),
                None => {
                    let bound = target.bound(e).ok_or_else(|| {
                        Error::Scheme(format!(
                            "no support bound for stencil direction ({}, {})",
                            e.x, e.y
                        ))
                    })?;
                    Ok((h * bound, None))
                }
            }
        };
        let (dp, np) = side(e)?;
        let (dm, nm) = side(-e)?;
        let v = dp + dm;
        if best.map_or(true, |b| v < b.value) {
            best = Some(Ma0Eval {
                value: v,
                direction: e,
                neighbors: [np, nm],
            });
        }
    }
    best.ok_or_else(|| Error::Scheme("empty direction set".into()))
}

/// Derivative of [`ma0_tilde`] at the minimizing direction: `+1` per
/// neighbor present on the grid, minus their count on the diagonal
/// (substituted sides are constants).
pub fn ma0_tilde_derivative(idx: usize, eval: &Ma0Eval, out: &mut Vec<(usize, f64)>) {
    let mut diag = 0.0;
    for nb in eval.neighbors.into_iter().flatten() {
        out.push((nb, 1.0));
        diag -= 1.0;
    }
    out.push((idx, diag));
}

/// Finite-difference approximations of the gradient on the axis stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScheme {
    Centered,
    Forward,
    Backward,
}

/// Gradient of `u` at `idx`; fails when the one-step axis stencil leaves
/// the domain (never the case at source nodes).
pub fn gradient(grid: &Grid, u: &[f64], idx: usize, scheme: GradScheme) -> Result<Vec2> {
    let h = grid.h();
    let d = |e: IVec2| -> Result<f64> {
        grid.offset(idx, e)
            .map(|nb| u[nb] - u[idx])
            .ok_or_else(|| {
                let (i, j) = grid.ij(idx);
                Error::Scheme(format!("gradient stencil leaves the domain at node ({i}, {j})"))
            })
    };
    Ok(match scheme {
        GradScheme::Centered => Vec2::new(
            (d(IVec2::new(1, 0))? - d(IVec2::new(-1, 0))?) / (2.0 * h),
            (d(IVec2::new(0, 1))? - d(IVec2::new(0, -1))?) / (2.0 * h),
        ),
        GradScheme::Forward => Vec2::new(
            d(IVec2::new(1, 0))? / h,
            d(IVec2::new(0, 1))? / h,
        ),
        GradScheme::Backward => Vec2::new(
            -d(IVec2::new(-1, 0))? / h,
            -d(IVec2::new(0, -1))? / h,
        ),
    })
}

/// Undivided second difference `u[x + h e] + u[x - h e] - 2 u[x]`, or
/// `None` when a neighbor falls off the grid. The artificial-viscosity
/// variant of the gradient coupling adds these along the axes.
pub fn second_difference(grid: &Grid, u: &[f64], idx: usize, e: IVec2) -> Option<f64> {
    let p = grid.offset(idx, e)?;
    let q = grid.offset(idx, -e)?;
    Some(u[p] + u[q] - 2.0 * u[idx])
}
