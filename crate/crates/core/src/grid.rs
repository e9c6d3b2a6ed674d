//! Computational grid: a square domain `D` sampled by an `n x n` lattice of
//! nodes, a source region `X` whose closure lies strictly inside `D`, and
//! cell averages of the source density.
//!
//! Each node owns the grid cell centered at it; a node is a source node
//! exactly when its position (the cell center) belongs to `X`. The source
//! density is integrated against the indicator of `X` over each cell by a
//! 4x4 midpoint rule, so cells straddling the source boundary carry their
//! partial mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bfo;
use crate::error::{Error, Result};
use crate::geom::{IVec2, Vec2};
use crate::lattice::DirectionSet;
use crate::raster::Raster;

/// Square domain `D = [lo, lo + side]^2`.
#[derive(Debug, Clone, Copy)]
pub struct Domain {
    pub lo: Vec2,
    pub side: f64,
}

impl Domain {
    pub fn hi(&self) -> Vec2 {
        Vec2::new(self.lo.x + self.side, self.lo.y + self.side)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let hi = self.hi();
        p.x >= self.lo.x && p.x <= hi.x && p.y >= self.lo.y && p.y <= hi.y
    }
}

/// Disc used to punch holes into rectangular source regions.
#[derive(Debug, Clone, Copy)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

/// Support of the source density. Closed: boundary points belong to it.
#[derive(Debug, Clone)]
pub enum SourceRegion {
    Rect { lo: Vec2, hi: Vec2 },
    /// Rectangle minus open discs; the discs must be pairwise disjoint and
    /// contained in the rectangle, giving an exact area formula.
    RectMinusDiscs { lo: Vec2, hi: Vec2, holes: Vec<Disc> },
}

impl SourceRegion {
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            SourceRegion::Rect { lo, hi } => {
                p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
            }
            SourceRegion::RectMinusDiscs { lo, hi, holes } => {
                p.x >= lo.x
                    && p.x <= hi.x
                    && p.y >= lo.y
                    && p.y <= hi.y
                    && holes
                        .iter()
                        .all(|d| (p - d.center).norm_l2() >= d.radius)
            }
        }
    }

    /// Exact area.
    pub fn area(&self) -> f64 {
        match self {
            SourceRegion::Rect { lo, hi } => (hi.x - lo.x) * (hi.y - lo.y),
            SourceRegion::RectMinusDiscs { lo, hi, holes } => {
                let rect = (hi.x - lo.x) * (hi.y - lo.y);
                rect - holes
                    .iter()
                    .map(|d| std::f64::consts::PI * d.radius * d.radius)
                    .sum::<f64>()
            }
        }
    }

    /// Axis-aligned bounding box of the closure.
    pub fn bbox(&self) -> (Vec2, Vec2) {
        match self {
            SourceRegion::Rect { lo, hi } | SourceRegion::RectMinusDiscs { lo, hi, .. } => {
                (*lo, *hi)
            }
        }
    }

    /// Center of the bounding box; the default anchor position.
    pub fn centroid(&self) -> Vec2 {
        let (lo, hi) = self.bbox();
        Vec2::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bbox();
        if !(lo.x < hi.x && lo.y < hi.y) {
            return Err(Error::Config(format!(
                "source rectangle is empty: [{}, {}] x [{}, {}]",
                lo.x, hi.x, lo.y, hi.y
            )));
        }
        if let SourceRegion::RectMinusDiscs { holes, .. } = self {
            for (k, d) in holes.iter().enumerate() {
                if !(d.radius > 0.0) {
                    return Err(Error::Config(format!("hole {k} has radius {}", d.radius)));
                }
                let inside = d.center.x - d.radius > lo.x
                    && d.center.x + d.radius < hi.x
                    && d.center.y - d.radius > lo.y
                    && d.center.y + d.radius < hi.y;
                if !inside {
                    return Err(Error::Config(format!(
                        "hole {k} is not strictly inside the source rectangle"
                    )));
                }
                for (l, other) in holes.iter().enumerate().skip(k + 1) {
                    if (d.center - other.center).norm_l2() < d.radius + other.radius {
                        return Err(Error::Config(format!("holes {k} and {l} overlap")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Role of a grid node in the discrete system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Node inside the source: carries the determinant equation.
    Source,
    /// Node of `D` outside the source: carries the constraint equation.
    Exterior,
}

/// The `n x n` grid over the domain, with the source mask and the anchor
/// node whose potential value is pinned (or penalized) to fix the additive
/// constant.
#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    h: f64,
    domain: Domain,
    region: SourceRegion,
    mask: Vec<NodeKind>,
    anchor: usize,
    source_nodes: Vec<usize>,
}

/// Builds the grid: `n >= 8` nodes per side, spacing `h = side / (n - 1)`.
///
/// Fails when the source region is degenerate, touches the domain boundary
/// ring of nodes, captures no node, or the anchor cannot be placed on a
/// source node. `anchor_hint` (default: the region centroid) must lie in the
/// source region; the anchor is the nearest grid node.
pub fn build_grid(
    n: usize,
    domain: Domain,
    region: SourceRegion,
    anchor_hint: Option<Vec2>,
) -> Result<Grid> {
    if n < 8 {
        return Err(Error::Config(format!("grid needs at least 8 nodes per side, got {n}")));
    }
    if !(domain.side > 0.0) || !domain.side.is_finite() {
        return Err(Error::Config(format!("domain side must be positive, got {}", domain.side)));
    }
    region.validate()?;
    let (blo, bhi) = region.bbox();
    let hi = domain.hi();
    if !(blo.x > domain.lo.x && blo.y > domain.lo.y && bhi.x < hi.x && bhi.y < hi.y) {
        return Err(Error::Config(
            "source region must be strictly inside the domain".into(),
        ));
    }

    let h = domain.side / (n - 1) as f64;
    let mut mask = Vec::with_capacity(n * n);
    let mut source_nodes = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let p = Vec2::new(
                domain.lo.x + h * i as f64,
                domain.lo.y + h * j as f64,
            );
            if region.contains(p) {
                mask.push(NodeKind::Source);
                source_nodes.push(j * n + i);
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    return Err(Error::Config(
                        "source region touches the domain boundary".into(),
                    ));
                }
            } else {
                mask.push(NodeKind::Exterior);
            }
        }
    }
    if source_nodes.is_empty() {
        return Err(Error::Config("source region contains no grid node".into()));
    }

    let hint = anchor_hint.unwrap_or_else(|| region.centroid());
    if !region.contains(hint) {
        return Err(Error::Config(format!(
            "anchor ({}, {}) lies outside the source region",
            hint.x, hint.y
        )));
    }
    let ai = (((hint.x - domain.lo.x) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
    let aj = (((hint.y - domain.lo.y) / h).round() as i64).clamp(0, n as i64 - 1) as usize;
    let anchor = aj * n + ai;
    if mask[anchor] != NodeKind::Source {
        return Err(Error::Config(format!(
            "the grid node nearest to the anchor ({}, {}) is not a source node",
            hint.x, hint.y
        )));
    }

    Ok(Grid {
        n,
        h,
        domain,
        region,
        mask,
        anchor,
        source_nodes,
    })
}

impl Grid {
    /// Nodes per side.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn region(&self) -> &SourceRegion {
        &self.region
    }

    /// Index of the anchor node (always a source node).
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn node_pos(&self, idx: usize) -> Vec2 {
        let (i, j) = self.ij(idx);
        Vec2::new(
            self.domain.lo.x + self.h * i as f64,
            self.domain.lo.y + self.h * j as f64,
        )
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.mask[idx]
    }

    pub fn is_source(&self, idx: usize) -> bool {
        self.mask[idx] == NodeKind::Source
    }

    /// Indices of the source nodes, ascending.
    pub fn source_nodes(&self) -> &[usize] {
        &self.source_nodes
    }

    /// Node at `idx` shifted by the lattice vector `e`, or `None` when the
    /// shift leaves the domain.
    pub fn offset(&self, idx: usize, e: IVec2) -> Option<usize> {
        let (i, j) = self.ij(idx);
        let ni = i as i64 + e.x;
        let nj = j as i64 + e.y;
        if ni < 0 || nj < 0 || ni >= self.n as i64 || nj >= self.n as i64 {
            None
        } else {
            Some(nj as usize * self.n + ni as usize)
        }
    }

    /// First stencil direction (in lexicographic order) that drives the
    /// source closure outside the domain, if any. The shift `closure(X) +
    /// h e` must stay in `D` for every direction `e` of the set, so that
    /// all stencil evaluations at source nodes stay on the grid.
    pub fn stencil_margin_violation(&self, dirs: &DirectionSet) -> Option<IVec2> {
        let (blo, bhi) = self.region.bbox();
        let hi = self.domain.hi();
        let tol = 1e-9 * self.domain.side;
        dirs.directions().iter().copied().find(|e| {
            let sx = self.h * e.x as f64;
            let sy = self.h * e.y as f64;
            blo.x + sx < self.domain.lo.x - tol
                || blo.y + sy < self.domain.lo.y - tol
                || bhi.x + sx > hi.x + tol
                || bhi.y + sy > hi.y + tol
        })
    }
}

/// Source density `f`, supported on the source region.
#[derive(Debug, Clone)]
pub enum SourceDensity {
    /// `1 / area(X)` on `X`.
    Uniform,
    /// The analytic density of the classical smooth test case; see [`bfo`].
    Bfo,
    /// Sum of gaussian bumps restricted to `X`, renormalized so the
    /// discrete mass is exactly 1. Components are `(center, sigma, weight)`.
    GaussianMixture { components: Vec<(Vec2, f64, f64)> },
    /// Independent uniform value per grid cell, drawn from `[0.25, 1.75)`
    /// with the given seed, renormalized so the discrete mass is exactly 1.
    RandomCells { seed: u64 },
    /// User raster, renormalized so the discrete mass is exactly 1.
    Raster(Raster),
}

/// Cell averages of the source density: `fh[x] = h^-2 integral of f 1_X
/// over the cell of x`, for every node, plus the resulting discrete mass
/// `h^2 sum over source nodes`.
#[derive(Debug, Clone)]
pub struct SourceField {
    pub cell_avg: Vec<f64>,
    pub mass: f64,
}

/// 4x4 midpoint-rule average of `f 1_X` over the cell of `idx`, normalized
/// by the cell area. Exact for densities constant on the cell when the cell
/// lies inside `X`.
pub fn cell_average(
    grid: &Grid,
    idx: usize,
    region: &SourceRegion,
    f: impl Fn(Vec2) -> f64,
) -> f64 {
    let c = grid.node_pos(idx);
    let h = grid.h();
    // Midpoints of the 4x4 subcells: offsets (2k - 3) h / 8, k = 0..4.
    const OFFSETS: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];
    let mut sum = 0.0;
    for oy in OFFSETS {
        for ox in OFFSETS {
            let p = Vec2::new(c.x + ox * h, c.y + oy * h);
            if region.contains(p) {
                sum += f(p);
            }
        }
    }
    sum / 16.0
}

impl SourceDensity {
    /// Computes the cell averages of the density over the whole grid.
    ///
    /// Densities with an intrinsic normalization (uniform, the analytic
    /// test case) keep their quadrature defect: it is part of what the
    /// solver's anchor value absorbs. The data-driven kinds (mixture,
    /// random, raster) are rescaled so the discrete mass is exactly 1.
    pub fn cell_averages(&self, grid: &Grid) -> Result<SourceField> {
        let region = grid.region().clone();
        let raw: Vec<f64> = match self {
            SourceDensity::Uniform => {
                let value = 1.0 / region.area();
                (0..grid.len())
                    .map(|idx| cell_average(grid, idx, &region, |_| value))
                    .collect()
            }
            SourceDensity::Bfo => (0..grid.len())
                .map(|idx| cell_average(grid, idx, &region, bfo::density))
                .collect(),
            SourceDensity::GaussianMixture { components } => {
                for (k, (_, sigma, weight)) in components.iter().enumerate() {
                    if !(*sigma > 0.0) || !(*weight > 0.0) {
                        return Err(Error::Data(format!(
                            "gaussian mixture component {k} needs positive sigma and weight"
                        )));
                    }
                }
                let f = |p: Vec2| {
                    components
                        .iter()
                        .map(|(c, s, w)| {
                            let d = p - *c;
                            w * (-d.dot(d) / (2.0 * s * s)).exp()
                        })
                        .sum::<f64>()
                };
                (0..grid.len())
                    .map(|idx| cell_average(grid, idx, &region, f))
                    .collect()
            }
            SourceDensity::RandomCells { seed } => {
                // One value per node, drawn in node order: deterministic for
                // a given seed and independent of the source mask.
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let values: Vec<f64> =
                    (0..grid.len()).map(|_| rng.gen_range(0.25..1.75)).collect();
                (0..grid.len())
                    .map(|idx| cell_average(grid, idx, &region, |_| values[idx]))
                    .collect()
            }
            SourceDensity::Raster(raster) => (0..grid.len())
                .map(|idx| cell_average(grid, idx, &region, |p| raster.eval(p)))
                .collect(),
        };

        if let Some(bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!(
                "source density produced an invalid cell average {bad}"
            )));
        }

        let h2 = grid.h() * grid.h();
        let raw_mass: f64 = grid.source_nodes().iter().map(|&x| raw[x]).sum::<f64>() * h2;
        if !(raw_mass > 0.0) {
            return Err(Error::Data(
                "source density has zero mass on the grid".into(),
            ));
        }

        let rescale = match self {
            SourceDensity::Uniform | SourceDensity::Bfo => 1.0,
            _ => 1.0 / raw_mass,
        };
        let cell_avg: Vec<f64> = raw.into_iter().map(|v| v * rescale).collect();
        let mass = raw_mass * rescale;
        Ok(SourceField { cell_avg, mass })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_domain() -> Domain {
        Domain {
            lo: Vec2::ZERO,
            side: 1.0,
        }
    }

    fn inner_square() -> SourceRegion {
        SourceRegion::Rect {
            lo: Vec2::new(0.2, 0.2),
            hi: Vec2::new(0.8, 0.8),
        }
    }

    #[test]
    fn mask_matches_independent_point_in_box_count() {
        let n = 128;
        let grid = build_grid(n, unit_domain(), inner_square(), None).unwrap();
        assert!((grid.h() - 1.0 / 127.0).abs() < 1e-16);
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let x = i as f64 / 127.0;
                let y = j as f64 / 127.0;
                if (0.2..=0.8).contains(&x) && (0.2..=0.8).contains(&y) {
                    count += 1;
                }
            }
        }
        assert_eq!(grid.source_nodes().len(), count);
        assert!(grid
            .source_nodes()
            .iter()
            .all(|&idx| grid.kind(idx) == NodeKind::Source));
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(build_grid(7, unit_domain(), inner_square(), None).is_err());
        // Source touching the domain boundary.
        let touching = SourceRegion::Rect {
            lo: Vec2::new(0.0, 0.2),
            hi: Vec2::new(0.5, 0.8),
        };
        assert!(build_grid(32, unit_domain(), touching, None).is_err());
        // Anchor outside the source region.
        let err = build_grid(32, unit_domain(), inner_square(), Some(Vec2::new(0.05, 0.05)));
        assert!(err.is_err());
    }

    #[test]
    fn anchor_defaults_to_the_center_node() {
        let grid = build_grid(101, unit_domain(), inner_square(), None).unwrap();
        let p = grid.node_pos(grid.anchor());
        assert!((p.x - 0.5).abs() < 1e-12 && (p.y - 0.5).abs() < 1e-12);
        assert!(grid.is_source(grid.anchor()));

        let hinted = build_grid(
            101,
            unit_domain(),
            inner_square(),
            Some(Vec2::new(0.3004, 0.6998)),
        )
        .unwrap();
        let p = hinted.node_pos(hinted.anchor());
        assert!((p.x - 0.30).abs() < 1e-12 && (p.y - 0.70).abs() < 1e-12);
    }

    #[test]
    fn offsets_respect_domain_bounds() {
        let grid = build_grid(16, unit_domain(), inner_square(), None).unwrap();
        let corner = grid.idx(0, 0);
        assert_eq!(grid.offset(corner, IVec2::new(-1, 0)), None);
        assert_eq!(grid.offset(corner, IVec2::new(0, -1)), None);
        assert_eq!(grid.offset(corner, IVec2::new(2, 3)), Some(grid.idx(2, 3)));
        let inner = grid.idx(5, 7);
        assert_eq!(grid.offset(inner, IVec2::new(-3, 2)), Some(grid.idx(2, 9)));
    }

    #[test]
    fn stencil_margin_violations_name_the_direction() {
        // h = 0.1 and margin 0.2: width 3 steps outside, width 2 fits.
        let grid = build_grid(11, unit_domain(), inner_square(), None).unwrap();
        let ok = DirectionSet::new(2).unwrap();
        assert_eq!(grid.stencil_margin_violation(&ok), None);
        let wide = DirectionSet::new(3).unwrap();
        let bad = grid.stencil_margin_violation(&wide).unwrap();
        assert_eq!(bad.norm_inf(), 3);
    }

    #[test]
    fn uniform_cell_averages_are_exact_inside_and_partial_on_the_boundary() {
        // h = 1/64: the first source column sits 0.2 h past the source
        // boundary, so its outermost subsamples fall outside and the cell
        // carries partial mass.
        let grid = build_grid(65, unit_domain(), inner_square(), None).unwrap();
        let density = SourceDensity::Uniform;
        let field = density.cell_averages(&grid).unwrap();
        let f = 1.0 / (0.6 * 0.6);
        let h = grid.h();
        let mut saw_partial = false;
        for &idx in grid.source_nodes() {
            let p = grid.node_pos(idx);
            let interior = p.x - 0.2 > 0.5 * h
                && 0.8 - p.x > 0.5 * h
                && p.y - 0.2 > 0.5 * h
                && 0.8 - p.y > 0.5 * h;
            let v = field.cell_avg[idx];
            if interior {
                assert!((v - f).abs() < 1e-12, "interior cell at {p:?}");
            } else {
                assert!(v > 0.0 && v <= f + 1e-12);
                if v < f - 1e-12 {
                    saw_partial = true;
                }
            }
        }
        assert!(saw_partial, "expected straddling cells with partial mass");
        // Quadrature resolves the boundary band to a quarter cell, so the
        // mass defect is at most on the order of perimeter * h / 4 * f.
        assert!((field.mass - 1.0).abs() < 2.4 * 0.25 * h * f);
    }

    #[test]
    fn aligned_square_source_has_exact_mass() {
        // Domain [-0.75, 0.75]^2 with 97 nodes: h = 1/64, and the source
        // boundary lies exactly on grid nodes, so the 4x4 midpoint rule
        // resolves the half and quarter cells exactly and the discrete mass
        // is 1 to rounding.
        let domain = Domain {
            lo: Vec2::new(-0.75, -0.75),
            side: 1.5,
        };
        let region = SourceRegion::Rect {
            lo: Vec2::new(-0.5, -0.5),
            hi: Vec2::new(0.5, 0.5),
        };
        let grid = build_grid(97, domain, region, None).unwrap();
        assert!((grid.h() - 1.0 / 64.0).abs() < 1e-16);
        let field = SourceDensity::Uniform.cell_averages(&grid).unwrap();
        assert!((field.mass - 1.0).abs() < 1e-12, "mass {}", field.mass);

        // Edge node of the source boundary: exactly half a cell inside.
        let edge_idx = grid.idx(16, 48);
        let p = grid.node_pos(edge_idx);
        assert!((p.x + 0.5).abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((field.cell_avg[edge_idx] - 0.5).abs() < 1e-12);
        // Corner node: a quarter.
        let corner_idx = grid.idx(16, 16);
        assert!((field.cell_avg[corner_idx] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn random_cell_density_is_seeded_and_normalized() {
        let grid = build_grid(32, unit_domain(), inner_square(), None).unwrap();
        let a = SourceDensity::RandomCells { seed: 7 }
            .cell_averages(&grid)
            .unwrap();
        let b = SourceDensity::RandomCells { seed: 7 }
            .cell_averages(&grid)
            .unwrap();
        assert_eq!(a.cell_avg, b.cell_avg, "same seed, same field");
        assert!((a.mass - 1.0).abs() < 1e-12, "normalized mass");
        let c = SourceDensity::RandomCells { seed: 8 }
            .cell_averages(&grid)
            .unwrap();
        assert_ne!(a.cell_avg, c.cell_avg, "different seed, different field");
    }

    #[test]
    fn holes_subtract_exact_area_and_reject_bad_layouts() {
        let region = SourceRegion::RectMinusDiscs {
            lo: Vec2::new(0.2, 0.2),
            hi: Vec2::new(0.8, 0.8),
            holes: vec![
                Disc {
                    center: Vec2::new(0.35, 0.35),
                    radius: 0.05,
                },
                Disc {
                    center: Vec2::new(0.6, 0.6),
                    radius: 0.08,
                },
            ],
        };
        region.validate().unwrap();
        let expected = 0.36 - std::f64::consts::PI * (0.05f64.powi(2) + 0.08f64.powi(2));
        assert!((region.area() - expected).abs() < 1e-15);
        assert!(!region.contains(Vec2::new(0.35, 0.35)));
        assert!(region.contains(Vec2::new(0.35, 0.41)));

        let overlapping = SourceRegion::RectMinusDiscs {
            lo: Vec2::new(0.2, 0.2),
            hi: Vec2::new(0.8, 0.8),
            holes: vec![
                Disc {
                    center: Vec2::new(0.4, 0.4),
                    radius: 0.1,
                },
                Disc {
                    center: Vec2::new(0.45, 0.4),
                    radius: 0.1,
                },
            ],
        };
        assert!(overlapping.validate().is_err());
        let spilling = SourceRegion::RectMinusDiscs {
            lo: Vec2::new(0.2, 0.2),
            hi: Vec2::new(0.8, 0.8),
            holes: vec![Disc {
                center: Vec2::new(0.21, 0.5),
                radius: 0.05,
            }],
        };
        assert!(spilling.validate().is_err());
    }
}
