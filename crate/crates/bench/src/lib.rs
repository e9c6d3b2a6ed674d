//! Shared setup for the benchmarks: a square-to-disc system on a uniform
//! source, the configuration every kernel is measured against.

use otmap_core::grid::{build_grid, Domain, SourceDensity, SourceRegion};
use otmap_core::lattice::DirectionSet;
use otmap_core::solver::{SolverConfig, System};
use otmap_core::target::{TargetDensity, TargetShape};
use otmap_core::Vec2;

/// Uniform square source of area 1 mapped to the unit-area disc, `n` nodes
/// per side, stencil of the given width.
pub fn disc_system(n: usize, width: i64) -> System {
    let domain = Domain {
        lo: Vec2::new(-0.5, -0.5),
        side: 2.0,
    };
    let region = SourceRegion::Rect {
        lo: Vec2::new(0.0, 0.0),
        hi: Vec2::new(1.0, 1.0),
    };
    let grid = build_grid(n, domain, region, None).expect("grid");
    let dirs = DirectionSet::new(width).expect("directions");
    let shape = TargetShape::Disc {
        center: Vec2::new(0.5, 0.5),
        radius: 1.0 / std::f64::consts::PI.sqrt(),
    };
    let g = TargetDensity::uniform(shape).expect("target");
    let f = SourceDensity::Uniform.cell_averages(&grid).expect("source");
    System::new(grid, dirs, g, f, SolverConfig::default()).expect("system")
}
