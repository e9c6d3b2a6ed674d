//! Classical smooth benchmark on the unit square: an explicit convex
//! potential on `X = [-1/2, 1/2]^2` whose gradient maps `X` onto itself,
//! with the matching source density, used to measure convergence rates
//! against a known solution.
//!
//! The potential is `u(x) = |x|^2 / 2 + 4 q(x1) q(x2)` with a univariate
//! bump `q` chosen so that `q'(±1/2) = 0`: the gradient map is then the
//! identity plus a divergence-free-like swirl that fixes the boundary
//! componentwise, and the density `det(D^2 u)` stays strictly positive.

/// `q(0)`: the additive constant making the potential's Hessian well
/// behaved at the origin.
pub const Q0: f64 = 1.0 / (256.0 * PI3) + 1.0 / (32.0 * std::f64::consts::PI);

const PI: f64 = std::f64::consts::PI;
const PI2: f64 = PI * PI;
const PI3: f64 = PI * PI * PI;

/// Univariate bump: `q(z) = (-z^2/(8 pi) + q(0)) cos(8 pi z) + z sin(8 pi
/// z) / (32 pi^2)`.
pub fn q(z: f64) -> f64 {
    let (s, c) = (8.0 * PI * z).sin_cos();
    (-z * z / (8.0 * PI) + Q0) * c + z * s / (32.0 * PI2)
}

/// `q'(z) = (z^2 - 1/4) sin(8 pi z)`; vanishes exactly at `z = ±1/2`.
pub fn dq(z: f64) -> f64 {
    (z * z - 0.25) * (8.0 * PI * z).sin()
}

/// `q''(z) = 2 z sin(8 pi z) + 8 pi (z^2 - 1/4) cos(8 pi z)`.
pub fn d2q(z: f64) -> f64 {
    let (s, c) = (8.0 * PI * z).sin_cos();
    2.0 * z * s + 8.0 * PI * (z * z - 0.25) * c
}

/// The exact potential `u(x) = |x|^2 / 2 + 4 q(x1) q(x2)`.
pub fn potential(p: crate::geom::Vec2) -> f64 {
    0.5 * (p.x * p.x + p.y * p.y) + 4.0 * q(p.x) * q(p.y)
}

/// The exact gradient map; sends `[-1/2, 1/2]^2` onto itself.
pub fn exact_gradient(p: crate::geom::Vec2) -> crate::geom::Vec2 {
    crate::geom::Vec2::new(
        p.x + 4.0 * dq(p.x) * q(p.y),
        p.y + 4.0 * dq(p.y) * q(p.x),
    )
}

/// Source density `det(D^2 u)`; strictly positive on the square and of
/// unit total mass.
pub fn density(p: crate::geom::Vec2) -> f64 {
    let (q1, q2) = (q(p.x), q(p.y));
    let (d1, d2) = (dq(p.x), dq(p.y));
    let (h1, h2) = (d2q(p.x), d2q(p.y));
    1.0 + 4.0 * (h1 * q2 + q1 * h2) + 16.0 * (h1 * q2 * q1 * h2 - d1 * d1 * d2 * d2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn central<F: Fn(f64) -> f64>(f: F, z: f64, h: f64) -> f64 {
        (f(z + h) - f(z - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for k in 0..=1000 {
            let z = -0.5 + k as f64 / 1000.0;
            assert!((central(q, z, h) - dq(z)).abs() < 1e-8, "dq at {z}");
            assert!((central(dq, z, h) - d2q(z)).abs() < 5e-7, "d2q at {z}");
        }
    }

    #[test]
    fn gradient_and_density_derive_from_the_potential() {
        let h = 1e-5;
        let probes = [
            Vec2::new(0.0, 0.0),
            Vec2::new(0.13, -0.27),
            Vec2::new(-0.49, 0.02),
            Vec2::new(0.31, 0.31),
            Vec2::new(-0.11, -0.44),
        ];
        for p in probes {
            let gx = central(|z| potential(Vec2::new(z, p.y)), p.x, h);
            let gy = central(|z| potential(Vec2::new(p.x, z)), p.y, h);
            let g = exact_gradient(p);
            assert!((gx - g.x).abs() < 1e-7 && (gy - g.y).abs() < 1e-7, "gradient at {p:?}");

            let uxx = central(|z| exact_gradient(Vec2::new(z, p.y)).x, p.x, h);
            let uyy = central(|z| exact_gradient(Vec2::new(p.x, z)).y, p.y, h);
            let uxy = central(|z| exact_gradient(Vec2::new(z, p.y)).y, p.x, h);
            let det = uxx * uyy - uxy * uxy;
            assert!((det - density(p)).abs() < 1e-6, "density at {p:?}");
        }
    }

    #[test]
    fn gradient_fixes_the_boundary_componentwise() {
        assert_eq!(dq(0.5), 0.0);
        assert_eq!(dq(-0.5), 0.0);
        for k in 0..=20 {
            let t = -0.5 + k as f64 / 20.0;
            assert_eq!(exact_gradient(Vec2::new(0.5, t)).x, 0.5);
            assert_eq!(exact_gradient(Vec2::new(-0.5, t)).x, -0.5);
            assert_eq!(exact_gradient(Vec2::new(t, 0.5)).y, 0.5);
            let g = exact_gradient(Vec2::new(t, -0.5));
            assert_eq!(g.y, -0.5);
            assert!(g.x.abs() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn density_is_positive_and_has_unit_mass() {
        let m = 512;
        let h = 1.0 / m as f64;
        let mut mass = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..m {
            for i in 0..m {
                let p = Vec2::new(-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h);
                let f = density(p);
                mass += f;
                lo = lo.min(f);
                hi = hi.max(f);
            }
        }
        mass *= h * h;
        assert!(lo > 0.3, "min density {lo}");
        assert!(hi < 2.0, "max density {hi}");
        assert!((mass - 1.0).abs() < 5e-4, "mass {mass}");
    }

    #[test]
    fn q_at_zero_matches_the_constant() {
        assert_eq!(q(0.0), Q0);
        // The bump and its curvature stay small: the potential is a mild
        // perturbation of |x|^2 / 2.
        for k in 0..=100 {
            let z = -0.5 + k as f64 / 100.0;
            assert!(q(z).abs() < 0.02);
            assert!(dq(z).abs() < 0.25);
        }
    }
}
