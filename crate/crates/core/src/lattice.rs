//! Lattice directions and superbases: the stencils of the discrete
//! determinant operator.
//!
//! A direction is an irreducible vector of `Z^2` (coprime coordinates). A
//! superbase is a triple `(e, f, g)` of lattice vectors with `e + f + g = 0`
//! and `|det(f, g)| = 1`; the three vectors of a superbase are automatically
//! irreducible, and any pair of them is a basis of `Z^2`. The determinant
//! operator takes a minimum over all superbases whose vectors fit within a
//! configured infinity-norm cap (the stencil width).

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geom::IVec2;

/// Unordered superbase, stored as a canonical representative of its
/// equivalence class under permutations and global sign flip.
///
/// Invariants: `e[0] + e[1] + e[2] = 0`, `|det(e[1], e[2])| = 1`, and the
/// triple is sorted so that equal classes compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Superbase {
    pub e: [IVec2; 3],
}

impl Superbase {
    /// Canonical representative of the class of `(e, f, g)` under
    /// permutations and global sign flip.
    ///
    /// Both sign choices are sorted lexicographically and the smaller of
    /// the two sorted triples is kept, which gives one well-defined
    /// representative per class. (Both sign choices always have a
    /// lexicographically largest vector with positive first coordinate —
    /// the coordinate sums vanish — so that alone cannot discriminate.)
    pub fn canonical(e: IVec2, f: IVec2, g: IVec2) -> Self {
        let mut plus = [e, f, g];
        plus.sort_unstable();
        let mut minus = [-e, -f, -g];
        minus.sort_unstable();
        Superbase {
            e: if plus <= minus { plus } else { minus },
        }
    }

    /// Checks the defining equations: zero sum and unimodular pairs.
    pub fn is_valid(&self) -> bool {
        let [e, f, g] = self.e;
        e + f + g == IVec2::new(0, 0) && f.det(g).abs() == 1
    }

    /// Largest infinity norm among the three vectors (the width this
    /// superbase requires of a stencil).
    pub fn norm_inf(&self) -> i64 {
        self.e.iter().map(|v| v.norm_inf()).max().unwrap()
    }
}

/// All irreducible directions with infinity norm at most `width`, sorted
/// lexicographically by `(x, y)`. The set is symmetric: it contains `-e`
/// whenever it contains `e`.
pub fn irreducible_directions(width: i64) -> Vec<IVec2> {
    let mut out = Vec::new();
    for x in -width..=width {
        for y in -width..=width {
            let v = IVec2::new(x, y);
            if v.is_irreducible() {
                out.push(v);
            }
        }
    }
    // Lexicographic because the outer loop runs over x, the inner over y.
    out
}

/// All superbases whose three vectors have infinity norm at most `width`,
/// one canonical representative per equivalence class, sorted.
///
/// Enumerates unimodular pairs `(f, g)` in the box and completes each with
/// `e = -(f + g)`; this is quadratic in the box size, unlike the cubic
/// scan over raw triples used as an oracle in the tests.
pub fn enumerate_superbases(width: i64) -> Vec<Superbase> {
    let mut set = BTreeSet::new();
    let box_range = -width..=width;
    for fx in box_range.clone() {
        for fy in box_range.clone() {
            let f = IVec2::new(fx, fy);
            for gx in box_range.clone() {
                for gy in box_range.clone() {
                    let g = IVec2::new(gx, gy);
                    if f.det(g).abs() != 1 {
                        continue;
                    }
                    let e = -(f + g);
                    if e.norm_inf() <= width {
                        set.insert(Superbase::canonical(e, f, g));
                    }
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Symmetric set of irreducible directions with a norm cap, together with
/// all superbases fitting the cap. This is the stencil configuration shared
/// by the determinant operator, the constraint operator and the polygonal
/// target approximation.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    width: i64,
    directions: Vec<IVec2>,
    superbases: Vec<Superbase>,
}

impl DirectionSet {
    /// Builds the direction set of the given stencil width (`width >= 1`).
    pub fn new(width: i64) -> Result<Self> {
        if width < 1 {
            return Err(Error::InvalidArgument(format!(
                "stencil width must be at least 1, got {width}"
            )));
        }
        Ok(DirectionSet {
            width,
            directions: irreducible_directions(width),
            superbases: enumerate_superbases(width),
        })
    }

    pub fn width(&self) -> i64 {
        self.width
    }

    /// Irreducible directions, sorted lexicographically.
    pub fn directions(&self) -> &[IVec2] {
        &self.directions
    }

    /// Canonical superbases, sorted; the order fixes argmin tie-breaking
    /// in the determinant operator.
    pub fn superbases(&self) -> &[Superbase] {
        &self.superbases
    }
}
