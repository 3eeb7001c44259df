//! Axis-aligned boxes and the handful of set operations the tube machinery needs.
//!
//! Every uncertainty set in the crate (disturbance bound, estimation and
//! linearization error sets, cumulative error tubes) as well as every
//! constraint set (state, input, goal, linearization regions) is a [`BoxSet`].
//! Boxes are exact for Cartesian products of intervals, and linear images are
//! over-approximated by their box hull, which keeps containment claims sound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Result};

/// Absolute slack used by membership and subset tests.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Axis-aligned box `{x : |x_i - center_i| <= radius_i}`, or the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    center: DVector<f64>,
    radius: DVector<f64>,
    empty: bool,
}

impl BoxSet {
    /// Builds a box from center and half-widths.
    ///
    /// Negative or non-finite radii are rejected; a zero radius is a degenerate
    /// (point) interval in that coordinate.
    pub fn new(center: DVector<f64>, radius: DVector<f64>) -> Result<Self> {
        check_dim("BoxSet::new", center.len(), radius.len())?;
        if radius.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(crate::Error::usage(format!(
                "box radius must be finite and non-negative, got {:?}",
                radius.as_slice()
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(crate::Error::usage("box center must be finite"));
        }
        Ok(Self {
            center,
            radius,
            empty: false,
        })
    }

    pub fn from_slices(center: &[f64], radius: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(center),
            DVector::from_column_slice(radius),
        )
    }

    /// Box spanning `[lower, upper]` component-wise.
    pub fn from_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        check_dim("BoxSet::from_bounds", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Ok(Self::empty(lower.len()));
        }
        Self::new((lower + upper) * 0.5, (upper - lower) * 0.5)
    }

    /// Degenerate box containing exactly `point`.
    pub fn point(point: DVector<f64>) -> Self {
        let n = point.len();
        Self {
            center: point,
            radius: DVector::zeros(n),
            empty: false,
        }
    }

    /// Box centered at the origin.
    pub fn symmetric(radius: DVector<f64>) -> Result<Self> {
        let n = radius.len();
        Self::new(DVector::zeros(n), radius)
    }

    pub fn zero(dim: usize) -> Self {
        Self::point(DVector::zeros(dim))
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            center: DVector::zeros(dim),
            radius: DVector::zeros(dim),
            empty: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn radius(&self) -> &DVector<f64> {
        &self.radius
    }

    pub fn lower(&self) -> DVector<f64> {
        &self.center - &self.radius
    }

    pub fn upper(&self) -> DVector<f64> {
        &self.center + &self.radius
    }

    /// Minkowski sum `a ⊕ b`.
    pub fn minkowski_sum(&self, other: &BoxSet) -> Result<BoxSet> {
        check_dim("minkowski_sum", self.dim(), other.dim())?;
        if self.empty || other.empty {
            return Ok(BoxSet::empty(self.dim()));
        }
        Ok(BoxSet {
            center: &self.center + &other.center,
            radius: &self.radius + &other.radius,
            empty: false,
        })
    }

    /// Pontryagin difference `a ⊖ b`: the largest box `c` with `c ⊕ b ⊆ a`.
    ///
    /// Over-tightening yields the empty box rather than an error.
    pub fn pontryagin_diff(&self, other: &BoxSet) -> Result<BoxSet> {
        check_dim("pontryagin_diff", self.dim(), other.dim())?;
        if self.empty || other.empty {
            return Ok(BoxSet::empty(self.dim()));
        }
        let radius = &self.radius - &other.radius;
        if radius.iter().any(|r| *r < 0.0) {
            return Ok(BoxSet::empty(self.dim()));
        }
        Ok(BoxSet {
            center: &self.center - &other.center,
            radius,
            empty: false,
        })
    }

    /// Tightest box containing `{A x : x in self}`.
    pub fn affine_image(&self, matrix: &DMatrix<f64>) -> Result<BoxSet> {
        check_dim("affine_image", matrix.ncols(), self.dim())?;
        if self.empty {
            return Ok(BoxSet::empty(matrix.nrows()));
        }
        let abs = matrix.abs();
        Ok(BoxSet {
            center: matrix * &self.center,
            radius: abs * &self.radius,
            empty: false,
        })
    }

    /// Translates the box by `offset`.
    pub fn translate(&self, offset: &DVector<f64>) -> Result<BoxSet> {
        check_dim("translate", self.dim(), offset.len())?;
        let mut out = self.clone();
        out.center += offset;
        Ok(out)
    }

    /// Point reflection through the origin, `-b`.
    pub fn negate(&self) -> BoxSet {
        let mut out = self.clone();
        out.center = -out.center;
        out
    }

    /// Membership with absolute slack [`MEMBERSHIP_TOL`].
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with_tol(x, MEMBERSHIP_TOL)
    }

    pub fn contains_with_tol(&self, x: &DVector<f64>, tol: f64) -> bool {
        if self.empty || x.len() != self.dim() {
            return false;
        }
        self.center
            .iter()
            .zip(self.radius.iter())
            .zip(x.iter())
            .all(|((c, r), xi)| (xi - c).abs() <= r + tol)
    }

    /// `self ⊆ other`, i.e. every vertex of `self` lies in `other`.
    pub fn is_subset_of(&self, other: &BoxSet) -> bool {
        if self.empty {
            return true;
        }
        if other.empty || self.dim() != other.dim() {
            return false;
        }
        (0..self.dim()).all(|i| {
            (self.center[i] - other.center[i]).abs() + self.radius[i]
                <= other.radius[i] + MEMBERSHIP_TOL
        })
    }

    /// All `2^n` vertices (duplicates included for degenerate coordinates).
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        if self.empty {
            return Vec::new();
        }
        let n = self.dim();
        (0..(1usize << n))
            .map(|mask| {
                DVector::from_fn(n, |i, _| {
                    if mask & (1 << i) != 0 {
                        self.center[i] + self.radius[i]
                    } else {
                        self.center[i] - self.radius[i]
                    }
                })
            })
            .collect()
    }

    /// Smallest box containing every point in `points`.
    pub fn bounding(points: &[DVector<f64>]) -> Result<BoxSet> {
        let first = points
            .first()
            .ok_or_else(|| crate::Error::usage("bounding box of an empty point set"))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in &points[1..] {
            check_dim("BoxSet::bounding", lo.len(), p.len())?;
            for i in 0..lo.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        BoxSet::from_bounds(&lo, &hi)
    }

    /// Intersection `a ∩ b`; empty when the boxes are disjoint.
    pub fn intersection(&self, other: &BoxSet) -> Result<BoxSet> {
        check_dim("intersection", self.dim(), other.dim())?;
        if self.empty || other.empty {
            return Ok(BoxSet::empty(self.dim()));
        }
        let lo = self.lower().sup(&other.lower());
        let hi = self.upper().inf(&other.upper());
        BoxSet::from_bounds(&lo, &hi)
    }
}

/// Free-function form of [`BoxSet::minkowski_sum`].
pub fn minkowski_sum(a: &BoxSet, b: &BoxSet) -> Result<BoxSet> {
    a.minkowski_sum(b)
}

/// Free-function form of [`BoxSet::pontryagin_diff`].
pub fn pontryagin_diff(a: &BoxSet, b: &BoxSet) -> Result<BoxSet> {
    a.pontryagin_diff(b)
}

/// Free-function form of [`BoxSet::affine_image`].
pub fn affine_image(matrix: &DMatrix<f64>, b: &BoxSet) -> Result<BoxSet> {
    b.affine_image(matrix)
}

pub fn contains(a: &BoxSet, x: &DVector<f64>) -> bool {
    a.contains(x)
}

pub fn box_subset(a: &BoxSet, b: &BoxSet) -> bool {
    a.is_subset_of(b)
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    center: Vec<f64>,
    radius: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    empty: bool,
}

impl Serialize for BoxSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BoxRepr {
            center: self.center.as_slice().to_vec(),
            radius: self.radius.as_slice().to_vec(),
            empty: self.empty,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoxSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = BoxRepr::deserialize(d)?;
        if repr.empty {
            return Ok(BoxSet::empty(repr.center.len()));
        }
        BoxSet::from_slices(&repr.center, &repr.radius).map_err(serde::de::Error::custom)
    }
}
