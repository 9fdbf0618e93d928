//! Plane-wave direction sets, bulk waves, edge traces, and the filtering
//! process.
//!
//! A direction set holds p = 2q+1 unit vectors. On each edge, two bulk waves
//! whose directions share a tangential component have identical traces up to
//! a constant phase; filtering keeps the lower index of every such pair. If
//! no surviving direction is orthogonal to the edge, a synthetic constant
//! basis member is appended so the edge space always spans the constants.

use nalgebra::{DMatrix, Point2, Vector2};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanewaveError {
    #[error("direction sets require q >= 2 (got q = {0})")]
    QTooSmall(usize),
    #[error("directions must be unit vectors (index {index} has norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("a direction set needs an odd count p = 2q+1 >= 5 (got {0})")]
    BadCount(usize),
}

/// Absolute tolerance on tangential components of unit directions used by
/// the filtering process and the orthogonality test.
pub const TOL_ORTH: f64 = 1e-12;

/// p = 2q+1 unit directions with a minimum-angle certificate.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    q: usize,
    directions: Vec<Vector2<f64>>,
    /// Minimum pairwise angle divided by 2*pi/p; 1 for the equispaced family.
    delta: f64,
}

impl DirectionSet {
    /// Directions of an arbitrary (diagnostic) set; computes the actual
    /// minimum-angle ratio, which may be 0 for degenerate inputs. No count or
    /// separation validation: intended for tests of the failure paths.
    pub fn from_directions_unchecked(directions: Vec<Vector2<f64>>) -> Self {
        let delta = min_angle_ratio(&directions);
        let q = directions.len().saturating_sub(1) / 2;
        Self { q, directions, delta }
    }

    /// A validated direction set: odd count p = 2q+1 with q >= 2, unit
    /// vectors, pairwise distinct.
    pub fn from_directions(directions: Vec<Vector2<f64>>) -> Result<Self, PlanewaveError> {
        let p = directions.len();
        if p < 5 || p % 2 == 0 {
            return Err(PlanewaveError::BadCount(p));
        }
        for (index, d) in directions.iter().enumerate() {
            let norm = d.norm();
            if (norm - 1.0).abs() > 1e-14 {
                return Err(PlanewaveError::NotUnit { index, norm });
            }
        }
        let delta = min_angle_ratio(&directions);
        Ok(Self {
            q: (p - 1) / 2,
            directions,
            delta,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.directions.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn directions(&self) -> &[Vector2<f64>] {
        &self.directions
    }

    pub fn direction(&self, l: usize) -> Vector2<f64> {
        self.directions[l]
    }
}

fn min_angle_ratio(directions: &[Vector2<f64>]) -> f64 {
    let p = directions.len();
    if p < 2 {
        return 1.0;
    }
    let mut min_angle = f64::INFINITY;
    for i in 0..p {
        for j in (i + 1)..p {
            let dot = directions[i].dot(&directions[j]).clamp(-1.0, 1.0);
            min_angle = min_angle.min(dot.acos());
        }
    }
    min_angle / (2.0 * std::f64::consts::PI / p as f64)
}

/// The equispaced family: d_l = (cos, sin) of 2*pi*l/p for l = 0..p with
/// p = 2q+1, so delta = 1.
pub fn make_directions(q: usize) -> Result<DirectionSet, PlanewaveError> {
    make_directions_with_offset(q, 0.0)
}

/// Equispaced directions rotated by a global angle offset (radians).
pub fn make_directions_with_offset(q: usize, offset: f64) -> Result<DirectionSet, PlanewaveError> {
    if q < 2 {
        return Err(PlanewaveError::QTooSmall(q));
    }
    let p = 2 * q + 1;
    let directions = (0..p)
        .map(|l| {
            let theta = offset + 2.0 * std::f64::consts::PI * l as f64 / p as f64;
            Vector2::new(theta.cos(), theta.sin())
        })
        .collect();
    Ok(DirectionSet {
        q,
        directions,
        delta: 1.0,
    })
}

/// One member of a filtered edge basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeMember {
    /// Trace of the bulk direction with the stored index; `tangential` is its
    /// component along the edge tangent.
    Wave { dir: usize, tangential: f64 },
    /// The synthetic constant function 1, appended when no kept direction is
    /// orthogonal to the edge.
    Constant,
}

impl EdgeMember {
    /// Tangential frequency of the member (0 for the constant).
    pub fn tangential(&self) -> f64 {
        match self {
            EdgeMember::Wave { tangential, .. } => *tangential,
            EdgeMember::Constant => 0.0,
        }
    }
}

/// Filtered plane-wave trace basis of one edge.
///
/// `members` is the kept index set; `rep[l]` maps every bulk direction to the
/// member position of its filtering representative. An optional `combo`
/// matrix re-expresses the basis in combinations of the raw members (each
/// column one effective basis function); it is populated by the conditioning
/// fallback and the SVD-filter flag, and `None` means the identity.
#[derive(Debug, Clone)]
pub struct EdgeBasis {
    pub edge: usize,
    pub midpoint: Point2<f64>,
    pub tangent: Vector2<f64>,
    pub length: f64,
    pub members: Vec<EdgeMember>,
    pub rep: Vec<usize>,
    pub has_constant: bool,
    /// Member position whose trace is constant along the edge (an orthogonal
    /// surviving direction, or the synthetic constant).
    pub constant_pos: usize,
    /// True when the constant had to be appended synthetically.
    pub synthetic_constant: bool,
    pub combo: Option<DMatrix<f64>>,
}

impl EdgeBasis {
    /// Number of raw filtered members.
    pub fn raw_len(&self) -> usize {
        self.members.len()
    }

    /// Dimension of the edge dof space: raw members, or combo columns when a
    /// re-expression is active.
    pub fn p_e(&self) -> usize {
        match &self.combo {
            Some(c) => c.ncols(),
            None => self.members.len(),
        }
    }

    /// Endpoints in canonical orientation.
    pub fn endpoints(&self) -> (Point2<f64>, Point2<f64>) {
        let half = self.tangent * (0.5 * self.length);
        (self.midpoint - half, self.midpoint + half)
    }

    /// Raw member value at a point of the edge: `exp(i*kappa*d.(x - x_e))`
    /// for a wave, 1 for the constant.
    pub fn eval_member(&self, pos: usize, kappa: f64, x: Point2<f64>) -> Complex64 {
        match self.members[pos] {
            EdgeMember::Wave { tangential, .. } => {
                let s = (x - self.midpoint).dot(&self.tangent);
                Complex64::from_polar(1.0, kappa * tangential * s)
            }
            EdgeMember::Constant => Complex64::new(1.0, 0.0),
        }
    }
}

/// The filtering process on one edge.
///
/// Directions are visited in index order; a direction whose tangential
/// component matches an already-kept one within `tol_orth` is merged into
/// that member (the lower index survives). If no kept direction has
/// |d.t| <= tol_orth, the constant is appended.
pub fn filter_edge(
    edge: usize,
    a: Point2<f64>,
    b: Point2<f64>,
    dirs: &DirectionSet,
    tol_orth: f64,
) -> EdgeBasis {
    let chord = b - a;
    let length = chord.norm();
    assert!(length > 0.0, "edge {edge} has zero length");
    let tangent = chord / length;
    let midpoint = nalgebra::center(&a, &b);

    let mut members: Vec<EdgeMember> = Vec::new();
    let mut rep = Vec::with_capacity(dirs.p());
    for (l, d) in dirs.directions().iter().enumerate() {
        let tangential = d.dot(&tangent);
        let existing = members.iter().position(|m| match m {
            EdgeMember::Wave { tangential: t, .. } => (tangential - t).abs() <= tol_orth,
            EdgeMember::Constant => false,
        });
        match existing {
            Some(pos) => rep.push(pos),
            None => {
                members.push(EdgeMember::Wave { dir: l, tangential });
                rep.push(members.len() - 1);
            }
        }
    }

    let orthogonal = members
        .iter()
        .position(|m| matches!(m, EdgeMember::Wave { tangential, .. } if tangential.abs() <= tol_orth));
    let (constant_pos, synthetic_constant) = match orthogonal {
        Some(pos) => (pos, false),
        None => {
            members.push(EdgeMember::Constant);
            (members.len() - 1, true)
        }
    };

    EdgeBasis {
        edge,
        midpoint,
        tangent,
        length,
        members,
        rep,
        has_constant: true,
        constant_pos,
        synthetic_constant,
        combo: None,
    }
}

/// A bulk plane wave `w_l(x) = exp(i*kappa*d_l.(x - x_K))` of one element.
#[derive(Debug, Clone, Copy)]
pub struct BulkWave {
    pub elem: usize,
    pub dir_index: usize,
    pub center: Point2<f64>,
}

/// Value of a bulk wave at a point; modulus 1 always, value 1 at the center.
pub fn eval_bulk(wave: &BulkWave, dirs: &DirectionSet, kappa: f64, x: Point2<f64>) -> Complex64 {
    let d = dirs.direction(wave.dir_index);
    Complex64::from_polar(1.0, kappa * d.dot(&(x - wave.center)))
}

/// The trace of a bulk wave on an edge equals `phase` times the member at the
/// returned position: `w_l|_e = exp(i*kappa*d_l.(x_e - x_K)) * w_rep(l)`.
pub fn trace_coefficient(
    wave: &BulkWave,
    dirs: &DirectionSet,
    kappa: f64,
    basis: &EdgeBasis,
) -> (usize, Complex64) {
    let d = dirs.direction(wave.dir_index);
    let phase = Complex64::from_polar(1.0, kappa * d.dot(&(basis.midpoint - wave.center)));
    (basis.rep[wave.dir_index], phase)
}
