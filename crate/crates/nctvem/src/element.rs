//! Local element operators of the plane-wave virtual element discretization.
//!
//! Per element the local sesquilinear form a^K(u,v) = (grad u, grad v)_K
//! - kappa^2 (u, v)_K is represented through four matrices: the plane-wave
//! Gram G (a^K between bulk waves, in closed form), the dof coupling B
//! (a^K between canonical dof basis functions and bulk waves, read off the
//! boundary integration-by-parts formula), the interpolation matrix D (dofs
//! of each bulk wave), and the projector Pi solving G Pi = B. The local
//! stiffness adds a diagonal stabilization acting on the projector's
//! complement. Everything is exact up to arithmetic: plane-wave products
//! integrate in closed form, so no volume quadrature enters assembly.

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use num_complex::Complex64;
use thiserror::Error;

use crate::mesh::PolygonalMesh;
use crate::planewave::{filter_edge, DirectionSet, EdgeBasis};
use crate::quad::{
    centroid_of, diameter_of, edge_quadrature, polygon_osc_integral, signed_area, sinc,
};

/// Lower bound on the Laplace eigenvalue constant in the unisolvency
/// condition h_K * kappa <= sqrt(c0 * a).
pub const A1_CONSTANT: f64 = 0.6197;
/// Projector well-posedness threshold on h_K * kappa for convex elements.
pub const PROJ_THRESHOLD: f64 = 0.5538;
/// Reciprocal condition number of G below which the projector solve is
/// refused.
pub const G_RCOND_FLOOR: f64 = 1e-14;
/// Reciprocal condition number of an edge Gram below which the spectral
/// filter takes over automatically.
pub const EDGE_RCOND_FLOOR: f64 = 1e-15;
/// Relative eigenvalue cutoff of the spectral edge filter.
pub const EDGE_FILTER_TAU: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum ElementError {
    #[error(
        "element {elem}: plane-wave Gram system is numerically singular \
         (rcond {rcond:.2e}, h_K*kappa = {hk_kappa:.4}); the element is \
         outside the admissible size range or its directions are degenerate"
    )]
    SingularProjector {
        elem: usize,
        rcond: f64,
        hk_kappa: f64,
    },
}

/// One boundary edge of an element: the global edge id and the element's
/// outward unit normal on it.
#[derive(Debug, Clone, Copy)]
pub struct ElementEdge {
    pub edge_id: usize,
    pub normal: Vector2<f64>,
}

/// Geometry of a single element, decoupled from any mesh so standalone
/// polygons can be assembled and tested in isolation.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub elem: usize,
    pub points: Vec<Point2<f64>>,
    pub center: Point2<f64>,
    pub h_k: f64,
    pub convex: bool,
    pub edges: Vec<ElementEdge>,
}

impl ElementGeometry {
    /// Geometry of polygon `k` of a mesh; edge ids are the mesh's.
    pub fn from_mesh(mesh: &PolygonalMesh, k: usize) -> Self {
        let points = mesh.polygon_points(k);
        let edges = mesh
            .poly_edges(k)
            .iter()
            .enumerate()
            .map(|(pos, &(edge_id, _))| ElementEdge {
                edge_id,
                normal: mesh.outward_normal(k, pos),
            })
            .collect();
        Self::assemble(k, points, edges)
    }

    /// A standalone CCW polygon; edge ids are the boundary positions
    /// 0..points.len().
    pub fn from_points(elem: usize, points: Vec<Point2<f64>>) -> Self {
        let n = points.len();
        let edges = (0..n)
            .map(|pos| {
                let t = (points[(pos + 1) % n] - points[pos]).normalize();
                ElementEdge {
                    edge_id: pos,
                    normal: Vector2::new(t.y, -t.x),
                }
            })
            .collect();
        Self::assemble(elem, points, edges)
    }

    fn assemble(elem: usize, points: Vec<Point2<f64>>, edges: Vec<ElementEdge>) -> Self {
        assert!(
            signed_area(&points) > 0.0,
            "element {elem} must be a CCW polygon"
        );
        let center = centroid_of(&points);
        let h_k = diameter_of(&points);
        let n = points.len();
        let convex = (0..n).all(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            let c = points[(i + 2) % n];
            let u = b - a;
            let v = c - b;
            u.x * v.y - u.y * v.x >= -1e-12 * h_k * h_k
        });
        Self {
            elem,
            points,
            center,
            h_k,
            convex,
            edges,
        }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.points)
    }
}

/// Filtered edge bases of a standalone element, indexed like its edge ids.
pub fn standalone_edge_bases(
    geom: &ElementGeometry,
    dirs: &DirectionSet,
    tol_orth: f64,
) -> Vec<EdgeBasis> {
    let n = geom.points.len();
    (0..n)
        .map(|pos| {
            filter_edge(
                pos,
                geom.points[pos],
                geom.points[(pos + 1) % n],
                dirs,
                tol_orth,
            )
        })
        .collect()
}

/// Size-based admissibility diagnostics of one element.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilityCheck {
    pub hk_kappa: f64,
    /// h_K * kappa <= sqrt(c0 * 0.6197): the local plane-wave space is
    /// unisolvent for the dofs.
    pub pass_a1: bool,
    /// h_K * kappa < 0.5538: the projector is provably well posed. For
    /// nonconvex elements the same constant is reported conservatively.
    pub pass_proj: bool,
    pub convex: bool,
    /// Reciprocal condition estimate of G, filled once the projector is
    /// built.
    pub rcond_g: Option<f64>,
}

/// Compares h_K * kappa against the unisolvency and projector thresholds.
/// Checks diagnose; they never gate assembly.
pub fn check_admissibility(h_k: f64, kappa: f64, convex: bool, c0: f64) -> AdmissibilityCheck {
    let hk_kappa = h_k * kappa;
    AdmissibilityCheck {
        hk_kappa,
        pass_a1: hk_kappa <= (c0 * A1_CONSTANT).sqrt(),
        pass_proj: hk_kappa < PROJ_THRESHOLD,
        convex,
        rcond_g: None,
    }
}

/// Plane-wave Gram G[l,m] = a^K(w_m, w_l) = kappa^2 (d_m . d_l - 1) times
/// the closed-form integral of exp(i kappa (d_m - d_l).(x - x_K)) over K.
/// The diagonal is exactly zero and the matrix exactly Hermitian: only the
/// upper triangle is computed, the lower is mirrored.
pub fn build_gram(
    geom: &ElementGeometry,
    dirs: &DirectionSet,
    kappa: f64,
) -> DMatrix<Complex64> {
    let p = dirs.p();
    // Integrating in centered coordinates keeps the oscillatory phases small.
    let translated: Vec<Point2<f64>> = geom
        .points
        .iter()
        .map(|pt| Point2::from(pt - geom.center))
        .collect();
    let mut g = DMatrix::zeros(p, p);
    for l in 0..p {
        for m in (l + 1)..p {
            let dl = dirs.direction(l);
            let dm = dirs.direction(m);
            let integral = polygon_osc_integral(&translated, dm - dl, kappa);
            let val = kappa * kappa * (dm.dot(&dl) - 1.0) * integral;
            g[(l, m)] = val;
            g[(m, l)] = val.conj();
        }
    }
    g
}

/// Local dof layout of one element: the concatenation of its edges' dof
/// spaces in boundary order.
#[derive(Debug, Clone)]
pub struct LocalDofSet {
    pub elem: usize,
    /// (edge id, index within that edge's dof space) per local dof.
    pub entries: Vec<(usize, usize)>,
}

impl LocalDofSet {
    pub fn new(geom: &ElementGeometry, bases: &[EdgeBasis]) -> Self {
        let mut entries = Vec::new();
        for edge in &geom.edges {
            for j in 0..bases[edge.edge_id].p_e() {
                entries.push((edge.edge_id, j));
            }
        }
        Self {
            elem: geom.elem,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The dof coupling B[l,i] = a^K(phi_i, w_l) and the interpolation matrix
/// D[i,l] = dof_i(w_l), both in closed form.
///
/// Integration by parts reduces a^K against a bulk wave to the boundary:
/// a^K(v, w_l) = -i kappa sum_e (d_l . n_e) int_e v conj(w_l) ds, and on
/// each edge w_l is a phase times its filtering representative, so only one
/// dof of each edge enters the row. D follows from the segment integral of
/// two tangential waves (a cardinal sine). When an edge carries a spectral
/// recombination C, its dof block transforms by C^T and B picks up the
/// matching row of C; both stay exact because C's columns are eigenvectors
/// of the edge Gram.
pub fn build_dof_coupling(
    geom: &ElementGeometry,
    dirs: &DirectionSet,
    bases: &[EdgeBasis],
    kappa: f64,
) -> (DMatrix<Complex64>, DMatrix<Complex64>, LocalDofSet) {
    let p = dirs.p();
    let dofset = LocalDofSet::new(geom, bases);
    let n = dofset.len();
    let mut b = DMatrix::zeros(p, n);
    let mut d = DMatrix::zeros(n, p);

    let mut offset = 0;
    for edge in &geom.edges {
        let basis = &bases[edge.edge_id];
        let h_e = basis.length;
        let raw = basis.raw_len();
        let taus: Vec<f64> = basis.members.iter().map(|m| m.tangential()).collect();
        for l in 0..p {
            let dl = dirs.direction(l);
            let tau_l = dl.dot(&basis.tangent);
            let phase =
                Complex64::from_polar(1.0, kappa * dl.dot(&(basis.midpoint - geom.center)));
            let draw: Vec<Complex64> = (0..raw)
                .map(|m| phase * sinc(0.5 * kappa * h_e * (tau_l - taus[m])))
                .collect();
            let bfac =
                -Complex64::i() * kappa * dl.dot(&edge.normal) * phase.conj() * h_e;
            let rep = basis.rep[l];
            match &basis.combo {
                None => {
                    for m in 0..raw {
                        d[(offset + m, l)] = draw[m];
                    }
                    b[(l, offset + rep)] += bfac;
                }
                Some(c) => {
                    for j in 0..c.ncols() {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for m in 0..raw {
                            acc += c[(m, j)] * draw[m];
                        }
                        d[(offset + j, l)] = acc;
                        b[(l, offset + j)] += bfac * c[(rep, j)];
                    }
                }
            }
        }
        offset += basis.p_e();
    }
    (b, d, dofset)
}

/// Solves G Pi = B by pivoted LU; the reciprocal condition estimate comes
/// from the singular values of G. A numerically singular G is an error (the
/// element is too large for its wavenumber, or directions coincide).
pub fn build_projector(
    elem: usize,
    g: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    check: &AdmissibilityCheck,
) -> Result<(DMatrix<Complex64>, f64), ElementError> {
    let singular = g.clone().singular_values();
    let smax = singular.iter().fold(0.0f64, |a, &s| a.max(s));
    let smin = singular.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    let err = ElementError::SingularProjector {
        elem,
        rcond,
        hk_kappa: check.hk_kappa,
    };
    if !rcond.is_finite() || rcond < G_RCOND_FLOOR {
        return Err(err);
    }
    // A plain LU solve keeps the identity Pi*D = I at the conditioning
    // limit; refining Pi against its own residual re-enters through
    // G^-1 * (R*D) amplified by |Pi| and makes the projector worse.
    let pi = g.clone().lu().solve(b).ok_or(err)?;
    Ok((pi, rcond))
}

/// Stabilization weight choice for the non-projected part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilization {
    /// s_i = a^K(Pi phi_i, Pi phi_i) per canonical dof basis function; real
    /// by the symmetry of a^K, possibly negative (kept as-is).
    DRecipe,
    /// s = 1: the plain identity-in-dof-space choice.
    DofiDofi,
}

/// Diagonal stabilization weights; the flag reports whether any weight is
/// negative (possible at larger h_K * kappa, diagnostic only).
pub fn build_stabilization(
    pi: &DMatrix<Complex64>,
    g: &DMatrix<Complex64>,
    stab: Stabilization,
) -> (DVector<f64>, bool) {
    let n = pi.ncols();
    let s = match stab {
        Stabilization::DofiDofi => DVector::from_element(n, 1.0),
        Stabilization::DRecipe => {
            let gp = g * pi;
            DVector::from_fn(n, |i, _| pi.column(i).dotc(&gp.column(i)).re)
        }
    };
    let any_negative = s.iter().any(|&v| v < 0.0);
    (s, any_negative)
}

/// Local stiffness Ah = Pi^H G Pi + (I - D Pi)^H diag(sigma s) (I - D Pi).
pub fn build_local_stiffness(
    g: &DMatrix<Complex64>,
    pi: &DMatrix<Complex64>,
    d: &DMatrix<Complex64>,
    s: &DVector<f64>,
    sigma: f64,
) -> DMatrix<Complex64> {
    let n = d.nrows();
    let proj_part = pi.adjoint() * g * pi;
    let i_minus = DMatrix::identity(n, n) - d * pi;
    let mut weighted = i_minus.clone();
    for i in 0..n {
        let w = Complex64::new(sigma * s[i], 0.0);
        for j in 0..n {
            weighted[(i, j)] *= w;
        }
    }
    proj_part + i_minus.adjoint() * weighted
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementWarning {
    /// h_K * kappa is at or above the projector threshold; the solve is
    /// attempted anyway.
    ProjectorThreshold { hk_kappa: f64 },
    /// h_K * kappa violates the unisolvency bound.
    A1Exceeded { hk_kappa: f64 },
    /// Some stabilization weights are negative.
    NegativeStabilization { count: usize },
}

/// Everything the global assembly needs from one element.
#[derive(Debug, Clone)]
pub struct ElementOperators {
    pub elem: usize,
    pub dofs: LocalDofSet,
    pub center: Point2<f64>,
    pub g: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub d: DMatrix<Complex64>,
    pub pi: DMatrix<Complex64>,
    pub s: DVector<f64>,
    pub sigma: f64,
    pub ah: DMatrix<Complex64>,
    pub check: AdmissibilityCheck,
    pub warnings: Vec<ElementWarning>,
}

/// Builds all local operators of one element.
pub fn build_element(
    geom: &ElementGeometry,
    dirs: &DirectionSet,
    bases: &[EdgeBasis],
    kappa: f64,
    stab: Stabilization,
    sigma: f64,
    c0: f64,
) -> Result<ElementOperators, ElementError> {
    let mut check = check_admissibility(geom.h_k, kappa, geom.convex, c0);
    let g = build_gram(geom, dirs, kappa);
    let (b, d, dofs) = build_dof_coupling(geom, dirs, bases, kappa);
    let (pi, rcond) = build_projector(geom.elem, &g, &b, &check)?;
    check.rcond_g = Some(rcond);
    let (s, any_negative) = build_stabilization(&pi, &g, stab);
    let ah = build_local_stiffness(&g, &pi, &d, &s, sigma);

    let mut warnings = Vec::new();
    if !check.pass_a1 {
        warnings.push(ElementWarning::A1Exceeded {
            hk_kappa: check.hk_kappa,
        });
    }
    if !check.pass_proj {
        warnings.push(ElementWarning::ProjectorThreshold {
            hk_kappa: check.hk_kappa,
        });
    }
    if any_negative {
        warnings.push(ElementWarning::NegativeStabilization {
            count: s.iter().filter(|&&v| v < 0.0).count(),
        });
    }

    Ok(ElementOperators {
        elem: geom.elem,
        dofs,
        center: geom.center,
        g,
        b,
        d,
        pi,
        s,
        sigma,
        ah,
        check,
        warnings,
    })
}

/// The L2 projection machinery of one edge: the raw Gram of the filtered
/// trace basis and the inverse of the (possibly spectrally reduced) Gram.
#[derive(Debug, Clone)]
pub struct EdgeProjection {
    pub edge: usize,
    /// Raw edge Gram M[m,n] = int_e w_n conj(w_m) ds (real symmetric).
    pub m: DMatrix<f64>,
    /// Inverse of the reduced Gram C^T M C (equals M^{-1} when no
    /// recombination is active).
    pub m_hat_inv: DMatrix<f64>,
    /// Eigenvalue-ratio condition estimate of the raw Gram.
    pub rcond: f64,
    /// True when the spectral filter engaged because M was numerically
    /// singular rather than by request.
    pub fell_back: bool,
}

/// Raw edge Gram: M[m,n] = h_e sinc(kappa (tau_n - tau_m) h_e / 2). Real
/// and symmetric because both traces are centered at the edge midpoint.
pub fn edge_gram(basis: &EdgeBasis, kappa: f64) -> DMatrix<f64> {
    let raw = basis.raw_len();
    let taus: Vec<f64> = basis.members.iter().map(|m| m.tangential()).collect();
    let h = basis.length;
    DMatrix::from_fn(raw, raw, |i, j| h * sinc(0.5 * kappa * h * (taus[j] - taus[i])))
}

/// Builds the edge projection map, engaging the spectral filter when asked
/// (`force_filter`) or when the Gram is numerically singular. The filter
/// eigendecomposes the real symmetric Gram, drops eigenvalues below
/// `tau * lambda_max`, and re-expresses the edge space in the retained
/// eigenvectors, which it records in `basis.combo`; the reduced Gram is the
/// diagonal of kept eigenvalues.
pub fn build_edge_projection(
    basis: &mut EdgeBasis,
    kappa: f64,
    force_filter: bool,
    tau: f64,
) -> EdgeProjection {
    basis.combo = None;
    let m = edge_gram(basis, kappa);
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let lmin = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    let rcond = if lmax > 0.0 { lmin / lmax } else { 0.0 };

    let fell_back = !force_filter && rcond < EDGE_RCOND_FLOOR;
    if force_filter || fell_back {
        // Kept eigenpairs in descending eigenvalue order for determinism.
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| eig.eigenvalues[i] > tau * lmax)
            .collect();
        assert!(!kept.is_empty(), "edge Gram has no positive eigenvalues");
        let raw = basis.raw_len();
        let c = DMatrix::from_fn(raw, kept.len(), |i, j| eig.eigenvectors[(i, kept[j])]);
        let m_hat_inv = DMatrix::from_fn(kept.len(), kept.len(), |i, j| {
            if i == j {
                1.0 / eig.eigenvalues[kept[i]]
            } else {
                0.0
            }
        });
        basis.combo = Some(c);
        return EdgeProjection {
            edge: basis.edge,
            m,
            m_hat_inv,
            rcond,
            fell_back,
        };
    }

    let m_hat_inv = m
        .clone()
        .lu()
        .try_inverse()
        .expect("edge Gram above the rcond floor must invert");
    EdgeProjection {
        edge: basis.edge,
        m,
        m_hat_inv,
        rcond,
        fell_back: false,
    }
}

/// Coefficients of the edge L2 projection of a function known through its
/// edge dofs: c = h_e * M_hat^{-1} dofs, in the edge's effective basis.
pub fn project_edge_dofs(
    basis: &EdgeBasis,
    proj: &EdgeProjection,
    dofs: &[Complex64],
) -> Vec<Complex64> {
    let r = basis.p_e();
    assert_eq!(dofs.len(), r);
    (0..r)
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &dj) in dofs.iter().enumerate() {
                acc += proj.m_hat_inv[(i, j)] * dj;
            }
            basis.length * acc
        })
        .collect()
}

/// Evaluates a function given by coefficients in the edge's effective basis
/// (resolving any active recombination) at a point of the edge.
pub fn eval_edge_function(
    basis: &EdgeBasis,
    coeffs: &[Complex64],
    kappa: f64,
    x: Point2<f64>,
) -> Complex64 {
    match &basis.combo {
        None => coeffs
            .iter()
            .enumerate()
            .map(|(m, &c)| c * basis.eval_member(m, kappa, x))
            .sum(),
        Some(cmb) => {
            let raw = basis.raw_len();
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..raw {
                let wm = basis.eval_member(m, kappa, x);
                for (j, &c) in coeffs.iter().enumerate() {
                    acc += c * cmb[(m, j)] * wm;
                }
            }
            acc
        }
    }
}

/// Impedance boundary contributions of one boundary edge: the dof-space
/// mass i kappa h_e^2 M_hat^{-1} (from i kappa int_e (P0 u) conj(P0 v) ds
/// expressed through the projection map) and the load vector
/// h_e M_hat^{-1} g_mom, where g_mom holds the Gauss moments of the data
/// against the effective edge basis.
pub fn build_boundary_terms<Gf: Fn(Point2<f64>) -> Complex64>(
    basis: &EdgeBasis,
    proj: &EdgeProjection,
    kappa: f64,
    g: Gf,
    n_gauss: usize,
) -> (DMatrix<Complex64>, DVector<Complex64>) {
    let r = basis.p_e();
    let h = basis.length;
    let mass = DMatrix::from_fn(r, r, |i, j| {
        Complex64::i() * kappa * h * h * proj.m_hat_inv[(i, j)]
    });

    let (a, b) = basis.endpoints();
    let raw = basis.raw_len();
    let g_raw: Vec<Complex64> = (0..raw)
        .map(|m| {
            edge_quadrature(a, b, n_gauss, |x| g(x) * basis.eval_member(m, kappa, x).conj())
        })
        .collect();
    let g_mom: Vec<Complex64> = match &basis.combo {
        None => g_raw,
        Some(c) => (0..c.ncols())
            .map(|j| (0..raw).map(|m| c[(m, j)] * g_raw[m]).sum())
            .collect(),
    };
    let rhs = DVector::from_fn(r, |i, _| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &gj) in g_mom.iter().enumerate() {
            acc += proj.m_hat_inv[(i, j)] * gj;
        }
        h * acc
    });
    (mass, rhs)
}
