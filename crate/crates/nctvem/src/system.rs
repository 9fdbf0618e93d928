//! Global assembly and solution of the discrete impedance problem.
//!
//! Degrees of freedom are edge moments shared between the two elements of
//! every interior edge, which couples the local spaces without imposing
//! pointwise trace continuity. The global matrix is the scatter-add of the
//! local stiffness blocks plus the impedance mass of the boundary edges;
//! the load vector holds the boundary moments of the data. Systems are
//! factorized directly, dense below a size threshold and sparse above it,
//! with a short iterative refinement loop checking the residual.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Point2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::element::{
    build_boundary_terms, build_edge_projection, build_element, EdgeProjection, ElementError,
    ElementGeometry, ElementOperators, ElementWarning, Stabilization, EDGE_FILTER_TAU,
};
use crate::mesh::PolygonalMesh;
use crate::planewave::{filter_edge, DirectionSet, EdgeBasis, TOL_ORTH};
use crate::quad::default_edge_points;

/// Systems up to this size are solved with a dense factorization, which is
/// faster at small scale and gives reproducible condition diagnostics.
pub const DENSE_THRESHOLD: usize = 2000;

/// Relative residual target of the post-factorization refinement loop.
pub const RESIDUAL_TARGET: f64 = 1e-10;

/// Maximum number of iterative refinement passes.
pub const MAX_REFINEMENTS: usize = 3;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("the mesh has no polygons")]
    EmptyMesh,
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error(transparent)]
    Element(#[from] ElementError),
    #[error("linear solve failed: {diagnostic}\n{admissibility}")]
    Factorization {
        diagnostic: String,
        admissibility: AdmissibilitySummary,
    },
    #[error("system dump failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Global numbering of the edge-moment dofs: edges in mesh order, each
/// edge's effective basis indices consecutively.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Prefix sums of the per-edge dof counts; length `n_edges + 1`.
    pub edge_offset: Vec<usize>,
    /// Total number of global dofs.
    pub n: usize,
    /// Per element, the global index of each local dof in the element's
    /// boundary traversal order.
    pub element_dofs: Vec<Vec<usize>>,
}

impl DofMap {
    /// Dof count of edge `e`.
    pub fn edge_count(&self, e: usize) -> usize {
        self.edge_offset[e + 1] - self.edge_offset[e]
    }

    /// Global indices of edge `e`.
    pub fn edge_range(&self, e: usize) -> std::ops::Range<usize> {
        self.edge_offset[e]..self.edge_offset[e + 1]
    }
}

/// Numbers the dofs of every (filtered) edge basis. Interior edges are
/// numbered once and referenced by both neighbours, which is what couples
/// the element spaces.
pub fn build_dof_map(mesh: &PolygonalMesh, bases: &[EdgeBasis]) -> Result<DofMap, SystemError> {
    if mesh.n_polygons() == 0 {
        return Err(SystemError::EmptyMesh);
    }
    if bases.len() != mesh.n_edges() {
        return Err(SystemError::Dimension(format!(
            "{} edge bases for {} mesh edges",
            bases.len(),
            mesh.n_edges()
        )));
    }
    let mut edge_offset = Vec::with_capacity(mesh.n_edges() + 1);
    let mut n = 0;
    for basis in bases {
        edge_offset.push(n);
        n += basis.p_e();
    }
    edge_offset.push(n);

    let element_dofs = (0..mesh.n_polygons())
        .map(|k| {
            let mut globals = Vec::new();
            for &(edge_id, _) in mesh.poly_edges(k) {
                globals.extend(edge_offset[edge_id]..edge_offset[edge_id] + bases[edge_id].p_e());
            }
            globals
        })
        .collect();

    Ok(DofMap {
        edge_offset,
        n,
        element_dofs,
    })
}

/// A sparse complex matrix held as deduplicated triplets in a canonical
/// order, so assembly results are bit-stable under permutations of the
/// element scatter order.
#[derive(Debug, Clone)]
pub struct AssembledMatrix {
    pub n: usize,
    /// (row, col, value), sorted by (col, row), one entry per position.
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl AssembledMatrix {
    /// Sorts the triplets into the canonical order and sums duplicates.
    /// Equal positions are summed in value order, so any permutation of the
    /// input produces the identical matrix.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_unstable_by(|a, b| {
            (a.1, a.0)
                .cmp(&(b.1, b.0))
                .then_with(|| a.2.re.total_cmp(&b.2.re))
                .then_with(|| a.2.im.total_cmp(&b.2.im))
        });
        let mut entries: Vec<(usize, usize, Complex64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != Complex64::new(0.0, 0.0));
        Self { n, entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Fill ratio nnz / n^2.
    pub fn fill(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.entries.len() as f64 / (self.n as f64 * self.n as f64)
        }
    }

    pub fn matvec(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut y = DVector::zeros(self.n);
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            a[(r, c)] += v;
        }
        a
    }
}

/// Aggregate admissibility picture of an assembled mesh, attached to solver
/// errors and printed with run summaries.
#[derive(Debug, Clone, Copy)]
pub struct AdmissibilitySummary {
    pub n_elements: usize,
    pub max_hk_kappa: f64,
    /// Elements violating the unisolvency bound on h_K kappa.
    pub a1_violations: usize,
    /// Elements at or above the projector threshold.
    pub proj_violations: usize,
    /// Elements with at least one negative stabilization weight.
    pub negative_stab_elements: usize,
    /// Boundary edges whose Gram inversion fell back to the spectral filter.
    pub fallback_edges: usize,
    /// Interior edges whose appended constant moment carries a structurally
    /// zero weight: no bulk wave traces onto a synthetic constant, so its
    /// projection vanishes and the canonical-energy weight with it. Each one
    /// makes the matrix singular; the spectral filter (which mixes the
    /// constant into every effective member) or unit weights avoid this.
    pub unstabilized_constants: usize,
}

impl fmt::Display for AdmissibilitySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "admissibility: {} elements, max h_K*kappa = {:.4}, \
             {} above the unisolvency bound, {} above the projector threshold, \
             {} with negative stabilization weights, {} edges on the spectral fallback",
            self.n_elements,
            self.max_hk_kappa,
            self.a1_violations,
            self.proj_violations,
            self.negative_stab_elements,
            self.fallback_edges
        )?;
        if self.unstabilized_constants > 0 {
            write!(
                f,
                "; {} interior constant moments carry zero canonical-energy \
                 weight (enable the spectral edge filter or unit weights)",
                self.unstabilized_constants
            )?;
        }
        Ok(())
    }
}

/// Assembly-wide options; `Default` gives the plain method.
#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub stabilization: Stabilization,
    /// Stabilization scale sigma.
    pub sigma: f64,
    /// Constant c0 of the unisolvency bound.
    pub c0: f64,
    /// Direction-merge tolerance of the edge filter.
    pub tol_orth: f64,
    /// Apply the spectral edge filter on every edge instead of only as an
    /// automatic fallback on numerically singular boundary Grams.
    pub svd_filter: bool,
    /// Gauss points per boundary edge for the data moments; `None` picks
    /// a count resolving the oscillation of the integrand.
    pub n_gauss_boundary: Option<usize>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            stabilization: Stabilization::DRecipe,
            sigma: 1.0,
            c0: 1.0,
            tol_orth: TOL_ORTH,
            svd_filter: false,
            n_gauss_boundary: None,
        }
    }
}

/// The assembled discrete problem plus everything needed to evaluate the
/// discrete solution afterwards.
#[derive(Debug)]
pub struct Assembly {
    pub kappa: f64,
    pub dof_map: DofMap,
    /// Full system matrix: scattered local stiffness plus boundary mass.
    pub matrix: AssembledMatrix,
    /// The boundary impedance mass alone (anti-Hermitian part of the
    /// system), kept for diagnostics.
    pub boundary_mass: AssembledMatrix,
    pub rhs: DVector<Complex64>,
    pub elements: Vec<ElementOperators>,
    pub bases: Vec<EdgeBasis>,
    /// Projection maps of the edges that needed one (all boundary edges;
    /// every edge when the filter is forced).
    pub projections: Vec<Option<EdgeProjection>>,
    pub summary: AdmissibilitySummary,
    pub assemble_ms: f64,
}

/// Assembles the discrete impedance problem on a mesh. The data closure
/// receives a boundary point and the outward unit normal there and returns
/// g = grad(u) . n + i kappa u of the driving field.
pub fn assemble<G>(
    mesh: &PolygonalMesh,
    dirs: &DirectionSet,
    kappa: f64,
    opts: &AssembleOptions,
    g: G,
) -> Result<Assembly, SystemError>
where
    G: Fn(Point2<f64>, Vector2<f64>) -> Complex64,
{
    if mesh.n_polygons() == 0 {
        return Err(SystemError::EmptyMesh);
    }
    let start = Instant::now();

    // Edge bases in canonical (mesh) orientation, shared by both neighbours
    // of interior edges. Projections are built before the dof map because
    // a spectral recombination changes an edge's dof count.
    let mut bases: Vec<EdgeBasis> = (0..mesh.n_edges())
        .map(|e| {
            let (a, b) = mesh.edge_endpoints(e);
            filter_edge(e, a, b, dirs, opts.tol_orth)
        })
        .collect();
    let mut projections: Vec<Option<EdgeProjection>> = vec![None; mesh.n_edges()];
    let mut fallback_edges = 0;
    for e in 0..mesh.n_edges() {
        if opts.svd_filter || mesh.is_boundary_edge(e) {
            let proj = build_edge_projection(&mut bases[e], kappa, opts.svd_filter, EDGE_FILTER_TAU);
            if proj.fell_back {
                fallback_edges += 1;
            }
            projections[e] = Some(proj);
        }
    }

    let dof_map = build_dof_map(mesh, &bases)?;

    let elements: Vec<ElementOperators> = (0..mesh.n_polygons())
        .into_par_iter()
        .map(|k| {
            let geom = ElementGeometry::from_mesh(mesh, k);
            build_element(
                &geom,
                dirs,
                &bases,
                kappa,
                opts.stabilization,
                opts.sigma,
                opts.c0,
            )
        })
        .collect::<Result<_, _>>()?;

    // Scatter. Local dof order equals the element_dofs order by
    // construction (both traverse the element's edges in boundary order).
    let mut triplets = Vec::new();
    for ops in &elements {
        let globals = &dof_map.element_dofs[ops.elem];
        if globals.len() != ops.dofs.len() {
            return Err(SystemError::Dimension(format!(
                "element {}: {} local dofs vs {} mapped",
                ops.elem,
                ops.dofs.len(),
                globals.len()
            )));
        }
        for (r, &gr) in globals.iter().enumerate() {
            for (c, &gc) in globals.iter().enumerate() {
                triplets.push((gr, gc, ops.ah[(r, c)]));
            }
        }
    }

    let mut mass_triplets = Vec::new();
    let mut rhs = DVector::zeros(dof_map.n);
    for e in mesh.boundary_edges() {
        let basis = &bases[e];
        let proj = projections[e].as_ref().expect("boundary edge projection");
        let k = mesh.edge(e).adjacent().next().expect("boundary edge owner");
        let pos = mesh
            .poly_edges(k)
            .iter()
            .position(|&(id, _)| id == e)
            .expect("edge listed by its owner");
        let normal = mesh.outward_normal(k, pos);
        let n_gauss = opts
            .n_gauss_boundary
            .unwrap_or_else(|| default_edge_points(kappa, basis.length));
        let (mass, load) = build_boundary_terms(basis, proj, kappa, |x| g(x, normal), n_gauss);
        let offset = dof_map.edge_offset[e];
        for i in 0..basis.p_e() {
            rhs[offset + i] += load[i];
            for j in 0..basis.p_e() {
                mass_triplets.push((offset + i, offset + j, mass[(i, j)]));
            }
        }
    }

    let boundary_mass = AssembledMatrix::from_triplets(dof_map.n, mass_triplets.clone());
    triplets.extend(mass_triplets);
    let matrix = AssembledMatrix::from_triplets(dof_map.n, triplets);

    let max_hk_kappa = elements
        .iter()
        .map(|o| o.check.hk_kappa)
        .fold(0.0f64, f64::max);
    let summary = AdmissibilitySummary {
        n_elements: elements.len(),
        max_hk_kappa,
        a1_violations: elements.iter().filter(|o| !o.check.pass_a1).count(),
        proj_violations: elements.iter().filter(|o| !o.check.pass_proj).count(),
        negative_stab_elements: elements
            .iter()
            .filter(|o| {
                o.warnings
                    .iter()
                    .any(|w| matches!(w, ElementWarning::NegativeStabilization { .. }))
            })
            .count(),
        fallback_edges,
        unstabilized_constants: match opts.stabilization {
            Stabilization::DRecipe => (0..mesh.n_edges())
                .filter(|&e| {
                    !mesh.is_boundary_edge(e)
                        && bases[e].synthetic_constant
                        && bases[e].combo.is_none()
                })
                .count(),
            Stabilization::DofiDofi => 0,
        },
    };

    Ok(Assembly {
        kappa,
        dof_map,
        matrix,
        boundary_mass,
        rhs,
        elements,
        bases,
        projections,
        summary,
        assemble_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Outcome diagnostics of a linear solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub n: usize,
    pub nnz: usize,
    pub fill: f64,
    /// Relative residual |Ax - b| / |b| after refinement.
    pub residual: f64,
    pub refinements: usize,
    /// False when refinement stalled above the residual target; the
    /// solution is still returned (conditioning-floor regime).
    pub converged: bool,
    pub dense: bool,
    pub solve_ms: f64,
}

enum Factorization {
    Dense(nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>),
    Sparse(Box<faer::sparse::linalg::solvers::Lu<usize, faer::c64>>),
}

impl Factorization {
    fn solve(&self, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
        match self {
            Factorization::Dense(lu) => lu.solve(b),
            Factorization::Sparse(lu) => {
                use faer::prelude::Solve;
                let mut rhs = faer::Mat::<faer::c64>::zeros(b.len(), 1);
                for i in 0..b.len() {
                    rhs[(i, 0)] = faer::c64::new(b[i].re, b[i].im);
                }
                let x = lu.solve(&rhs);
                Some(DVector::from_fn(b.len(), |i, _| {
                    Complex64::new(x[(i, 0)].re, x[(i, 0)].im)
                }))
            }
        }
    }
}

/// Direct solve of an assembled system: dense LU up to `DENSE_THRESHOLD`
/// unknowns, sparse LU above, then iterative refinement until the relative
/// residual reaches `RESIDUAL_TARGET` or `MAX_REFINEMENTS` passes are spent.
/// A stall is reported in the stats, not an error, because refinement
/// saturates exactly in the conditioning-floor regime the method documents.
pub fn solve_linear(
    matrix: &AssembledMatrix,
    rhs: &DVector<Complex64>,
    summary: AdmissibilitySummary,
) -> Result<(DVector<Complex64>, SolveStats), SystemError> {
    if rhs.len() != matrix.n {
        return Err(SystemError::Dimension(format!(
            "rhs length {} vs matrix size {}",
            rhs.len(),
            matrix.n
        )));
    }
    let start = Instant::now();
    let dense = matrix.n <= DENSE_THRESHOLD;
    let fact = if dense {
        Factorization::Dense(matrix.to_dense().lu())
    } else {
        let triplets: Vec<faer::sparse::Triplet<usize, usize, faer::c64>> = matrix
            .entries
            .iter()
            .map(|&(r, c, v)| faer::sparse::Triplet::new(r, c, faer::c64::new(v.re, v.im)))
            .collect();
        let a = faer::sparse::SparseColMat::try_new_from_triplets(matrix.n, matrix.n, &triplets)
            .map_err(|e| SystemError::Factorization {
                diagnostic: format!("sparse layout construction failed: {e:?}"),
                admissibility: summary,
            })?;
        let symbolic = faer::sparse::linalg::solvers::SymbolicLu::try_new(a.symbolic()).map_err(
            |e| SystemError::Factorization {
                diagnostic: format!("symbolic factorization failed: {e:?}"),
                admissibility: summary,
            },
        )?;
        let lu = faer::sparse::linalg::solvers::Lu::try_new_with_symbolic(symbolic, a.as_ref())
            .map_err(|e| SystemError::Factorization {
                diagnostic: format!("numeric factorization failed: {e:?}"),
                admissibility: summary,
            })?;
        Factorization::Sparse(Box::new(lu))
    };

    let norm_b = rhs.norm();
    let mut x = fact.solve(rhs).ok_or_else(|| SystemError::Factorization {
        diagnostic: "LU factorization is singular".into(),
        admissibility: summary,
    })?;
    if norm_b == 0.0 {
        let stats = SolveStats {
            n: matrix.n,
            nnz: matrix.nnz(),
            fill: matrix.fill(),
            residual: 0.0,
            refinements: 0,
            converged: true,
            dense,
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        return Ok((DVector::zeros(matrix.n), stats));
    }

    let mut residual = (rhs - matrix.matvec(&x)).norm() / norm_b;
    let mut refinements = 0;
    while residual > RESIDUAL_TARGET && refinements < MAX_REFINEMENTS {
        let r = rhs - matrix.matvec(&x);
        let Some(dx) = fact.solve(&r) else { break };
        let candidate = &x + &dx;
        let cand_residual = (rhs - matrix.matvec(&candidate)).norm() / norm_b;
        refinements += 1;
        if cand_residual >= residual {
            break;
        }
        x = candidate;
        residual = cand_residual;
    }

    let stats = SolveStats {
        n: matrix.n,
        nnz: matrix.nnz(),
        fill: matrix.fill(),
        residual,
        refinements,
        converged: residual <= RESIDUAL_TARGET,
        dense,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok((x, stats))
}

impl Assembly {
    /// Solves the assembled system; see [`solve_linear`].
    pub fn solve(&self) -> Result<(DVector<Complex64>, SolveStats), SystemError> {
        solve_linear(&self.matrix, &self.rhs, self.summary)
    }
}

/// Writes the matrix in Matrix Market coordinate format (complex general)
/// and the right-hand side next to it as a dense complex array, for
/// inspection with external tools.
pub fn write_matrix_market(
    matrix: &AssembledMatrix,
    rhs: &DVector<Complex64>,
    path: &Path,
) -> Result<(), SystemError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "%%MatrixMarket matrix coordinate complex general")?;
    writeln!(out, "{} {} {}", matrix.n, matrix.n, matrix.nnz())?;
    for &(r, c, v) in &matrix.entries {
        writeln!(out, "{} {} {:.17e} {:.17e}", r + 1, c + 1, v.re, v.im)?;
    }
    drop(out);

    let mut rhs_path = path.as_os_str().to_owned();
    rhs_path.push(".rhs");
    let mut out = std::io::BufWriter::new(std::fs::File::create(Path::new(&rhs_path))?);
    writeln!(out, "%%MatrixMarket matrix array complex general")?;
    writeln!(out, "{} 1", rhs.len())?;
    for v in rhs.iter() {
        writeln!(out, "{:.17e} {:.17e}", v.re, v.im)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::parse_mesh;
    use crate::planewave::make_directions;
    use approx::assert_abs_diff_eq;

    fn unit_square_mesh() -> PolygonalMesh {
        parse_mesh(
            "4 1\n\
             0 0\n1 0\n1 1\n0 1\n\
             4 0 1 2 3\n",
        )
        .unwrap()
    }

    fn two_cell_mesh() -> PolygonalMesh {
        parse_mesh(
            "6 2\n\
             0 0\n1 0\n1 1\n0 1\n2 0\n2 1\n\
             4 0 1 2 3\n\
             4 1 4 5 2\n",
        )
        .unwrap()
    }

    fn impedance_wave(
        kappa: f64,
        dir: Vector2<f64>,
    ) -> impl Fn(Point2<f64>, Vector2<f64>) -> Complex64 {
        move |x, n| {
            let u = Complex64::from_polar(1.0, kappa * dir.dot(&x.coords));
            Complex64::i() * kappa * (dir.dot(&n) + 1.0) * u
        }
    }

    #[test]
    fn dof_map_counts_a_single_square_with_axis_aligned_merges() {
        let mesh = unit_square_mesh();

        // A set symmetric under both axis reflections: horizontal edges see
        // five distinct tangential frequencies (one zero), vertical edges
        // merge two mirror pairs down to three members with a zero kept.
        let dirs = DirectionSet::from_directions(vec![
            Vector2::new(0.0, 1.0),
            Vector2::new(0.6, 0.8),
            Vector2::new(-0.6, 0.8),
            Vector2::new(1.0, 0.0),
            Vector2::new(-1.0, 0.0),
        ])
        .unwrap();
        let bases: Vec<EdgeBasis> = (0..mesh.n_edges())
            .map(|e| {
                let (a, b) = mesh.edge_endpoints(e);
                filter_edge(e, a, b, &dirs, TOL_ORTH)
            })
            .collect();
        let map = build_dof_map(&mesh, &bases).unwrap();
        // Edges in traversal order: bottom, right, top, left.
        assert_eq!(map.edge_count(0), 5);
        assert_eq!(map.edge_count(1), 3);
        assert_eq!(map.edge_count(2), 5);
        assert_eq!(map.edge_count(3), 3);
        assert_eq!(map.n, 16);
        assert_eq!(map.element_dofs[0].len(), 16);

        // The equispaced set merges only on horizontal edges (cosine pairs);
        // vertical edges keep all five sines, one of which is zero.
        let dirs = make_directions(2).unwrap();
        let bases: Vec<EdgeBasis> = (0..mesh.n_edges())
            .map(|e| {
                let (a, b) = mesh.edge_endpoints(e);
                filter_edge(e, a, b, &dirs, TOL_ORTH)
            })
            .collect();
        let map = build_dof_map(&mesh, &bases).unwrap();
        assert_eq!(map.edge_count(0), 4);
        assert_eq!(map.edge_count(1), 5);
        assert_eq!(map.edge_count(2), 4);
        assert_eq!(map.edge_count(3), 5);
        assert_eq!(map.n, 18);
    }

    #[test]
    fn dof_map_shares_interior_edge_dofs() {
        let mesh = two_cell_mesh();
        let dirs = make_directions(2).unwrap();
        let bases: Vec<EdgeBasis> = (0..mesh.n_edges())
            .map(|e| {
                let (a, b) = mesh.edge_endpoints(e);
                filter_edge(e, a, b, &dirs, TOL_ORTH)
            })
            .collect();
        let map = build_dof_map(&mesh, &bases).unwrap();
        let total: usize = bases.iter().map(|b| b.p_e()).sum();
        assert_eq!(map.n, total);

        let shared: Vec<usize> = (0..mesh.n_edges())
            .filter(|&e| !mesh.is_boundary_edge(e))
            .collect();
        assert_eq!(shared.len(), 1);
        let range = map.edge_range(shared[0]);
        for g in range {
            assert!(map.element_dofs[0].contains(&g));
            assert!(map.element_dofs[1].contains(&g));
        }
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mesh = parse_mesh("2 0\n0 0\n1 0\n");
        // Meshes without polygons fail either at parse or at numbering.
        match mesh {
            Ok(m) => {
                assert!(matches!(
                    build_dof_map(&m, &[]),
                    Err(SystemError::EmptyMesh)
                ));
            }
            Err(_) => {}
        }
    }

    #[test]
    fn triplet_order_does_not_change_the_matrix() {
        let t = vec![
            (0, 0, Complex64::new(1.0, 2.0)),
            (1, 0, Complex64::new(-0.5, 0.25)),
            (0, 0, Complex64::new(1e-16, -3.0)),
            (1, 1, Complex64::new(4.0, 0.0)),
            (0, 0, Complex64::new(-1.0, 0.125)),
        ];
        let a = AssembledMatrix::from_triplets(2, t.clone());
        let mut rev = t;
        rev.reverse();
        let b = AssembledMatrix::from_triplets(2, rev);
        assert_eq!(a.entries.len(), b.entries.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
            assert_eq!(x.2, y.2);
        }
    }

    #[test]
    fn assembled_matrix_matvec_matches_dense() {
        let t = vec![
            (0, 1, Complex64::new(2.0, -1.0)),
            (2, 0, Complex64::new(0.0, 3.0)),
            (1, 1, Complex64::new(1.0, 1.0)),
        ];
        let a = AssembledMatrix::from_triplets(3, t);
        let x = DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 2.0),
        ]);
        let dense = a.to_dense() * &x;
        let sparse = a.matvec(&x);
        assert_abs_diff_eq!((dense - sparse).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_data_yields_the_zero_solution() {
        let mesh = two_cell_mesh();
        let dirs = make_directions(2).unwrap();
        let asm = assemble(
            &mesh,
            &dirs,
            2.0,
            &AssembleOptions::default(),
            |_, _| Complex64::new(0.0, 0.0),
        )
        .unwrap();
        assert!(asm.rhs.iter().all(|v| v.norm() == 0.0));
        let (x, stats) = asm.solve().unwrap();
        assert!(x.iter().all(|v| v.norm() == 0.0));
        assert!(stats.converged);
        assert_eq!(stats.residual, 0.0);
    }

    #[test]
    fn one_element_system_is_the_local_block_plus_boundary_mass() {
        let mesh = unit_square_mesh();
        let dirs = make_directions(2).unwrap();
        let kappa = 2.0;
        let asm = assemble(
            &mesh,
            &dirs,
            kappa,
            &AssembleOptions::default(),
            impedance_wave(kappa, Vector2::new(1.0, 0.0)),
        )
        .unwrap();
        let ops = &asm.elements[0];
        let globals = &asm.dof_map.element_dofs[0];
        let dense = asm.matrix.to_dense();
        let mass = asm.boundary_mass.to_dense();
        for (r, &gr) in globals.iter().enumerate() {
            for (c, &gc) in globals.iter().enumerate() {
                let expect = ops.ah[(r, c)] + mass[(gr, gc)];
                assert_abs_diff_eq!((dense[(gr, gc)] - expect).norm(), 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn matrix_minus_boundary_mass_is_hermitian() {
        let mesh = two_cell_mesh();
        let dirs = make_directions(3).unwrap();
        let kappa = 3.0;
        let asm = assemble(
            &mesh,
            &dirs,
            kappa,
            &AssembleOptions::default(),
            impedance_wave(kappa, Vector2::new(0.6, 0.8)),
        )
        .unwrap();
        let a = asm.matrix.to_dense() - asm.boundary_mass.to_dense();
        let scale = a.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let skew = (&a - a.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max);
        assert!(skew <= 1e-11 * scale.max(1.0), "skew {skew:.3e}");
    }

    #[test]
    fn scaling_the_data_scales_the_solution() {
        let mesh = two_cell_mesh();
        let dirs = make_directions(2).unwrap();
        let kappa = 2.5;
        let alpha = Complex64::new(0.3, -1.7);
        let base = impedance_wave(kappa, Vector2::new(0.0, 1.0));
        let asm1 = assemble(&mesh, &dirs, kappa, &AssembleOptions::default(), &base).unwrap();
        let asm2 = assemble(&mesh, &dirs, kappa, &AssembleOptions::default(), |x, n| {
            alpha * base(x, n)
        })
        .unwrap();
        let (x1, _) = asm1.solve().unwrap();
        let (x2, _) = asm2.solve().unwrap();
        let diff = (&x2 - &x1 * alpha).norm() / x2.norm();
        assert!(diff <= 1e-9, "relative difference {diff:.3e}");
    }

    #[test]
    fn identity_matrix_solves_exactly() {
        let n = 5;
        let triplets: Vec<_> = (0..n)
            .map(|i| (i, i, Complex64::new(1.0, 0.0)))
            .collect();
        let a = AssembledMatrix::from_triplets(n, triplets);
        let b = DVector::from_fn(n, |i, _| Complex64::new(i as f64, -(i as f64)));
        let summary = AdmissibilitySummary {
            n_elements: 0,
            max_hk_kappa: 0.0,
            a1_violations: 0,
            proj_violations: 0,
            negative_stab_elements: 0,
            fallback_edges: 0,
            unstabilized_constants: 0,
        };
        let (x, stats) = solve_linear(&a, &b, summary).unwrap();
        assert_abs_diff_eq!((&x - &b).norm(), 0.0, epsilon = 1e-15);
        assert!(stats.converged);
        assert!(stats.dense);
    }

    #[test]
    fn sparse_path_matches_dense_on_a_moderate_system() {
        // A well-conditioned banded Toeplitz-like complex matrix, solved
        // once through each path.
        let n = 60;
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, Complex64::new(4.0, 0.5)));
            if i + 1 < n {
                triplets.push((i, i + 1, Complex64::new(-1.0, 0.2)));
                triplets.push((i + 1, i, Complex64::new(-1.0, -0.3)));
            }
        }
        let a = AssembledMatrix::from_triplets(n, triplets);
        let b = DVector::from_fn(n, |i, _| {
            Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.21).cos())
        });
        let summary = AdmissibilitySummary {
            n_elements: 0,
            max_hk_kappa: 0.0,
            a1_violations: 0,
            proj_violations: 0,
            negative_stab_elements: 0,
            fallback_edges: 0,
            unstabilized_constants: 0,
        };
        let (x_dense, _) = solve_linear(&a, &b, summary).unwrap();

        let triplets: Vec<faer::sparse::Triplet<usize, usize, faer::c64>> = a
            .entries
            .iter()
            .map(|&(r, c, v)| faer::sparse::Triplet::new(r, c, faer::c64::new(v.re, v.im)))
            .collect();
        let am = faer::sparse::SparseColMat::try_new_from_triplets(n, n, &triplets).unwrap();
        let symbolic =
            faer::sparse::linalg::solvers::SymbolicLu::try_new(am.symbolic()).unwrap();
        let lu =
            faer::sparse::linalg::solvers::Lu::try_new_with_symbolic(symbolic, am.as_ref())
                .unwrap();
        let fact = Factorization::Sparse(Box::new(lu));
        let x_sparse = fact.solve(&b).unwrap();
        assert!((x_dense - x_sparse).norm() <= 1e-12);
    }

    #[test]
    fn duplicated_directions_hit_the_singular_projector_path() {
        let mesh = unit_square_mesh();
        let d = make_directions(2).unwrap();
        let mut dup = d.directions().to_vec();
        dup[1] = dup[0];
        let dirs = DirectionSet::from_directions_unchecked(dup);
        let err = assemble(
            &mesh,
            &dirs,
            2.0,
            &AssembleOptions::default(),
            |_, _| Complex64::new(0.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, SystemError::Element(_)));
        assert!(err.to_string().contains("singular"));
    }

    #[test]
    fn matrix_market_dump_round_trips() {
        let t = vec![
            (0, 1, Complex64::new(2.0, -1.0)),
            (2, 0, Complex64::new(0.0, 3.0)),
            (1, 1, Complex64::new(1.0, 1.0)),
        ];
        let a = AssembledMatrix::from_triplets(3, t);
        let b = DVector::from_vec(vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, -4.0),
        ]);
        let dir = std::env::temp_dir().join("nctvem_mm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("system.mtx");
        write_matrix_market(&a, &b, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains("coordinate complex general"));
        let head: Vec<usize> = lines
            .next()
            .unwrap()
            .split_whitespace()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(head, vec![3, 3, 3]);
        let mut parsed = Vec::new();
        for line in lines {
            let f: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().unwrap())
                .collect();
            parsed.push((
                f[0] as usize - 1,
                f[1] as usize - 1,
                Complex64::new(f[2], f[3]),
            ));
        }
        let round = AssembledMatrix::from_triplets(3, parsed);
        for (x, y) in a.entries.iter().zip(&round.entries) {
            assert_eq!(x, y);
        }

        let rhs_text =
            std::fs::read_to_string(dir.join("system.mtx.rhs")).unwrap();
        assert!(rhs_text.contains("array complex general"));
        let vals: Vec<f64> = rhs_text
            .lines()
            .skip(2)
            .flat_map(|l| l.split_whitespace().map(|s| s.parse().unwrap()))
            .collect();
        assert_eq!(vals.len(), 6);
        assert_abs_diff_eq!(vals[0], 1.0);
        assert_abs_diff_eq!(vals[5], -4.0);
    }

    #[test]
    fn element_scatter_matches_sparsity_coupling() {
        // Nonzeros only couple dofs of edges sharing an element.
        let mesh = two_cell_mesh();
        let dirs = make_directions(2).unwrap();
        let kappa = 2.0;
        let asm = assemble(
            &mesh,
            &dirs,
            kappa,
            &AssembleOptions::default(),
            impedance_wave(kappa, Vector2::new(1.0, 0.0)),
        )
        .unwrap();
        let mut allowed = vec![vec![false; asm.dof_map.n]; asm.dof_map.n];
        for globals in &asm.dof_map.element_dofs {
            for &r in globals {
                for &c in globals {
                    allowed[r][c] = true;
                }
            }
        }
        for &(r, c, _) in &asm.matrix.entries {
            assert!(allowed[r][c], "entry ({r},{c}) couples unrelated edges");
        }
    }
}
