//! Computable error measures of the discrete solution.
//!
//! The true error of a virtual solution is not computable because the
//! discrete functions are never known pointwise; what is computable is the
//! element-wise plane-wave projection Pi of the dof vector. Both measures
//! here compare the exact field against that projection: the relative L2
//! norm drives the convergence study, the H1 seminorm variant is a
//! diagnostic. Interpolation dofs of an exact field provide the matching
//! best-approximation proxy.

use nalgebra::{DMatrix, DVector, Point2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::element::ElementOperators;
use crate::mesh::PolygonalMesh;
use crate::planewave::{DirectionSet, EdgeBasis};
use crate::quad::{
    default_edge_points, default_polygon_degree, edge_quadrature, polygon_osc_integral,
    polygon_quadrature_points,
};
use crate::system::DofMap;

/// Dofs of the edge-moment interpolant of a field: per edge and member,
/// (1/h_e) int_e u conj(w) ds by Gauss quadrature, recombined where an edge
/// carries a spectral combination.
pub fn interpolation_dofs<U>(
    bases: &[EdgeBasis],
    dof_map: &DofMap,
    kappa: f64,
    u: U,
) -> DVector<Complex64>
where
    U: Fn(Point2<f64>) -> Complex64 + Sync,
{
    let per_edge: Vec<Vec<Complex64>> = bases
        .par_iter()
        .map(|basis| {
            let (a, b) = basis.endpoints();
            let n_gauss = default_edge_points(kappa, basis.length);
            let raw: Vec<Complex64> = (0..basis.raw_len())
                .map(|m| {
                    edge_quadrature(a, b, n_gauss, |x| {
                        u(x) * basis.eval_member(m, kappa, x).conj()
                    }) / basis.length
                })
                .collect();
            match &basis.combo {
                None => raw,
                Some(c) => (0..c.ncols())
                    .map(|j| (0..basis.raw_len()).map(|m| c[(m, j)] * raw[m]).sum())
                    .collect(),
            }
        })
        .collect();

    let mut dofs = DVector::zeros(dof_map.n);
    for (e, values) in per_edge.iter().enumerate() {
        for (j, &v) in values.iter().enumerate() {
            dofs[dof_map.edge_offset[e] + j] = v;
        }
    }
    dofs
}

/// Per-element pieces of a relative norm: squared distance and squared
/// reference norm.
#[derive(Debug, Clone, Copy)]
struct NormPiece {
    num: f64,
    den: f64,
}

fn relative_from_pieces(pieces: Vec<NormPiece>) -> f64 {
    // Serial reduction in element order keeps the result reproducible.
    let num: f64 = pieces.iter().map(|p| p.num).sum();
    let den: f64 = pieces.iter().map(|p| p.den).sum();
    if den <= 0.0 {
        return 0.0;
    }
    (num.max(0.0) / den).sqrt()
}

/// Relative L2 error of the projected discrete solution,
/// |u - Pi u_h|_0 / |u|_0. Per element the projection coefficients are
/// Pi times the gathered dofs; its squared norm and the diagonal terms come
/// from closed-form plane-wave integrals, the field terms from polygon
/// quadrature resolving the oscillation.
pub fn projected_l2_error<U>(
    mesh: &PolygonalMesh,
    dirs: &DirectionSet,
    elements: &[ElementOperators],
    dof_map: &DofMap,
    solution: &DVector<Complex64>,
    kappa: f64,
    u: U,
) -> f64
where
    U: Fn(Point2<f64>) -> Complex64 + Sync,
{
    let p = dirs.p();
    let pieces: Vec<NormPiece> = (0..mesh.n_polygons())
        .into_par_iter()
        .map(|k| {
            let ops = &elements[k];
            let globals = &dof_map.element_dofs[k];
            let x_loc = DVector::from_fn(globals.len(), |i, _| solution[globals[i]]);
            let c = &ops.pi * &x_loc;

            let points = mesh.polygon_points(k);
            let center = ops.center;
            let translated: Vec<Point2<f64>> =
                points.iter().map(|pt| Point2::from(pt - center)).collect();

            // Closed-form wave mass: mass[l,m] = int_K w_m conj(w_l).
            let mass = DMatrix::from_fn(p, p, |l, m| {
                polygon_osc_integral(&translated, dirs.direction(m) - dirs.direction(l), kappa)
            });
            let mc = &mass * &c;
            let proj_sq = c.dotc(&mc).re;

            let degree = default_polygon_degree(kappa, mesh.polygon_diameter(k));
            let nodes = polygon_quadrature_points(&points, center, degree);
            let mut den = 0.0;
            let mut cross = Complex64::new(0.0, 0.0);
            for &(x, w) in &nodes {
                let uv = u(x);
                den += w * uv.norm_sqr();
                // conj of the projection at x, built once per node.
                let mut proj_conj = Complex64::new(0.0, 0.0);
                for l in 0..p {
                    let wl = Complex64::from_polar(
                        1.0,
                        kappa * dirs.direction(l).dot(&(x - center)),
                    );
                    proj_conj += c[l].conj() * wl.conj();
                }
                cross += w * uv * proj_conj;
            }
            let num = den - 2.0 * cross.re + proj_sq;
            NormPiece {
                num: num.max(0.0),
                den,
            }
        })
        .collect();
    relative_from_pieces(pieces)
}

/// Relative H1 seminorm error of the projected discrete solution,
/// |grad(u - Pi u_h)|_0 / |grad u|_0. The field closure returns value and
/// gradient; plane-wave gradient products reduce to the same closed-form
/// volume integrals scaled by kappa^2 d_m . d_l.
pub fn projected_h1_error<U>(
    mesh: &PolygonalMesh,
    dirs: &DirectionSet,
    elements: &[ElementOperators],
    dof_map: &DofMap,
    solution: &DVector<Complex64>,
    kappa: f64,
    u: U,
) -> f64
where
    U: Fn(Point2<f64>) -> (Complex64, Vector2<Complex64>) + Sync,
{
    let p = dirs.p();
    let pieces: Vec<NormPiece> = (0..mesh.n_polygons())
        .into_par_iter()
        .map(|k| {
            let ops = &elements[k];
            let globals = &dof_map.element_dofs[k];
            let x_loc = DVector::from_fn(globals.len(), |i, _| solution[globals[i]]);
            let c = &ops.pi * &x_loc;

            let points = mesh.polygon_points(k);
            let center = ops.center;
            let translated: Vec<Point2<f64>> =
                points.iter().map(|pt| Point2::from(pt - center)).collect();

            // grad w_l = i kappa d_l w_l, so
            // int_K grad w_m . conj(grad w_l) = kappa^2 (d_m . d_l) osc(m,l).
            let stiff = DMatrix::from_fn(p, p, |l, m| {
                let dl = dirs.direction(l);
                let dm = dirs.direction(m);
                kappa * kappa
                    * dm.dot(&dl)
                    * polygon_osc_integral(&translated, dm - dl, kappa)
            });
            let sc = &stiff * &c;
            let proj_sq = c.dotc(&sc).re;

            let degree = default_polygon_degree(kappa, mesh.polygon_diameter(k));
            let nodes = polygon_quadrature_points(&points, center, degree);
            let mut den = 0.0;
            let mut cross = Complex64::new(0.0, 0.0);
            for &(x, w) in &nodes {
                let (_, grad) = u(x);
                den += w * (grad.x.norm_sqr() + grad.y.norm_sqr());
                // grad(Pi u_h) at x, conjugated component-wise.
                let mut gx = Complex64::new(0.0, 0.0);
                let mut gy = Complex64::new(0.0, 0.0);
                for l in 0..p {
                    let dl = dirs.direction(l);
                    let wl = Complex64::from_polar(1.0, kappa * dl.dot(&(x - center)));
                    let coeff = Complex64::i() * kappa * c[l] * wl;
                    gx += coeff * dl.x;
                    gy += coeff * dl.y;
                }
                cross += w * (grad.x * gx.conj() + grad.y * gy.conj());
            }
            let num = den - 2.0 * cross.re + proj_sq;
            NormPiece {
                num: num.max(0.0),
                den,
            }
        })
        .collect();
    relative_from_pieces(pieces)
}
