//! Closed-form oscillatory integrals and numerical quadrature.
//!
//! Products of plane waves integrate exactly: on a segment the integral
//! reduces to a cardinal-sine factor, on a polygon it follows from the
//! divergence theorem applied edge by edge. Assembly therefore never touches
//! numerical quadrature and its cost is independent of the wavenumber.
//! Gauss-Legendre rules remain for integrands that are not pure plane waves
//! (boundary data, error integrands); polygons are handled by a fan
//! triangulation with a tensor rule mapped through the Duffy transform.

use nalgebra::{Point2, Vector2};
use num_complex::Complex64;

/// sin(b)/b, with the series 1 - b^2/6 + b^4/120 below |b| = 1e-8 so the
/// removable singularity never divides by a tiny denominator.
pub(crate) fn sinc(b: f64) -> f64 {
    if b.abs() < 1e-8 {
        let b2 = b * b;
        1.0 - b2 / 6.0 + b2 * b2 / 120.0
    } else {
        b.sin() / b
    }
}

/// Signed area of a polygon (shoelace); positive for counter-clockwise.
pub(crate) fn signed_area(points: &[Point2<f64>]) -> f64 {
    let n = points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice
}

/// Area centroid of a polygon; falls back to the vertex average when the
/// area underflows.
pub(crate) fn centroid_of(points: &[Point2<f64>]) -> Point2<f64> {
    let n = points.len();
    let area = signed_area(points);
    let scale: f64 = points
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    if area.abs() <= 1e-30 * scale.max(1.0) * scale.max(1.0) {
        let sum = points
            .iter()
            .fold(Vector2::zeros(), |acc, p| acc + p.coords);
        return Point2::from(sum / n as f64);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let w = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    Point2::new(cx / (6.0 * area), cy / (6.0 * area))
}

/// Diameter of a point set: the maximum pairwise distance.
pub(crate) fn diameter_of(points: &[Point2<f64>]) -> f64 {
    let n = points.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            best = best.max((points[j] - points[i]).norm());
        }
    }
    best
}

/// Gauss-Legendre rule on [-1, 1].
///
/// Nodes are the roots of the degree-n Legendre polynomial, found by Newton
/// iteration on the three-term recurrence; exact for polynomials of degree
/// 2n - 1.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Tricomi-style initial guess, accurate enough for Newton.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..60 {
                let (p, d) = legendre_with_derivative(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_with_derivative(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        // The cosine guess enumerates roots right to left; sort ascending.
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
        let nodes = idx.iter().map(|&i| nodes[i]).collect();
        let weights = idx.iter().map(|&i| weights[i]).collect();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Closed form of `int_e exp(i*kappa*v.x) ds` over the segment a -> b.
///
/// With midpoint M and unit tangent t this is
/// `h_e * exp(i*kappa*v.M) * sin(beta)/beta`, `beta = kappa*(v.t)*h_e/2`.
pub fn edge_osc_integral(
    a: Point2<f64>,
    b: Point2<f64>,
    v: Vector2<f64>,
    kappa: f64,
) -> Complex64 {
    let chord = b - a;
    let h = chord.norm();
    let mid = nalgebra::center(&a, &b);
    let beta = 0.5 * kappa * v.dot(&chord);
    let phase = Complex64::from_polar(1.0, kappa * v.dot(&mid.coords));
    phase * (h * sinc(beta))
}

/// Closed form of `int_K exp(i*kappa*v.x) dx` over a simple CCW polygon.
///
/// For |v| above `1e-12 * kappa` the divergence theorem reduces the area
/// integral to edge integrals:
/// `(1/(i*kappa*|v|^2)) * sum_e (v.n_e) * edge_osc_integral(e, v, kappa)`.
/// Below the threshold the integrand is constant 1 and the area is returned.
pub fn polygon_osc_integral(points: &[Point2<f64>], v: Vector2<f64>, kappa: f64) -> Complex64 {
    let vnorm = v.norm();
    if vnorm <= 1e-12 * kappa {
        return Complex64::new(signed_area(points), 0.0);
    }
    let n = points.len();
    let mut boundary = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let chord = b - a;
        let h = chord.norm();
        if h == 0.0 {
            continue;
        }
        // Outward unit normal of a CCW polygon: tangent rotated by -90 deg.
        let normal = Vector2::new(chord.y, -chord.x) / h;
        boundary += v.dot(&normal) * edge_osc_integral(a, b, v, kappa);
    }
    boundary / Complex64::new(0.0, kappa * vnorm * vnorm)
}

/// Gauss-Legendre approximation of `int_e f ds` over the segment a -> b.
pub fn edge_quadrature<F>(a: Point2<f64>, b: Point2<f64>, n_points: usize, f: F) -> Complex64
where
    F: Fn(Point2<f64>) -> Complex64,
{
    let rule = GaussLegendre::new(n_points);
    let chord = b - a;
    let mid = nalgebra::center(&a, &b);
    let h = chord.norm();
    let mut sum = Complex64::new(0.0, 0.0);
    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
        let x = mid + chord * (0.5 * t);
        sum += w * f(x);
    }
    sum * (0.5 * h)
}

/// Nodes and weights of a fan-triangulation rule on a polygon that is
/// star-shaped with respect to `star_center`, exact for bivariate polynomials
/// up to the given degree.
///
/// Each fan triangle carries a tensor Gauss-Legendre rule mapped through the
/// Duffy transform, so all weights are positive at any degree. Triangles of
/// numerically zero area are skipped.
pub fn polygon_quadrature_points(
    points: &[Point2<f64>],
    star_center: Point2<f64>,
    degree: usize,
) -> Vec<(Point2<f64>, f64)> {
    // The Duffy Jacobian is linear in u, so exactness at `degree` needs a
    // one-dimensional rule exact at degree + 1.
    let n1 = (degree + 3) / 2;
    let rule = GaussLegendre::new(n1.max(1));
    let scale = {
        let mut longest: f64 = 0.0;
        for p in points {
            longest = longest.max((p - star_center).norm());
        }
        longest
    };
    let mut out = Vec::new();
    let n = points.len();
    for i in 0..n {
        let p1 = points[i];
        let p2 = points[(i + 1) % n];
        let twice_area = (p1 - star_center).perp(&(p2 - star_center));
        if twice_area.abs() <= 1e-14 * scale * scale {
            continue;
        }
        for (&tu, &wu) in rule.nodes().iter().zip(rule.weights()) {
            let u = 0.5 * (tu + 1.0);
            for (&tv, &wv) in rule.nodes().iter().zip(rule.weights()) {
                let v = 0.5 * (tv + 1.0);
                // Duffy map: the unit square onto the triangle, Jacobian
                // u * |2A|; the 1/4 rescales both Gauss intervals to [0,1].
                let x = star_center + (p1 - star_center) * u + (p2 - p1) * (u * v);
                let w = 0.25 * wu * wv * u * twice_area;
                out.push((x, w));
            }
        }
    }
    out
}

/// `int_K f dx` over a star-shaped polygon via [`polygon_quadrature_points`].
pub fn polygon_quadrature<F>(
    points: &[Point2<f64>],
    star_center: Point2<f64>,
    degree: usize,
    f: F,
) -> Complex64
where
    F: Fn(Point2<f64>) -> Complex64,
{
    let mut sum = Complex64::new(0.0, 0.0);
    for (x, w) in polygon_quadrature_points(points, star_center, degree) {
        sum += w * f(x);
    }
    sum
}

/// Default Gauss point count for boundary-data integrals on an edge:
/// max(20, ceil(3*kappa*h_e)) resolves the oscillation with margin.
pub fn default_edge_points(kappa: f64, h_e: f64) -> usize {
    20usize.max((3.0 * kappa * h_e).ceil() as usize)
}

/// Default polynomial degree for volume error integrals on an element of
/// diameter h_k, keeping at least ten quadrature points per wavelength.
pub fn default_polygon_degree(kappa: f64, h_k: f64) -> usize {
    12usize.max((3.5 * kappa * h_k).ceil() as usize)
}
