//! Polygonal meshes: representation, text-file ingestion, Voronoi-Lloyd
//! generation, and regularity auditing.
//!
//! A mesh stores vertices, counter-clockwise vertex cycles, and the derived
//! edge list. Edges are undirected with a canonical orientation (lower vertex
//! index first); each polygon records which edges it traverses and in which
//! direction, so an interior edge is always walked forward by one neighbor
//! and backward by the other. Voronoi generation clips each seed's cell
//! against the perpendicular bisectors of all other seeds, relaxes with exact
//! centroid Lloyd sweeps, and welds coincident cell corners into shared mesh
//! vertices before handing the result to the validating constructor.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point2, Vector2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::quad::{centroid_of, diameter_of, signed_area};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Topology(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        message: message.into(),
    }
}

/// An undirected edge in canonical orientation `v[0] < v[1]`. `elems[0]` is
/// the polygon that traverses the edge forward (from `v[0]` to `v[1]`),
/// `elems[1]` the one traversing it backward; boundary edges have exactly
/// one slot filled.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub v: [usize; 2],
    pub elems: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elems[0].is_none() != self.elems[1].is_none()
    }

    /// Adjacent polygon ids (one or two).
    pub fn adjacent(&self) -> impl Iterator<Item = usize> + '_ {
        self.elems.iter().flatten().copied()
    }
}

/// An immutable polygonal tessellation.
#[derive(Debug, Clone)]
pub struct PolygonalMesh {
    vertices: Vec<Point2<f64>>,
    polygons: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    /// Per polygon: (edge id, forward?) for the edge leaving each vertex
    /// position, in boundary-cycle order.
    poly_edges: Vec<Vec<(usize, bool)>>,
}

impl PolygonalMesh {
    /// Builds and validates a mesh from vertex coordinates and CCW vertex
    /// cycles. An empty mesh (no polygons) is permitted; downstream stages
    /// reject it where it stops making sense.
    pub fn from_cells(
        vertices: Vec<Point2<f64>>,
        polygons: Vec<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        for (k, poly) in polygons.iter().enumerate() {
            validate_polygon(k, poly, &vertices)?;
        }

        let mut edge_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut poly_edges = Vec::with_capacity(polygons.len());
        for (k, poly) in polygons.iter().enumerate() {
            let mut cycle = Vec::with_capacity(poly.len());
            for pos in 0..poly.len() {
                let i = poly[pos];
                let j = poly[(pos + 1) % poly.len()];
                let key = (i.min(j), i.max(j));
                let forward = i == key.0;
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        elems: [None, None],
                    });
                    edges.len() - 1
                });
                let slot = usize::from(!forward);
                if let Some(other) = edges[id].elems[slot] {
                    return Err(MeshError::Topology(format!(
                        "edge ({i}, {j}) is traversed in the same direction by polygons {other} and {k}"
                    )));
                }
                edges[id].elems[slot] = Some(k);
                cycle.push((id, forward));
            }
            poly_edges.push(cycle);
        }

        Ok(Self {
            vertices,
            polygons,
            edges,
            poly_edges,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_polygons(&self) -> usize {
        self.polygons.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, i: usize) -> Point2<f64> {
        self.vertices[i]
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn polygon(&self, k: usize) -> &[usize] {
        &self.polygons[k]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Endpoints of an edge in canonical orientation.
    pub fn edge_endpoints(&self, e: usize) -> (Point2<f64>, Point2<f64>) {
        let [i, j] = self.edges[e].v;
        (self.vertices[i], self.vertices[j])
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let (a, b) = self.edge_endpoints(e);
        (b - a).norm()
    }

    /// (edge id, forward?) for each boundary position of polygon `k`;
    /// position `pos` is the edge from vertex `pos` to `pos + 1`.
    pub fn poly_edges(&self, k: usize) -> &[(usize, bool)] {
        &self.poly_edges[k]
    }

    pub fn polygon_points(&self, k: usize) -> Vec<Point2<f64>> {
        self.polygons[k].iter().map(|&i| self.vertices[i]).collect()
    }

    pub fn polygon_area(&self, k: usize) -> f64 {
        signed_area(&self.polygon_points(k))
    }

    pub fn polygon_centroid(&self, k: usize) -> Point2<f64> {
        centroid_of(&self.polygon_points(k))
    }

    pub fn polygon_diameter(&self, k: usize) -> f64 {
        diameter_of(&self.polygon_points(k))
    }

    /// Mesh size: the largest polygon diameter (0 for an empty mesh).
    pub fn h(&self) -> f64 {
        (0..self.n_polygons())
            .map(|k| self.polygon_diameter(k))
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_polygons()).map(|k| self.polygon_area(k)).sum()
    }

    /// Unit outward normal of polygon `k` on the edge at boundary position
    /// `pos` (the CCW cycle keeps the interior on the left).
    pub fn outward_normal(&self, k: usize, pos: usize) -> Vector2<f64> {
        let poly = &self.polygons[k];
        let a = self.vertices[poly[pos]];
        let b = self.vertices[poly[(pos + 1) % poly.len()]];
        let t = (b - a).normalize();
        Vector2::new(t.y, -t.x)
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.edges[e].is_boundary()
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(move |&e| self.edges[e].is_boundary())
    }
}

fn validate_polygon(
    k: usize,
    poly: &[usize],
    vertices: &[Point2<f64>],
) -> Result<(), MeshError> {
    let m = poly.len();
    if m < 3 {
        return Err(MeshError::Topology(format!(
            "polygon {k} has only {m} vertices"
        )));
    }
    for &i in poly {
        if i >= vertices.len() {
            return Err(MeshError::Topology(format!(
                "polygon {k} references missing vertex {i}"
            )));
        }
    }
    let mut sorted = poly.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(MeshError::Topology(format!(
            "polygon {k} repeats a vertex index"
        )));
    }
    let points: Vec<Point2<f64>> = poly.iter().map(|&i| vertices[i]).collect();
    for pos in 0..m {
        let a = points[pos];
        let b = points[(pos + 1) % m];
        if (b - a).norm() == 0.0 {
            return Err(MeshError::Topology(format!(
                "polygon {k} has a zero-length edge at position {pos}"
            )));
        }
    }
    let area = signed_area(&points);
    if area <= 0.0 {
        return Err(MeshError::Topology(format!(
            "polygon {k} is not counter-clockwise (signed area {area:.3e})"
        )));
    }
    // Simplicity: no two non-adjacent boundary edges may properly cross.
    for i in 0..m {
        for j in (i + 2)..m {
            if i == 0 && j == m - 1 {
                continue;
            }
            let (a, b) = (points[i], points[(i + 1) % m]);
            let (c, d) = (points[j], points[(j + 1) % m]);
            if proper_crossing(a, b, c, d) {
                return Err(MeshError::Topology(format!(
                    "polygon {k} self-intersects (edges {i} and {j} cross)"
                )));
            }
        }
    }
    Ok(())
}

fn orient(o: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let u = a - o;
    let v = b - o;
    u.x * v.y - u.y * v.x
}

fn proper_crossing(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Parses the mesh text format:
///
/// ```text
/// nv np
/// x y          (nv vertex lines)
/// m i1 ... im  (np polygon lines, 0-based CCW indices)
/// ```
///
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_mesh(text: &str) -> Result<PolygonalMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let total = text.lines().count();

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1.min(total.max(1)), "empty mesh file"))?;
    let mut it = header.split_whitespace();
    let nv: usize = parse_token(&mut it, header_line, "vertex count")?;
    let np: usize = parse_token(&mut it, header_line, "polygon count")?;
    expect_end(&mut it, header_line)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, body) = lines
            .next()
            .ok_or_else(|| parse_err(total, "unexpected end of file in vertex block"))?;
        let mut it = body.split_whitespace();
        let x: f64 = parse_token(&mut it, line, "x coordinate")?;
        let y: f64 = parse_token(&mut it, line, "y coordinate")?;
        expect_end(&mut it, line)?;
        vertices.push(Point2::new(x, y));
    }

    let mut polygons = Vec::with_capacity(np);
    for _ in 0..np {
        let (line, body) = lines
            .next()
            .ok_or_else(|| parse_err(total, "unexpected end of file in polygon block"))?;
        let mut it = body.split_whitespace();
        let m: usize = parse_token(&mut it, line, "polygon vertex count")?;
        let mut poly = Vec::with_capacity(m);
        for _ in 0..m {
            poly.push(parse_token(&mut it, line, "vertex index")?);
        }
        expect_end(&mut it, line)?;
        polygons.push(poly);
    }
    if let Some((line, _)) = lines.next() {
        return Err(parse_err(line, "trailing content after polygon block"));
    }

    PolygonalMesh::from_cells(vertices, polygons)
}

fn parse_token<T: std::str::FromStr>(
    it: &mut std::str::SplitWhitespace<'_>,
    line: usize,
    what: &str,
) -> Result<T, MeshError> {
    let tok = it
        .next()
        .ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{tok}'")))
}

fn expect_end(it: &mut std::str::SplitWhitespace<'_>, line: usize) -> Result<(), MeshError> {
    match it.next() {
        Some(tok) => Err(parse_err(line, format!("unexpected trailing token '{tok}'"))),
        None => Ok(()),
    }
}

/// Loads a mesh from a text file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<PolygonalMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

/// An axis-aligned rectangle.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub min: Point2<f64>,
    pub max: Point2<f64>,
}

impl Rect {
    pub fn new(min: Point2<f64>, max: Point2<f64>) -> Self {
        assert!(
            max.x > min.x && max.y > min.y,
            "degenerate rectangle: min {min:?}, max {max:?}"
        );
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0))
    }

    /// Corners in CCW order starting at `min`.
    pub fn corners(&self) -> [Point2<f64>; 4] {
        [
            self.min,
            Point2::new(self.max.x, self.min.y),
            self.max,
            Point2::new(self.min.x, self.max.y),
        ]
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// True when both endpoints lie within `tol` of one common side.
    fn segment_on_boundary(&self, a: Point2<f64>, b: Point2<f64>, tol: f64) -> bool {
        let on_side = |va: f64, vb: f64, side: f64| (va - side).abs() <= tol && (vb - side).abs() <= tol;
        on_side(a.x, b.x, self.min.x)
            || on_side(a.x, b.x, self.max.x)
            || on_side(a.y, b.y, self.min.y)
            || on_side(a.y, b.y, self.max.y)
    }
}

/// Voronoi tessellation of uniformly sampled seeds, relaxed by `lloyd_iters`
/// centroid sweeps. Deterministic for a fixed `rng_seed`: sampling and the
/// 1e-12-diameter degeneracy-breaking jitter both come from the same seeded
/// stream.
pub fn generate_voronoi_lloyd(
    n_seeds: usize,
    lloyd_iters: usize,
    rng_seed: u64,
    domain: &Rect,
) -> Result<PolygonalMesh, MeshError> {
    if n_seeds == 0 {
        return Err(MeshError::Topology(
            "voronoi generation needs at least one seed".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = 1e-12 * domain.diameter();
    let seeds: Vec<Point2<f64>> = (0..n_seeds)
        .map(|_| {
            let x = domain.min.x + rng.random::<f64>() * domain.width();
            let y = domain.min.y + rng.random::<f64>() * domain.height();
            // Breaks exact cocircularity without moving any seed meaningfully.
            let dx = jitter * (2.0 * rng.random::<f64>() - 1.0);
            let dy = jitter * (2.0 * rng.random::<f64>() - 1.0);
            Point2::new(x + dx, y + dy)
        })
        .collect();
    voronoi_mesh_from_seeds(&seeds, lloyd_iters, domain)
}

/// Voronoi tessellation of explicit seeds (no jitter), relaxed by
/// `lloyd_iters` centroid sweeps.
pub fn voronoi_mesh_from_seeds(
    seeds: &[Point2<f64>],
    lloyd_iters: usize,
    domain: &Rect,
) -> Result<PolygonalMesh, MeshError> {
    let mut seeds = seeds.to_vec();
    for _ in 0..lloyd_iters {
        let cells = voronoi_cells(&seeds, domain)?;
        for (s, cell) in seeds.iter_mut().zip(&cells) {
            *s = centroid_of(cell);
        }
    }
    let cells = voronoi_cells(&seeds, domain)?;
    assemble_cells(&cells, domain)
}

fn voronoi_cells(
    seeds: &[Point2<f64>],
    domain: &Rect,
) -> Result<Vec<Vec<Point2<f64>>>, MeshError> {
    let mut cells = Vec::with_capacity(seeds.len());
    for (i, &si) in seeds.iter().enumerate() {
        let mut cell: Vec<Point2<f64>> = domain.corners().to_vec();
        for (j, &sj) in seeds.iter().enumerate() {
            if j == i {
                continue;
            }
            let mid = nalgebra::center(&si, &sj);
            cell = clip_halfplane(&cell, mid, sj - si);
            if cell.len() < 3 {
                return Err(MeshError::Topology(format!(
                    "voronoi cell of seed {i} degenerated (coincident seeds {i} and {j}?)"
                )));
            }
        }
        cell.dedup_by(|a, b| a == b);
        if cell.len() > 1 && cell.first() == cell.last() {
            cell.pop();
        }
        cells.push(cell);
    }
    Ok(cells)
}

/// Sutherland-Hodgman step keeping `{x : (x - mid) . n <= 0}`; points on the
/// cut line are kept.
fn clip_halfplane(poly: &[Point2<f64>], mid: Point2<f64>, n: Vector2<f64>) -> Vec<Point2<f64>> {
    let vals: Vec<f64> = poly.iter().map(|p| (p - mid).dot(&n)).collect();
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        let (fi, fj) = (vals[i], vals[j]);
        if fi <= 0.0 {
            out.push(poly[i]);
        }
        if (fi <= 0.0) != (fj <= 0.0) {
            let t = (fi / (fi - fj)).clamp(0.0, 1.0);
            out.push(poly[i] + (poly[j] - poly[i]) * t);
        }
    }
    out
}

/// Welds coincident corners of independently clipped cells into shared mesh
/// vertices, then builds the validated mesh and checks that it tiles the
/// domain with all boundary edges on the rectangle.
fn assemble_cells(
    cells: &[Vec<Point2<f64>>],
    domain: &Rect,
) -> Result<PolygonalMesh, MeshError> {
    let tol = 1e-9 * domain.diameter();

    let points: Vec<Point2<f64>> = cells.iter().flatten().copied().collect();
    let mut buckets: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    let key = |p: Point2<f64>| ((p.x / tol).floor() as i64, (p.y / tol).floor() as i64);
    for (idx, &p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(idx);
    }

    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (idx, &p) in points.iter().enumerate() {
        let (kx, ky) = key(p);
        for nx in (kx - 1)..=(kx + 1) {
            for ny in (ky - 1)..=(ky + 1) {
                let Some(bucket) = buckets.get(&(nx, ny)) else {
                    continue;
                };
                for &other in bucket {
                    if other != idx && (points[other] - p).norm() <= tol {
                        let (a, b) = (find(&mut parent, idx), find(&mut parent, other));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }

    // Cluster representatives in first-appearance order; coordinates are the
    // member average so welding has no directional bias.
    let mut cluster_id: BTreeMap<usize, usize> = BTreeMap::new();
    let mut sums: Vec<(Vector2<f64>, usize)> = Vec::new();
    let mut point_vertex = Vec::with_capacity(points.len());
    for idx in 0..points.len() {
        let root = find(&mut parent, idx);
        let id = *cluster_id.entry(root).or_insert_with(|| {
            sums.push((Vector2::zeros(), 0));
            sums.len() - 1
        });
        sums[id].0 += points[idx].coords;
        sums[id].1 += 1;
        point_vertex.push(id);
    }
    let vertices: Vec<Point2<f64>> = sums
        .iter()
        .map(|(s, c)| Point2::from(s / *c as f64))
        .collect();

    let mut polygons = Vec::with_capacity(cells.len());
    let mut offset = 0;
    for (i, cell) in cells.iter().enumerate() {
        let mut poly: Vec<usize> = point_vertex[offset..offset + cell.len()].to_vec();
        offset += cell.len();
        poly.dedup();
        if poly.len() > 1 && poly.first() == poly.last() {
            poly.pop();
        }
        if poly.len() < 3 {
            return Err(MeshError::Topology(format!(
                "voronoi cell {i} collapsed under vertex welding"
            )));
        }
        polygons.push(poly);
    }

    let mesh = PolygonalMesh::from_cells(vertices, polygons)?;

    let area = mesh.total_area();
    if (area - domain.area()).abs() > 1e-12 * domain.area() {
        return Err(MeshError::Topology(format!(
            "voronoi cells do not tile the domain: total area {area}, expected {}",
            domain.area()
        )));
    }
    for e in mesh.boundary_edges() {
        let (a, b) = mesh.edge_endpoints(e);
        if !domain.segment_on_boundary(a, b, tol) {
            return Err(MeshError::Topology(format!(
                "boundary edge {e} does not lie on the domain boundary (hanging node?)"
            )));
        }
    }
    Ok(mesh)
}

/// Per-polygon shape diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct PolygonReport {
    pub polygon: usize,
    pub h_k: f64,
    pub n_k: usize,
    /// Chebyshev radius of the star-shapedness kernel over h_K (of the
    /// polygon itself when the kernel is empty).
    pub rho_est: f64,
    pub kernel_nonempty: bool,
    /// Shortest edge over h_K.
    pub min_edge_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularityViolation {
    /// The half-plane kernel is empty: the polygon is not star-shaped with
    /// respect to any interior point.
    EmptyKernel { polygon: usize },
    /// Some edge is shorter than `rho0 * h_K`.
    ShortEdge { polygon: usize, ratio: f64 },
}

/// Mesh-wide regularity diagnostics. Audits report, they never abort.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub per_polygon: Vec<PolygonReport>,
    /// Largest polygon diameter.
    pub h: f64,
    /// Largest vertex count over all polygons.
    pub lambda_est: usize,
    pub violations: Vec<RegularityViolation>,
}

/// Measures star-shapedness and edge non-degeneracy of every polygon. The
/// kernel is the intersection of the half-planes supporting the (CCW) edges;
/// `rho_est` is the radius of its largest inscribed disc over the polygon
/// diameter. Polygons with an edge shorter than `rho0 * h_K` are flagged.
pub fn audit_regularity(mesh: &PolygonalMesh, rho0: f64) -> RegularityReport {
    let mut per_polygon = Vec::with_capacity(mesh.n_polygons());
    let mut violations = Vec::new();
    for k in 0..mesh.n_polygons() {
        let points = mesh.polygon_points(k);
        let h_k = diameter_of(&points);
        let n = points.len();
        let min_edge = (0..n)
            .map(|i| (points[(i + 1) % n] - points[i]).norm())
            .fold(f64::INFINITY, f64::min);
        let min_edge_ratio = min_edge / h_k;

        let kernel = kernel_polygon(&points);
        let kernel_nonempty =
            kernel.len() >= 3 && signed_area(&kernel) > 1e-12 * h_k * h_k;
        let rho_est = if kernel_nonempty {
            chebyshev_radius(&kernel) / h_k
        } else {
            inscribed_radius_nonconvex(&points) / h_k
        };

        per_polygon.push(PolygonReport {
            polygon: k,
            h_k,
            n_k: n,
            rho_est,
            kernel_nonempty,
            min_edge_ratio,
        });
        if !kernel_nonempty {
            violations.push(RegularityViolation::EmptyKernel { polygon: k });
        }
        if min_edge_ratio < rho0 {
            violations.push(RegularityViolation::ShortEdge {
                polygon: k,
                ratio: min_edge_ratio,
            });
        }
    }
    RegularityReport {
        h: per_polygon.iter().map(|r| r.h_k).fold(0.0, f64::max),
        lambda_est: per_polygon.iter().map(|r| r.n_k).max().unwrap_or(0),
        per_polygon,
        violations,
    }
}

/// Kernel of a simple CCW polygon: its bounding box clipped by the
/// half-plane left of every edge. Empty or degenerate output means the
/// polygon is not star-shaped about any interior disc.
pub(crate) fn kernel_polygon(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let n = points.len();
    let h = diameter_of(points);
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = 0.1 * h;
    let mut kernel = vec![
        Point2::new(lo.x - pad, lo.y - pad),
        Point2::new(hi.x + pad, lo.y - pad),
        Point2::new(hi.x + pad, hi.y + pad),
        Point2::new(lo.x - pad, hi.y + pad),
    ];
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let d = b - a;
        // Keep the left side of a->b: (x - a) . (d.y, -d.x) <= 0.
        kernel = clip_halfplane(&kernel, a, Vector2::new(d.y, -d.x));
        if kernel.len() < 3 {
            return Vec::new();
        }
    }
    kernel
}

/// Radius of the largest disc inscribed in a convex CCW polygon, found by
/// enumerating triples of active edge constraints of the underlying linear
/// program.
pub(crate) fn chebyshev_radius(convex: &[Point2<f64>]) -> f64 {
    chebyshev_center(convex).1
}

pub(crate) fn chebyshev_center(convex: &[Point2<f64>]) -> (Point2<f64>, f64) {
    let n = convex.len();
    assert!(n >= 3, "chebyshev center needs a polygon");
    // Inward unit normal and offset of each edge constraint n.c - r >= n.a.
    let constraints: Vec<(Vector2<f64>, f64)> = (0..n)
        .map(|i| {
            let a = convex[i];
            let b = convex[(i + 1) % n];
            let t = (b - a).normalize();
            let nrm = Vector2::new(-t.y, t.x);
            (nrm, nrm.dot(&a.coords))
        })
        .collect();
    let scale = diameter_of(convex);
    let feas_tol = 1e-9 * scale;

    let mut best = (centroid_of(convex), 0.0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let Some((c, r)) = solve_three_active(
                    constraints[i],
                    constraints[j],
                    constraints[k],
                ) else {
                    continue;
                };
                if r <= best.1 {
                    continue;
                }
                let feasible = constraints
                    .iter()
                    .all(|&(nrm, d)| nrm.dot(&c.coords) - r >= d - feas_tol);
                if feasible {
                    best = (c, r);
                }
            }
        }
    }
    best
}

/// Solves n_i . c - r = d_i for three active constraints; `None` when the
/// normals are degenerate.
fn solve_three_active(
    (n1, d1): (Vector2<f64>, f64),
    (n2, d2): (Vector2<f64>, f64),
    (n3, d3): (Vector2<f64>, f64),
) -> Option<(Point2<f64>, f64)> {
    let m = nalgebra::Matrix3::new(
        n1.x, n1.y, -1.0, //
        n2.x, n2.y, -1.0, //
        n3.x, n3.y, -1.0,
    );
    let rhs = nalgebra::Vector3::new(d1, d2, d3);
    let sol = m.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((Point2::new(sol.x, sol.y), sol.z))
}

/// Largest inscribed disc of a possibly nonconvex polygon, approximated by
/// candidate centers equidistant to edge triples plus the centroid; only a
/// diagnostic fallback for polygons whose kernel is empty.
fn inscribed_radius_nonconvex(points: &[Point2<f64>]) -> f64 {
    let n = points.len();
    let lines: Vec<(Vector2<f64>, f64)> = (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            let t = (b - a).normalize();
            let nrm = Vector2::new(-t.y, t.x);
            (nrm, nrm.dot(&a.coords))
        })
        .collect();
    let mut candidates = vec![centroid_of(points)];
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                if let Some((c, r)) = solve_three_active(lines[i], lines[j], lines[k]) {
                    if r > 0.0 {
                        candidates.push(c);
                    }
                }
            }
        }
    }
    candidates
        .into_iter()
        .filter(|c| point_in_polygon(*c, points))
        .map(|c| {
            (0..n)
                .map(|i| point_segment_distance(c, points[i], points[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

fn point_in_polygon(p: Point2<f64>, points: &[Point2<f64>]) -> bool {
    let n = points.len();
    let mut inside = false;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}
