//! Run configuration, h-convergence studies, and CSV/SVG reporting.
//!
//! A study sweeps every requested wave count q and wavenumber k over a mesh
//! sequence (generated Voronoi resolutions or a loaded file), solving the
//! impedance problem on each and measuring the relative projected L2 error.
//! Per-curve least-squares convergence slopes are fitted on the monotonically
//! decreasing prefix of the error sequence; the first non-decreasing step is
//! annotated as the conditioning floor instead of being treated as a failure.
//!
//! Configuration is a flat `key = value` text file; unknown or duplicate keys
//! are rejected so typos cannot silently fall back to defaults.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Point2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{AnalyticError, ExactSolution};
use crate::element::{Stabilization, PROJ_THRESHOLD};
use crate::errors::projected_l2_error;
use crate::mesh::{
    audit_regularity, generate_voronoi_lloyd, load_mesh, MeshError, PolygonalMesh, Rect,
};
use crate::planewave::{make_directions_with_offset, DirectionSet, PlanewaveError, TOL_ORTH};
use crate::system::{
    assemble, write_matrix_market, AssembleOptions, SystemError,
};

/// Wall-clock timings are the only nondeterministic run outputs; every other
/// CSV field is reproducible for a fixed configuration.
pub const CSV_HEADER: &str =
    "mesh_id,n_elems,h,k,q,p,n_dofs,rel_l2_error,assemble_ms,solve_ms,slope_to_prev";

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed configuration or usage; maps to exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// Any failure after a valid configuration; maps to exit code 1.
    #[error("runtime: {0}")]
    Runtime(String),
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<PlanewaveError> for CliError {
    fn from(e: PlanewaveError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        CliError::Runtime(e.to_string())
    }
}
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Where the mesh sequence comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    /// One generated Voronoi mesh per cell count; resolution i uses
    /// `seed + i` so the sequence is non-nested but reproducible.
    Voronoi { cells: Vec<usize>, lloyd_iters: usize, seed: u64 },
    /// A single mesh loaded from a text file.
    File(PathBuf),
}

/// Which exact solution supplies boundary data and the error reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactKind {
    /// Fundamental solution centered at a source outside the closed domain.
    Hankel { x0: Point2<f64> },
    /// Propagating plane wave of unit direction.
    PlaneWave { dir: Vector2<f64> },
}

/// A parsed, validated run configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub domain: Rect,
    pub k_values: Vec<f64>,
    pub q_values: Vec<usize>,
    pub sigma: f64,
    pub stabilization: Stabilization,
    pub mesh: MeshSource,
    pub exact: ExactKind,
    pub rho0: f64,
    pub c0: f64,
    pub tol_orth: f64,
    pub angle_offset: f64,
    pub svd_filter: bool,
    pub patch_test: bool,
    pub parallel_study: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            domain: Rect::unit(),
            k_values: vec![16.0, 32.0, 64.0],
            q_values: vec![4],
            sigma: 1.0,
            stabilization: Stabilization::DRecipe,
            mesh: MeshSource::Voronoi {
                cells: vec![8, 32, 128, 512],
                // Relaxation homogenizes cell sizes; irregular coarse cells
                // measurably degrade the canonical-energy stabilization.
                lloyd_iters: 30,
                seed: 42,
            },
            exact: ExactKind::Hankel {
                x0: Point2::new(-0.25, 0.0),
            },
            rho0: 0.05,
            c0: 1.0,
            tol_orth: TOL_ORTH,
            angle_offset: 0.0,
            svd_filter: false,
            patch_test: false,
            parallel_study: false,
        }
    }
}

fn parse_floats(key: &str, val: &str, n: Option<usize>) -> Result<Vec<f64>, CliError> {
    let out: Result<Vec<f64>, _> = val.split_whitespace().map(str::parse::<f64>).collect();
    let out = out.map_err(|_| CliError::Config(format!("key `{key}`: expected numbers, got `{val}`")))?;
    if out.is_empty() || n.is_some_and(|n| out.len() != n) {
        return Err(CliError::Config(format!(
            "key `{key}`: expected {} value(s), got {}",
            n.map_or("one or more".into(), |n| n.to_string()),
            out.len()
        )));
    }
    Ok(out)
}

fn parse_usizes(key: &str, val: &str) -> Result<Vec<usize>, CliError> {
    let out: Result<Vec<usize>, _> = val.split_whitespace().map(str::parse::<usize>).collect();
    let out = out
        .map_err(|_| CliError::Config(format!("key `{key}`: expected integers, got `{val}`")))?;
    if out.is_empty() {
        return Err(CliError::Config(format!("key `{key}`: expected one or more integers")));
    }
    Ok(out)
}

fn parse_bool(key: &str, val: &str) -> Result<bool, CliError> {
    match val {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!(
            "key `{key}`: expected `true` or `false`, got `{val}`"
        ))),
    }
}

/// Parses a flat `key = value` configuration. `#` starts a comment; blank
/// lines are skipped; unknown and repeated keys are errors.
pub fn parse_config(text: &str) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    let mut seen: Vec<String> = Vec::new();
    // Mesh-source keys are cross-validated after the scan.
    let mut mesh_kind: Option<String> = None;
    let mut mesh_file: Option<PathBuf> = None;
    let mut cells: Option<Vec<usize>> = None;
    let mut lloyd_iters: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut x0: Option<Point2<f64>> = None;
    let mut wave_dir: Option<Vector2<f64>> = None;
    let mut exact_kind: Option<String> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, val)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_ascii_lowercase();
        let val = val.trim();
        if seen.contains(&key) {
            return Err(CliError::Config(format!("key `{key}` given twice")));
        }
        seen.push(key.clone());

        match key.as_str() {
            "domain" => {
                let v = parse_floats(&key, val, Some(4))?;
                if v[2] <= v[0] || v[3] <= v[1] {
                    return Err(CliError::Config(
                        "key `domain`: expected `xmin ymin xmax ymax` with max > min".into(),
                    ));
                }
                cfg.domain = Rect::new(Point2::new(v[0], v[1]), Point2::new(v[2], v[3]));
            }
            "k" => {
                let v = parse_floats(&key, val, None)?;
                if v.iter().any(|&k| k <= 0.0) {
                    return Err(CliError::Config("key `k`: wavenumbers must be positive".into()));
                }
                cfg.k_values = v;
            }
            "q" => {
                let v = parse_usizes(&key, val)?;
                if v.iter().any(|&q| q < 2) {
                    return Err(CliError::Config("key `q`: wave counts must be at least 2".into()));
                }
                cfg.q_values = v;
            }
            "sigma" => {
                let v = parse_floats(&key, val, Some(1))?[0];
                if v <= 0.0 {
                    return Err(CliError::Config("key `sigma`: must be positive".into()));
                }
                cfg.sigma = v;
            }
            "stabilization" => {
                cfg.stabilization = match val {
                    "drecipe" => Stabilization::DRecipe,
                    "dofidofi" => Stabilization::DofiDofi,
                    _ => {
                        return Err(CliError::Config(format!(
                            "key `stabilization`: expected `drecipe` or `dofidofi`, got `{val}`"
                        )))
                    }
                };
            }
            "mesh" => mesh_kind = Some(val.to_string()),
            "mesh_file" => mesh_file = Some(PathBuf::from(val)),
            "cells" => {
                let v = parse_usizes(&key, val)?;
                if v.contains(&0) {
                    return Err(CliError::Config("key `cells`: counts must be positive".into()));
                }
                cells = Some(v);
            }
            "lloyd_iters" => {
                lloyd_iters = Some(parse_usizes(&key, val)?.into_iter().next().unwrap());
            }
            "seed" => {
                seed = Some(
                    val.parse::<u64>()
                        .map_err(|_| CliError::Config(format!("key `seed`: expected an integer, got `{val}`")))?,
                );
            }
            "exact" => exact_kind = Some(val.to_string()),
            "x0" => {
                let v = parse_floats(&key, val, Some(2))?;
                x0 = Some(Point2::new(v[0], v[1]));
            }
            "wave_dir" => {
                let v = parse_floats(&key, val, Some(2))?;
                let d = Vector2::new(v[0], v[1]);
                if d.norm() == 0.0 {
                    return Err(CliError::Config("key `wave_dir`: direction must be nonzero".into()));
                }
                wave_dir = Some(d / d.norm());
            }
            "rho0" => {
                let v = parse_floats(&key, val, Some(1))?[0];
                if !(0.0..1.0).contains(&v) {
                    return Err(CliError::Config("key `rho0`: expected a value in [0, 1)".into()));
                }
                cfg.rho0 = v;
            }
            "c0" => {
                let v = parse_floats(&key, val, Some(1))?[0];
                if v <= 0.0 {
                    return Err(CliError::Config("key `c0`: must be positive".into()));
                }
                cfg.c0 = v;
            }
            "tol_orth" => {
                let v = parse_floats(&key, val, Some(1))?[0];
                if !(v > 0.0) {
                    return Err(CliError::Config("key `tol_orth`: must be positive".into()));
                }
                cfg.tol_orth = v;
            }
            "angle_offset" => cfg.angle_offset = parse_floats(&key, val, Some(1))?[0],
            "svd_filter" => cfg.svd_filter = parse_bool(&key, val)?,
            "patch_test" => cfg.patch_test = parse_bool(&key, val)?,
            "parallel_study" => cfg.parallel_study = parse_bool(&key, val)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
    }

    cfg.mesh = match mesh_kind.as_deref() {
        None | Some("voronoi") => {
            if mesh_file.is_some() {
                return Err(CliError::Config(
                    "key `mesh_file` requires `mesh = file`".into(),
                ));
            }
            let defaults = match Config::default().mesh {
                MeshSource::Voronoi { cells, lloyd_iters, seed } => (cells, lloyd_iters, seed),
                MeshSource::File(_) => unreachable!(),
            };
            MeshSource::Voronoi {
                cells: cells.unwrap_or(defaults.0),
                lloyd_iters: lloyd_iters.unwrap_or(defaults.1),
                seed: seed.unwrap_or(defaults.2),
            }
        }
        Some("file") => {
            let path = mesh_file.ok_or_else(|| {
                CliError::Config("`mesh = file` requires a `mesh_file` path".into())
            })?;
            if cells.is_some() || lloyd_iters.is_some() || seed.is_some() {
                return Err(CliError::Config(
                    "keys `cells`, `lloyd_iters`, `seed` apply only to `mesh = voronoi`".into(),
                ));
            }
            MeshSource::File(path)
        }
        Some(other) => {
            return Err(CliError::Config(format!(
                "key `mesh`: expected `voronoi` or `file`, got `{other}`"
            )))
        }
    };

    cfg.exact = match exact_kind.as_deref() {
        None | Some("hankel") => {
            if wave_dir.is_some() {
                return Err(CliError::Config("key `wave_dir` requires `exact = planewave`".into()));
            }
            let x0 = x0.unwrap_or(Point2::new(-0.25, 0.0));
            // The fundamental solution is singular at its source, so the
            // source must sit strictly outside the closed domain.
            let inside = x0.x >= cfg.domain.min.x
                && x0.x <= cfg.domain.max.x
                && x0.y >= cfg.domain.min.y
                && x0.y <= cfg.domain.max.y;
            if inside {
                return Err(CliError::Config(format!(
                    "key `x0`: source ({}, {}) must lie strictly outside the domain",
                    x0.x, x0.y
                )));
            }
            ExactKind::Hankel { x0 }
        }
        Some("planewave") => {
            if x0.is_some() {
                return Err(CliError::Config("key `x0` requires `exact = hankel`".into()));
            }
            ExactKind::PlaneWave {
                dir: wave_dir.unwrap_or(Vector2::new(1.0, 0.0)),
            }
        }
        Some(other) => {
            return Err(CliError::Config(format!(
                "key `exact`: expected `hankel` or `planewave`, got `{other}`"
            )))
        }
    };

    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    parse_config(&text)
}

/// One solved problem: a (mesh, k, q) triple and its measurements.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub mesh_id: String,
    pub n_elems: usize,
    /// Largest element diameter.
    pub h: f64,
    pub k: f64,
    pub q: usize,
    /// Bulk waves per element, 2q + 1.
    pub p: usize,
    pub n_dofs: usize,
    pub rel_l2_error: f64,
    pub assemble_ms: f64,
    pub solve_ms: f64,
    /// Observed order between this run and the previous resolution of the
    /// same (k, q) curve; `None` for the first resolution.
    pub slope_to_prev: Option<f64>,
    /// False when iterative refinement stalled above its residual target.
    pub converged: bool,
    pub max_hk_kappa: f64,
}

/// Per-(k, q) curve summary over the mesh sequence.
#[derive(Debug, Clone, Copy)]
pub struct CurveSummary {
    pub k: f64,
    pub q: usize,
    /// Least-squares slope of log error against log(h k) over the
    /// monotonically decreasing prefix; `None` with fewer than two points.
    pub slope: Option<f64>,
    pub points_used: usize,
    /// First resolution index whose error did not decrease: the
    /// conditioning floor of the basis, reported rather than failed.
    pub floor_at: Option<usize>,
}

impl fmt::Display for CurveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k = {}, q = {}: ", self.k, self.q)?;
        match self.slope {
            Some(s) => write!(f, "slope {s:.2} over {} points", self.points_used)?,
            None => write!(f, "slope n/a")?,
        }
        if let Some(i) = self.floor_at {
            write!(f, ", conditioning floor from resolution {i}")?;
        }
        Ok(())
    }
}

/// A full study: every record in deterministic order plus curve summaries.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub records: Vec<RunRecord>,
    pub curves: Vec<CurveSummary>,
}

fn exact_solution(cfg: &Config, dirs: &DirectionSet, kappa: f64) -> ExactSolution {
    if cfg.patch_test {
        // A wave of the discrete span itself: the solver must reproduce it.
        return ExactSolution::PlaneWave {
            dir: dirs.direction(1 % dirs.p()),
            kappa,
        };
    }
    match cfg.exact {
        ExactKind::Hankel { x0 } => ExactSolution::Hankel { x0, kappa },
        ExactKind::PlaneWave { dir } => ExactSolution::PlaneWave { dir, kappa },
    }
}

/// Solves one (mesh, k, q) problem and measures it. `dump` writes the
/// assembled system in Matrix Market form before solving.
pub fn run_single(
    cfg: &Config,
    mesh: &PolygonalMesh,
    mesh_id: &str,
    kappa: f64,
    q: usize,
    dump: Option<&Path>,
) -> Result<RunRecord, CliError> {
    let dirs = make_directions_with_offset(q, cfg.angle_offset)?;
    let exact = exact_solution(cfg, &dirs, kappa);
    let opts = AssembleOptions {
        stabilization: cfg.stabilization,
        sigma: cfg.sigma,
        c0: cfg.c0,
        tol_orth: cfg.tol_orth,
        svd_filter: cfg.svd_filter,
        n_gauss_boundary: None,
    };
    let asm = assemble(mesh, &dirs, kappa, &opts, |x, n| {
        exact.impedance_data(x, n).expect("boundary data evaluable away from the source")
    })?;
    if let Some(path) = dump {
        write_matrix_market(&asm.matrix, &asm.rhs, path)?;
    }
    let (solution, stats) = asm.solve()?;
    let rel_l2_error = projected_l2_error(
        mesh,
        &dirs,
        &asm.elements,
        &asm.dof_map,
        &solution,
        kappa,
        |x| exact.eval(x).expect("exact solution evaluable away from the source").0,
    );
    Ok(RunRecord {
        mesh_id: mesh_id.to_string(),
        n_elems: mesh.n_polygons(),
        h: mesh.h(),
        k: kappa,
        q,
        p: dirs.p(),
        n_dofs: stats.n,
        rel_l2_error,
        assemble_ms: asm.assemble_ms,
        solve_ms: stats.solve_ms,
        slope_to_prev: None,
        converged: stats.converged,
        max_hk_kappa: asm.summary.max_hk_kappa,
    })
}

/// Builds the mesh sequence of a configuration. Voronoi resolutions use
/// `seed + i` so refining does not merely subdivide the coarse mesh.
pub fn build_meshes(cfg: &Config) -> Result<Vec<(String, PolygonalMesh)>, CliError> {
    match &cfg.mesh {
        MeshSource::Voronoi { cells, lloyd_iters, seed } => cells
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let s = seed + i as u64;
                let mesh = generate_voronoi_lloyd(n, *lloyd_iters, s, &cfg.domain)?;
                Ok((format!("voronoi{n}-s{s}"), mesh))
            })
            .collect(),
        MeshSource::File(path) => {
            let mesh = load_mesh(path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "mesh".into());
            Ok(vec![(stem, mesh)])
        }
    }
}

/// Least-squares slope of log(error) against log(h k) over the prefix of
/// strictly decreasing errors, and the first index breaking monotonicity.
fn fit_curve(records: &[&RunRecord]) -> (Option<f64>, usize, Option<usize>) {
    let mut floor_at = None;
    let mut used = records.len();
    for i in 1..records.len() {
        if records[i].rel_l2_error >= records[i - 1].rel_l2_error {
            floor_at = Some(i);
            used = i;
            break;
        }
    }
    if used < 2 {
        return (None, used, floor_at);
    }
    let pts: Vec<(f64, f64)> = records[..used]
        .iter()
        .map(|r| ((r.h * r.k).ln(), r.rel_l2_error.max(f64::MIN_POSITIVE).ln()))
        .collect();
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return (None, used, floor_at);
    }
    (Some((n * sxy - sx * sy) / denom), used, floor_at)
}

fn dump_path(base: &Path, mesh_id: &str, kappa: f64, q: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|s| s.to_string_lossy().into_owned());
    let name = match ext {
        Some(e) => format!("{stem}-{mesh_id}-k{kappa}-q{q}.{e}"),
        None => format!("{stem}-{mesh_id}-k{kappa}-q{q}.mtx"),
    };
    base.with_file_name(name)
}

/// Runs the whole study: every (q, k, resolution) triple in deterministic
/// order. `dump` expands to one Matrix Market file per run.
pub fn run_study(cfg: &Config, dump: Option<&Path>) -> Result<StudyResult, CliError> {
    let meshes = build_meshes(cfg)?;
    for (id, mesh) in &meshes {
        let audit = audit_regularity(mesh, cfg.rho0);
        if !audit.violations.is_empty() {
            eprintln!(
                "warning: mesh {id}: {} regularity violation(s) at rho0 = {}",
                audit.violations.len(),
                cfg.rho0
            );
        }
    }

    // Job order defines record order; parallel execution writes by index.
    let mut jobs: Vec<(usize, f64, &str, &PolygonalMesh)> = Vec::new();
    for &q in &cfg.q_values {
        for &k in &cfg.k_values {
            for (id, mesh) in &meshes {
                jobs.push((q, k, id.as_str(), mesh));
            }
        }
    }

    let run_job = |&(q, k, id, mesh): &(usize, f64, &str, &PolygonalMesh)| {
        let d = dump.map(|p| dump_path(p, id, k, q));
        run_single(cfg, mesh, id, k, q, d.as_deref())
    };
    let mut records: Vec<RunRecord> = if cfg.parallel_study {
        jobs.par_iter().map(run_job).collect::<Result<_, _>>()?
    } else {
        jobs.iter().map(run_job).collect::<Result<_, _>>()?
    };

    // Pairwise observed orders within each (q, k) curve.
    let per_curve = meshes.len();
    for c in 0..records.len() / per_curve {
        for i in 1..per_curve {
            let prev = &records[c * per_curve + i - 1];
            let cur = &records[c * per_curve + i];
            let dx = (cur.h * cur.k).ln() - (prev.h * prev.k).ln();
            let slope = (cur.rel_l2_error.max(f64::MIN_POSITIVE).ln()
                - prev.rel_l2_error.max(f64::MIN_POSITIVE).ln())
                / dx;
            records[c * per_curve + i].slope_to_prev = (dx.abs() > 1e-12).then_some(slope);
        }
    }

    let curves = records
        .chunks(per_curve)
        .map(|chunk| {
            let refs: Vec<&RunRecord> = chunk.iter().collect();
            let (slope, points_used, floor_at) = fit_curve(&refs);
            CurveSummary {
                k: chunk[0].k,
                q: chunk[0].q,
                slope,
                points_used,
                floor_at,
            }
        })
        .collect();

    Ok(StudyResult { records, curves })
}

/// Prints one line per record plus curve summaries.
pub fn print_study(result: &StudyResult, out: &mut impl std::io::Write) -> std::io::Result<()> {
    for r in &result.records {
        let slope = r
            .slope_to_prev
            .map_or("n/a".to_string(), |s| format!("{s:.2}"));
        writeln!(
            out,
            "q={} k={} {}: cells={} h={:.4} dofs={} err={:.4e} slope={} \
             assemble={:.1}ms solve={:.1}ms{}{}",
            r.q,
            r.k,
            r.mesh_id,
            r.n_elems,
            r.h,
            r.n_dofs,
            r.rel_l2_error,
            slope,
            r.assemble_ms,
            r.solve_ms,
            if r.converged { "" } else { " [refinement stalled]" },
            if r.max_hk_kappa >= PROJ_THRESHOLD {
                " [above projector threshold]"
            } else {
                ""
            },
        )?;
    }
    for c in &result.curves {
        writeln!(out, "{c}")?;
    }
    Ok(())
}

/// Formats the records as CSV. Timing columns are wall-clock and therefore
/// the only nondeterministic fields.
pub fn format_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let slope = r
            .slope_to_prev
            .map_or("n/a".to_string(), |s| format!("{s:.4}"));
        out.push_str(&format!(
            "{},{},{:.6e},{},{},{},{},{:.6e},{:.3},{:.3},{}\n",
            r.mesh_id,
            r.n_elems,
            r.h,
            r.k,
            r.q,
            r.p,
            r.n_dofs,
            r.rel_l2_error,
            r.assemble_ms,
            r.solve_ms,
            slope
        ));
    }
    out
}

/// Writes the study CSV.
pub fn write_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(format_csv(records).as_bytes())?;
    Ok(())
}

const SVG_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct LogAxis {
    min_exp: f64,
    max_exp: f64,
    origin: f64,
    span: f64,
}

impl LogAxis {
    /// Axis over the data's log10 range, padded to whole decades.
    fn new(values: impl Iterator<Item = f64>, origin: f64, span: f64) -> LogAxis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let e = v.max(1e-17).log10();
            lo = lo.min(e);
            hi = hi.max(e);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let (min_exp, max_exp) = (lo.floor(), (hi.ceil()).max(lo.floor() + 1.0));
        LogAxis { min_exp, max_exp, origin, span }
    }

    fn place(&self, v: f64) -> f64 {
        let e = v.max(1e-17).log10();
        self.origin + (e - self.min_exp) / (self.max_exp - self.min_exp) * self.span
    }

    fn decades(&self) -> impl Iterator<Item = i32> + '_ {
        (self.min_exp as i32)..=(self.max_exp as i32)
    }
}

fn svg_panel(
    out: &mut String,
    x0: f64,
    records: &[RunRecord],
    curves: &[CurveSummary],
    title: &str,
    x_label: &str,
    x_of: impl Fn(&RunRecord) -> f64,
) {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const ML: f64 = 62.0;
    const MB: f64 = 48.0;
    const MT: f64 = 34.0;
    const MR: f64 = 16.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;

    let xs = LogAxis::new(records.iter().map(&x_of), x0 + ML, plot_w);
    // SVG y grows downward: place with a negative span from the bottom edge.
    let ys = LogAxis::new(records.iter().map(|r| r.rel_l2_error), MT + plot_h, -plot_h);

    out.push_str(&format!(
        "<g font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect x=\"{:.1}\" y=\"{MT}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#333\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        x0 + ML,
        x0 + ML + plot_w / 2.0,
        MT - 12.0,
    ));

    for e in xs.decades() {
        let px = xs.place(10f64.powi(e));
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MT}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{e}</text>\n",
            MT + plot_h,
            MT + plot_h + 16.0,
        ));
    }
    for e in ys.decades() {
        let py = ys.place(10f64.powi(e));
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{e}</text>\n",
            x0 + ML,
            x0 + ML + plot_w,
            x0 + ML - 6.0,
            py + 4.0,
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {:.1} {:.1})\">relative projected L2 error</text>\n",
        x0 + ML + plot_w / 2.0,
        MT + plot_h + 34.0,
        x0 + 14.0,
        MT + plot_h / 2.0,
        x0 + 14.0,
        MT + plot_h / 2.0,
    ));

    let n_curves = curves.len().max(1);
    let per_curve = records.len() / n_curves;
    for (c, curve) in curves.iter().enumerate() {
        let color = SVG_COLORS[c % SVG_COLORS.len()];
        let chunk = &records[c * per_curve..(c + 1) * per_curve];
        let pts: Vec<String> = chunk
            .iter()
            .map(|r| format!("{:.1},{:.1}", xs.place(x_of(r)), ys.place(r.rel_l2_error)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        for r in chunk {
            out.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                xs.place(x_of(r)),
                ys.place(r.rel_l2_error)
            ));
        }
        if let Some(i) = curve.floor_at {
            let r = &chunk[i];
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-size=\"11\">floor</text>\n",
                xs.place(x_of(r)) + 6.0,
                ys.place(r.rel_l2_error) - 6.0
            ));
        }
        let label = match curve.slope {
            Some(s) => format!("k={}, q={} (slope {s:.2})", curve.k, curve.q),
            None => format!("k={}, q={}", curve.k, curve.q),
        };
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-size=\"11\">{label}</text>\n",
            x0 + ML + 10.0,
            MT + 16.0 + 14.0 * c as f64
        ));
    }
    out.push_str("</g>\n");
}

/// Renders the study as a standalone SVG with two log-log panels: error
/// against 1/(h k), and error against the number of dofs.
pub fn render_svg(result: &StudyResult) -> String {
    let mut out = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"980\" height=\"400\" \
         viewBox=\"0 0 980 400\">\n<rect width=\"980\" height=\"400\" fill=\"white\"/>\n",
    );
    svg_panel(
        &mut out,
        0.0,
        &result.records,
        &result.curves,
        "error vs 1/(h k)",
        "1/(h k)",
        |r| 1.0 / (r.h * r.k),
    );
    svg_panel(
        &mut out,
        490.0,
        &result.records,
        &result.curves,
        "error vs dofs",
        "degrees of freedom",
        |r| r.n_dofs as f64,
    );
    out.push_str("</svg>\n");
    out
}

/// Writes the study SVG.
pub fn write_svg(result: &StudyResult, path: impl AsRef<Path>) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path.as_ref())?;
    f.write_all(render_svg(result).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_config_text() -> &'static str {
        "# experiment configuration\n\
         domain = 0 0 1 1\n\
         k = 16 32\n\
         q = 3 4\n\
         sigma = 1.5\n\
         stabilization = dofidofi\n\
         mesh = voronoi\n\
         cells = 8 32\n\
         lloyd_iters = 2\n\
         seed = 7\n\
         exact = hankel\n\
         x0 = -0.5 0.25  # outside\n\
         rho0 = 0.02\n\
         c0 = 2.0\n\
         tol_orth = 1e-11\n\
         angle_offset = 0.1\n\
         svd_filter = true\n\
         patch_test = false\n\
         parallel_study = true\n"
    }

    #[test]
    fn full_config_round_trips_every_key() {
        let cfg = parse_config(full_config_text()).unwrap();
        assert_eq!(cfg.k_values, vec![16.0, 32.0]);
        assert_eq!(cfg.q_values, vec![3, 4]);
        assert_eq!(cfg.sigma, 1.5);
        assert_eq!(cfg.stabilization, Stabilization::DofiDofi);
        assert_eq!(
            cfg.mesh,
            MeshSource::Voronoi { cells: vec![8, 32], lloyd_iters: 2, seed: 7 }
        );
        assert_eq!(cfg.exact, ExactKind::Hankel { x0: Point2::new(-0.5, 0.25) });
        assert_eq!(cfg.rho0, 0.02);
        assert_eq!(cfg.c0, 2.0);
        assert_eq!(cfg.tol_orth, 1e-11);
        assert_eq!(cfg.angle_offset, 0.1);
        assert!(cfg.svd_filter);
        assert!(!cfg.patch_test);
        assert!(cfg.parallel_study);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config("# nothing but comments\n\n").unwrap();
        assert_eq!(cfg.k_values, vec![16.0, 32.0, 64.0]);
        assert_eq!(cfg.q_values, vec![4]);
        assert_eq!(cfg.sigma, 1.0);
        assert_eq!(cfg.stabilization, Stabilization::DRecipe);
        assert_eq!(
            cfg.mesh,
            MeshSource::Voronoi { cells: vec![8, 32, 128, 512], lloyd_iters: 30, seed: 42 }
        );
        assert_eq!(cfg.exact, ExactKind::Hankel { x0: Point2::new(-0.25, 0.0) });
        assert!(!cfg.svd_filter);
    }

    #[test]
    fn config_rejections_name_the_offense() {
        let cases: [(&str, &str); 12] = [
            ("voodoo = 1", "unknown key"),
            ("k = 16\nk = 32", "twice"),
            ("k = -4", "positive"),
            ("q = 1", "at least 2"),
            ("just words", "key = value"),
            ("domain = 1 1 0 0", "max > min"),
            ("x0 = 0.5 0.5", "outside"),
            ("x0 = 0 0.5", "outside"),
            ("mesh = file", "mesh_file"),
            ("mesh_file = foo.txt", "mesh = file"),
            ("exact = planewave\nx0 = -1 0", "exact = hankel"),
            ("svd_filter = maybe", "true"),
        ];
        for (text, needle) in cases {
            let err = parse_config(text).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(needle), "{text:?} gave {msg:?}");
            assert!(matches!(err, CliError::Config(_)));
        }
    }

    #[test]
    fn planewave_direction_is_normalized() {
        let cfg = parse_config("exact = planewave\nwave_dir = 3 4\n").unwrap();
        match cfg.exact {
            ExactKind::PlaneWave { dir } => {
                assert!((dir - Vector2::new(0.6, 0.8)).norm() < 1e-15);
            }
            other => panic!("expected a plane wave, got {other:?}"),
        }
    }

    fn synthetic_records(errors: &[f64]) -> Vec<RunRecord> {
        errors
            .iter()
            .enumerate()
            .map(|(i, &e)| RunRecord {
                mesh_id: format!("m{i}"),
                n_elems: 4 << (2 * i),
                h: 0.5f64.powi(i as i32),
                k: 16.0,
                q: 4,
                p: 9,
                n_dofs: 100 * (i + 1),
                rel_l2_error: e,
                assemble_ms: 1.0,
                solve_ms: 1.0,
                slope_to_prev: None,
                converged: true,
                max_hk_kappa: 0.4,
            })
            .collect()
    }

    #[test]
    fn fitted_slope_recovers_a_synthetic_order() {
        // error = (h k)^5 exactly, so the fit must return 5.
        let errors: Vec<f64> = (0..4).map(|i| (0.5f64.powi(i) * 16.0).powi(5)).collect();
        let records = synthetic_records(&errors);
        let refs: Vec<&RunRecord> = records.iter().collect();
        let (slope, used, floor) = fit_curve(&refs);
        assert!((slope.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(used, 4);
        assert_eq!(floor, None);
    }

    #[test]
    fn slope_fit_stops_at_the_conditioning_floor() {
        let records = synthetic_records(&[1e-2, 1e-4, 1e-6, 3e-6]);
        let refs: Vec<&RunRecord> = records.iter().collect();
        let (slope, used, floor) = fit_curve(&refs);
        assert_eq!(used, 3);
        assert_eq!(floor, Some(3));
        let expected = (1e-6f64.ln() - 1e-2f64.ln()) / ((0.25f64).ln() - 1.0f64.ln());
        assert!((slope.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn single_point_curve_has_no_slope() {
        let records = synthetic_records(&[1e-3]);
        let refs: Vec<&RunRecord> = records.iter().collect();
        let (slope, used, floor) = fit_curve(&refs);
        assert_eq!(slope, None);
        assert_eq!(used, 1);
        assert_eq!(floor, None);
        let csv = format_csv(&records);
        assert!(csv.ends_with("n/a\n"));
    }

    #[test]
    fn csv_has_the_documented_columns_in_order() {
        let mut records = synthetic_records(&[1e-2, 1e-4]);
        records[1].slope_to_prev = Some(5.0);
        let csv = format_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "m0,4,1.000000e0,16,4,9,100,1.000000e-2,1.000,1.000,n/a"
        );
        assert_eq!(
            lines.next().unwrap(),
            "m1,16,5.000000e-1,16,4,9,200,1.000000e-4,1.000,1.000,5.0000"
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn svg_contains_both_panels_and_every_point() {
        let records = synthetic_records(&[1e-2, 1e-4, 1e-6]);
        let refs: Vec<&RunRecord> = records.iter().collect();
        let (slope, points_used, floor_at) = fit_curve(&refs);
        let result = StudyResult {
            records,
            curves: vec![CurveSummary { k: 16.0, q: 4, slope, points_used, floor_at }],
        };
        let svg = render_svg(&result);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("error vs 1/(h k)"));
        assert!(svg.contains("error vs dofs"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains("slope"));
    }

    #[test]
    fn floor_is_annotated_in_the_svg() {
        let records = synthetic_records(&[1e-2, 1e-4, 9e-4]);
        let refs: Vec<&RunRecord> = records.iter().collect();
        let (slope, points_used, floor_at) = fit_curve(&refs);
        assert_eq!(floor_at, Some(2));
        let result = StudyResult {
            records,
            curves: vec![CurveSummary { k: 16.0, q: 4, slope, points_used, floor_at }],
        };
        let svg = render_svg(&result);
        assert_eq!(svg.matches(">floor<").count(), 2);
    }

    #[test]
    fn patch_test_study_reproduces_an_in_span_wave_on_voronoi_cells() {
        let cfg = parse_config(
            "k = 2\nq = 3\ncells = 16\nseed = 5\npatch_test = true\nsvd_filter = true\n",
        )
        .unwrap();
        let result = run_study(&cfg, None).unwrap();
        assert_eq!(result.records.len(), 1);
        let r = &result.records[0];
        assert_eq!(r.n_elems, 16);
        assert!(r.converged);
        assert!(r.rel_l2_error <= 1e-6, "error {:.3e}", r.rel_l2_error);
    }

    #[test]
    fn study_records_are_reproducible_and_ordered() {
        let cfg = parse_config(
            "k = 4 8\nq = 2\ncells = 4 9\nseed = 3\nlloyd_iters = 1\nsvd_filter = true\n",
        )
        .unwrap();
        let a = run_study(&cfg, None).unwrap();
        let b = run_study(&cfg, None).unwrap();
        assert_eq!(a.records.len(), 4);
        let ids: Vec<&str> = a.records.iter().map(|r| r.mesh_id.as_str()).collect();
        assert_eq!(ids, ["voronoi4-s3", "voronoi9-s4", "voronoi4-s3", "voronoi9-s4"]);
        assert_eq!(a.records[0].k, 4.0);
        assert_eq!(a.records[2].k, 8.0);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.mesh_id, rb.mesh_id);
            assert_eq!(ra.n_dofs, rb.n_dofs);
            // Bitwise equality: assembly canonicalizes triplet order and
            // error reduction is serial.
            assert_eq!(ra.rel_l2_error, rb.rel_l2_error);
            assert_eq!(ra.h, rb.h);
        }
    }

    #[test]
    fn parallel_study_matches_the_sequential_one() {
        let base = "k = 4 8\nq = 2\ncells = 4 9\nseed = 3\nlloyd_iters = 1\nsvd_filter = true\n";
        let seq = run_study(&parse_config(base).unwrap(), None).unwrap();
        let par = run_study(
            &parse_config(&format!("{base}parallel_study = true\n")).unwrap(),
            None,
        )
        .unwrap();
        for (rs, rp) in seq.records.iter().zip(&par.records) {
            assert_eq!(rs.mesh_id, rp.mesh_id);
            assert_eq!(rs.rel_l2_error, rp.rel_l2_error);
        }
    }

    #[test]
    fn dump_writes_one_matrix_market_file_per_run() {
        let dir = std::env::temp_dir().join("nctvem-dump-test");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("system.mtx");
        let cfg = parse_config(
            "k = 4\nq = 2\ncells = 4\nseed = 3\nlloyd_iters = 1\nsvd_filter = true\n",
        )
        .unwrap();
        run_study(&cfg, Some(&base)).unwrap();
        let expect = dir.join("system-voronoi4-s3-k4-q2.mtx");
        let text = std::fs::read_to_string(&expect).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate complex general"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn file_meshes_run_and_name_records_by_stem() {
        let dir = std::env::temp_dir().join("nctvem-file-mesh-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pair.txt");
        std::fs::write(
            &path,
            "6 2\n0 0\n1 0\n1 1\n0 1\n2 0\n2 1\n4 0 1 2 3\n4 1 4 5 2\n",
        )
        .unwrap();
        let cfg = parse_config(&format!(
            "domain = 0 0 2 1\nk = 2\nq = 2\nmesh = file\nmesh_file = {}\n",
            path.display()
        ))
        .unwrap();
        let result = run_study(&cfg, None).unwrap();
        assert_eq!(result.records.len(), 1);
        assert_eq!(result.records[0].mesh_id, "pair");
        assert_eq!(result.records[0].n_elems, 2);
        assert_eq!(result.curves[0].slope, None);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

