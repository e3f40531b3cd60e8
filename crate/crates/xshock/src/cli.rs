//! Batch driver: parse configuration, run cases, write traces, sampled
//! fields and summaries, and run the built-in property suites.
//!
//! ```text
//! xshock run --case <name> [--nx N --ny N --pmax P --agg T --out DIR --seed S]
//! xshock verify [--suite <name>]
//! ```
//!
//! All CSV output is comma separated with a header row; floats carry 17
//! significant digits. Runs are deterministic for a given configuration and
//! seed.

use crate::cases;
use crate::cutcell::{build_agglomeration, Subdomain};
use crate::levelset::{AnalyticLevelSet, HeightFunction, SplineKind, SplineLevelSet};
use crate::mesh::{build_grid, Rect};
use crate::physics::{
    advection_flux, advection_upwind, burgers_flux, burgers_upwind, euler_flux, godunov_flux,
    hllc_flux, pressure, riemann_star, slipwall_flux, GAMMA,
};
use crate::residual::{
    assemble_enriched, build_geometry, constraint_rows, extract_constraint, jacobian_phi,
    jacobian_u, objective, Discretization,
};
use crate::sqp::{kkt_solve, solve, IterateView, SqpConfig};
use crate::xdgspace::{sample, AggOperator};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Effective settings of one `run` invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub case: String,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub p_max: Option<usize>,
    pub agg_threshold: Option<f64>,
    pub max_iterations: Option<usize>,
    pub gamma0: Option<f64>,
    pub out_dir: PathBuf,
    /// Field snapshots sample at this multiple of the grid resolution.
    pub sample_factor: usize,
    /// Write field/interface snapshots every n-th iteration (0 disables).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: String::new(),
            nx: None,
            ny: None,
            p_max: None,
            agg_threshold: None,
            max_iterations: None,
            gamma0: None,
            out_dir: PathBuf::from("out"),
            sample_factor: 10,
            snapshot_every: 1,
            seed: 0,
        }
    }
}

/// Parse a plain-text `key = value` configuration file. Unknown keys are an
/// error so typos do not silently fall back to defaults.
pub fn parse_config(text: &str, config: &mut RunConfig) -> Result<(), String> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| format!("line {}: {key}: {e}", lineno + 1);
        match key {
            "case" => config.case = value.to_string(),
            "nx" => config.nx = Some(value.parse().map_err(|e| bad(&e))?),
            "ny" => config.ny = Some(value.parse().map_err(|e| bad(&e))?),
            "pmax" => config.p_max = Some(value.parse().map_err(|e| bad(&e))?),
            "agg" => config.agg_threshold = Some(value.parse().map_err(|e| bad(&e))?),
            "max_iterations" => config.max_iterations = Some(value.parse().map_err(|e| bad(&e))?),
            "gamma0" => config.gamma0 = Some(value.parse().map_err(|e| bad(&e))?),
            "out" => config.out_dir = PathBuf::from(value),
            "sample_factor" => config.sample_factor = value.parse().map_err(|e| bad(&e))?,
            "snapshot_every" => config.snapshot_every = value.parse().map_err(|e| bad(&e))?,
            "seed" => config.seed = value.parse().map_err(|e| bad(&e))?,
            _ => return Err(format!("line {}: unknown key '{key}'", lineno + 1)),
        }
    }
    Ok(())
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_field_csv(
    path: &Path,
    view: &IterateView,
    phi_b: Option<&AnalyticLevelSet>,
    factor: usize,
) -> std::io::Result<()> {
    let grid = view.grid;
    let b = grid.bounds();
    let (nx, ny) = (grid.nx() * factor, grid.ny() * factor);
    let mut pts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = b.x_min + (b.x_max - b.x_min) * i as f64 / nx as f64;
            let y = b.y_min + (b.y_max - b.y_min) * j as f64 / ny as f64;
            pts.push([x, y]);
        }
    }
    let vals = sample(
        view.u,
        &view.geom.layout,
        grid,
        view.spline,
        phi_b.map(|p| p as &dyn HeightFunction),
        &pts,
    );
    let m = view.geom.layout.m;
    let mut out = String::new();
    out.push_str("x,y");
    for c in 0..m {
        let _ = write!(out, ",u{c}");
    }
    out.push_str(",phi_s");
    if phi_b.is_some() {
        out.push_str(",phi_b");
    }
    out.push('\n');
    for (p, v) in pts.iter().zip(&vals) {
        let _ = write!(out, "{},{}", fmt_f(p[0]), fmt_f(p[1]));
        for c in 0..m {
            let _ = write!(out, ",{}", fmt_f(v[c]));
        }
        let _ = write!(out, ",{}", fmt_f(p[0] - view.spline.height(p[1])));
        if let Some(pb) = phi_b {
            let _ = write!(out, ",{}", fmt_f(pb.eval(p[0], p[1])));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

fn write_interface_csv(path: &Path, spline: &SplineLevelSet) -> std::io::Result<()> {
    let mut out = String::from("y,x\n");
    let knots = spline.knots();
    let samples_per_segment = 10;
    for w in knots.windows(2) {
        for k in 0..samples_per_segment {
            let y = w[0] + (w[1] - w[0]) * k as f64 / samples_per_segment as f64;
            let _ = writeln!(out, "{},{}", fmt_f(y), fmt_f(spline.height(y)));
        }
    }
    let y_end = *knots.last().unwrap();
    let _ = writeln!(out, "{},{}", fmt_f(y_end), fmt_f(spline.height(y_end)));
    fs::write(path, out)
}

/// Shock angle (degrees) of the in-domain portion of the interface, measured
/// between the foot and the point where the spline leaves the domain.
pub fn shock_angle_deg(spline: &SplineLevelSet, bounds: Rect) -> f64 {
    let knots = spline.knots();
    let (y0, y1) = (knots[0], *knots.last().unwrap());
    let mut y_end = y0;
    let n = 1000;
    for i in 0..=n {
        let y = y0 + (y1 - y0) * i as f64 / n as f64;
        if spline.height(y) <= bounds.x_max {
            y_end = y;
        } else {
            break;
        }
    }
    let dx = spline.height(y_end) - spline.height(y0);
    (y_end - y0).atan2(dx).to_degrees()
}

/// Drive one case end to end, writing trace.csv, per-iteration snapshots and
/// a summary. Returns the process exit status (0 converged, 1 not).
pub fn run(config: &RunConfig) -> i32 {
    let Some(mut case) = cases::by_name(&config.case) else {
        eprintln!(
            "unknown case '{}'; available: {}",
            config.case,
            cases::all_names().join(", ")
        );
        return 2;
    };
    if let Some(nx) = config.nx {
        case.nx = nx;
    }
    if let Some(ny) = config.ny {
        case.ny = ny;
    }
    if let Some(p) = config.p_max {
        case.p_max = p;
    }
    if let Some(a) = config.agg_threshold {
        if !(a > 0.0 && a < 1.0) {
            eprintln!("agglomeration threshold must lie in (0, 1), got {a}");
            return 2;
        }
        case.agg_threshold = a;
    }
    if let Some(n) = config.max_iterations {
        case.max_iterations = n;
    }
    let mut sqp_config = SqpConfig::default();
    if let Some(g) = config.gamma0 {
        sqp_config.gamma0 = g;
    }
    if let Err(e) = fs::create_dir_all(&config.out_dir) {
        eprintln!("cannot create output directory {:?}: {e}", config.out_dir);
        return 2;
    }

    let phi_b = case.phi_b;
    let out_dir = config.out_dir.clone();
    let factor = config.sample_factor.max(1);
    let every = config.snapshot_every;
    let mut snapshot_err: Option<std::io::Error> = None;
    let mut hook = |view: &IterateView| {
        if every == 0 || view.iter % every != 0 {
            return;
        }
        let field = out_dir.join(format!("field_{:03}.csv", view.iter));
        let iface = out_dir.join(format!("interface_{:03}.csv", view.iter));
        if let Err(e) = write_field_csv(&field, view, phi_b.as_ref(), factor)
            .and_then(|_| write_interface_csv(&iface, view.spline))
        {
            snapshot_err.get_or_insert(e);
        }
    };
    let solution = match solve(&case, &sqp_config, Some(&mut hook)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("solver failed: {e}");
            return 1;
        }
    };
    if let Some(e) = snapshot_err {
        eprintln!("warning: snapshot output failed: {e}");
    }

    // trace.csv
    let mut trace =
        String::from("iteration,p,r_norm,R_norm,alpha,gamma,reinit_flag,enthalpy_error\n");
    for row in &solution.trace {
        let _ = writeln!(
            trace,
            "{},{},{},{},{},{},{},{}",
            row.iter,
            row.p,
            fmt_f(row.r_norm),
            fmt_f(row.big_r_norm),
            fmt_f(row.alpha),
            fmt_f(row.gamma),
            row.reinit as u8,
            row.enthalpy_err.map(fmt_f).unwrap_or_default(),
        );
    }
    if let Err(e) = fs::write(out_dir.join("trace.csv"), trace) {
        eprintln!("cannot write trace.csv: {e}");
        return 1;
    }
    let _ = write_interface_csv(&out_dir.join("interface_final.csv"), &solution.spline);

    // summary: plain key = value text, including the effective settings
    let mut summary = String::new();
    let _ = writeln!(summary, "case = {}", case.name);
    let _ = writeln!(summary, "converged = {}", solution.converged);
    let _ = writeln!(summary, "iterations = {}", solution.trace.len());
    let _ = writeln!(summary, "final_p = {}", solution.p);
    let _ = writeln!(summary, "final_r_norm = {}", fmt_f(solution.final_r_norm));
    let _ = writeln!(
        summary,
        "final_R_norm = {}",
        fmt_f(solution.final_big_r_norm)
    );
    if let Some(h) = solution.trace.iter().rev().find_map(|t| t.enthalpy_err) {
        let _ = writeln!(summary, "enthalpy_error = {}", fmt_f(h));
    }
    if case.name == "wedge" {
        let angle = shock_angle_deg(&solution.spline, case.bounds);
        let _ = writeln!(summary, "shock_angle_deg = {}", fmt_f(angle));
    }
    if let Some(s_exact) = &case.exact_interface {
        let knots = solution.spline.knots().to_vec();
        let dev = knots
            .iter()
            .filter(|&&y| s_exact(y) <= case.bounds.x_max)
            .map(|&y| (solution.spline.height(y) - s_exact(y)).abs())
            .fold(0.0f64, f64::max);
        let _ = writeln!(summary, "interface_max_knot_deviation = {}", fmt_f(dev));
    }
    let _ = writeln!(summary, "nx = {}", case.nx);
    let _ = writeln!(summary, "ny = {}", case.ny);
    let _ = writeln!(summary, "p_max = {}", case.p_max);
    let _ = writeln!(summary, "agg_threshold = {}", fmt_f(case.agg_threshold));
    let _ = writeln!(summary, "max_iterations = {}", case.max_iterations);
    let _ = writeln!(summary, "sample_factor = {}", factor);
    let _ = writeln!(summary, "seed = {}", config.seed);
    let _ = writeln!(summary, "gamma0 = {}", fmt_f(sqp_config.gamma0));
    let _ = writeln!(
        summary,
        "gamma_bounds = [{}, {}]",
        fmt_f(sqp_config.gamma_min),
        fmt_f(sqp_config.gamma_max)
    );
    let _ = writeln!(summary, "kappa = {}", fmt_f(sqp_config.kappa));
    let _ = writeln!(
        summary,
        "line_search = beta {} tau {} alpha_min {}",
        sqp_config.beta, sqp_config.tau, sqp_config.alpha_min
    );
    let _ = writeln!(
        summary,
        "termination = n_term {} abs {} rel {} arf {}",
        sqp_config.n_term, sqp_config.term_abs_tol, sqp_config.term_rel_tol, sqp_config.arf_tol
    );
    if let Err(e) = fs::write(out_dir.join("summary.txt"), summary) {
        eprintln!("cannot write summary.txt: {e}");
        return 1;
    }
    println!(
        "{}: converged = {}, iterations = {}, final |r| = {:.3e}, final |R| = {:.3e}",
        case.name,
        solution.converged,
        solution.trace.len(),
        solution.final_r_norm,
        solution.final_big_r_norm
    );
    if solution.converged {
        0
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// verify: property suites

pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_spline(rng: &mut ChaCha8Rng, cell: Rect) -> SplineLevelSet {
    let n_seg = rng.gen_range(1..=3);
    let mut knots = vec![cell.y_min];
    for i in 1..=n_seg {
        knots.push(cell.y_min + (cell.y_max - cell.y_min) * i as f64 / n_seg as f64);
    }
    let w = cell.x_max - cell.x_min;
    let span = 1.6 * w;
    let values: Vec<f64> = (0..=n_seg)
        .map(|_| cell.x_min - 0.3 * w + span * rng.gen::<f64>())
        .collect();
    if rng.gen_bool(0.5) {
        SplineLevelSet::linear(knots, values).unwrap()
    } else {
        let derivs: Vec<f64> = (0..=n_seg)
            .map(|_| 4.0 * w * (rng.gen::<f64>() - 0.5))
            .collect();
        SplineLevelSet::cubic(knots, values, derivs).unwrap()
    }
}

/// Green-identity oracle: integrate x-antiderivatives of the polynomial along
/// the sub-domain boundary with adaptive Simpson quadrature. Fully
/// independent of the slab-decomposition rules it checks.
fn green_oracle_integral(
    cell: Rect,
    spline: &SplineLevelSet,
    sd: Subdomain,
    coeffs: &[(usize, usize, f64)],
) -> f64 {
    // P(x, y) = int p dx; integral over {x < S(y)} side is
    // int_y P(min(max(S, x0), x1), y) - P(x0, y) dy, and the complement uses
    // P(x1, y) minus the same clamped curve term.
    let anti = |x: f64, y: f64| -> f64 {
        coeffs
            .iter()
            .map(|&(a, b, c)| c * x.powi(a as i32 + 1) / (a as f64 + 1.0) * y.powi(b as i32))
            .sum()
    };
    let f = |y: f64| -> f64 {
        let s = spline.height(y).clamp(cell.x_min, cell.x_max);
        match sd {
            Subdomain::A => anti(s, y) - anti(cell.x_min, y),
            Subdomain::B => anti(cell.x_max, y) - anti(s, y),
            _ => 0.0,
        }
    };
    adaptive_simpson(&f, cell.y_min, cell.y_max, 1e-13)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() < 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, eps, 40)
}

/// Criterion-style quadrature suite: random cells and splines, areas summing
/// to the cell area, polynomial integrals against the Green-identity oracle,
/// interface lengths against adaptive quadrature, and a Monte-Carlo check.
pub fn verify_quadrature(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_area = 0.0f64;
    let mut worst_poly = 0.0f64;
    let mut worst_len = 0.0f64;
    let order = 4usize;
    for _ in 0..200 {
        let x0 = rng.gen_range(-1.0..1.0);
        let y0 = rng.gen_range(-1.0..1.0);
        let cell = Rect::new(
            x0,
            x0 + rng.gen_range(0.05..1.5),
            y0,
            y0 + rng.gen_range(0.05..1.5),
        );
        let spline = random_spline(&mut rng, cell);
        // (a) partition of the cell area
        let mut total = 0.0;
        for sd in [Subdomain::A, Subdomain::B] {
            if let Some(rule) = crate::cutcell::volume_rule(cell, 0, &spline, None, sd, order) {
                total += rule.weights.iter().sum::<f64>();
            }
        }
        worst_area = worst_area.max((total - cell.area()).abs() / cell.area());
        // (b) random polynomial of total degree <= order against the oracle
        let mut coeffs = Vec::new();
        for a in 0..=order {
            for b in 0..=(order - a) {
                coeffs.push((a, b, rng.gen_range(-1.0..1.0)));
            }
        }
        for sd in [Subdomain::A, Subdomain::B] {
            if let Some(rule) = crate::cutcell::volume_rule(cell, 0, &spline, None, sd, order) {
                let num: f64 = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(n, &w)| {
                        w * coeffs
                            .iter()
                            .map(|&(a, b, c)| c * n[0].powi(a as i32) * n[1].powi(b as i32))
                            .sum::<f64>()
                    })
                    .sum();
                let oracle = green_oracle_integral(cell, &spline, sd, &coeffs);
                let scale = oracle.abs().max(cell.area());
                worst_poly = worst_poly.max((num - oracle).abs() / scale);
            }
        }
        // (c) interface length against adaptive Simpson arclength
        if let Some(seg) = crate::cutcell::surface_rule(
            cell,
            0,
            &spline,
            None,
            crate::cutcell::InterfaceKind::Shock,
            order,
        ) {
            let num: f64 = seg.weights.iter().sum();
            let f = |y: f64| -> f64 {
                let s = spline.height(y);
                if s > cell.x_min && s < cell.x_max {
                    (1.0 + spline.slope(y) * spline.slope(y)).sqrt()
                } else {
                    0.0
                }
            };
            // split at the curve's entry/exit points located by bisection
            let mut breaks = vec![cell.y_min, cell.y_max];
            let n_scan = 16384;
            for i in 0..n_scan {
                let a = cell.y_min + (cell.y_max - cell.y_min) * i as f64 / n_scan as f64;
                let b = cell.y_min + (cell.y_max - cell.y_min) * (i + 1) as f64 / n_scan as f64;
                let inside =
                    |y: f64| spline.height(y) > cell.x_min && spline.height(y) < cell.x_max;
                if inside(a) != inside(b) {
                    let (mut lo, mut hi) = (a, b);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if inside(lo) != inside(mid) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    breaks.push(0.5 * (lo + hi));
                }
            }
            breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut oracle = 0.0;
            for w in breaks.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                if spline.height(mid) > cell.x_min && spline.height(mid) < cell.x_max {
                    oracle += adaptive_simpson(&f, w[0], w[1], 1e-13);
                }
            }
            let scale = oracle.abs().max(1e-3);
            worst_len = worst_len.max((num - oracle).abs() / scale);
        }
    }
    // Monte-Carlo indicator oracle on a handful of configurations
    let mut mc_ok = true;
    let mut mc_detail = String::new();
    for trial in 0..3 {
        let cell = Rect::new(0.0, 1.0, 0.0, 1.0);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ (0xC0FFEE + trial));
        let spline = random_spline(&mut rng2, cell);
        let area = crate::cutcell::volume_rule(cell, 0, &spline, None, Subdomain::A, 2)
            .map_or(0.0, |r| r.weights.iter().sum());
        let n = 10_000_000u64;
        let mut hits = 0u64;
        for _ in 0..n {
            let x = rng2.gen::<f64>();
            let y = rng2.gen::<f64>();
            if x < spline.height(y) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        if (area - p).abs() > 3.0 * sigma {
            mc_ok = false;
            let _ = write!(
                mc_detail,
                " mc trial {trial}: area {area:.8} vs {p:.8} +- {sigma:.1e};"
            );
        }
    }
    let passed = worst_area < 1e-10 && worst_poly < 1e-9 && worst_len < 1e-9 && mc_ok;
    SuiteResult {
        name: "quadrature",
        passed,
        detail: format!(
            "area partition {worst_area:.2e} (tol 1e-10), polynomial vs oracle {worst_poly:.2e} (tol 1e-9), interface length {worst_len:.2e} (tol 1e-9){mc_detail}"
        ),
    }
}

/// Flux consistency and conservation over random admissible states, plus the
/// frozen star-pressure oracle for the standard shock-tube states.
pub fn verify_fluxes(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let n = [ang.cos(), ang.sin()];
        let neg = [-n[0], -n[1]];
        // scalar upwind fluxes
        let (ci, co) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let a = rng.gen_range(-2.0..2.0);
        worst = worst.max(
            (advection_upwind(ci, ci, n, a)
                - (advection_flux(ci, a)[0] * n[0] + advection_flux(ci, a)[1] * n[1]))
                .abs(),
        );
        worst =
            worst.max((advection_upwind(ci, co, n, a) + advection_upwind(co, ci, neg, a)).abs());
        worst = worst.max(
            (burgers_upwind(ci, ci, n) - (burgers_flux(ci)[0] * n[0] + burgers_flux(ci)[1] * n[1]))
                .abs(),
        );
        worst = worst.max((burgers_upwind(ci, co, n) + burgers_upwind(co, ci, neg)).abs());
        // Euler states
        let prim = |rng: &mut ChaCha8Rng| -> [f64; 4] {
            let rho = rng.gen_range(0.1..3.0);
            let u = rng.gen_range(-1.5..1.5);
            let v = rng.gen_range(-1.5..1.5);
            let p = rng.gen_range(0.1..3.0);
            [
                rho,
                rho * u,
                rho * v,
                p / (GAMMA - 1.0) + 0.5 * rho * (u * u + v * v),
            ]
        };
        let ul = prim(&mut rng);
        let ur = prim(&mut rng);
        let dot = |u: &[f64; 4], n: [f64; 2]| -> [f64; 4] {
            let f = euler_flux(u);
            [
                f[0][0] * n[0] + f[0][1] * n[1],
                f[1][0] * n[0] + f[1][1] * n[1],
                f[2][0] * n[0] + f[2][1] * n[1],
                f[3][0] * n[0] + f[3][1] * n[1],
            ]
        };
        let exact = dot(&ul, n);
        let h = hllc_flux(&ul, &ul, n).unwrap();
        let g = godunov_flux(&ul, &ul, n).unwrap();
        for i in 0..4 {
            worst = worst.max((h[i] - exact[i]).abs());
            worst = worst.max((g[i] - exact[i]).abs());
        }
        let hf = hllc_flux(&ul, &ur, n).unwrap();
        let hb = hllc_flux(&ur, &ul, neg).unwrap();
        let gf = godunov_flux(&ul, &ur, n).unwrap();
        let gb = godunov_flux(&ur, &ul, neg).unwrap();
        for i in 0..4 {
            worst = worst.max((hf[i] + hb[i]).abs());
            worst = worst.max((gf[i] + gb[i]).abs());
        }
        // slip wall annihilates the mass flux
        let w = slipwall_flux(&ul, n);
        worst = worst.max(w[0].abs().max(w[3].abs()));
        worst = worst.max((w[1] - pressure(&ul) * n[0]).abs());
    }
    let (p_star, _) = riemann_star(1.0, 0.0, 1.0, 0.125, 0.0, 0.1).unwrap();
    let sod_err = (p_star - 0.30313017805064682).abs();
    let passed = worst < 1e-12 && sod_err < 1e-10;
    SuiteResult {
        name: "fluxes",
        passed,
        detail: format!("worst consistency/antisymmetry defect {worst:.2e} (tol 1e-12), Sod star pressure error {sod_err:.2e} (tol 1e-10)"),
    }
}

/// Gradient and Jacobian checks on the scalar cases at intermediate iterates.
pub fn verify_gradients(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_grad = 0.0f64;
    let mut worst_dir = 0.0f64;
    for name in ["advection", "burgers-straight", "burgers-accelerating"] {
        let mut case = cases::by_name(name).unwrap();
        case.max_iterations = 4; // a random-feeling but deterministic intermediate iterate
        let sol = solve(&case, &SqpConfig::default(), None).expect("short solve");
        let grid = build_grid(case.nx, case.ny, case.bounds).unwrap();
        let disc = Discretization {
            grid: &grid,
            law: &*case.law,
            phi_b: None,
            p: sol.p,
            edge_breaks: &case.boundary_data_breaks,
        };
        let geom = build_geometry(&disc, &sol.spline).unwrap();
        let u = sol.u.clone();
        let big_r = assemble_enriched(&disc, &geom, &u).unwrap();
        let j_u = jacobian_u(&disc, &geom, &u).unwrap();
        let j_phi = jacobian_phi(&disc, &sol.spline, &geom, &u).unwrap();
        let n_u = geom.layout.dim();
        let n_s = sol.spline.num_dofs();
        let mut j_full = DMatrix::zeros(big_r.len(), n_u + n_s);
        j_full.view_mut((0, 0), (big_r.len(), n_u)).copy_from(&j_u);
        j_full
            .view_mut((0, n_u), (big_r.len(), n_s))
            .copy_from(&j_phi);
        let (_, grad) = objective(&big_r, &j_full);
        let scale = grad.amax();
        // central FD of f in u and phi coordinates
        for _ in 0..6 {
            let k = rng.gen_range(0..n_u + n_s);
            let fd = if k < n_u {
                let h = 1e-6 * u[k].abs().max(1.0);
                let mut up = u.clone();
                up[k] += h;
                let mut um = u.clone();
                um[k] -= h;
                let fp = 0.5 * assemble_enriched(&disc, &geom, &up).unwrap().norm_squared();
                let fm = 0.5 * assemble_enriched(&disc, &geom, &um).unwrap().norm_squared();
                (fp - fm) / (2.0 * h)
            } else {
                let dof = k - n_u;
                let h = 1e-6;
                let gp = build_geometry(&disc, &sol.spline.perturbed(dof, h)).unwrap();
                let gm = build_geometry(&disc, &sol.spline.perturbed(dof, -h)).unwrap();
                if !gp.layout.same_blocks(&geom.layout) || !gm.layout.same_blocks(&geom.layout) {
                    continue;
                }
                let fp = 0.5 * assemble_enriched(&disc, &gp, &u).unwrap().norm_squared();
                let fm = 0.5 * assemble_enriched(&disc, &gm, &u).unwrap().norm_squared();
                (fp - fm) / (2.0 * h)
            };
            // components below the FD noise floor are indistinguishable
            // from zero and carry no certifiable relative error
            if grad[k].abs().max(fd.abs()) < 1e-6 * scale.max(1e-12) {
                continue;
            }
            let denom = grad[k].abs().max(fd.abs());
            worst_grad = worst_grad.max((grad[k] - fd).abs() / denom);
        }
        // directional constraint-Jacobian products against finite differences
        let rows = constraint_rows(&geom);
        let v = DVector::from_fn(n_u, |i, _| {
            rng.gen_range(-1.0..1.0) * (1.0 + (i % 3) as f64)
        });
        let jv = {
            let mut out = DVector::zeros(rows.len());
            let full = &j_u * &v;
            for (i, &r) in rows.iter().enumerate() {
                out[i] = full[r];
            }
            out
        };
        let h = 1e-6;
        let rp = {
            let big = assemble_enriched(&disc, &geom, &(&u + h * &v)).unwrap();
            extract_constraint(&geom, &big)
        };
        let rm = {
            let big = assemble_enriched(&disc, &geom, &(&u - h * &v)).unwrap();
            extract_constraint(&geom, &big)
        };
        let fd = (rp - rm) / (2.0 * h);
        let denom = jv.amax().max(1e-10);
        worst_dir = worst_dir.max((&jv - &fd).amax() / denom);
    }
    let passed = worst_grad < 1e-4 && worst_dir < 1e-5;
    SuiteResult {
        name: "gradients",
        passed,
        detail: format!("grad f vs FD {worst_grad:.2e} (tol 1e-4), directional J_r v vs FD {worst_dir:.2e} (tol 1e-5)"),
    }
}

/// KKT solver against closed forms and the constraint-row identity.
pub fn verify_kkt(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // hand-solved toy: B = diag(2, 4), J = [1 1], grad = (1 -2), r = 1/2
    let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
    let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let grad = DVector::from_vec(vec![1.0, -2.0]);
    let r = DVector::from_vec(vec![0.5]);
    let (dz, lambda) = match kkt_solve(&b, &j, &grad, &r) {
        Ok(x) => x,
        Err(e) => {
            return SuiteResult {
                name: "kkt",
                passed: false,
                detail: format!("toy solve failed: {e}"),
            }
        }
    };
    let toy_err = (dz[0] + 5.0 / 6.0)
        .abs()
        .max((dz[1] - 1.0 / 3.0).abs())
        .max((lambda[0] - 2.0 / 3.0).abs());
    // random SPD systems: the second block row enforces J dz = -r
    let mut worst_feas = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(3..10);
        let m = rng.gen_range(1..n);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let j = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let grad = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        match kkt_solve(&b, &j, &grad, &r) {
            Ok((dz, _)) => {
                worst_feas = worst_feas.max((&j * &dz + &r).amax());
            }
            Err(_) => worst_feas = f64::INFINITY,
        }
    }
    let passed = toy_err < 1e-12 && worst_feas < 1e-10;
    SuiteResult {
        name: "kkt",
        passed,
        detail: format!("toy problem error {toy_err:.2e} (tol 1e-12), constraint feasibility {worst_feas:.2e} (tol 1e-10)"),
    }
}

/// Agglomeration and basis-change identities on random fields.
pub fn verify_agglomeration(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = build_grid(10, 10, Rect::new(0.0, 1.0, 0.0, 1.0)).unwrap();
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let x = 0.205 + 0.05 * (trial % 5) as f64;
        let knots = grid.vertex_ys();
        let spline = SplineLevelSet::fit(SplineKind::Linear, &knots, |_| x, |_| 0.0).unwrap();
        let topo = crate::cutcell::classify(&grid, &spline, None, 4).unwrap();
        let map = build_agglomeration(&topo, &grid, &[Subdomain::A, Subdomain::B], 0.45).unwrap();
        let layout = crate::xdgspace::XdgLayout::build(&topo, &[Subdomain::A, Subdomain::B], 1, 1);
        let op = AggOperator::build(&map, &layout, &grid);
        let v = DVector::from_fn(op.agg.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let u = op.prolong(&v);
        worst = worst.max((op.restrict_state(&u) - &v).amax());
        worst = worst.max((op.project_state(&u) - &u).amax());
    }
    let passed = worst < 1e-11;
    SuiteResult {
        name: "agglomeration",
        passed,
        detail: format!("restrict/prolong round-trip defect {worst:.2e} (tol 1e-11)"),
    }
}

/// Run the requested suites (all by default) and print a pass/fail table.
pub fn verify(suite: Option<&str>, seed: u64) -> i32 {
    let all: Vec<(&str, fn(u64) -> SuiteResult)> = vec![
        ("quadrature", verify_quadrature),
        ("fluxes", verify_fluxes),
        ("gradients", verify_gradients),
        ("kkt", verify_kkt),
        ("agglomeration", verify_agglomeration),
    ];
    let selected: Vec<_> = match suite {
        None => all,
        Some(name) => {
            let filtered: Vec<_> = all.into_iter().filter(|(n, _)| *n == name).collect();
            if filtered.is_empty() {
                eprintln!("unknown suite '{name}'; available: quadrature, fluxes, gradients, kkt, agglomeration");
                return 2;
            }
            filtered
        }
    };
    let mut all_passed = true;
    println!("{:<15} {:<6} detail", "suite", "result");
    for (_, f) in selected {
        let res = f(seed);
        all_passed &= res.passed;
        println!(
            "{:<15} {:<6} {}",
            res.name,
            if res.passed { "pass" } else { "FAIL" },
            res.detail
        );
    }
    if all_passed {
        0
    } else {
        1
    }
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Parser)]
#[command(
    name = "xshock",
    about = "Implicit XDG shock tracking on Cartesian cut-cell grids",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a shock-tracking case and write trace, field and summary files.
    Run(RunArgs),
    /// Run the built-in property suites and print a pass/fail table.
    Verify {
        /// Restrict to one suite (quadrature, fluxes, gradients, kkt, agglomeration).
        #[arg(long)]
        suite: Option<String>,
        /// Seed for the randomized properties.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Case name: advection, burgers-straight, burgers-accelerating, wedge.
    #[arg(long)]
    case: Option<String>,
    /// Plain-text key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Final polynomial degree override.
    #[arg(long)]
    pmax: Option<usize>,
    /// Agglomeration volume-fraction threshold override.
    #[arg(long)]
    agg: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Iteration budget override.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Field snapshot resolution as a multiple of the grid.
    #[arg(long)]
    sample_factor: Option<usize>,
    /// Snapshot cadence in iterations (0 disables snapshots).
    #[arg(long)]
    snapshot_every: Option<usize>,
}

/// Entry point used by the `xshock` binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => {
            let mut config = RunConfig::default();
            if let Some(path) = &args.config {
                let text = match fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("cannot read config {path:?}: {e}");
                        return 2;
                    }
                };
                if let Err(e) = parse_config(&text, &mut config) {
                    eprintln!("config error: {e}");
                    return 2;
                }
            }
            if let Some(c) = args.case {
                config.case = c;
            }
            if config.case.is_empty() {
                eprintln!("no case given; use --case or a config file");
                return 2;
            }
            config.nx = args.nx.or(config.nx);
            config.ny = args.ny.or(config.ny);
            config.p_max = args.pmax.or(config.p_max);
            config.agg_threshold = args.agg.or(config.agg_threshold);
            config.max_iterations = args.max_iterations.or(config.max_iterations);
            if let Some(o) = args.out {
                config.out_dir = o;
            }
            if let Some(s) = args.seed {
                config.seed = s;
            }
            if let Some(f) = args.sample_factor {
                config.sample_factor = f;
            }
            if let Some(s) = args.snapshot_every {
                config.snapshot_every = s;
            }
            run(&config)
        }
        Command::Verify { suite, seed } => verify(suite.as_deref(), seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_roundtrip() {
        let mut c = RunConfig::default();
        parse_config(
            "case = wedge\nnx = 30\nny=20\nagg = 0.35\nout = /tmp/w\nseed = 7\n# comment\n",
            &mut c,
        )
        .unwrap();
        assert_eq!(c.case, "wedge");
        assert_eq!(c.nx, Some(30));
        assert_eq!(c.ny, Some(20));
        assert_eq!(c.agg_threshold, Some(0.35));
        assert_eq!(c.out_dir, PathBuf::from("/tmp/w"));
        assert_eq!(c.seed, 7);
        assert!(parse_config("unknown = 3\n", &mut c).is_err());
        assert!(parse_config("nx\n", &mut c).is_err());
    }

    #[test]
    fn unknown_case_is_usage_error() {
        let config = RunConfig {
            case: "bow-shock".into(),
            ..Default::default()
        };
        assert_eq!(run(&config), 2);
        assert_eq!(main_with_args(["xshock", "run", "--case", "nope"]), 2);
    }

    #[test]
    fn kkt_suite_passes() {
        assert!(verify_kkt(0).passed);
    }

    #[test]
    fn unknown_suite_is_usage_error() {
        assert_eq!(verify(Some("nope"), 0), 2);
    }

    #[test]
    fn shock_angle_of_line() {
        let knots: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let th = 39.31f64.to_radians();
        let s = SplineLevelSet::fit(SplineKind::Linear, &knots, |y| 0.5 + y / th.tan(), |_| 0.0)
            .unwrap();
        let angle = shock_angle_deg(&s, Rect::new(0.0, 1.5, 0.0, 1.0));
        assert!((angle - 39.31).abs() < 1e-6, "angle {angle}");
    }
}
