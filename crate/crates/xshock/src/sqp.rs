//! The shock-tracking SQP optimizer.
//!
//! Each outer iteration assembles residuals and sensitivities on the
//! non-agglomerated cut-cell mesh, folds them onto the agglomerated basis,
//! solves the saddle-point system with the Levenberg-Marquardt Hessian
//! approximation
//!
//! ```text
//!   [ B(z, gamma)  J_r^T ] [ dz      ]   [ -grad f ]
//!   [ J_r          0     ] [ lambda' ] = [ -r      ]
//! ```
//!
//! and globalizes the step with an l1-merit line search. Trial interfaces
//! must obey the movement rules (newly cut cells need a previously cut
//! neighbor; newborn cut-cells inherit the solution of their largest
//! same-sub-domain neighbor). The regularization gamma adapts to the size of
//! the level-set step, termination watches the residual-norm skylines of both
//! residuals, and on stagnation the polynomial degree is raised. Oscillatory
//! cells detected by a modal decay sensor are reset to patch averages.

use crate::cases::{CaseDefinition, InitStrategy};
use crate::cutcell::{build_agglomeration, CutError, CutTopology};
use crate::levelset::{HeightFunction, SplineLevelSet};
use crate::mesh::{build_grid, BackgroundGrid};
use crate::physics::enthalpy_error;
use crate::residual::{
    assemble_enriched, build_geometry, constraint_rows, extract_constraint, jacobian_phi,
    jacobian_u, objective, Discretization, Geometry, ResidualError,
};
use crate::xdgspace::{extrapolate_newborn, inject, project, AggOperator, SpaceError, XdgLayout};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SqpError {
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("KKT system is singular or ill-conditioned (relative residual {0:.2e})")]
    IllConditioned(f64),
    #[error("initial state construction failed: {0}")]
    InitFailure(String),
}

/// All solver constants. Defaults are the working set used by every case.
#[derive(Clone, Debug)]
pub struct SqpConfig {
    pub gamma0: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Multiplicative gamma adaptation factor kappa.
    pub kappa: f64,
    /// Shrink gamma when ||dphi|| < sigma_small * length_scale. Matching the
    /// displayed case order, the shrink clause wins on overlap, so the
    /// default bands leave no dead zone: regularization decays whenever the
    /// level-set step stays below the length scale fraction.
    pub sigma_small: f64,
    /// Grow gamma when ||dphi|| > sigma_large * length_scale.
    pub sigma_large: f64,
    pub length_scale: f64,
    /// Line search: sufficient-decrease relaxation, backtracking factor,
    /// smallest step.
    pub beta: f64,
    pub tau: f64,
    pub alpha_min: f64,
    /// Termination window and tolerances.
    pub n_term: usize,
    pub term_abs_tol: f64,
    pub term_rel_tol: f64,
    pub arf_tol: f64,
    /// Looser reduction-factor tolerance for the degree-raise decision:
    /// average skyline gains below this rate count as stagnation.
    pub raise_arf_tol: f64,
    /// Minimum iterations per degree before the degree may be raised.
    pub min_iters_per_p: Vec<usize>,
    /// Re-initialization thresholds.
    pub reinit_eps1: f64,
    pub reinit_eps2: f64,
    pub reinit_eps3: f64,
    pub reinit_eps4: f64,
    /// Re-initialization is disabled after this many iterations per degree.
    pub reinit_max_iter: usize,
    /// Line-search trial count that counts as excessive.
    pub excessive_ls: usize,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            gamma0: 1.0,
            gamma_min: 1e-10,
            gamma_max: 1e10,
            kappa: 1.5,
            sigma_small: 1e-1,
            sigma_large: 1e-1,
            length_scale: 1.0,
            beta: 1e-4,
            tau: 0.5,
            alpha_min: 1e-8,
            n_term: 8,
            term_abs_tol: 1e-5,
            term_rel_tol: 1e-5,
            arf_tol: 1.001,
            raise_arf_tol: 1.01,
            min_iters_per_p: vec![30, 30, 10, 10],
            reinit_eps1: -0.2,
            reinit_eps2: 1e-2,
            reinit_eps3: 1e-2,
            reinit_eps4: 1e-2,
            reinit_max_iter: 30,
            excessive_ls: 5,
        }
    }
}

/// Per-iteration record of the optimization history.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub iter: usize,
    pub p: usize,
    pub r_norm: f64,
    pub big_r_norm: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub reinit: bool,
    pub enthalpy_err: Option<f64>,
    /// Sufficient-decrease condition held for the accepted step.
    pub merit_ok: bool,
    pub ls_trials: usize,
}

/// Result of a solve: final iterate plus the full trace.
pub struct SqpSolution {
    pub converged: bool,
    pub p: usize,
    pub spline: SplineLevelSet,
    pub u: DVector<f64>,
    pub trace: Vec<TraceRow>,
    pub final_r_norm: f64,
    pub final_big_r_norm: f64,
}

/// Solve the saddle-point system by dense LU with partial pivoting. One step
/// of iterative refinement; errors when the relative solve residual stays
/// above 1e-10 so the caller can increase gamma.
pub fn kkt_solve(
    b: &DMatrix<f64>,
    j_r: &DMatrix<f64>,
    grad_f: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), SqpError> {
    let n_z = b.nrows();
    let n_c = j_r.nrows();
    let n = n_z + n_c;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (n_z, n_z)).copy_from(b);
    k.view_mut((0, n_z), (n_z, n_c)).copy_from(&j_r.transpose());
    k.view_mut((n_z, 0), (n_c, n_z)).copy_from(j_r);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, n_z).copy_from(&(-grad_f));
    rhs.rows_mut(n_z, n_c).copy_from(&(-r));
    let lu = k.clone().lu();
    let mut sol = match lu.solve(&rhs) {
        Some(s) => s,
        None => return Err(SqpError::IllConditioned(f64::INFINITY)),
    };
    let scale = rhs.norm().max(1.0);
    let mut res = &rhs - &k * &sol;
    if res.norm() / scale > 1e-12 {
        if let Some(corr) = lu.solve(&res) {
            sol += corr;
            res = &rhs - &k * &sol;
        }
    }
    let rel = res.norm() / scale;
    if !rel.is_finite() || rel > 1e-10 {
        return Err(SqpError::IllConditioned(rel));
    }
    Ok((
        sol.rows(0, n_z).into_owned(),
        sol.rows(n_z, n_c).into_owned(),
    ))
}

/// Clamped multiplicative update of the regularization parameter.
pub fn update_gamma(gamma: f64, dphi_norm: f64, cfg: &SqpConfig) -> f64 {
    let hat = if dphi_norm < cfg.sigma_small * cfg.length_scale {
        gamma / cfg.kappa
    } else if dphi_norm > cfg.sigma_large * cfg.length_scale {
        gamma * cfg.kappa
    } else {
        gamma
    };
    hat.clamp(cfg.gamma_min, cfg.gamma_max)
}

/// Movement rule 1: a cell may only become cut if it was cut before or has an
/// edge neighbor that was cut before.
pub fn interface_rules(old_cut: &[bool], new_topo: &CutTopology, grid: &BackgroundGrid) -> bool {
    for (j, cell) in new_topo.cells.iter().enumerate() {
        if cell.cut_by_s && !old_cut[j] {
            let ok = grid.neighbors(j).unwrap().iter().any(|&n| old_cut[n]);
            if !ok {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    RaiseP,
    Terminate,
}

/// Residual-norm skylines and averaged reduction factors for the current
/// degree; reset whenever the degree changes.
#[derive(Clone, Debug, Default)]
pub struct TerminationState {
    sky_r: Vec<f64>,
    sky_big: Vec<f64>,
    u_norms: Vec<f64>,
}

impl TerminationState {
    pub fn reset(&mut self) {
        self.sky_r.clear();
        self.sky_big.clear();
        self.u_norms.clear();
    }

    pub fn push(&mut self, r_norm: f64, big_norm: f64, u_norm: f64) {
        let min_r = self.sky_r.last().map_or(r_norm, |&m| m.min(r_norm));
        let min_big = self.sky_big.last().map_or(big_norm, |&m| m.min(big_norm));
        self.sky_r.push(min_r);
        self.sky_big.push(min_big);
        self.u_norms.push(u_norm);
    }

    fn arf(sky: &[f64], n_term: usize) -> f64 {
        let n = sky.len();
        let mut sum = 0.0;
        for k in (n - n_term)..n {
            let denom = if k == n - 1 { sky[k] } else { sky[k + 1] };
            sum += sky[k] / denom.max(1e-100);
        }
        sum / n_term as f64
    }

    /// Evaluate the three-clause termination test for both residuals.
    pub fn check(&self, cfg: &SqpConfig, p: usize, p_max: usize, iters_at_p: usize) -> Decision {
        let n = self.sky_r.len();
        if n < cfg.n_term {
            return Decision::Continue;
        }
        let arf_r = Self::arf(&self.sky_r, cfg.n_term);
        let arf_big = Self::arf(&self.sky_big, cfg.n_term);
        let flat = arf_r < cfg.arf_tol && arf_big < cfg.arf_tol;
        let stalled = arf_r < cfg.raise_arf_tol && arf_big < cfg.raise_arf_tol;
        let tol = cfg.term_abs_tol + cfg.term_rel_tol * self.u_norms[n - 1];
        let small = self.sky_r[n - 1] <= tol && self.sky_big[n - 1] <= tol;
        let min_iters = cfg.min_iters_per_p.get(p).copied().unwrap_or(10);
        if flat && small {
            if p == p_max {
                Decision::Terminate
            } else if iters_at_p >= min_iters {
                Decision::RaiseP
            } else {
                Decision::Continue
            }
        } else if stalled && p < p_max && iters_at_p >= min_iters {
            Decision::RaiseP
        } else {
            Decision::Continue
        }
    }

    /// Whether the current skylines satisfy the absolute residual clause.
    /// Used when the line search cannot improve the iterate any further: a
    /// small residual at a dead line search is a converged solve.
    pub fn small(&self, cfg: &SqpConfig) -> bool {
        match self.sky_r.len() {
            0 => false,
            n => {
                let tol = cfg.term_abs_tol + cfg.term_rel_tol * self.u_norms[n - 1];
                self.sky_r[n - 1] <= tol && self.sky_big[n - 1] <= tol
            }
        }
    }
}

/// Modal-decay sensor: log10 of the relative energy of the top-degree modes
/// of the first solution component, measured in the cut-cell L2 norm.
fn shock_sensor(
    u: &DVector<f64>,
    layout: &XdgLayout,
    geom: &Geometry,
    grid: &BackgroundGrid,
    block: usize,
) -> Option<f64> {
    let np = layout.n_p;
    let p = layout.p;
    debug_assert!(p > 0);
    let np_low = crate::xdgspace::basis_size(p - 1);
    let (cell, sd) = layout.blocks[block];
    let part = geom.topo.part(cell, sd)?;
    let rect = grid.cell(cell);
    let mut mass = DMatrix::zeros(np, np);
    let mut vals = vec![0.0; np];
    for (node, &w) in part.rule.nodes.iter().zip(&part.rule.weights) {
        crate::xdgspace::eval_basis(rect, p, node[0], node[1], &mut vals);
        for a in 0..np {
            for b in 0..np {
                mass[(a, b)] += w * vals[a] * vals[b];
            }
        }
    }
    let c = DVector::from_fn(np, |a, _| u[layout.index(block, 0, a)]);
    let norm2 = (c.transpose() * &mass * &c)[(0, 0)];
    if norm2 <= 0.0 {
        return None;
    }
    // orthogonal projection onto the lower-degree space in the cut metric
    let m_low = mass.view((0, 0), (np_low, np_low)).into_owned();
    let b_low = (&mass * &c).rows(0, np_low).into_owned();
    let c_low = m_low.lu().solve(&b_low)?;
    let diff2 = (norm2 - (b_low.transpose() * &c_low)[(0, 0)]).max(0.0);
    Some(0.5 * (diff2 / norm2).max(1e-300).log10())
}

/// Mean jump of the first component across the shared edge fragments of two
/// same-sub-domain cut-cells.
fn average_jump(
    u: &DVector<f64>,
    layout: &XdgLayout,
    geom: &Geometry,
    grid: &BackgroundGrid,
    a: usize,
    b: usize,
) -> Option<f64> {
    let (cell_a, sd) = layout.blocks[a];
    let (cell_b, sd_b) = layout.blocks[b];
    debug_assert_eq!(sd, sd_b);
    let shared: Vec<usize> = grid
        .cell_edges(cell_a)
        .iter()
        .filter(|e| grid.cell_edges(cell_b).contains(e))
        .copied()
        .collect();
    if shared.is_empty() {
        return None;
    }
    let np = layout.n_p;
    let mut vals = vec![0.0; np];
    let mut len = 0.0;
    let mut jump = 0.0;
    for frag in &geom.topo.edge_fragments {
        if frag.subdomain != sd || !shared.contains(&frag.edge) {
            continue;
        }
        for (node, &w) in frag.nodes.iter().zip(&frag.weights) {
            crate::xdgspace::eval_basis(grid.cell(cell_a), layout.p, node[0], node[1], &mut vals);
            let va: f64 = (0..np).map(|k| u[layout.index(a, 0, k)] * vals[k]).sum();
            crate::xdgspace::eval_basis(grid.cell(cell_b), layout.p, node[0], node[1], &mut vals);
            let vb: f64 = (0..np).map(|k| u[layout.index(b, 0, k)] * vals[k]).sum();
            len += w;
            jump += w * (va - vb);
        }
    }
    if len > 0.0 {
        Some(jump / len)
    } else {
        None
    }
}

/// Reset oscillatory cut-cells to patch-average constants. Returns the new
/// coefficients and the number of re-initialized cells.
pub fn reinitialize(
    u: &DVector<f64>,
    layout: &XdgLayout,
    geom: &Geometry,
    grid: &BackgroundGrid,
    cfg: &SqpConfig,
    is_el: bool,
) -> (DVector<f64>, usize) {
    let n_blocks = layout.blocks.len();
    let sensors: Vec<Option<f64>> = (0..n_blocks)
        .map(|b| shock_sensor(u, layout, geom, grid, b))
        .collect();
    let s_max = sensors
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let mut osc = vec![false; n_blocks];
    for b in 0..n_blocks {
        if let Some(s) = sensors[b] {
            let flag = if is_el {
                s > cfg.reinit_eps2 * s_max
            } else {
                s > cfg.reinit_eps1
            };
            osc[b] = flag;
        }
    }
    // face neighbors (same sub-domain) are re-initialized too
    let neighbors_of = |b: usize| -> Vec<usize> {
        let (cell, sd) = layout.blocks[b];
        grid.neighbors(cell)
            .unwrap()
            .into_iter()
            .filter_map(|n| layout.block_index(n, sd))
            .collect()
    };
    let mut flagged = osc.clone();
    for b in 0..n_blocks {
        if osc[b] {
            for n in neighbors_of(b) {
                flagged[n] = true;
            }
        }
    }
    let mut out = u.clone();
    let mut count = 0;
    for b in 0..n_blocks {
        if !flagged[b] {
            continue;
        }
        count += 1;
        // averaging patch: same-side neighbors with small mean jump
        let mut patch = vec![b];
        for n in neighbors_of(b) {
            if let Some(aj) = average_jump(u, layout, geom, grid, b, n) {
                if aj.abs() <= cfg.reinit_eps3 {
                    patch.push(n);
                }
            }
        }
        let m = layout.m;
        let np = layout.n_p;
        let mut vals = vec![0.0; np];
        for c in 0..m {
            let mut mass = 0.0;
            let mut integral = 0.0;
            for &pb in &patch {
                let (cell, sd) = layout.blocks[pb];
                let part = geom.topo.part(cell, sd).unwrap();
                let rect = grid.cell(cell);
                for (node, &w) in part.rule.nodes.iter().zip(&part.rule.weights) {
                    crate::xdgspace::eval_basis(rect, layout.p, node[0], node[1], &mut vals);
                    let v: f64 = (0..np).map(|k| u[layout.index(pb, c, k)] * vals[k]).sum();
                    mass += w;
                    integral += w * v;
                }
            }
            let avg = integral / mass;
            let (cell, _) = layout.blocks[b];
            // constant avg has coefficient avg * sqrt(|K|) on the first mode
            out[layout.index(b, c, 0)] = avg * grid.cell(cell).area().sqrt();
            for k in 1..np {
                out[layout.index(b, c, k)] = 0.0;
            }
        }
    }
    (out, count)
}

/// Per-iteration view handed to the snapshot hook.
pub struct IterateView<'a> {
    pub iter: usize,
    pub p: usize,
    pub grid: &'a BackgroundGrid,
    pub spline: &'a SplineLevelSet,
    pub u: &'a DVector<f64>,
    pub geom: &'a Geometry,
}

struct Folded {
    op: AggOperator,
    op_star: AggOperator,
}

/// Agglomeration operators of the current iterate (steps 2-3 of the per-
/// iteration procedure).
fn build_ops(
    disc: &Discretization,
    geom: &Geometry,
    grid: &BackgroundGrid,
    threshold: f64,
) -> Result<Folded, SqpError> {
    let map = build_agglomeration(&geom.topo, grid, disc.law.active_subdomains(), threshold)?;
    let op = AggOperator::build(&map, &geom.layout, grid);
    let op_star = AggOperator::build(&map, &geom.layout_star, grid);
    Ok(Folded { op, op_star })
}

fn build_initial_state(
    case: &CaseDefinition,
    disc: &Discretization,
    geom: &Geometry,
    grid: &BackgroundGrid,
    phi0: &SplineLevelSet,
) -> Result<DVector<f64>, SqpError> {
    let project_exact = |field: &dyn Fn(f64, f64, &mut [f64])| {
        project(
            &|x, y, _sd, out| field(x, y, out),
            &geom.topo,
            &geom.layout,
            grid,
        )
    };
    match case.init_strategy {
        InitStrategy::ProjectExact => {
            let f = case
                .exact_field
                .as_ref()
                .ok_or_else(|| SqpError::InitFailure("case has no exact field".into()))?;
            Ok(project_exact(&|x, y, out| f(x, y, out))?)
        }
        InitStrategy::OneNewtonStep => {
            let f = case
                .exact_field
                .as_ref()
                .ok_or_else(|| SqpError::InitFailure("case has no exact field".into()))?;
            let u0 = project_exact(&|x, y, out| f(x, y, out))?;
            let big_r = assemble_enriched(disc, geom, &u0)?;
            let r = extract_constraint(geom, &big_r);
            let j_big = jacobian_u(disc, geom, &u0)?;
            let rows = constraint_rows(geom);
            let n = geom.layout.dim();
            let mut j_r = DMatrix::zeros(n, n);
            for (i, &row) in rows.iter().enumerate() {
                for c in 0..n {
                    j_r[(i, c)] = j_big[(row, c)];
                }
            }
            let du = j_r
                .lu()
                .solve(&r)
                .ok_or_else(|| SqpError::InitFailure("singular DG Jacobian".into()))?;
            Ok(u0 - du)
        }
        InitStrategy::ProjectExactOnInitialLevelSet => {
            let (left, right) = case
                .side_fields
                .as_ref()
                .ok_or_else(|| SqpError::InitFailure("case has no side fields".into()))?;
            Ok(project(
                &|x, y, sd, out| {
                    // side selected by the initial interface, not the true one
                    let _ = sd;
                    if x <= phi0.height(y) {
                        left(x, y, out)
                    } else {
                        right(x, y, out)
                    }
                },
                &geom.topo,
                &geom.layout,
                grid,
            )?)
        }
    }
}

/// Run the full shock-tracking loop on a case.
pub fn solve(
    case: &CaseDefinition,
    cfg: &SqpConfig,
    mut hook: Option<&mut dyn FnMut(&IterateView)>,
) -> Result<SqpSolution, SqpError> {
    let grid = build_grid(case.nx, case.ny, case.bounds).expect("case grid");
    let knots = grid.vertex_ys();
    let mut spline = SplineLevelSet::fit(
        case.spline_kind,
        &knots,
        |y| (case.initial_interface)(y),
        |y| (case.initial_interface_deriv)(y),
    )
    .expect("initial spline");
    let law = &*case.law;
    let mut p = 0usize;
    let mut disc = Discretization {
        grid: &grid,
        law,
        phi_b: case.phi_b.as_ref().map(|b| b as &dyn HeightFunction),
        p,
        edge_breaks: &case.boundary_data_breaks,
    };
    let mut geom = build_geometry(&disc, &spline)?;
    let mut u = build_initial_state(case, &disc, &geom, &grid, &spline)?;
    let n_s = spline.num_dofs();

    let mut gamma = cfg.gamma0;
    let mut term = TerminationState::default();
    let mut iters_at_p = 0usize;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut converged = false;
    let mut best: Option<(f64, f64, SplineLevelSet, DVector<f64>, usize)> = None;
    let mut reinit_after_ls_failure = false;

    let mut iter = 0usize;
    while iter < case.max_iterations {
        let mut raise_now = false;
        let folded = build_ops(&disc, &geom, &grid, case.agg_threshold)?;
        u = folded.op.project_state(&u);
        // residuals at the projected iterate
        let big_r = assemble_enriched(&disc, &geom, &u)?;
        let r_full = extract_constraint(&geom, &big_r);
        let big_r_agg = folded.op_star.restrict_dual(&big_r);
        let r_agg = folded.op.restrict_dual(&r_full);
        let u_agg = folded.op.restrict_state(&u);
        let r_norm = r_agg.norm();
        let big_norm = big_r_agg.norm();
        let h_err = case
            .enthalpy_ref
            .and_then(|h| enthalpy_error(&u, &geom.layout, &geom.topo, &grid, h).ok());
        if let Some(h) = hook.as_deref_mut() {
            h(&IterateView {
                iter,
                p,
                grid: &grid,
                spline: &spline,
                u: &u,
                geom: &geom,
            });
        }
        if best.as_ref().map_or(true, |(b, _, _, _, _)| r_norm < *b) {
            best = Some((r_norm, big_norm, spline.clone(), u.clone(), p));
        }
        term.push(r_norm, big_norm, u_agg.norm());
        match term.check(cfg, p, case.p_max, iters_at_p) {
            Decision::Terminate => {
                trace.push(TraceRow {
                    iter,
                    p,
                    r_norm,
                    big_r_norm: big_norm,
                    alpha: 0.0,
                    gamma,
                    reinit: false,
                    enthalpy_err: h_err,
                    merit_ok: true,
                    ls_trials: 0,
                });
                converged = true;
                break;
            }
            Decision::RaiseP => {
                trace.push(TraceRow {
                    iter,
                    p,
                    r_norm,
                    big_r_norm: big_norm,
                    alpha: 0.0,
                    gamma,
                    reinit: false,
                    enthalpy_err: h_err,
                    merit_ok: true,
                    ls_trials: 0,
                });
                raise_now = true;
            }
            Decision::Continue => {}
        }
        if !raise_now {
            // sensitivities on the non-agglomerated mesh, folded afterwards
            let j_u = jacobian_u(&disc, &geom, &u)?;
            let j_phi = jacobian_phi(&disc, &spline, &geom, &u)?;
            let n_rows = geom.layout_star.dim();
            let n_u_full = geom.layout.dim();
            let mut j_full = DMatrix::zeros(n_rows, n_u_full + n_s);
            j_full.view_mut((0, 0), (n_rows, n_u_full)).copy_from(&j_u);
            j_full
                .view_mut((0, n_u_full), (n_rows, n_s))
                .copy_from(&j_phi);
            let j_agg = AggOperator::fold_matrix(&folded.op_star, &folded.op, &j_full, n_s);
            let rows = constraint_rows(&geom);
            let mut j_r_full = DMatrix::zeros(rows.len(), n_u_full + n_s);
            for (i, &row) in rows.iter().enumerate() {
                j_r_full.row_mut(i).copy_from(&j_full.row(row));
            }
            let j_r_agg = AggOperator::fold_matrix(&folded.op, &folded.op, &j_r_full, n_s);
            let (f0, grad) = objective(&big_r_agg, &j_agg);

            let n_u_agg = folded.op.agg.dim();
            let n_z = n_u_agg + n_s;
            // Levenberg-Marquardt Hessian approximation with phi-regularization
            let b_base = j_agg.transpose() * &j_agg;
            let (dz, lambda) = {
                let mut attempt = 0;
                loop {
                    let mut b = b_base.clone();
                    for k in n_u_agg..n_z {
                        b[(k, k)] += gamma;
                    }
                    match kkt_solve(&b, &j_r_agg, &grad, &r_agg) {
                        Ok(sol) => break sol,
                        Err(SqpError::IllConditioned(_)) if attempt < 6 => {
                            attempt += 1;
                            gamma = (gamma * 10.0).clamp(cfg.gamma_min.max(1e-8), cfg.gamma_max);
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            let du_agg = dz.rows(0, n_u_agg).into_owned();
            let dphi = dz.rows(n_u_agg, n_s).into_owned();
            let mu = 2.0 * lambda.amax();
            let r_l1 = r_agg.iter().map(|v| v.abs()).sum::<f64>();
            let theta0 = f0 + mu * r_l1;
            let dtheta0 = grad.dot(&dz) - mu * r_l1;

            // backtracking line search with interface movement rules
            let old_cut = geom.topo.cut_by_s_flags();
            let mut alpha = 1.0;
            let mut trials = 0usize;
            let mut accepted: Option<(SplineLevelSet, Geometry, DVector<f64>, f64, f64, f64)> =
                None;
            while alpha >= cfg.alpha_min {
                trials += 1;
                let mut dofs = spline.dofs();
                for k in 0..n_s {
                    dofs[k] += alpha * dphi[k];
                }
                let mut spline_t = spline.clone();
                spline_t.set_dofs(&dofs).unwrap();
                type Trial = (SplineLevelSet, Geometry, DVector<f64>, f64, f64, f64);
                let trial = (|| -> Result<Option<Trial>, SqpError> {
                    let geom_t = match build_geometry(&disc, &spline_t) {
                        Ok(g) => g,
                        Err(_) => return Ok(None),
                    };
                    if !interface_rules(&old_cut, &geom_t.topo, &grid) {
                        return Ok(None);
                    }
                    let u_base = folded.op.prolong(&(&u_agg + alpha * &du_agg));
                    let u_t = match extrapolate_newborn(
                        &u_base,
                        &geom.layout,
                        &geom_t.topo,
                        &geom_t.layout,
                        &grid,
                    ) {
                        Ok(u_t) => u_t,
                        Err(_) => return Ok(None),
                    };
                    // trial residuals, folded through the iteration's frozen
                    // agglomeration basis so the merit is continuous at
                    // alpha = 0
                    let big_r_t = match assemble_enriched(&disc, &geom_t, &u_t) {
                        Ok(r) => r,
                        Err(ResidualError::Physics { .. }) => return Ok(None),
                        Err(e) => return Err(e.into()),
                    };
                    let r_t_full = extract_constraint(&geom_t, &big_r_t);
                    let big_r_t_agg = folded
                        .op_star
                        .restrict_dual_from(&big_r_t, &geom_t.layout_star);
                    let r_t_agg = folded.op.restrict_dual_from(&r_t_full, &geom_t.layout);
                    let f_t = 0.5 * big_r_t_agg.norm_squared();
                    let r_t_l1 = r_t_agg.iter().map(|v| v.abs()).sum::<f64>();
                    let theta = f_t + mu * r_t_l1;
                    if theta <= theta0 + alpha * cfg.beta * dtheta0 {
                        let r_t_norm = r_t_agg.norm();
                        Ok(Some((spline_t, geom_t, u_t, alpha, theta, r_t_norm)))
                    } else {
                        Ok(None)
                    }
                })()?;
                if let Some(t) = trial {
                    accepted = Some(t);
                    break;
                }
                alpha *= cfg.tau;
            }

            match accepted {
                Some((spline_t, geom_t, u_t, alpha_k, _theta, r_t_norm)) => {
                    gamma = update_gamma(gamma, dphi.norm(), cfg);
                    spline = spline_t;
                    geom = geom_t;
                    u = u_t;
                    reinit_after_ls_failure = false;
                    // solution re-initialization on oscillatory cells
                    let mut reinit_flag = false;
                    if p > 0 && r_t_norm > cfg.reinit_eps4 && iters_at_p <= cfg.reinit_max_iter {
                        let is_el = trials > cfg.excessive_ls;
                        let (u2, n_flagged) =
                            reinitialize(&u, &geom.layout, &geom, &grid, cfg, is_el);
                        if n_flagged > 0 {
                            u = u2;
                            reinit_flag = true;
                        }
                    }
                    trace.push(TraceRow {
                        iter,
                        p,
                        r_norm,
                        big_r_norm: big_norm,
                        alpha: alpha_k,
                        gamma,
                        reinit: reinit_flag,
                        enthalpy_err: h_err,
                        merit_ok: true,
                        ls_trials: trials,
                    });
                }
                None => {
                    // excessive-line-search path: one forced re-initialization
                    let can_reinit = p > 0 && !reinit_after_ls_failure && r_norm > cfg.reinit_eps4;
                    trace.push(TraceRow {
                        iter,
                        p,
                        r_norm,
                        big_r_norm: big_norm,
                        alpha: 0.0,
                        gamma,
                        reinit: can_reinit,
                        enthalpy_err: h_err,
                        merit_ok: false,
                        ls_trials: trials,
                    });
                    if can_reinit {
                        let (u2, n_flagged) =
                            reinitialize(&u, &geom.layout, &geom, &grid, cfg, true);
                        if n_flagged > 0 {
                            u = u2;
                            reinit_after_ls_failure = true;
                            iter += 1;
                            iters_at_p += 1;
                            continue;
                        }
                    }
                    if p < case.p_max {
                        // a dead line search means no substantial updates are
                        // possible at this degree: raise it
                        raise_now = true;
                    } else {
                        // a dead line search at a small residual means the
                        // iterate sits at the attainable floor: converged
                        if term.small(cfg) {
                            converged = true;
                        }
                        break;
                    }
                }
            }
        }
        if raise_now {
            p += 1;
            let layout_prev = geom.layout.clone();
            disc.p = p;
            let geom_new = build_geometry(&disc, &spline)?;
            // nested injection on the old blocks, then transfer in case a
            // borderline sub-cell appeared with the new quadrature
            let lay_inj = XdgLayout::build(&geom.topo, law.active_subdomains(), law.m(), p);
            let injected = inject(&u, &layout_prev, &lay_inj)?;
            u = extrapolate_newborn(&injected, &lay_inj, &geom_new.topo, &geom_new.layout, &grid)?;
            geom = geom_new;
            gamma = cfg.gamma0;
            term.reset();
            iters_at_p = 0;
            reinit_after_ls_failure = false;
            iter += 1;
            continue;
        }
        iter += 1;
        iters_at_p += 1;
    }
    // iteration budget exhausted with the residual clause satisfied: the
    // skyline may keep collecting noise-level minima that reset the
    // reduction-factor window, but the solve is done
    if !converged && iter >= case.max_iterations && p == case.p_max && term.small(cfg) {
        converged = true;
    }

    // report the best-skyline iterate of the final degree (on a converged
    // run that is the final iterate up to monotone tail noise)
    let last = trace.last().expect("at least one iterate");
    let (final_r, final_big, spline_out, u_out, p_out) = match best {
        Some((r_b, big_b, spline_b, u_b, p_b)) if r_b < last.r_norm && p_b == p => {
            (r_b, big_b, spline_b, u_b, p_b)
        }
        _ => (last.r_norm, last.big_r_norm, spline, u, p),
    };
    Ok(SqpSolution {
        converged,
        p: p_out,
        spline: spline_out,
        u: u_out,
        trace,
        final_r_norm: final_r,
        final_big_r_norm: final_big,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutcell::classify;
    use crate::mesh::Rect;
    use approx::assert_relative_eq;

    #[test]
    fn kkt_stationary_point_gives_zero_step() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let j_r = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let grad = DVector::zeros(2);
        let r = DVector::zeros(1);
        let (dz, lambda) = kkt_solve(&b, &j_r, &grad, &r).unwrap();
        assert!(dz.amax() < 1e-14);
        assert!(lambda.amax() < 1e-14);
    }

    #[test]
    fn kkt_matches_hand_solved_toy() {
        // B = diag(2, 4), J_r = [1 1], grad = (1, -2), r = 0.5
        // solution: dz = (-5/6, 1/3), lambda = 2/3
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let j_r = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let grad = DVector::from_vec(vec![1.0, -2.0]);
        let r = DVector::from_vec(vec![0.5]);
        let (dz, lambda) = kkt_solve(&b, &j_r, &grad, &r).unwrap();
        assert_relative_eq!(dz[0], -5.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(dz[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(lambda[0], 2.0 / 3.0, epsilon = 1e-12);
        // second block row: J_r dz = -r
        assert_relative_eq!(dz[0] + dz[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn kkt_rejects_singular_systems() {
        let b = DMatrix::zeros(2, 2);
        let j_r = DMatrix::zeros(1, 2);
        let grad = DVector::from_vec(vec![1.0, 1.0]);
        let r = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            kkt_solve(&b, &j_r, &grad, &r),
            Err(SqpError::IllConditioned(_))
        ));
    }

    #[test]
    fn gamma_update_bands() {
        let cfg = SqpConfig::default();
        assert_relative_eq!(update_gamma(1.0, 0.0, &cfg), 1.0 / 1.5, epsilon = 1e-15);
        assert_relative_eq!(update_gamma(1.0, 0.5, &cfg), 1.5, epsilon = 1e-15);
        assert_relative_eq!(update_gamma(1.0, 0.05, &cfg), 1.0 / 1.5, epsilon = 1e-15);
        // clamping
        assert_relative_eq!(update_gamma(1e10, 0.5, &cfg), 1e10, epsilon = 1e-15);
        assert_relative_eq!(update_gamma(1e-10, 0.0, &cfg), 1e-10, epsilon = 1e-15);
    }

    #[test]
    fn termination_decisions() {
        let cfg = SqpConfig::default();
        // monotone halving: reduction factor 2 per step -> continue
        let mut t = TerminationState::default();
        let mut r = 1.0;
        for _ in 0..20 {
            t.push(r, r, 1.0);
            r *= 0.5;
        }
        assert_eq!(t.check(&cfg, 0, 0, 20), Decision::Continue);
        // flat skyline below tolerance -> terminate at p_max
        let mut t = TerminationState::default();
        for _ in 0..9 {
            t.push(1e-9, 1e-9, 1.0);
        }
        assert_eq!(t.check(&cfg, 0, 0, 9), Decision::Terminate);
        // flat skyline above tolerance at p = 0 < p_max and enough iterations
        let mut t = TerminationState::default();
        for _ in 0..31 {
            t.push(0.5, 0.5, 1.0);
        }
        assert_eq!(t.check(&cfg, 0, 3, 31), Decision::RaiseP);
        assert_eq!(t.check(&cfg, 0, 3, 5), Decision::Continue);
        // converged early at a lower degree still waits for min iterations
        let mut t = TerminationState::default();
        for _ in 0..9 {
            t.push(1e-9, 1e-9, 1.0);
        }
        assert_eq!(t.check(&cfg, 0, 3, 9), Decision::Continue);
        assert_eq!(t.check(&cfg, 0, 3, 30), Decision::RaiseP);
    }

    #[test]
    fn skyline_is_monotone() {
        let mut t = TerminationState::default();
        for (i, &v) in [1.0, 0.5, 0.7, 0.3, 0.9, 0.2].iter().enumerate() {
            t.push(v, v, 1.0);
            assert!(t.sky_r[i] <= if i == 0 { v } else { t.sky_r[i - 1] });
        }
        assert_eq!(t.sky_r, vec![1.0, 0.5, 0.5, 0.3, 0.3, 0.2]);
    }

    #[test]
    fn three_cell_fixture_rejects_then_accepts() {
        // the worked 1D example: interface at x = 0.5 on three unit cells,
        // direction moves it by +2
        let grid = build_grid(3, 1, Rect::new(0.0, 3.0, 0.0, 1.0)).unwrap();
        let spline = SplineLevelSet::linear(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let topo0 = classify(&grid, &spline, None, 3).unwrap();
        let old_cut = topo0.cut_by_s_flags();
        assert_eq!(old_cut, vec![true, false, false]);
        let dphi = [2.0, 2.0];
        let trial = |alpha: f64| {
            let mut s = spline.clone();
            let mut d = s.dofs();
            d.iter_mut().zip(&dphi).for_each(|(v, dp)| *v += alpha * dp);
            s.set_dofs(&d).unwrap();
            classify(&grid, &s, None, 3).unwrap()
        };
        // alpha = 1 moves the interface to x = 2.5: cell 2 becomes cut but
        // neither it nor a neighbor was cut -> rejected
        assert!(!interface_rules(&old_cut, &trial(1.0), &grid));
        // alpha = 0.5 moves it to x = 1.5: cell 1 was next to the cut cell
        assert!(interface_rules(&old_cut, &trial(0.5), &grid));
    }

    #[test]
    fn reinit_is_idempotent_on_its_output() {
        use crate::physics::AdvectionLaw;
        use crate::residual::build_geometry;
        let grid = build_grid(3, 1, Rect::new(0.0, 3.0, 0.0, 1.0)).unwrap();
        let law = AdvectionLaw {
            speed: Box::new(|_| 1.0),
            dirichlet: Box::new(|_, _| 0.0),
        };
        let disc = Discretization {
            grid: &grid,
            law: &law,
            phi_b: None,
            p: 1,
            edge_breaks: &[],
        };
        let spline = SplineLevelSet::linear(vec![0.0, 1.0], vec![9.0, 9.0]).unwrap();
        let geom = build_geometry(&disc, &spline).unwrap();
        let layout = geom.layout.clone();
        let cfg = SqpConfig::default();
        let mut u = DVector::zeros(layout.dim());
        u[layout.index(0, 0, 0)] = 5.0;
        u[layout.index(1, 0, 1)] = 1.0;
        u[layout.index(2, 0, 0)] = 5.0;
        let (u1, n1) = reinitialize(&u, &layout, &geom, &grid, &cfg, false);
        assert!(n1 > 0);
        // constant patches have no top-mode content, so nothing is re-flagged
        let (u2, _) = reinitialize(&u1, &layout, &geom, &grid, &cfg, false);
        assert!((&u2 - &u1).amax() == 0.0);
    }

    #[test]
    fn reinit_flags_top_mode_cells_and_respects_jumps() {
        use crate::physics::AdvectionLaw;
        use crate::residual::build_geometry;
        let grid = build_grid(3, 1, Rect::new(0.0, 3.0, 0.0, 1.0)).unwrap();
        let law = AdvectionLaw {
            speed: Box::new(|_| 1.0),
            dirichlet: Box::new(|_, _| 0.0),
        };
        let disc = Discretization {
            grid: &grid,
            law: &law,
            phi_b: None,
            p: 1,
            edge_breaks: &[],
        };
        // interface far outside: all cells uncut, single sub-domain
        let spline = SplineLevelSet::linear(vec![0.0, 1.0], vec![9.0, 9.0]).unwrap();
        let geom = build_geometry(&disc, &spline).unwrap();
        let layout = geom.layout.clone();
        let cfg = SqpConfig::default();
        // smooth (constant) field: nothing happens
        let mut u = DVector::zeros(layout.dim());
        for b in 0..layout.blocks.len() {
            u[layout.index(b, 0, 0)] = 2.0;
        }
        let (u2, n) = reinitialize(&u, &layout, &geom, &grid, &cfg, false);
        assert_eq!(n, 0);
        assert!((&u2 - &u).amax() == 0.0);
        // pure top-mode content in cell 1: S = log(1) = 0 > -0.2
        let mut u = DVector::zeros(layout.dim());
        u[layout.index(0, 0, 0)] = 5.0;
        u[layout.index(2, 0, 0)] = 5.0;
        u[layout.index(1, 0, 1)] = 1.0; // x-linear mode only
        let (u2, n) = reinitialize(&u, &layout, &geom, &grid, &cfg, false);
        assert!(n >= 1);
        // cell 1 is reset to a patch-average constant
        assert_relative_eq!(u2[layout.index(1, 0, 1)], 0.0, epsilon = 1e-14);
        // patch excludes across-jump neighbors: cells 0 and 2 carry value 5,
        // cell 1 mean is 0 -> jump 5 > eps3, so the patch is cell 1 alone
        assert_relative_eq!(u2[layout.index(1, 0, 0)], 0.0, epsilon = 1e-12);
    }
}
