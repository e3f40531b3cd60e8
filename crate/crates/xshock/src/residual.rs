//! Assembly of the constraint residual r, the enriched residual R, the
//! objective f = 1/2 ||R||^2 and the finite-difference sensitivities feeding
//! the KKT system.
//!
//! Per XDG test function the residual is the cut-cell weak form: surface
//! fluxes against the test-function jump minus the volume flux term,
//!
//! ```text
//!   r[j,n,s] = sum_{edge fragments} F(U_in, U_out, n) [[phi]]
//!            - int_{K_{j,s}} f(U) . grad phi
//! ```
//!
//! with [[phi]] = phi_in - phi_out relative to the stored edge orientation.
//! Interface segments couple the two sub-cells of the owning cell; boundary
//! fragments use the law's boundary treatment. With a nested modal basis the
//! constraint residual is the sub-vector of the enriched residual formed by
//! the degree-P test rows, so only the enriched residual is assembled.

use crate::cutcell::{classify_with_breaks, CutError, CutTopology, InterfaceKind};
use crate::levelset::{HeightFunction, SplineLevelSet};
use crate::mesh::{BackgroundGrid, EdgeSide};
use crate::physics::{ConservationLaw, EdgeClass, PhysicsError};
use crate::xdgspace::{eval_basis, eval_basis_grad, XdgLayout};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("flux evaluation failed in cell {cell}: {source}")]
    Physics { cell: usize, source: PhysicsError },
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error("level-set DOF {dof} flips the cut topology at the minimal FD step")]
    TopologyFlip { dof: usize },
}

/// Grid, law and fixed level set bundled with the solution degree.
pub struct Discretization<'a> {
    pub grid: &'a BackgroundGrid,
    pub law: &'a dyn ConservationLaw,
    pub phi_b: Option<&'a dyn HeightFunction>,
    pub p: usize,
    /// Known discontinuity points of the boundary data; edge quadrature is
    /// split there so the residual stays smooth in the level-set DOFs.
    pub edge_breaks: &'a [[f64; 2]],
}

impl<'a> Discretization<'a> {
    pub fn p_star(&self) -> usize {
        self.p + 1
    }

    /// Gauss points per direction for all cut rules: 2 P* + 2.
    pub fn quad_pts(&self) -> usize {
        2 * self.p_star() + 2
    }
}

/// Frozen geometry for one shock level set: cut topology plus the coefficient
/// layouts of the solution space and the enriched test space.
pub struct Geometry {
    pub topo: CutTopology,
    pub layout: XdgLayout,
    pub layout_star: XdgLayout,
}

pub fn build_geometry(
    disc: &Discretization,
    phi_s: &dyn HeightFunction,
) -> Result<Geometry, CutError> {
    let topo = classify_with_breaks(
        disc.grid,
        phi_s,
        disc.phi_b,
        disc.quad_pts(),
        disc.edge_breaks,
    )?;
    let active = disc.law.active_subdomains();
    let layout = XdgLayout::build(&topo, active, disc.law.m(), disc.p);
    let layout_star = XdgLayout::build(&topo, active, disc.law.m(), disc.p_star());
    Ok(Geometry {
        topo,
        layout,
        layout_star,
    })
}

/// Row indices of the degree-P test rows inside the enriched residual.
pub fn constraint_rows(geom: &Geometry) -> Vec<usize> {
    let (l, ls) = (&geom.layout, &geom.layout_star);
    let mut rows = Vec::with_capacity(l.dim());
    for b in 0..l.blocks.len() {
        for c in 0..l.m {
            for a in 0..l.n_p {
                rows.push(ls.index(b, c, a));
            }
        }
    }
    rows
}

/// Extract the constraint residual r from the enriched residual R.
pub fn extract_constraint(geom: &Geometry, big_r: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        geom.layout.dim(),
        constraint_rows(geom).iter().map(|&i| big_r[i]),
    )
}

const MAX_NP: usize = 21; // basis size for degree 5
const MAX_M: usize = 4;

/// Assemble the residual tested with degree P (enriched = false) or P*
/// (enriched = true). `cell_mask`, when given, restricts both the accumulated
/// rows and the visited items to the marked cells (used by the column-wise
/// finite-difference Jacobian).
pub fn assemble(
    disc: &Discretization,
    geom: &Geometry,
    u: &DVector<f64>,
    enriched: bool,
    cell_mask: Option<&[bool]>,
    out: &mut DVector<f64>,
) -> Result<(), ResidualError> {
    let test_layout = if enriched {
        &geom.layout_star
    } else {
        &geom.layout
    };
    debug_assert_eq!(out.len(), test_layout.dim());
    let sol = &geom.layout;
    let m = sol.m;
    let np = sol.n_p;
    let np_t = test_layout.n_p;
    let p_t = test_layout.p;
    let grid = disc.grid;
    let law = disc.law;
    let masked = |cell: usize| cell_mask.map_or(true, |mask| mask[cell]);

    let mut vals = [0.0; MAX_NP];
    let mut gx = [0.0; MAX_NP];
    let mut gy = [0.0; MAX_NP];
    let mut state = [0.0; MAX_M];
    let mut state_out = [0.0; MAX_M];
    let mut flux = [[0.0; 2]; MAX_M];
    let mut nflux = [0.0; MAX_M];

    // volume terms
    for (bi, &(cell, sd)) in sol.blocks.iter().enumerate() {
        if !masked(cell) || p_t == 0 {
            continue;
        }
        let part = geom.topo.part(cell, sd).expect("layout block without part");
        let rect = grid.cell(cell);
        let row0 = test_layout.block_offset(bi);
        for (node, &w) in part.rule.nodes.iter().zip(&part.rule.weights) {
            eval_basis_grad(
                rect,
                p_t,
                node[0],
                node[1],
                &mut vals[..np_t],
                &mut gx[..np_t],
                &mut gy[..np_t],
            );
            for c in 0..m {
                state[c] = (0..np).map(|a| u[sol.index(bi, c, a)] * vals[a]).sum();
            }
            law.physical_flux(&state[..m], *node, &mut flux[..m]);
            for c in 0..m {
                let (fx, fy) = (flux[c][0], flux[c][1]);
                let rowc = row0 + c * np_t;
                for a in 0..np_t {
                    out[rowc + a] -= w * (fx * gx[a] + fy * gy[a]);
                }
            }
        }
    }

    // background-edge fragments
    for frag in &geom.topo.edge_fragments {
        let edge = &grid.edges()[frag.edge];
        let (in_cell, sd) = (edge.inner, frag.subdomain);
        let (class, out_cell) = match edge.outer {
            EdgeSide::Cell(c) => (EdgeClass::Interior, Some(c)),
            EdgeSide::Boundary(tag) => (EdgeClass::Boundary(tag), None),
        };
        let in_block = geom.layout.block_index(in_cell, sd);
        let out_block = out_cell.and_then(|c| geom.layout.block_index(c, sd));
        if in_block.is_none() && out_block.is_none() {
            continue; // inactive or vanished on both sides
        }
        if !masked(in_cell) && !out_cell.map_or(false, |c| masked(c)) {
            continue;
        }
        let n = edge.normal;
        let rect_in = grid.cell(in_cell);
        for (node, &w) in frag.nodes.iter().zip(&frag.weights) {
            // inner trace (ghost = outer trace if the inner block vanished)
            let bi = in_block.or(out_block).unwrap();
            let (src_cell, src_block) = if in_block.is_some() {
                (in_cell, bi)
            } else {
                (out_cell.unwrap(), bi)
            };
            eval_basis(
                grid.cell(src_cell),
                sol.p,
                node[0],
                node[1],
                &mut vals[..np],
            );
            for c in 0..m {
                state[c] = (0..np)
                    .map(|a| u[sol.index(src_block, c, a)] * vals[a])
                    .sum();
            }
            match (class, out_block) {
                (EdgeClass::Boundary(_), _) | (_, None) => {
                    state_out[..m].copy_from_slice(&state[..m])
                }
                (_, Some(ob)) => {
                    eval_basis(
                        grid.cell(out_cell.unwrap()),
                        sol.p,
                        node[0],
                        node[1],
                        &mut vals[..np],
                    );
                    for c in 0..m {
                        state_out[c] = (0..np).map(|a| u[sol.index(ob, c, a)] * vals[a]).sum();
                    }
                }
            }
            law.numerical_flux(
                class,
                &state[..m],
                &state_out[..m],
                n,
                *node,
                &mut nflux[..m],
            )
            .map_err(|source| ResidualError::Physics {
                cell: in_cell,
                source,
            })?;
            if let Some(ib) = in_block {
                if masked(in_cell) {
                    eval_basis(rect_in, p_t, node[0], node[1], &mut vals[..np_t]);
                    let row0 = test_layout.block_offset(ib);
                    for c in 0..m {
                        let rowc = row0 + c * np_t;
                        for a in 0..np_t {
                            out[rowc + a] += w * nflux[c] * vals[a];
                        }
                    }
                }
            }
            if let (Some(ob), Some(oc)) = (out_block, out_cell) {
                if masked(oc) {
                    eval_basis(grid.cell(oc), p_t, node[0], node[1], &mut vals[..np_t]);
                    let row0 = test_layout.block_offset(ob);
                    for c in 0..m {
                        let rowc = row0 + c * np_t;
                        for a in 0..np_t {
                            out[rowc + a] -= w * nflux[c] * vals[a];
                        }
                    }
                }
            }
        }
    }

    // interface segments inside cells
    for seg in &geom.topo.interface_segments {
        let cell = seg.cell;
        if !masked(cell) {
            continue;
        }
        let neg_block = geom.layout.block_index(cell, seg.neg_side);
        let pos_block = geom.layout.block_index(cell, seg.pos_side);
        if neg_block.is_none() && pos_block.is_none() {
            continue;
        }
        let class = match seg.kind {
            InterfaceKind::Shock => EdgeClass::InterfaceS,
            InterfaceKind::Body => EdgeClass::InterfaceB,
        };
        let rect = grid.cell(cell);
        for ((node, &w), n) in seg.nodes.iter().zip(&seg.weights).zip(&seg.normals) {
            eval_basis(rect, sol.p, node[0], node[1], &mut vals[..np]);
            let eval_state = |block: usize, dst: &mut [f64]| {
                for c in 0..m {
                    dst[c] = (0..np).map(|a| u[sol.index(block, c, a)] * vals[a]).sum();
                }
            };
            match (neg_block, pos_block) {
                (Some(nb), Some(pb)) => {
                    eval_state(nb, &mut state);
                    eval_state(pb, &mut state_out);
                }
                (Some(nb), None) => {
                    eval_state(nb, &mut state);
                    state_out[..m].copy_from_slice(&state[..m]);
                }
                (None, Some(pb)) => {
                    eval_state(pb, &mut state_out);
                    state[..m].copy_from_slice(&state_out[..m]);
                }
                (None, None) => unreachable!(),
            }
            law.numerical_flux(
                class,
                &state[..m],
                &state_out[..m],
                *n,
                *node,
                &mut nflux[..m],
            )
            .map_err(|source| ResidualError::Physics { cell, source })?;
            eval_basis(rect, p_t, node[0], node[1], &mut vals[..np_t]);
            if let Some(nb) = neg_block {
                let row0 = test_layout.block_offset(nb);
                for c in 0..m {
                    let rowc = row0 + c * np_t;
                    for a in 0..np_t {
                        out[rowc + a] += w * nflux[c] * vals[a];
                    }
                }
            }
            if let Some(pb) = pos_block {
                let row0 = test_layout.block_offset(pb);
                for c in 0..m {
                    let rowc = row0 + c * np_t;
                    for a in 0..np_t {
                        out[rowc + a] -= w * nflux[c] * vals[a];
                    }
                }
            }
        }
    }
    Ok(())
}

/// The enriched residual R(u, phi).
pub fn assemble_enriched(
    disc: &Discretization,
    geom: &Geometry,
    u: &DVector<f64>,
) -> Result<DVector<f64>, ResidualError> {
    let mut out = DVector::zeros(geom.layout_star.dim());
    assemble(disc, geom, u, true, None, &mut out)?;
    Ok(out)
}

/// Enriched Jacobian dR/du by block-wise central finite differences. Rows of
/// a perturbed block's cell and its edge neighbors are the only ones touched,
/// so assembly is restricted to that neighborhood.
pub fn jacobian_u(
    disc: &Discretization,
    geom: &Geometry,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, ResidualError> {
    let n_rows = geom.layout_star.dim();
    let n_cols = geom.layout.dim();
    let mut jac = DMatrix::zeros(n_rows, n_cols);
    let mut mask = vec![false; disc.grid.cell_count()];
    let mut row_scratch: Vec<usize> = Vec::new();
    let mut rp = DVector::zeros(n_rows);
    let mut rm = DVector::zeros(n_rows);
    let mut u_pert = u.clone();
    for (bi, &(cell, _sd)) in geom.layout.blocks.iter().enumerate() {
        // mark the block's cell and edge neighbors
        mask.iter_mut().for_each(|v| *v = false);
        mask[cell] = true;
        for n in disc.grid.neighbors(cell).unwrap() {
            mask[n] = true;
        }
        row_scratch.clear();
        for (bj, &(cj, _)) in geom.layout_star.blocks.iter().enumerate() {
            if mask[cj] {
                let off = geom.layout_star.block_offset(bj);
                row_scratch.extend(off..off + geom.layout_star.m * geom.layout_star.n_p);
            }
        }
        let off = geom.layout.block_offset(bi);
        for k in off..off + geom.layout.m * geom.layout.n_p {
            let eps = 1e-7 * u[k].abs().max(1.0);
            for &r in &row_scratch {
                rp[r] = 0.0;
                rm[r] = 0.0;
            }
            u_pert[k] = u[k] + eps;
            assemble(disc, geom, &u_pert, true, Some(&mask), &mut rp)?;
            u_pert[k] = u[k] - eps;
            assemble(disc, geom, &u_pert, true, Some(&mask), &mut rm)?;
            u_pert[k] = u[k];
            for &r in &row_scratch {
                jac[(r, k)] = (rp[r] - rm[r]) / (2.0 * eps);
            }
        }
    }
    Ok(jac)
}

/// Enriched Jacobian dR/dphi by central finite differences in the level-set
/// DOFs. Every perturbed evaluation re-runs the cut classification; when a
/// perturbation changes the set of nonempty cut-cells the step is halved (up
/// to 8 times) before erroring.
pub fn jacobian_phi(
    disc: &Discretization,
    spline: &SplineLevelSet,
    geom: &Geometry,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, ResidualError> {
    let n_rows = geom.layout_star.dim();
    let n_s = spline.num_dofs();
    let mut jac = DMatrix::zeros(n_rows, n_s);
    for k in 0..n_s {
        let mut eps = 1e-8 * spline.dof_scale(k);
        let mut done = false;
        for _ in 0..=8 {
            let sp = spline.perturbed(k, eps);
            let sm = spline.perturbed(k, -eps);
            let gp = build_geometry(disc, &sp)?;
            if !gp.layout_star.same_blocks(&geom.layout_star) {
                eps *= 0.5;
                continue;
            }
            let gm = build_geometry(disc, &sm)?;
            if !gm.layout_star.same_blocks(&geom.layout_star) {
                eps *= 0.5;
                continue;
            }
            let rp = assemble_enriched(disc, &gp, u)?;
            let rm = assemble_enriched(disc, &gm, u)?;
            let scale = 1.0 / (2.0 * eps);
            for r in 0..n_rows {
                jac[(r, k)] = (rp[r] - rm[r]) * scale;
            }
            done = true;
            break;
        }
        if !done {
            return Err(ResidualError::TopologyFlip { dof: k });
        }
    }
    Ok(jac)
}

/// Objective f = 1/2 ||R||^2 and its gradient J_R^T R.
pub fn objective(big_r: &DVector<f64>, jac: &DMatrix<f64>) -> (f64, DVector<f64>) {
    (0.5 * big_r.norm_squared(), jac.transpose() * big_r)
}
