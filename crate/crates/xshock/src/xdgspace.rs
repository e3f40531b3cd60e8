//! Modal XDG basis over cut-cells: coefficient layout, projection, enriched
//! injection, newborn-cell extrapolation and agglomeration basis changes.
//!
//! The basis on every background cell is the orthonormal tensor-Legendre
//! modal basis of total degree <= P with respect to the full (uncut) cell
//! measure, in graded order so bases of different degrees are nested. A
//! cut-cell carries that basis multiplied by the sub-domain indicator; empty
//! (ghost) blocks carry no DOFs and are excluded from the layout.

use crate::cutcell::{AgglomerationMap, BlockId, CutTopology, Subdomain};
use crate::gauss::gauss_legendre;
use crate::levelset::HeightFunction;
use crate::mesh::{BackgroundGrid, Rect};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("layouts are built over different block lists")]
    BlockMismatch,
    #[error("singular mass matrix in cell {0} {1:?}")]
    SingularMass(usize, Subdomain),
    #[error(
        "newborn cut-cell (cell {0}, {1:?}) has no same-sub-domain neighbor to extrapolate from"
    )]
    OrphanNewborn(usize, Subdomain),
}

/// Number of modes of the total-degree-P basis: (P+1)(P+2)/2.
pub fn basis_size(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Exponent pairs (a, b) in graded order; the first basis_size(P) entries of
/// any higher degree's list coincide with degree P's list (nested bases).
pub fn mode_exponents(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(basis_size(p));
    for d in 0..=p {
        for a in (0..=d).rev() {
            out.push((a, d - a));
        }
    }
    out
}

fn legendre_all(x: f64, p: usize, vals: &mut [f64], ders: &mut [f64]) {
    vals[0] = 1.0;
    ders[0] = 0.0;
    if p == 0 {
        return;
    }
    vals[1] = x;
    ders[1] = 1.0;
    for k in 1..p {
        let kf = k as f64;
        vals[k + 1] = ((2.0 * kf + 1.0) * x * vals[k] - kf * vals[k - 1]) / (kf + 1.0);
        ders[k + 1] = ders[k - 1] + (2.0 * kf + 1.0) * vals[k];
    }
}

/// Evaluate the orthonormal modal basis of cell `cell` at (x, y) into `vals`
/// (length basis_size(p)).
pub fn eval_basis(cell: Rect, p: usize, x: f64, y: f64, vals: &mut [f64]) {
    eval_basis_grad_buf(cell, p, x, y, vals, &mut [], &mut [], false);
}

/// Evaluate basis values and physical gradients.
pub fn eval_basis_grad(
    cell: Rect,
    p: usize,
    x: f64,
    y: f64,
    vals: &mut [f64],
    gx: &mut [f64],
    gy: &mut [f64],
) {
    eval_basis_grad_buf(cell, p, x, y, vals, gx, gy, true);
}

fn eval_basis_grad_buf(
    cell: Rect,
    p: usize,
    x: f64,
    y: f64,
    vals: &mut [f64],
    gx: &mut [f64],
    gy: &mut [f64],
    with_grad: bool,
) {
    let hx = cell.x_max - cell.x_min;
    let hy = cell.y_max - cell.y_min;
    let xi = 2.0 * (x - cell.x_min) / hx - 1.0;
    let eta = 2.0 * (y - cell.y_min) / hy - 1.0;
    let mut px = [0.0; 8];
    let mut dpx = [0.0; 8];
    let mut py = [0.0; 8];
    let mut dpy = [0.0; 8];
    debug_assert!(p < 8);
    legendre_all(xi, p, &mut px, &mut dpx);
    legendre_all(eta, p, &mut py, &mut dpy);
    let mut nx = [0.0; 8];
    let mut ny = [0.0; 8];
    for k in 0..=p {
        nx[k] = ((2 * k + 1) as f64 / hx).sqrt();
        ny[k] = ((2 * k + 1) as f64 / hy).sqrt();
    }
    for (i, (a, b)) in mode_exponents(p).into_iter().enumerate() {
        vals[i] = nx[a] * px[a] * ny[b] * py[b];
        if with_grad {
            gx[i] = nx[a] * dpx[a] * (2.0 / hx) * ny[b] * py[b];
            gy[i] = nx[a] * px[a] * ny[b] * dpy[b] * (2.0 / hy);
        }
    }
}

/// Coefficient layout of an XDG space: one block of m * N_P coefficients per
/// nonempty active cut-cell, in deterministic cell-major order.
#[derive(Clone, Debug)]
pub struct XdgLayout {
    pub p: usize,
    pub m: usize,
    pub n_p: usize,
    pub blocks: Vec<BlockId>,
    index_of: Vec<[Option<usize>; 4]>,
}

impl XdgLayout {
    pub fn build(topo: &CutTopology, active: &[Subdomain], m: usize, p: usize) -> Self {
        let blocks = topo.blocks(active);
        let mut index_of = vec![[None; 4]; topo.cells.len()];
        for (i, &(cell, sd)) in blocks.iter().enumerate() {
            index_of[cell][sd.index()] = Some(i);
        }
        XdgLayout {
            p,
            m,
            n_p: basis_size(p),
            blocks,
            index_of,
        }
    }

    /// Layout over explicit blocks (used for the agglomerated space).
    pub fn from_blocks(blocks: Vec<BlockId>, n_cells: usize, m: usize, p: usize) -> Self {
        let mut index_of = vec![[None; 4]; n_cells];
        for (i, &(cell, sd)) in blocks.iter().enumerate() {
            index_of[cell][sd.index()] = Some(i);
        }
        XdgLayout {
            p,
            m,
            n_p: basis_size(p),
            blocks,
            index_of,
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.len() * self.m * self.n_p
    }

    pub fn block_index(&self, cell: usize, sd: Subdomain) -> Option<usize> {
        self.index_of[cell][sd.index()]
    }

    /// Flat index of (block, component, mode).
    pub fn index(&self, block: usize, comp: usize, mode: usize) -> usize {
        (block * self.m + comp) * self.n_p + mode
    }

    pub fn block_offset(&self, block: usize) -> usize {
        block * self.m * self.n_p
    }

    pub fn same_blocks(&self, other: &XdgLayout) -> bool {
        self.blocks == other.blocks
    }
}

/// Cut-cell-wise L2 projection of a field onto the XDG space. The field is
/// evaluated per quadrature node together with the node's sub-domain.
pub fn project(
    f: &dyn Fn(f64, f64, Subdomain, &mut [f64]),
    topo: &CutTopology,
    layout: &XdgLayout,
    grid: &BackgroundGrid,
) -> Result<DVector<f64>, SpaceError> {
    let np = layout.n_p;
    let m = layout.m;
    let mut u = DVector::zeros(layout.dim());
    let mut vals = vec![0.0; np];
    let mut fv = vec![0.0; m];
    for (bi, &(cell, sd)) in layout.blocks.iter().enumerate() {
        let part = topo.part(cell, sd).expect("layout block without cut-cell");
        let rect = grid.cell(cell);
        let mut mass = DMatrix::zeros(np, np);
        let mut rhs = DMatrix::zeros(np, m);
        for (node, &w) in part.rule.nodes.iter().zip(&part.rule.weights) {
            eval_basis(rect, layout.p, node[0], node[1], &mut vals);
            f(node[0], node[1], sd, &mut fv);
            for a in 0..np {
                for b in 0..np {
                    mass[(a, b)] += w * vals[a] * vals[b];
                }
                for c in 0..m {
                    rhs[(a, c)] += w * vals[a] * fv[c];
                }
            }
        }
        // Cholesky for the usual SPD case, LU for nearly-degenerate slivers
        let sol = match mass.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => mass
                .lu()
                .solve(&rhs)
                .ok_or(SpaceError::SingularMass(cell, sd))?,
        };
        for c in 0..m {
            for a in 0..np {
                u[layout.index(bi, c, a)] = sol[(a, c)];
            }
        }
    }
    Ok(u)
}

/// Canonical injection into the enriched layout (same blocks, higher degree):
/// zero-padding per block for the nested modal basis.
pub fn inject(
    u: &DVector<f64>,
    from: &XdgLayout,
    to: &XdgLayout,
) -> Result<DVector<f64>, SpaceError> {
    if !from.same_blocks(to) || to.n_p < from.n_p || from.m != to.m {
        return Err(SpaceError::BlockMismatch);
    }
    let mut out = DVector::zeros(to.dim());
    for b in 0..from.blocks.len() {
        for c in 0..from.m {
            for a in 0..from.n_p {
                out[to.index(b, c, a)] = u[from.index(b, c, a)];
            }
        }
    }
    Ok(out)
}

/// Drop the enriched modes: left inverse of `inject`.
pub fn truncate(
    u: &DVector<f64>,
    from: &XdgLayout,
    to: &XdgLayout,
) -> Result<DVector<f64>, SpaceError> {
    if !from.same_blocks(to) || to.n_p > from.n_p || from.m != to.m {
        return Err(SpaceError::BlockMismatch);
    }
    let mut out = DVector::zeros(to.dim());
    for b in 0..from.blocks.len() {
        for c in 0..to.m {
            for a in 0..to.n_p {
                out[to.index(b, c, a)] = u[from.index(b, c, a)];
            }
        }
    }
    Ok(out)
}

/// Exact change of basis: coefficients of src-cell basis polynomials expanded
/// in the dst cell's basis. c_dst = T c_src represents the same polynomial.
pub fn extension_matrix(dst: Rect, src: Rect, p: usize) -> DMatrix<f64> {
    let np = basis_size(p);
    let n = p + 1;
    let (gx, gw) = gauss_legendre(n);
    let mut t = DMatrix::zeros(np, np);
    let mut vd = vec![0.0; np];
    let mut vs = vec![0.0; np];
    let hx = dst.x_max - dst.x_min;
    let hy = dst.y_max - dst.y_min;
    for (&xi, &wx) in gx.iter().zip(&gw) {
        let x = dst.x_min + 0.5 * hx * (xi + 1.0);
        for (&et, &wy) in gx.iter().zip(&gw) {
            let y = dst.y_min + 0.5 * hy * (et + 1.0);
            let w = wx * wy * 0.25 * hx * hy;
            eval_basis(dst, p, x, y, &mut vd);
            eval_basis(src, p, x, y, &mut vs);
            for a in 0..np {
                for b in 0..np {
                    t[(a, b)] += w * vd[a] * vs[b];
                }
            }
        }
    }
    t
}

/// Transfer a state between two cut topologies after an interface update.
/// Blocks present in both keep their coefficients (the basis lives on the
/// full background cell, so restriction to a different sub-region is free);
/// newborn blocks get the polynomial of their largest same-sub-domain
/// neighbor, re-expressed exactly in their own basis.
pub fn extrapolate_newborn(
    u_old: &DVector<f64>,
    layout_old: &XdgLayout,
    topo_new: &CutTopology,
    layout_new: &XdgLayout,
    grid: &BackgroundGrid,
) -> Result<DVector<f64>, SpaceError> {
    let np = layout_new.n_p;
    let m = layout_new.m;
    debug_assert_eq!(layout_old.n_p, np);
    let mut u = DVector::zeros(layout_new.dim());
    let mut have = vec![false; layout_new.blocks.len()];
    for (bi, &(cell, sd)) in layout_new.blocks.iter().enumerate() {
        if let Some(bo) = layout_old.block_index(cell, sd) {
            for c in 0..m {
                for a in 0..np {
                    u[layout_new.index(bi, c, a)] = u_old[layout_old.index(bo, c, a)];
                }
            }
            have[bi] = true;
        }
    }
    // fill newborns from the largest valued neighbor, repeating until stable
    loop {
        let mut progress = false;
        let mut remaining = false;
        for bi in 0..layout_new.blocks.len() {
            if have[bi] {
                continue;
            }
            let (cell, sd) = layout_new.blocks[bi];
            let mut best: Option<(f64, usize)> = None;
            for n in grid.neighbors(cell).unwrap() {
                if let Some(nb) = layout_new.block_index(n, sd) {
                    if have[nb] {
                        let a = topo_new.area(n, sd);
                        if best.map_or(true, |(ba, _)| a > ba) {
                            best = Some((a, nb));
                        }
                    }
                }
            }
            match best {
                Some((_, nb)) => {
                    let (ncell, _) = layout_new.blocks[nb];
                    let t = extension_matrix(grid.cell(cell), grid.cell(ncell), layout_new.p);
                    for c in 0..m {
                        for a in 0..np {
                            let mut acc = 0.0;
                            for b in 0..np {
                                acc += t[(a, b)] * u[layout_new.index(nb, c, b)];
                            }
                            u[layout_new.index(bi, c, a)] = acc;
                        }
                    }
                    have[bi] = true;
                    progress = true;
                }
                None => remaining = true,
            }
        }
        if !remaining {
            break;
        }
        if !progress {
            let bi = (0..have.len()).find(|&b| !have[b]).unwrap();
            let (cell, sd) = layout_new.blocks[bi];
            return Err(SpaceError::OrphanNewborn(cell, sd));
        }
    }
    Ok(u)
}

/// Extension/restriction operators realizing the agglomerated basis. The
/// agglomerated space uses the target (root) cell's polynomial extended over
/// the whole group; `prolong` is the extension operator E, states restrict by
/// the least-squares form (E^T E)^{-1} E^T, residual-type objects by E^T.
pub struct AggOperator {
    pub full: XdgLayout,
    pub agg: XdgLayout,
    /// For every full block: Root(agg block) or Source(agg block of its root,
    /// extension matrix from root cell to this cell).
    role: Vec<Role>,
    /// Per agg block holding a group: the Cholesky factor of (E^T E) block.
    gram: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>>,
}

enum Role {
    Keep(usize),
    Source { root_agg: usize, t: DMatrix<f64> },
}

impl AggOperator {
    pub fn build(map: &AgglomerationMap, layout: &XdgLayout, grid: &BackgroundGrid) -> Self {
        let np = layout.n_p;
        let sources: Vec<BlockId> = map.resolved.iter().map(|(s, _)| *s).collect();
        let agg_blocks: Vec<BlockId> = layout
            .blocks
            .iter()
            .copied()
            .filter(|b| !sources.contains(b))
            .collect();
        let agg = XdgLayout::from_blocks(agg_blocks, grid.cell_count(), layout.m, layout.p);
        let mut role = Vec::with_capacity(layout.blocks.len());
        for &b in &layout.blocks {
            match map.resolved.iter().find(|(s, _)| *s == b) {
                None => role.push(Role::Keep(agg.block_index(b.0, b.1).unwrap())),
                Some(&(_, root)) => {
                    let root_agg = agg
                        .block_index(root.0, root.1)
                        .expect("root left the layout");
                    let t = extension_matrix(grid.cell(b.0), grid.cell(root.0), layout.p);
                    role.push(Role::Source { root_agg, t });
                }
            }
        }
        // Gram blocks I + sum T^T T per rooted group
        let mut gram_mat: Vec<Option<DMatrix<f64>>> = vec![None; agg.blocks.len()];
        for r in &role {
            if let Role::Source { root_agg, t } = r {
                let g = gram_mat[*root_agg].get_or_insert_with(|| DMatrix::identity(np, np));
                *g += t.transpose() * t;
            }
        }
        let gram = gram_mat
            .into_iter()
            .map(|g| g.map(|m| m.cholesky().expect("gram block is SPD")))
            .collect();
        AggOperator {
            full: layout.clone(),
            agg,
            role,
            gram,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.full.blocks.len() == self.agg.blocks.len()
    }

    /// E: agglomerated coefficients to full-layout coefficients.
    pub fn prolong(&self, u_agg: &DVector<f64>) -> DVector<f64> {
        let (np, m) = (self.full.n_p, self.full.m);
        let mut out = DVector::zeros(self.full.dim());
        for (bi, r) in self.role.iter().enumerate() {
            match r {
                Role::Keep(ai) => {
                    for c in 0..m {
                        for a in 0..np {
                            out[self.full.index(bi, c, a)] = u_agg[self.agg.index(*ai, c, a)];
                        }
                    }
                }
                Role::Source { root_agg, t } => {
                    for c in 0..m {
                        for a in 0..np {
                            let mut acc = 0.0;
                            for b in 0..np {
                                acc += t[(a, b)] * u_agg[self.agg.index(*root_agg, c, b)];
                            }
                            out[self.full.index(bi, c, a)] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// E^T: fold residual-type (test-space) vectors.
    pub fn restrict_dual(&self, r_full: &DVector<f64>) -> DVector<f64> {
        let (np, m) = (self.full.n_p, self.full.m);
        let mut out = DVector::zeros(self.agg.dim());
        for (bi, r) in self.role.iter().enumerate() {
            match r {
                Role::Keep(ai) => {
                    for c in 0..m {
                        for a in 0..np {
                            out[self.agg.index(*ai, c, a)] += r_full[self.full.index(bi, c, a)];
                        }
                    }
                }
                Role::Source { root_agg, t } => {
                    for c in 0..m {
                        for b in 0..np {
                            let mut acc = 0.0;
                            for a in 0..np {
                                acc += t[(a, b)] * r_full[self.full.index(bi, c, a)];
                            }
                            out[self.agg.index(*root_agg, c, b)] += acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// E^T applied to a residual assembled on a *different* (trial) topology:
    /// blocks shared with this operator's layout fold through their roles,
    /// blocks unknown to it (newborn cut-cells) pass through unfolded and are
    /// appended. Used by the line search, which keeps the agglomeration basis
    /// of the current iteration frozen across trial points.
    pub fn restrict_dual_from(&self, r: &DVector<f64>, layout_from: &XdgLayout) -> DVector<f64> {
        debug_assert_eq!(layout_from.n_p, self.full.n_p);
        debug_assert_eq!(layout_from.m, self.full.m);
        let (np, m) = (self.full.n_p, self.full.m);
        let mut extra: Vec<f64> = Vec::new();
        let mut out = DVector::zeros(self.agg.dim());
        for (bf, &(cell, sd)) in layout_from.blocks.iter().enumerate() {
            match self.full.block_index(cell, sd) {
                Some(bi) => match &self.role[bi] {
                    Role::Keep(ai) => {
                        for c in 0..m {
                            for a in 0..np {
                                out[self.agg.index(*ai, c, a)] += r[layout_from.index(bf, c, a)];
                            }
                        }
                    }
                    Role::Source { root_agg, t } => {
                        for c in 0..m {
                            for b in 0..np {
                                let mut acc = 0.0;
                                for a in 0..np {
                                    acc += t[(a, b)] * r[layout_from.index(bf, c, a)];
                                }
                                out[self.agg.index(*root_agg, c, b)] += acc;
                            }
                        }
                    }
                },
                None => {
                    let off = layout_from.block_offset(bf);
                    extra.extend((off..off + m * np).map(|i| r[i]));
                }
            }
        }
        if extra.is_empty() {
            out
        } else {
            let mut full = DVector::zeros(out.len() + extra.len());
            full.rows_mut(0, out.len()).copy_from(&out);
            for (i, v) in extra.into_iter().enumerate() {
                full[out.len() + i] = v;
            }
            full
        }
    }

    /// (E^T E)^{-1} E^T: least-squares restriction of states.
    pub fn restrict_state(&self, u_full: &DVector<f64>) -> DVector<f64> {
        let (np, m) = (self.full.n_p, self.full.m);
        let mut out = self.restrict_dual(u_full);
        for ai in 0..self.agg.blocks.len() {
            if let Some(ch) = &self.gram[ai] {
                for c in 0..m {
                    let mut v = DVector::zeros(np);
                    for a in 0..np {
                        v[a] = out[self.agg.index(ai, c, a)];
                    }
                    let sol = ch.solve(&v);
                    for a in 0..np {
                        out[self.agg.index(ai, c, a)] = sol[a];
                    }
                }
            }
        }
        out
    }

    /// Orthogonal projection of a full-layout state onto the agglomerated
    /// subspace: prolong(restrict_state(u)).
    pub fn project_state(&self, u_full: &DVector<f64>) -> DVector<f64> {
        if self.is_identity() {
            return u_full.clone();
        }
        self.prolong(&self.restrict_state(u_full))
    }

    /// Fold a matrix with full-layout test rows and [full u | phi] columns to
    /// the agglomerated pair: rows by E_row^T, u-columns by E_col.
    pub fn fold_matrix(
        rows: &AggOperator,
        cols: &AggOperator,
        j: &DMatrix<f64>,
        n_phi: usize,
    ) -> DMatrix<f64> {
        debug_assert_eq!(j.nrows(), rows.full.dim());
        debug_assert_eq!(j.ncols(), cols.full.dim() + n_phi);
        let mut folded_rows = DMatrix::zeros(rows.agg.dim(), j.ncols());
        let (np_r, m) = (rows.full.n_p, rows.full.m);
        for (bi, r) in rows.role.iter().enumerate() {
            match r {
                Role::Keep(ai) => {
                    for c in 0..m {
                        for a in 0..np_r {
                            let dst = rows.agg.index(*ai, c, a);
                            let src = rows.full.index(bi, c, a);
                            for col in 0..j.ncols() {
                                folded_rows[(dst, col)] += j[(src, col)];
                            }
                        }
                    }
                }
                Role::Source { root_agg, t } => {
                    for c in 0..m {
                        for b in 0..np_r {
                            let dst = rows.agg.index(*root_agg, c, b);
                            for a in 0..np_r {
                                let src = rows.full.index(bi, c, a);
                                let tab = t[(a, b)];
                                if tab != 0.0 {
                                    for col in 0..j.ncols() {
                                        folded_rows[(dst, col)] += tab * j[(src, col)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let np_c = cols.full.n_p;
        let mc = cols.full.m;
        let mut out = DMatrix::zeros(rows.agg.dim(), cols.agg.dim() + n_phi);
        for (bi, r) in cols.role.iter().enumerate() {
            match r {
                Role::Keep(ai) => {
                    for c in 0..mc {
                        for a in 0..np_c {
                            let dst = cols.agg.index(*ai, c, a);
                            let src = cols.full.index(bi, c, a);
                            for row in 0..out.nrows() {
                                out[(row, dst)] += folded_rows[(row, src)];
                            }
                        }
                    }
                }
                Role::Source { root_agg, t } => {
                    for c in 0..mc {
                        for b in 0..np_c {
                            let dst = cols.agg.index(*root_agg, c, b);
                            for a in 0..np_c {
                                let src = cols.full.index(bi, c, a);
                                let tab = t[(a, b)];
                                if tab != 0.0 {
                                    for row in 0..out.nrows() {
                                        out[(row, dst)] += tab * folded_rows[(row, src)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for k in 0..n_phi {
            let src = cols.full.dim() + k;
            let dst = cols.agg.dim() + k;
            for row in 0..out.nrows() {
                out[(row, dst)] = folded_rows[(row, src)];
            }
        }
        out
    }
}

/// Evaluate the represented field at arbitrary points. Points exactly on an
/// interface resolve to the phi <= 0 side; points in regions without DOFs
/// yield NaN.
pub fn sample(
    u: &DVector<f64>,
    layout: &XdgLayout,
    grid: &BackgroundGrid,
    phi_s: &dyn HeightFunction,
    phi_b: Option<&dyn HeightFunction>,
    points: &[[f64; 2]],
) -> Vec<Vec<f64>> {
    let np = layout.n_p;
    let mut vals = vec![0.0; np];
    points
        .iter()
        .map(|&[x, y]| {
            let cell = grid.locate(x, y);
            let s_neg = x <= phi_s.height(y);
            let b_neg = phi_b.map_or(true, |p| x <= p.height(y));
            let sd = Subdomain::from_signs(s_neg, b_neg);
            match layout.block_index(cell, sd) {
                None => vec![f64::NAN; layout.m],
                Some(bi) => {
                    eval_basis(grid.cell(cell), layout.p, x, y, &mut vals);
                    (0..layout.m)
                        .map(|c| {
                            (0..np)
                                .map(|a| u[layout.index(bi, c, a)] * vals[a])
                                .sum::<f64>()
                        })
                        .collect()
                }
            }
        })
        .collect()
}
