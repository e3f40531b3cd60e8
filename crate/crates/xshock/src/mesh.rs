//! Fixed Cartesian background grid: cells, edges, normals, boundary tags.
//!
//! Cells are axis-aligned rectangles indexed row-major with the origin at
//! (x_min, y_min). Each edge is stored once with a fixed orientation: the
//! unit normal points from the `inner` cell to the `outer` side. Interior
//! edges point in +x (vertical edges) or +y (horizontal edges); boundary
//! edges point out of the domain so the domain cell is always `inner`.
//!
//! For space-time problems the second axis is time; nothing in here cares.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate bounds: {0}")]
    DegenerateBounds(String),
    #[error("cell index {0} out of range (grid has {1} cells)")]
    InvalidCell(usize, usize),
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Domain boundary label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

/// What lies on the far side of an edge (in the direction of its normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeSide {
    Cell(usize),
    Boundary(BoundaryTag),
}

/// A background-grid edge with fixed orientation.
#[derive(Clone, Debug)]
pub struct Edge {
    /// Segment endpoints, (start, end).
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Unit normal pointing from `inner` towards `outer`.
    pub normal: [f64; 2],
    pub inner: usize,
    pub outer: EdgeSide,
}

impl Edge {
    pub fn length(&self) -> f64 {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self.outer, EdgeSide::Boundary(_))
    }
}

/// Fixed Cartesian background grid.
#[derive(Clone, Debug)]
pub struct BackgroundGrid {
    nx: usize,
    ny: usize,
    bounds: Rect,
    edges: Vec<Edge>,
    /// Edge ids incident to each cell (4 per cell).
    cell_edges: Vec<[usize; 4]>,
}

/// Build a grid of nx-by-ny cells tiling `bounds`.
pub fn build_grid(nx: usize, ny: usize, bounds: Rect) -> Result<BackgroundGrid, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::DegenerateBounds(format!(
            "cell counts must be positive, got {nx}x{ny}"
        )));
    }
    if !(bounds.x_min < bounds.x_max) || !(bounds.y_min < bounds.y_max) {
        return Err(MeshError::DegenerateBounds(format!("{bounds:?}")));
    }
    let hx = (bounds.x_max - bounds.x_min) / nx as f64;
    let hy = (bounds.y_max - bounds.y_min) / ny as f64;
    let cell = |ix: usize, iy: usize| iy * nx + ix;
    let mut edges = Vec::with_capacity(nx * (ny + 1) + ny * (nx + 1));
    let mut cell_edges = vec![[usize::MAX; 4]; nx * ny];
    let push_cell_edge = |c: usize, e: usize, cell_edges: &mut Vec<[usize; 4]>| {
        let slot = cell_edges[c].iter().position(|&v| v == usize::MAX).unwrap();
        cell_edges[c][slot] = e;
    };
    // vertical edge lines i = 0..=nx
    for i in 0..=nx {
        let x = bounds.x_min + i as f64 * hx;
        for r in 0..ny {
            let y0 = bounds.y_min + r as f64 * hy;
            let y1 = y0 + hy;
            let id = edges.len();
            let (normal, inner, outer) = if i == 0 {
                (
                    [-1.0, 0.0],
                    cell(0, r),
                    EdgeSide::Boundary(BoundaryTag::Left),
                )
            } else if i == nx {
                (
                    [1.0, 0.0],
                    cell(nx - 1, r),
                    EdgeSide::Boundary(BoundaryTag::Right),
                )
            } else {
                ([1.0, 0.0], cell(i - 1, r), EdgeSide::Cell(cell(i, r)))
            };
            edges.push(Edge {
                start: [x, y0],
                end: [x, y1],
                normal,
                inner,
                outer,
            });
            push_cell_edge(inner, id, &mut cell_edges);
            if let EdgeSide::Cell(c) = edges[id].outer {
                push_cell_edge(c, id, &mut cell_edges);
            }
        }
    }
    // horizontal edge lines j = 0..=ny
    for j in 0..=ny {
        let y = bounds.y_min + j as f64 * hy;
        for c0 in 0..nx {
            let x0 = bounds.x_min + c0 as f64 * hx;
            let x1 = x0 + hx;
            let id = edges.len();
            let (normal, inner, outer) = if j == 0 {
                (
                    [0.0, -1.0],
                    cell(c0, 0),
                    EdgeSide::Boundary(BoundaryTag::Bottom),
                )
            } else if j == ny {
                (
                    [0.0, 1.0],
                    cell(c0, ny - 1),
                    EdgeSide::Boundary(BoundaryTag::Top),
                )
            } else {
                ([0.0, 1.0], cell(c0, j - 1), EdgeSide::Cell(cell(c0, j)))
            };
            edges.push(Edge {
                start: [x0, y],
                end: [x1, y],
                normal,
                inner,
                outer,
            });
            push_cell_edge(inner, id, &mut cell_edges);
            if let EdgeSide::Cell(c) = edges[id].outer {
                push_cell_edge(c, id, &mut cell_edges);
            }
        }
    }
    Ok(BackgroundGrid {
        nx,
        ny,
        bounds,
        edges,
        cell_edges,
    })
}

impl BackgroundGrid {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    /// Number of cells J.
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        (self.bounds.x_max - self.bounds.x_min) / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        (self.bounds.y_max - self.bounds.y_min) / self.ny as f64
    }

    /// Bounding rectangle of cell j.
    pub fn cell(&self, j: usize) -> Rect {
        debug_assert!(j < self.cell_count());
        let ix = j % self.nx;
        let iy = j / self.nx;
        let x0 = self.bounds.x_min + ix as f64 * self.hx();
        let y0 = self.bounds.y_min + iy as f64 * self.hy();
        Rect::new(x0, x0 + self.hx(), y0, y0 + self.hy())
    }

    /// Cell containing (x, y); points on shared faces go to the lower cell,
    /// points outside are clamped.
    pub fn locate(&self, x: f64, y: f64) -> usize {
        let fx = ((x - self.bounds.x_min) / self.hx()).floor();
        let fy = ((y - self.bounds.y_min) / self.hy()).floor();
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        iy * self.nx + ix
    }

    /// Edge-sharing neighbors of cell j (2-4 entries, no diagonals).
    pub fn neighbors(&self, j: usize) -> Result<Vec<usize>, MeshError> {
        if j >= self.cell_count() {
            return Err(MeshError::InvalidCell(j, self.cell_count()));
        }
        let ix = j % self.nx;
        let iy = j / self.nx;
        let mut out = Vec::with_capacity(4);
        if ix > 0 {
            out.push(j - 1);
        }
        if ix + 1 < self.nx {
            out.push(j + 1);
        }
        if iy > 0 {
            out.push(j - self.nx);
        }
        if iy + 1 < self.ny {
            out.push(j + self.nx);
        }
        Ok(out)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Ids of the 4 edges bounding cell j.
    pub fn cell_edges(&self, j: usize) -> &[usize; 4] {
        &self.cell_edges[j]
    }

    /// The y coordinates of the horizontal grid lines (spline knot positions).
    pub fn vertex_ys(&self) -> Vec<f64> {
        (0..=self.ny)
            .map(|j| self.bounds.y_min + j as f64 * self.hy())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_grid(n: usize) -> BackgroundGrid {
        build_grid(n, n, Rect::new(0.0, 1.0, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn single_cell_has_four_boundary_edges() {
        let g = unit_grid(1);
        assert_eq!(g.cell_count(), 1);
        assert_eq!(g.edges().len(), 4);
        assert!(g.edges().iter().all(|e| e.is_boundary()));
        assert!(g.neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn edge_count_matches_formula() {
        // nx(ny+1) + ny(nx+1)
        let g = unit_grid(10);
        assert_eq!(g.cell_count(), 100);
        assert_eq!(g.edges().len(), 220);
        let g = build_grid(15, 10, Rect::new(0.0, 1.5, 0.0, 1.0)).unwrap();
        assert_eq!(g.edges().len(), 15 * 11 + 10 * 16);
    }

    #[test]
    fn wedge_grid_cell_size() {
        let g = build_grid(15, 10, Rect::new(0.0, 1.5, 0.0, 1.0)).unwrap();
        assert_relative_eq!(g.hx(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(g.hy(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn cells_tile_bounds() {
        let g = build_grid(7, 3, Rect::new(-1.0, 2.0, 0.5, 1.25)).unwrap();
        let total: f64 = (0..g.cell_count()).map(|j| g.cell(j).area()).sum();
        assert_relative_eq!(total, g.bounds().area(), max_relative = 1e-12);
    }

    #[test]
    fn neighbor_counts() {
        let g = unit_grid(10);
        assert_eq!(g.neighbors(0).unwrap().len(), 2); // corner
        assert_eq!(g.neighbors(5).unwrap().len(), 3); // edge of grid
        assert_eq!(g.neighbors(55).unwrap().len(), 4); // interior
        assert!(g.neighbors(100).is_err());
    }

    #[test]
    fn interior_edges_appear_once_with_consistent_incidence() {
        let g = unit_grid(4);
        for (id, e) in g.edges().iter().enumerate() {
            assert!(g.cell_edges(e.inner).contains(&id));
            match e.outer {
                EdgeSide::Cell(c) => {
                    assert!(g.cell_edges(c).contains(&id));
                    // normal points from inner to outer
                    let ci = g.cell(e.inner);
                    let co = g.cell(c);
                    let d = [
                        (co.x_min + co.x_max) - (ci.x_min + ci.x_max),
                        (co.y_min + co.y_max) - (ci.y_min + ci.y_max),
                    ];
                    assert!(d[0] * e.normal[0] + d[1] * e.normal[1] > 0.0);
                }
                EdgeSide::Boundary(_) => {
                    // boundary normals point out of the domain
                    let mid = [
                        0.5 * (e.start[0] + e.end[0]) + 1e-6 * e.normal[0],
                        0.5 * (e.start[1] + e.end[1]) + 1e-6 * e.normal[1],
                    ];
                    assert!(!g.bounds().contains(mid[0], mid[1]));
                }
            }
        }
        // every cell touches exactly 4 edges
        for j in 0..g.cell_count() {
            assert_eq!(
                g.cell_edges(j).iter().filter(|&&e| e != usize::MAX).count(),
                4
            );
        }
    }

    #[test]
    fn locate_points() {
        let g = unit_grid(10);
        assert_eq!(g.locate(0.05, 0.05), 0);
        assert_eq!(g.locate(0.95, 0.95), 99);
        assert_eq!(g.locate(0.25, 0.65), 6 * 10 + 2);
    }
}
