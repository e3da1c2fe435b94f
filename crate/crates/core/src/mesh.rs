//! Structured periodic rectangular meshes.
//!
//! Cells are indexed row-major (`c = j * nx + i`). Edges are grouped by the
//! axis of their normal: the `nx * ny` edges normal to `e1` come first, each
//! joining cell `(i, j)` to `(i + 1, j)`, followed by the `nx * ny` edges
//! normal to `e2` joining `(i, j)` to `(i, j + 1)`, both with periodic wrap.
//! The stored orientation is always `K -> L` with `nu_{sigma,K} = +e_axis`.

use crate::error::{Error, Result};

/// Spatial dimension of every mesh built here.
pub const DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl MeshSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        Self { nx, ny, lx, ly }
    }

    /// `k x k` cells on the unit square.
    pub fn unit_square(k: usize) -> Self {
        Self::new(k, k, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidMesh(format!(
                "periodic wrap needs at least two cells per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) || !self.lx.is_finite() || !self.ly.is_finite() {
            return Err(Error::InvalidMesh(format!(
                "domain extents must be positive, got {} x {}",
                self.lx, self.ly
            )));
        }
        Ok(())
    }
}

/// Number of cells per axis; carried by every field so that operators can
/// refuse data that belongs to another mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
}

impl GridShape {
    pub fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn as_tuple(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub center: [f64; 2],
    pub measure: f64,
    pub diameter: f64,
    /// `|dK|`, the summed measure of the cell's edges.
    pub perimeter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub axis: Axis,
    /// Cell on the negative side (`nu_{sigma,K} = +e_axis`).
    pub k: usize,
    /// Cell on the positive side.
    pub l: usize,
    /// `|sigma|`
    pub measure: f64,
    /// `d_sigma = |x_K - x_L|`
    pub distance: f64,
    /// `|D_sigma| = d_sigma |sigma|`
    pub dual_measure: f64,
}

impl Edge {
    /// Unit normal pointing out of `K`.
    pub fn normal(&self) -> [f64; 2] {
        match self.axis {
            Axis::X => [1.0, 0.0],
            Axis::Y => [0.0, 1.0],
        }
    }

    /// Outward normal of this edge seen from `cell`, which must be `k` or `l`.
    pub fn normal_from(&self, cell: usize) -> [f64; 2] {
        let n = self.normal();
        if cell == self.k {
            n
        } else {
            debug_assert_eq!(cell, self.l);
            [-n[0], -n[1]]
        }
    }
}

/// One entry of a cell's edge list: the edge index and whether the cell is
/// the `K` side of the stored orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellEdge {
    pub edge: usize,
    pub owner: bool,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    spec: MeshSpec,
    hx: f64,
    hy: f64,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    cell_edges: Vec<[CellEdge; 2 * DIM]>,
    h: f64,
}

impl Mesh {
    pub fn spec(&self) -> MeshSpec {
        self.spec
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.spec.nx, self.spec.ny)
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn ny(&self) -> usize {
        self.spec.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    /// Mesh size `h = sup_K diam(K)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.spec.lx * self.spec.ly
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// East, west, north, south.
    pub fn cell_edges(&self, c: usize) -> &[CellEdge; 2 * DIM] {
        &self.cell_edges[c]
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.spec.nx + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.spec.nx, c / self.spec.nx)
    }

    /// Edge between `(i, j)` and its neighbour in the positive `axis` direction.
    pub fn edge_index(&self, axis: Axis, i: usize, j: usize) -> usize {
        let offset = match axis {
            Axis::X => 0,
            Axis::Y => self.cells.len(),
        };
        offset + self.cell_index(i, j)
    }
}

pub fn build_uniform_mesh(spec: MeshSpec) -> Result<Mesh> {
    spec.validate()?;
    let MeshSpec { nx, ny, lx, ly } = spec;
    let hx = lx / nx as f64;
    let hy = ly / ny as f64;
    let measure = hx * hy;
    let diameter = hx.hypot(hy);

    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(Cell {
                center: [(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy],
                measure,
                diameter,
                perimeter: 2.0 * (hx + hy),
            });
        }
    }

    let idx = |i: usize, j: usize| j * nx + i;
    let mut edges = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            edges.push(Edge {
                axis: Axis::X,
                k: idx(i, j),
                l: idx((i + 1) % nx, j),
                measure: hy,
                distance: hx,
                dual_measure: hx * hy,
            });
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            edges.push(Edge {
                axis: Axis::Y,
                k: idx(i, j),
                l: idx(i, (j + 1) % ny),
                measure: hx,
                distance: hy,
                dual_measure: hx * hy,
            });
        }
    }

    let n = nx * ny;
    let cell_edges = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| {
            let west = (i + nx - 1) % nx;
            let south = (j + ny - 1) % ny;
            [
                CellEdge { edge: idx(i, j), owner: true },
                CellEdge { edge: idx(west, j), owner: false },
                CellEdge { edge: n + idx(i, j), owner: true },
                CellEdge { edge: n + idx(i, south), owner: false },
            ]
        })
        .collect();

    let h = cells.iter().map(|c| c.diameter).fold(0.0, f64::max);
    Ok(Mesh {
        spec,
        hx,
        hy,
        cells,
        edges,
        cell_edges,
        h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub alpha: f64,
    pub h: f64,
}

/// Tightest regularity constants realized by `mesh`.
pub fn mesh_regularity(mesh: &Mesh) -> RegularityReport {
    let mut theta_lo = f64::INFINITY;
    let mut theta_hi = 0.0_f64;
    for (c, cell) in mesh.cells().iter().enumerate() {
        for ce in mesh.cell_edges(c) {
            let ratio = mesh.edge(ce.edge).dual_measure / cell.measure;
            theta_lo = theta_lo.min(ratio);
            theta_hi = theta_hi.max(ratio);
        }
    }
    let min_distance = mesh
        .edges()
        .iter()
        .map(|e| e.distance)
        .fold(f64::INFINITY, f64::min);
    RegularityReport {
        theta_lo,
        theta_hi,
        alpha: min_distance / mesh.h(),
        h: mesh.h(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_geometry() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(2)).unwrap();
        assert_eq!(mesh.num_cells(), 4);
        assert_eq!(mesh.num_edges(), 8);
        for cell in mesh.cells() {
            assert_eq!(cell.measure, 0.25);
        }
        for e in mesh.edges() {
            assert_eq!(e.measure, 0.5);
            assert_eq!(e.distance, 0.5);
            assert_eq!(e.dual_measure, 0.25);
        }
        assert!((mesh.h() - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(build_uniform_mesh(MeshSpec::new(4, 1, 1.0, 1.0)).is_err());
        assert!(build_uniform_mesh(MeshSpec::new(1, 4, 1.0, 1.0)).is_err());
        assert!(build_uniform_mesh(MeshSpec::new(4, 4, 0.0, 1.0)).is_err());
        assert!(build_uniform_mesh(MeshSpec::new(4, 4, 1.0, -2.0)).is_err());
    }

    #[test]
    fn counts_on_32() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(32)).unwrap();
        assert_eq!(mesh.num_cells(), 1024);
        assert_eq!(mesh.num_edges(), 2048);
        assert!((mesh.h() - 2f64.sqrt() / 32.0).abs() < 1e-16);
    }

    #[test]
    fn regularity_of_uniform_square_grid() {
        let mesh = build_uniform_mesh(MeshSpec::unit_square(32)).unwrap();
        let reg = mesh_regularity(&mesh);
        assert!((reg.theta_lo - 1.0).abs() < 1e-12);
        assert!((reg.theta_hi - 1.0).abs() < 1e-12);
        assert!((reg.alpha - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(reg.alpha * reg.h <= mesh.edges().iter().map(|e| e.distance).fold(1.0, f64::min) + 1e-15);

        let small = mesh_regularity(&build_uniform_mesh(MeshSpec::unit_square(2)).unwrap());
        assert!((small.h - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn incidence_is_consistent() {
        let mesh = build_uniform_mesh(MeshSpec::new(5, 3, 2.0, 0.7)).unwrap();
        let mut seen = vec![0usize; mesh.num_edges()];
        for c in 0..mesh.num_cells() {
            for ce in mesh.cell_edges(c) {
                seen[ce.edge] += 1;
                let e = mesh.edge(ce.edge);
                assert_eq!(if ce.owner { e.k } else { e.l }, c);
                let nk = e.normal_from(e.k);
                let nl = e.normal_from(e.l);
                assert_eq!(nk, [-nl[0], -nl[1]]);
            }
        }
        assert!(seen.iter().all(|&s| s == 2));
    }

    #[test]
    fn dual_cells_tile_domain_per_axis() {
        let mesh = build_uniform_mesh(MeshSpec::new(7, 4, 1.3, 0.9)).unwrap();
        let total: f64 = mesh.cells().iter().map(|c| c.measure).sum();
        for axis in [Axis::X, Axis::Y] {
            let dual: f64 = mesh
                .edges()
                .iter()
                .filter(|e| e.axis == axis)
                .map(|e| e.dual_measure)
                .sum();
            assert!((dual - total).abs() <= 1e-12 * total);
        }
        assert!((total - 1.3 * 0.9).abs() < 1e-12);
    }
}
