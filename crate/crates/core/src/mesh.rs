//! Uniform, nested triangulations of the square `[-R, R]^2`.
//!
//! Nodes are numbered row-major: node `(i, j)` (column `i` along `x1`, row `j`
//! along `x2`) has index `j * (N + 1) + i`. Every cell is cut along its
//! lower-left to upper-right diagonal into two counterclockwise triangles.

use std::io::{self, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrid {
    half_width: f64,
    subdivisions: usize,
    node_coords: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_flags: Vec<bool>,
    mesh_size: f64,
}

/// Coordinate of lattice line `index` out of `count` intervals on `[-R, R]`.
///
/// Computed as `R * (2 i - count) / count` so that the same physical point
/// yields bit-identical coordinates on every nested lattice: doubling both
/// the numerator and `count` only scales by exact powers of two.
pub(crate) fn lattice_coord(half_width: f64, index: usize, count: usize) -> f64 {
    let num = 2 * index as i64 - count as i64;
    half_width * num as f64 / count as f64
}

impl MeshGrid {
    pub fn uniform(half_width: f64, subdivisions: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "half_width must be positive and finite, got {half_width}"
            )));
        }
        if subdivisions < 2 {
            return Err(Error::InvalidArgument(format!(
                "subdivisions must be at least 2 (got {subdivisions}); the grid would have no interior"
            )));
        }
        let n = subdivisions;
        let row = n + 1;
        let mut node_coords = Vec::with_capacity(row * row);
        let mut boundary_flags = Vec::with_capacity(row * row);
        for j in 0..=n {
            let y = lattice_coord(half_width, j, n);
            for i in 0..=n {
                node_coords.push([lattice_coord(half_width, i, n), y]);
                boundary_flags.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * row + i;
                let b = a + 1;
                let c = a + row + 1;
                let d = a + row;
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Ok(Self {
            half_width,
            subdivisions,
            node_coords,
            triangles,
            boundary_flags,
            mesh_size: 2.0 * half_width / n as f64,
        })
    }

    /// Uniform red refinement: the same square with twice the subdivisions.
    pub fn refine(&self) -> Self {
        Self::uniform(self.half_width, 2 * self.subdivisions)
            .expect("refining a valid mesh cannot fail")
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn mesh_size(&self) -> f64 {
        self.mesh_size
    }

    pub fn node_coords(&self) -> &[Point] {
        &self.node_coords
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary_flags
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, tri: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.node_coords[a], self.node_coords[b], self.node_coords[c]]
    }

    /// Signed area, positive for counterclockwise triangles.
    pub fn signed_area(&self, tri: usize) -> f64 {
        let [p0, p1, p2] = self.vertices(tri);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Whether `other` is a refinement of `self` with nested node sets.
    pub fn is_nested_in(&self, other: &MeshGrid) -> bool {
        self.half_width.to_bits() == other.half_width.to_bits()
            && other.subdivisions % self.subdivisions == 0
    }

    /// Text dump: one `x1 x2 boundary_flag` line per node, then one `i j k`
    /// line per triangle.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (p, &b) in self.node_coords.iter().zip(&self.boundary_flags) {
            writeln!(out, "{} {} {}", p[0], p[1], u8::from(b))?;
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_subdivision_grid_counts() {
        let m = MeshGrid::uniform(6.0, 16).unwrap();
        assert_eq!(m.n_triangles(), 512);
        assert_eq!(m.n_nodes(), 289);
        assert_eq!(m.mesh_size(), 0.75);
    }

    #[test]
    fn smallest_grid_has_one_interior_node() {
        let m = MeshGrid::uniform(1.0, 2).unwrap();
        assert_eq!(m.n_triangles(), 8);
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.boundary_flags().iter().filter(|b| !**b).count(), 1);
        assert_eq!(m.node_coords()[4], [0.0, 0.0]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(MeshGrid::uniform(1.0, 1).is_err());
        assert!(MeshGrid::uniform(1.0, 0).is_err());
        assert!(MeshGrid::uniform(0.0, 4).is_err());
        assert!(MeshGrid::uniform(-1.0, 4).is_err());
    }

    #[test]
    fn triangles_are_ccw_with_equal_area() {
        let m = MeshGrid::uniform(6.0, 16).unwrap();
        let h = m.mesh_size();
        let mut total = 0.0;
        for t in 0..m.n_triangles() {
            let a = m.signed_area(t);
            assert!((a - 0.5 * h * h).abs() < 1e-14);
            total += a;
        }
        assert!((total - 144.0).abs() / 144.0 < 1e-12);
    }

    #[test]
    fn boundary_flags_match_geometry() {
        let m = MeshGrid::uniform(3.0, 8).unwrap();
        for (p, &b) in m.node_coords().iter().zip(m.boundary_flags()) {
            let on = p[0].abs() == 3.0 || p[1].abs() == 3.0;
            assert_eq!(on, b, "{p:?}");
        }
    }

    #[test]
    fn interior_nodes_touch_six_triangles() {
        let m = MeshGrid::uniform(1.0, 6).unwrap();
        let mut count = vec![0usize; m.n_nodes()];
        for t in m.triangles() {
            for &v in t {
                count[v] += 1;
            }
        }
        for (v, &c) in count.iter().enumerate() {
            if !m.boundary_flags()[v] {
                assert_eq!(c, 6);
            }
        }
    }

    #[test]
    fn refinement_is_nested() {
        let coarse = MeshGrid::uniform(6.0, 16).unwrap();
        let fine = coarse.refine();
        assert_eq!(fine.subdivisions(), 32);
        assert_eq!(fine.mesh_size(), coarse.mesh_size() / 2.0);
        assert_eq!(fine.half_width().to_bits(), coarse.half_width().to_bits());
        assert!(coarse.is_nested_in(&fine));
        let fine_set: std::collections::HashSet<(u64, u64)> = fine
            .node_coords()
            .iter()
            .map(|p| (p[0].to_bits(), p[1].to_bits()))
            .collect();
        for p in coarse.node_coords() {
            assert!(fine_set.contains(&(p[0].to_bits(), p[1].to_bits())));
        }
        for t in 0..fine.n_triangles() {
            assert!((fine.signed_area(t) - coarse.signed_area(0) / 4.0).abs() < 1e-15);
        }
        assert_eq!(fine.refine().subdivisions(), 4 * coarse.subdivisions());
    }

    #[test]
    fn dump_has_one_line_per_node_and_triangle() {
        let m = MeshGrid::uniform(1.0, 2).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9 + 8);
        assert_eq!(text.lines().next().unwrap(), "-1 -1 1");
        assert_eq!(text.lines().nth(4).unwrap(), "0 0 0");
    }
}
