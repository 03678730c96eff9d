//! Lagrange `P1`/`P2` spaces on a [`MeshGrid`] with homogeneous Dirichlet
//! conditions eliminated.
//!
//! Global dofs live on the lattice of `k * N_h + 1` points per direction;
//! for `P2` the extra points are the edge midpoints of the structured grid.
//! Only interior dofs carry unknowns.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mesh::{lattice_coord, MeshGrid, Point};
use crate::quadrature::QuadratureRule;

/// Affine data of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub origin: Point,
    pub area: f64,
    /// Gradients of the three barycentric coordinates.
    pub grad_bary: [[f64; 2]; 3],
}

impl ElementGeometry {
    fn new([p0, p1, p2]: [Point; 3]) -> Self {
        let (ax, ay) = (p1[0] - p0[0], p1[1] - p0[1]);
        let (bx, by) = (p2[0] - p0[0], p2[1] - p0[1]);
        let det = ax * by - bx * ay;
        let g1 = [by / det, -bx / det];
        let g2 = [-ay / det, ax / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        Self { origin: p0, area: 0.5 * det, grad_bary: [g0, g1, g2] }
    }

    pub fn map(vertices: &[Point; 3], bary: &[f64; 3]) -> Point {
        [
            bary[0] * vertices[0][0] + bary[1] * vertices[1][0] + bary[2] * vertices[2][0],
            bary[0] * vertices[0][1] + bary[1] * vertices[1][1] + bary[2] * vertices[2][1],
        ]
    }
}

/// Local basis on the reference element in barycentric coordinates.
///
/// `P2` ordering: the three vertex functions, then the edge functions for
/// the edges opposite vertex 0, 1 and 2.
pub(crate) fn basis_values(order: usize, l: &[f64; 3], out: &mut [f64]) {
    match order {
        1 => out[..3].copy_from_slice(l),
        2 => {
            for i in 0..3 {
                out[i] = l[i] * (2.0 * l[i] - 1.0);
            }
            out[3] = 4.0 * l[1] * l[2];
            out[4] = 4.0 * l[2] * l[0];
            out[5] = 4.0 * l[0] * l[1];
        }
        _ => unreachable!(),
    }
}

/// Derivatives with respect to the barycentric coordinates, `out[i][k] = ∂φ_i/∂λ_k`.
pub(crate) fn basis_bary_derivatives(order: usize, l: &[f64; 3], out: &mut [[f64; 3]]) {
    match order {
        1 => {
            for (i, row) in out.iter_mut().take(3).enumerate() {
                *row = [0.0; 3];
                row[i] = 1.0;
            }
        }
        2 => {
            for (i, row) in out.iter_mut().take(3).enumerate() {
                *row = [0.0; 3];
                row[i] = 4.0 * l[i] - 1.0;
            }
            out[3] = [0.0, 4.0 * l[2], 4.0 * l[1]];
            out[4] = [4.0 * l[2], 0.0, 4.0 * l[0]];
            out[5] = [4.0 * l[1], 4.0 * l[0], 0.0];
        }
        _ => unreachable!(),
    }
}

/// Tabulated basis values and barycentric derivatives at a rule's points.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub n_local: usize,
    /// `values[q * n_local + i]`
    pub values: Vec<f64>,
    /// `bary_derivs[q * n_local + i]`
    pub bary_derivs: Vec<[f64; 3]>,
}

impl BasisTable {
    pub fn new(order: usize, rule: &QuadratureRule) -> Self {
        let n_local = local_dofs(order);
        let mut values = vec![0.0; rule.len() * n_local];
        let mut bary_derivs = vec![[0.0; 3]; rule.len() * n_local];
        for (q, l) in rule.points().iter().enumerate() {
            basis_values(order, l, &mut values[q * n_local..(q + 1) * n_local]);
            basis_bary_derivatives(order, l, &mut bary_derivs[q * n_local..(q + 1) * n_local]);
        }
        Self { n_local, values, bary_derivs }
    }

    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.n_local..(q + 1) * self.n_local]
    }

    /// Physical gradients of the local basis at point `q` of element `geo`.
    pub fn gradients_at(&self, q: usize, geo: &ElementGeometry, out: &mut [[f64; 2]]) {
        let d = &self.bary_derivs[q * self.n_local..(q + 1) * self.n_local];
        for (g, dl) in out.iter_mut().zip(d) {
            *g = [
                dl[0] * geo.grad_bary[0][0] + dl[1] * geo.grad_bary[1][0] + dl[2] * geo.grad_bary[2][0],
                dl[0] * geo.grad_bary[0][1] + dl[1] * geo.grad_bary[1][1] + dl[2] * geo.grad_bary[2][1],
            ];
        }
    }
}

pub fn local_dofs(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

#[derive(Debug)]
pub struct FeSpace {
    mesh: MeshGrid,
    order: usize,
    lattice: usize,
    dof_coords: Vec<Point>,
    interior_index: Vec<Option<usize>>,
    interior_dofs: Vec<usize>,
    element_dofs: Vec<usize>,
    geometry: Vec<ElementGeometry>,
    rule: QuadratureRule,
    table: BasisTable,
}

impl FeSpace {
    pub fn new(mesh: MeshGrid, order: usize) -> Result<Arc<Self>> {
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidArgument(format!(
                "polynomial order must be 1 or 2, got {order}"
            )));
        }
        let n = mesh.subdivisions();
        let lattice = order * n;
        let row = lattice + 1;
        let r = mesh.half_width();
        let mut dof_coords = Vec::with_capacity(row * row);
        let mut interior_index = Vec::with_capacity(row * row);
        let mut interior_dofs = Vec::with_capacity((lattice - 1) * (lattice - 1));
        for j in 0..row {
            let y = lattice_coord(r, j, lattice);
            for i in 0..row {
                dof_coords.push([lattice_coord(r, i, lattice), y]);
                let interior = i != 0 && j != 0 && i != lattice && j != lattice;
                if interior {
                    interior_index.push(Some(interior_dofs.len()));
                    interior_dofs.push(j * row + i);
                } else {
                    interior_index.push(None);
                }
            }
        }

        let n_local = local_dofs(order);
        let mut element_dofs = Vec::with_capacity(mesh.n_triangles() * n_local);
        let mut geometry = Vec::with_capacity(mesh.n_triangles());
        let node_lattice = |v: usize| (order * (v % (n + 1)), order * (v / (n + 1)));
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pos = tri.map(node_lattice);
            for &(i, j) in &pos {
                element_dofs.push(j * row + i);
            }
            if order == 2 {
                for (a, b) in [(1, 2), (2, 0), (0, 1)] {
                    let i = (pos[a].0 + pos[b].0) / 2;
                    let j = (pos[a].1 + pos[b].1) / 2;
                    element_dofs.push(j * row + i);
                }
            }
            geometry.push(ElementGeometry::new(mesh.vertices(t)));
        }

        let rule = QuadratureRule::for_order(order);
        let table = BasisTable::new(order, &rule);
        Ok(Arc::new(Self {
            mesh,
            order,
            lattice,
            dof_coords,
            interior_index,
            interior_dofs,
            element_dofs,
            geometry,
            rule,
            table,
        }))
    }

    pub fn mesh(&self) -> &MeshGrid {
        &self.mesh
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_local(&self) -> usize {
        self.table.n_local
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior_dofs.len()
    }

    /// Points per direction of the dof lattice minus one (`k * N_h`).
    pub fn lattice(&self) -> usize {
        self.lattice
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    pub fn interior_index(&self) -> &[Option<usize>] {
        &self.interior_index
    }

    /// Global dof index of every interior unknown.
    pub fn interior_dofs(&self) -> &[usize] {
        &self.interior_dofs
    }

    pub fn element_dofs(&self, tri: usize) -> &[usize] {
        let n = self.table.n_local;
        &self.element_dofs[tri * n..(tri + 1) * n]
    }

    pub fn geometry(&self, tri: usize) -> &ElementGeometry {
        &self.geometry[tri]
    }

    pub fn n_elements(&self) -> usize {
        self.geometry.len()
    }

    /// Quadrature rule used by all assembled forms on this space.
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    /// Physical coordinates of quadrature point `q` on element `tri`.
    pub fn quad_point(&self, tri: usize, q: usize) -> Point {
        let v = self.mesh.vertices(tri);
        ElementGeometry::map(&v, &self.rule.points()[q])
    }

    /// Interior-dof coefficients of the element's local dofs (zero on the boundary).
    pub fn gather(&self, tri: usize, coeffs: &[Complex64], out: &mut [Complex64]) {
        for (o, &g) in out.iter_mut().zip(self.element_dofs(tri)) {
            *o = match self.interior_index[g] {
                Some(i) => coeffs[i],
                None => Complex64::new(0.0, 0.0),
            };
        }
    }

    pub fn same_space(&self, other: &FeSpace) -> bool {
        std::ptr::eq(self, other)
            || (self.order == other.order
                && self.mesh.subdivisions() == other.mesh.subdivisions()
                && self.mesh.half_width().to_bits() == other.mesh.half_width().to_bits())
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Discrete wavefunction: complex coefficients of the interior dofs.
///
/// Every distinct coefficient state carries a process-unique version tag,
/// used to key caches of field-dependent operators. Clones share the tag.
#[derive(Debug, Clone)]
pub struct FeField {
    space: Arc<FeSpace>,
    coeffs: Vec<Complex64>,
    version: u64,
}

impl FeField {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != space.n_interior() {
            return Err(Error::DimensionMismatch { expected: space.n_interior(), actual: coeffs.len() });
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            let p = space.dof_coords()[space.interior_dofs()[i]];
            return Err(Error::NonFinite { x1: p[0], x2: p[1], value: coeffs[i].to_string() });
        }
        Ok(Self { space, coeffs, version: next_version() })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_interior();
        Self { space, coeffs: vec![Complex64::new(0.0, 0.0); n], version: next_version() }
    }

    /// Nodal interpolation; boundary dofs are dropped.
    pub fn interpolate<F>(space: Arc<FeSpace>, f: F) -> Result<Self>
    where
        F: Fn(Point) -> Complex64,
    {
        let mut coeffs = Vec::with_capacity(space.n_interior());
        for &g in space.interior_dofs() {
            let p = space.dof_coords()[g];
            let v = f(p);
            if !v.is_finite() {
                return Err(Error::NonFinite { x1: p[0], x2: p[1], value: v.to_string() });
            }
            coeffs.push(v);
        }
        Ok(Self { space, coeffs, version: next_version() })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        self.version = next_version();
        &mut self.coeffs
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    /// Same space, new coefficients.
    pub fn with_coeffs(&self, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), self.coeffs.len());
        Self { space: Arc::clone(&self.space), coeffs, version: next_version() }
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        self.with_coeffs(self.coeffs.iter().map(|c| c * s).collect())
    }

    /// Value and gradient at a barycentric point of `element`.
    pub fn evaluate(&self, element: usize, bary: [f64; 3]) -> (Complex64, [Complex64; 2]) {
        let space = &*self.space;
        let n = space.n_local();
        let mut local = [Complex64::new(0.0, 0.0); 6];
        space.gather(element, &self.coeffs, &mut local[..n]);
        let mut phi = [0.0; 6];
        let mut dphi = [[0.0; 3]; 6];
        basis_values(space.order, &bary, &mut phi);
        basis_bary_derivatives(space.order, &bary, &mut dphi);
        let geo = space.geometry(element);
        let mut value = Complex64::new(0.0, 0.0);
        let mut grad = [Complex64::new(0.0, 0.0); 2];
        for i in 0..n {
            value += local[i] * phi[i];
            for d in 0..2 {
                let g = dphi[i][0] * geo.grad_bary[0][d]
                    + dphi[i][1] * geo.grad_bary[1][d]
                    + dphi[i][2] * geo.grad_bary[2][d];
                grad[d] += local[i] * g;
            }
        }
        (value, grad)
    }

    /// Field dump: header `k N_h R`, then `x1 x2 re im` for every global dof.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let space = &*self.space;
        writeln!(out, "{} {} {}", space.order, space.mesh.subdivisions(), space.mesh.half_width())?;
        for (g, p) in space.dof_coords.iter().enumerate() {
            let v = space.interior_index[g].map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i]);
            writeln!(out, "{} {} {} {}", p[0], p[1], v.re, v.im)?;
        }
        Ok(())
    }

    /// Reads a dump written by [`FeField::write_dump`] into `space`.
    ///
    /// Header or length mismatches are reported as [`Error::Format`] /
    /// [`Error::DimensionMismatch`]. Trailing non-numeric lines are ignored.
    pub fn read_dump<R: BufRead>(space: Arc<FeSpace>, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty dump".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [k, n, r] => k.parse::<usize>().ok().zip(n.parse::<usize>().ok()).zip(r.parse::<f64>().ok()),
            _ => None,
        };
        let ((k, n), r) = parsed.ok_or_else(|| Error::Format(format!("bad header line {header:?}")))?;
        if k != space.order
            || n != space.mesh.subdivisions()
            || r.to_bits() != space.mesh.half_width().to_bits()
        {
            return Err(Error::Format(format!(
                "header `{k} {n} {r}` does not match space `{} {} {}`",
                space.order,
                space.mesh.subdivisions(),
                space.mesh.half_width()
            )));
        }
        let mut values = Vec::with_capacity(space.n_dofs());
        for line in lines {
            let line = line?;
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let nums: Option<Vec<f64>> = cols.iter().map(|c| c.parse::<f64>().ok()).collect();
            match nums {
                Some(v) if v.len() == 4 => values.push(Complex64::new(v[2], v[3])),
                _ => break,
            }
        }
        if values.len() != space.n_dofs() {
            return Err(Error::DimensionMismatch { expected: space.n_dofs(), actual: values.len() });
        }
        let coeffs = space.interior_dofs.iter().map(|&g| values[g]).collect();
        FeField::new(space, coeffs)
    }
}
