//! Moving-domain geometry via the graph map of the plate deflection.
//!
//! The deforming channel Ω(t) = {0 < x2 < 1 + d(t, x1)} is pulled back to
//! the fixed reference channel by ψ(x̂) = (x̂1, x̂2 (1 + d(x̂1))), with d the
//! piecewise-linear interpolant of the trace displacement. All transformed
//! quantities come from closed forms of ψ evaluated *pointwise*:
//!
//!   J  = det ∇ψ = 1 + d(x̂1),
//!   F  = ∇ψ = [[1, 0], [x̂2 d', J]],        (row i, column j = ∂ψi/∂x̂j)
//!   F⁻¹ = [[1, 0], [−x̂2 d'/J, 1/J]],
//!   domain velocity  ∂t ψ = (0, x̂2 ξ(x̂1)),   ξ = ∂t d,
//!   ∂t J = ξ(x̂1).
//!
//! These vary inside each element (d' is constant per mesh column but J is
//! linear in x̂1 and F has the x̂2 factor); nothing is averaged per element.
//! The cofactor matrix J F⁻ᵀ = [[J, −x̂2 d'], [0, 1]] is divergence-free row
//! by row, which is what makes the discrete geometric conservation law hold
//! to machine precision regardless of the deflection.
//!
//! Heights are tracked as deviations d = η − 1 from the rest height, so a
//! flat channel is all zeros.

use crate::mesh::Mesh;

/// Closed-form map data of one mesh column [xl, xl + dx] × [0, 1]:
/// trace displacement and trace velocity at its two edges.
#[derive(Debug, Clone, Copy)]
pub struct ColumnGeom {
    pub xl: f64,
    pub dx: f64,
    pub dl: f64,
    pub dr: f64,
    pub xil: f64,
    pub xir: f64,
}

/// Pointwise geometry of the moving domain at one reference point.
#[derive(Debug, Clone, Copy)]
pub struct PointGeom {
    /// Jacobian determinant 1 + d(x̂1) (the local fluid height ratio).
    pub j: f64,
    /// Deflection slope d'(x̂1).
    pub s: f64,
    /// Inverse deformation gradient.
    pub f_inv: [[f64; 2]; 2],
    /// ∂t J = ξ(x̂1).
    pub jdot: f64,
    /// Vertical domain velocity x̂2 ξ(x̂1) (horizontal component is zero).
    pub w2: f64,
}

impl ColumnGeom {
    /// A column of the resting channel.
    pub fn flat(xl: f64, dx: f64) -> ColumnGeom {
        ColumnGeom { xl, dx, dl: 0.0, dr: 0.0, xil: 0.0, xir: 0.0 }
    }

    #[inline]
    pub fn at(&self, x: [f64; 2]) -> PointGeom {
        let w = (x[0] - self.xl) / self.dx;
        let d = (1.0 - w) * self.dl + w * self.dr;
        let s = (self.dr - self.dl) / self.dx;
        let xi = (1.0 - w) * self.xil + w * self.xir;
        let j = 1.0 + d;
        PointGeom {
            j,
            s,
            f_inv: [[1.0, 0.0], [-x[1] * s / j, 1.0 / j]],
            jdot: xi,
            w2: x[1] * xi,
        }
    }
}

impl PointGeom {
    /// Pull a reference gradient to the moving domain: ∇φ = F⁻ᵀ ∇̂φ.
    #[inline]
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.f_inv[0][0] * g[0] + self.f_inv[1][0] * g[1],
            self.f_inv[0][1] * g[0] + self.f_inv[1][1] * g[1],
        ]
    }
}

/// Per-column geometry snapshot for a whole mesh, built from nodal trace
/// displacement `d` and trace velocity `xi` (both indexed like `mesh.top`).
#[derive(Debug, Clone)]
pub struct TraceGeometry {
    pub columns: Vec<ColumnGeom>,
}

impl TraceGeometry {
    pub fn build(mesh: &Mesh, d: &[f64], xi: &[f64]) -> TraceGeometry {
        assert_eq!(d.len(), mesh.nx);
        assert_eq!(xi.len(), mesh.nx);
        let dx = mesh.dx();
        let columns = (0..mesh.nx)
            .map(|i| {
                let r = (i + 1) % mesh.nx;
                ColumnGeom {
                    xl: i as f64 * dx,
                    dx,
                    dl: d[i],
                    dr: d[r],
                    xil: xi[i],
                    xir: xi[r],
                }
            })
            .collect();
        TraceGeometry { columns }
    }

    pub fn flat(mesh: &Mesh) -> TraceGeometry {
        let dx = mesh.dx();
        TraceGeometry {
            columns: (0..mesh.nx).map(|i| ColumnGeom::flat(i as f64 * dx, dx)).collect(),
        }
    }

    #[inline]
    pub fn column(&self, col: usize) -> &ColumnGeom {
        &self.columns[col]
    }
}

/// Smallest fluid height 1 + d over the trace nodes (the piecewise-linear
/// interface attains its minimum at a node).
pub fn min_height(d: &[f64]) -> f64 {
    d.iter().fold(f64::INFINITY, |m, &v| m.min(1.0 + v))
}

/// Vertex values of the deformed-configuration displacement x̂2 d(x̂1),
/// e.g. for warping output meshes. Vertices sit on column edges, so the
/// interpolant is exact there.
pub fn displacement_at_vertices(mesh: &Mesh, d: &[f64]) -> Vec<f64> {
    assert_eq!(d.len(), mesh.nx);
    (0..mesh.num_vertices())
        .map(|v| {
            let col = v % mesh.nx;
            mesh.vertices[v][1] * d[col]
        })
        .collect()
}
