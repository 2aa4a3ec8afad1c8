//! Discrete spaces and degree-of-freedom layout.
//!
//! Velocity: MINI element (continuous P1 + cubic bubble per triangle, one of
//! each per component). Pressure: continuous P1. Plate displacement, its
//! velocity and the auxiliary curvature variable live on the top boundary
//! trace: continuous P1 on the surface segments, identified with the top
//! vertex line of the mesh. All spaces are periodic in x1 because the mesh
//! already identifies the seam; clamped plate ends are supported by pinning
//! the seam trace node instead.
//!
//! Essential constraints baked into the layout:
//!  - bottom wall: u = 0 (both components),
//!  - top boundary: u1 = 0 (the plate moves vertically, so the fluid's
//!    tangential trace vanishes), while the top u2 vertex dofs are *shared*
//!    with the plate velocity — the kinematic coupling is an identification
//!    of unknowns, not an equation.
//!
//! One monolithic unknown vector per momentum solve, ordered as
//! [u1 vertices | u2 vertices | u1 bubbles | u2 bubbles | z trace | p vertices],
//! each block in mesh-entity order with constrained entries skipped.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Triangle};

/// Boundary condition for the plate end points at the periodic seam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceBc {
    /// Plate quantities are periodic in x1 (default; matches the mesh).
    Periodic,
    /// Plate displacement, velocity and curvature pinned to zero at x1 = 0.
    Clamped,
}

#[derive(Debug, Clone)]
pub struct DofLayout {
    pub trace_bc: TraceBc,
    /// Vertex dofs for each velocity component; `None` = constrained to zero.
    pub vel_vtx: [Vec<Option<u32>>; 2],
    /// Bubble dofs for each velocity component, one per triangle (all free).
    pub vel_bub: [Vec<u32>; 2],
    /// Curvature dofs per trace node; `None` only for the clamped seam node.
    pub z: Vec<Option<u32>>,
    /// Pressure dofs per vertex (all free; mean is controlled by the
    /// boundary motion, not by pinning).
    pub p: Vec<u32>,
    /// Trace node index for each vertex (`Some` exactly on the top line).
    pub vertex_trace_node: Vec<Option<u32>>,
    /// Vertex id of each trace node (the top line, left to right).
    pub trace_vertex: Vec<usize>,
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_trace: usize,
    n_unknowns: usize,
}

impl DofLayout {
    pub fn build(mesh: &Mesh, trace_bc: TraceBc) -> Result<DofLayout> {
        let nv = mesh.num_vertices();
        let nt = mesh.num_triangles();
        let ntr = mesh.top.len();
        if ntr != mesh.nx {
            return Err(Error::Structural(format!(
                "top boundary has {ntr} vertices, expected nx = {}",
                mesh.nx
            )));
        }

        let mut on_bottom = vec![false; nv];
        for &v in &mesh.bottom {
            on_bottom[v] = true;
        }
        let mut vertex_trace_node = vec![None; nv];
        for (i, &v) in mesh.top.iter().enumerate() {
            vertex_trace_node[v] = Some(i as u32);
        }

        let clamped = trace_bc == TraceBc::Clamped;
        let seam_top = mesh.top[0];

        let mut next = 0u32;
        let mut take = || {
            let id = next;
            next += 1;
            id
        };

        let mut vel_vtx = [vec![None; nv], vec![None; nv]];
        for v in 0..nv {
            // u1: zero on bottom and top.
            if !on_bottom[v] && vertex_trace_node[v].is_none() {
                vel_vtx[0][v] = Some(take());
            }
        }
        for v in 0..nv {
            // u2: zero on bottom; on top it doubles as the plate velocity,
            // pinned only for a clamped plate at the seam.
            let pinned = on_bottom[v] || (clamped && v == seam_top);
            if !pinned {
                vel_vtx[1][v] = Some(take());
            }
        }
        let vel_bub = [
            (0..nt).map(|_| take()).collect::<Vec<_>>(),
            (0..nt).map(|_| take()).collect::<Vec<_>>(),
        ];
        let z: Vec<Option<u32>> = (0..ntr)
            .map(|i| if clamped && i == 0 { None } else { Some(take()) })
            .collect();
        let p: Vec<u32> = (0..nv).map(|_| take()).collect();

        Ok(DofLayout {
            trace_bc,
            vel_vtx,
            vel_bub,
            z,
            p,
            vertex_trace_node,
            trace_vertex: mesh.top.clone(),
            n_vertices: nv,
            n_triangles: nt,
            n_trace: ntr,
            n_unknowns: next as usize,
        })
    }

    /// Number of unknowns actually solved for in the momentum step.
    pub fn step1_unknowns(&self) -> usize {
        self.n_unknowns
    }

    /// Nominal momentum-step dimension counted over full product spaces
    /// (2 velocity components on P1+bubble, domain-wide curvature, pressure),
    /// before any constraint elimination — the size a generic FE backend
    /// reports for the same discretization.
    pub fn step1_dim_nominal(&self) -> usize {
        2 * (self.n_vertices + self.n_triangles) + 2 * self.n_vertices
    }

    /// Nominal size of the displacement-extension solve (scalar P1+bubble).
    pub fn extension_dim_nominal(&self) -> usize {
        self.n_vertices + self.n_triangles
    }

    /// Nominal size of the fully coupled monolithic system (momentum step
    /// plus the displacement extension).
    pub fn full_dim_nominal(&self) -> usize {
        self.step1_dim_nominal() + self.extension_dim_nominal()
    }

    pub fn vel_dof(&self, comp: usize, vertex: usize) -> Option<usize> {
        self.vel_vtx[comp][vertex].map(|d| d as usize)
    }

    pub fn bub_dof(&self, comp: usize, tri: usize) -> usize {
        self.vel_bub[comp][tri] as usize
    }

    pub fn z_dof(&self, trace_node: usize) -> Option<usize> {
        self.z[trace_node].map(|d| d as usize)
    }

    pub fn p_dof(&self, vertex: usize) -> usize {
        self.p[vertex] as usize
    }
}

/// Values and reference-domain gradients of the four local velocity basis
/// functions on a triangle: the three vertex hats followed by the bubble
/// b = 27 λ0 λ1 λ2 (unit value at the barycenter, zero trace on ∂K).
#[derive(Debug, Clone, Copy)]
pub struct BasisEval {
    pub val: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

/// Evaluate P1 + bubble at a barycentric point of `tri`. Gradients are with
/// respect to the (reference-domain) coordinates stored in the triangle.
pub fn evaluate_basis(tri: &Triangle, lambda: [f64; 3]) -> BasisEval {
    let [a, b, c] = tri.x;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let g1 = [(c[1] - a[1]) / det, (a[0] - c[0]) / det];
    let g2 = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    let grads = [g0, g1, g2];

    let bubble = 27.0 * lambda[0] * lambda[1] * lambda[2];
    let mut gb = [0.0; 2];
    for d in 0..2 {
        gb[d] = 27.0
            * (grads[0][d] * lambda[1] * lambda[2]
                + grads[1][d] * lambda[0] * lambda[2]
                + grads[2][d] * lambda[0] * lambda[1]);
    }
    BasisEval {
        val: [lambda[0], lambda[1], lambda[2], bubble],
        grad: [g0, g1, g2, gb],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_reference_mesh;

    #[test]
    fn smallest_mesh_dof_count() {
        // 2x1 cells: 4 vertices, 4 triangles, 2 trace nodes.
        // u1: every vertex lies on top or bottom -> 0 free.
        // u2: 2 top vertices free. Bubbles: 8. z: 2. p: 4.
        let mesh = build_reference_mesh(2.0, 2, 1).unwrap();
        let lay = DofLayout::build(&mesh, TraceBc::Periodic).unwrap();
        assert_eq!(lay.step1_unknowns(), 2 + 8 + 2 + 4);
        assert_eq!(lay.step1_dim_nominal(), 2 * (4 + 4) + 2 * 4);
    }

    #[test]
    fn nominal_sizes_on_fine_production_mesh() {
        // The 320x160 production mesh: nominal sizes of the momentum step,
        // the displacement extension, and the fully coupled system.
        let mesh = build_reference_mesh(2.0, 320, 160).unwrap();
        let lay = DofLayout::build(&mesh, TraceBc::Periodic).unwrap();
        assert_eq!(lay.step1_dim_nominal(), 410_880);
        assert_eq!(lay.extension_dim_nominal(), 153_920);
        assert_eq!(lay.full_dim_nominal(), 564_800);
    }

    #[test]
    fn dof_indices_form_a_bijection() {
        let mesh = build_reference_mesh(1.0, 6, 3).unwrap();
        for bc in [TraceBc::Periodic, TraceBc::Clamped] {
            let lay = DofLayout::build(&mesh, bc).unwrap();
            let mut seen = vec![false; lay.step1_unknowns()];
            let mut mark = |d: usize| {
                assert!(!seen[d], "dof {d} assigned twice");
                seen[d] = true;
            };
            for c in 0..2 {
                for v in 0..lay.n_vertices {
                    if let Some(d) = lay.vel_dof(c, v) {
                        mark(d);
                    }
                }
                for t in 0..lay.n_triangles {
                    mark(lay.bub_dof(c, t));
                }
            }
            for i in 0..lay.n_trace {
                if let Some(d) = lay.z_dof(i) {
                    mark(d);
                }
            }
            for v in 0..lay.n_vertices {
                mark(lay.p_dof(v));
            }
            assert!(seen.iter().all(|&s| s), "unassigned dof indices");
        }
    }

    #[test]
    fn clamped_pins_seam_trace() {
        let mesh = build_reference_mesh(1.0, 6, 3).unwrap();
        let per = DofLayout::build(&mesh, TraceBc::Periodic).unwrap();
        let cl = DofLayout::build(&mesh, TraceBc::Clamped).unwrap();
        // Clamping removes one u2 vertex dof and one z dof.
        assert_eq!(per.step1_unknowns(), cl.step1_unknowns() + 2);
        let seam_top = cl.trace_vertex[0];
        assert_eq!(cl.vel_dof(1, seam_top), None);
        assert_eq!(cl.z_dof(0), None);
        assert!(per.vel_dof(1, seam_top).is_some());
    }

    #[test]
    fn walls_are_constrained() {
        let mesh = build_reference_mesh(2.0, 8, 4).unwrap();
        let lay = DofLayout::build(&mesh, TraceBc::Periodic).unwrap();
        for &v in &mesh.bottom {
            assert_eq!(lay.vel_dof(0, v), None);
            assert_eq!(lay.vel_dof(1, v), None);
        }
        for &v in &mesh.top {
            assert_eq!(lay.vel_dof(0, v), None);
            assert!(lay.vel_dof(1, v).is_some(), "top u2 is a shared unknown");
        }
        // Interior vertices carry both components.
        let interior = (0..mesh.num_vertices()).find(|&v| {
            !mesh.bottom.contains(&v) && lay.vertex_trace_node[v].is_none()
        });
        let v = interior.expect("mesh has interior vertices");
        assert!(lay.vel_dof(0, v).is_some() && lay.vel_dof(1, v).is_some());
    }

    #[test]
    fn basis_partition_of_unity_and_bubble_trace() {
        let mesh = build_reference_mesh(2.0, 5, 3).unwrap();
        let tri = &mesh.triangles[7];
        for lam in [
            [1.0, 0.0, 0.0],
            [0.0, 0.4, 0.6],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.2, 0.5, 0.3],
        ] {
            let e = evaluate_basis(tri, lam);
            let hat_sum: f64 = e.val[..3].iter().sum();
            assert!((hat_sum - 1.0).abs() < 1e-14);
            if lam.contains(&0.0) {
                assert!(e.val[3].abs() < 1e-14, "bubble must vanish on edges");
            }
        }
        let bary = evaluate_basis(tri, [1.0 / 3.0; 3]);
        assert!((bary.val[3] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn basis_reproduces_linear_functions() {
        let mesh = build_reference_mesh(2.0, 5, 3).unwrap();
        let f = |x: [f64; 2]| 0.7 - 1.3 * x[0] + 2.1 * x[1];
        for tri in &mesh.triangles {
            let lam = [0.23, 0.41, 0.36];
            let e = evaluate_basis(tri, lam);
            let x = [
                lam[0] * tri.x[0][0] + lam[1] * tri.x[1][0] + lam[2] * tri.x[2][0],
                lam[0] * tri.x[0][1] + lam[1] * tri.x[1][1] + lam[2] * tri.x[2][1],
            ];
            let mut val = 0.0;
            let mut grad = [0.0; 2];
            for k in 0..3 {
                val += e.val[k] * f(tri.x[k]);
                grad[0] += e.grad[k][0] * f(tri.x[k]);
                grad[1] += e.grad[k][1] * f(tri.x[k]);
            }
            assert!((val - f(x)).abs() < 1e-13);
            assert!((grad[0] + 1.3).abs() < 1e-12 && (grad[1] - 2.1).abs() < 1e-12);
        }
    }

    #[test]
    fn bubble_gradient_matches_finite_differences() {
        let mesh = build_reference_mesh(2.0, 5, 3).unwrap();
        let tri = &mesh.triangles[4];
        let lam = [0.3, 0.45, 0.25];
        let e = evaluate_basis(tri, lam);
        // Perturb in physical x: recompute barycentric coordinates directly.
        let bary = |x: [f64; 2]| -> [f64; 3] {
            let [a, b, c] = tri.x;
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
            let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
            [1.0 - l1 - l2, l1, l2]
        };
        let x0 = [
            lam[0] * tri.x[0][0] + lam[1] * tri.x[1][0] + lam[2] * tri.x[2][0],
            lam[0] * tri.x[0][1] + lam[1] * tri.x[1][1] + lam[2] * tri.x[2][1],
        ];
        let h = 1e-6;
        for d in 0..2 {
            let mut xp = x0;
            let mut xm = x0;
            xp[d] += h;
            xm[d] -= h;
            let bp = bary(xp);
            let bm = bary(xm);
            let fp = 27.0 * bp[0] * bp[1] * bp[2];
            let fm = 27.0 * bm[0] * bm[1] * bm[2];
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - e.grad[3][d]).abs() < 1e-6,
                "component {d}: fd {fd} vs analytic {}",
                e.grad[3][d]
            );
        }
    }
}
