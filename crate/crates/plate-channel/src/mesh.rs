//! Structured triangulations of the reference rectangle Ω̂ = (0,L₁)×(0,1).
//!
//! The computational domain is always this fixed rectangle; the moving fluid
//! domain is its image under the ALE map built in [`crate::geometry`]. The
//! mesh is an nx×ny grid of cells, each split along the lower-left →
//! upper-right diagonal, with the two vertical sides identified (periodic in
//! x₁). Identification happens at the vertex level: a vertex on x₁ = L₁ *is*
//! the vertex on x₁ = 0 of the same row, so downstream dof maps never see
//! periodic constraints.
//!
//! Triangles that cross the seam store unwrapped coordinates (x₁ up to L₁),
//! so element geometry is always computed on a true triangle.

use crate::error::{Error, Result};

/// Barycentric tolerance for point location.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Triangle {
    /// Vertex ids (periodically merged), counter-clockwise.
    pub v: [usize; 3],
    /// Unwrapped vertex coordinates; x₁ may equal L₁ on seam elements.
    pub x: [[f64; 2]; 3],
    /// Structured column index: the x₁-band [col·Δx, (col+1)·Δx] containing
    /// the element. Every element lies in exactly one band, which is also a
    /// single segment of the surface mesh — the geometry of module
    /// `geometry` leans on this.
    pub col: usize,
}

impl Triangle {
    /// Twice the signed area (positive for the CCW orientation we build).
    pub fn double_area(&self) -> f64 {
        let [a, b, c] = self.x;
        (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub l1: f64,
    pub nx: usize,
    pub ny: usize,
    /// Refinement generation (0 for a freshly built mesh).
    pub level: u32,
    /// Canonical vertex coordinates, x₁ ∈ [0, L₁); id = j·nx + i.
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    /// Vertex ids on the bottom boundary Γ_D (x₂ = 0), left to right.
    pub bottom: Vec<usize>,
    /// Vertex ids on the top boundary Σ (x₂ = 1), left to right.
    pub top: Vec<usize>,
    /// Vertices on x₁ = 0; each stands for its merged partner at x₁ = L₁.
    pub seam: Vec<usize>,
    /// Hypotenuse of one cell's triangles, √(Δx² + Δy²) — the mesh size
    /// reported by refinement ladders.
    pub h: f64,
}

impl Mesh {
    pub fn dx(&self) -> f64 {
        self.l1 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Inradius of the (congruent) triangles: (a + b − c)/2 for a right
    /// triangle with legs a, b and hypotenuse c. The ratio h/inradius is the
    /// shape-regularity constant, fixed across uniform refinement.
    pub fn inradius(&self) -> f64 {
        let (a, b) = (self.dx(), self.dy());
        (a + b - a.hypot(b)) / 2.0
    }
}

/// Build the structured periodic grid: nx×ny cells, 2·nx·ny triangles,
/// nx·(ny+1) distinct vertices after the periodic merge.
pub fn build_reference_mesh(l1: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if !(l1 > 0.0) {
        return Err(Error::Structural(format!("domain length must be positive, got {l1}")));
    }
    if nx < 2 {
        return Err(Error::Structural(format!(
            "nx = {nx} < 2: periodic identification would be degenerate"
        )));
    }
    if ny < 1 {
        return Err(Error::Structural("ny must be at least 1".into()));
    }

    let dx = l1 / nx as f64;
    let dy = 1.0 / ny as f64;

    let mut vertices = Vec::with_capacity(nx * (ny + 1));
    for j in 0..=ny {
        for i in 0..nx {
            vertices.push([i as f64 * dx, j as f64 * dy]);
        }
    }

    let vid = |i: usize, j: usize| j * nx + (i % nx);
    let coord = |i: usize, j: usize| [i as f64 * dx, j as f64 * dy];

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // Lower triangle: (i,j) → (i+1,j) → (i+1,j+1), CCW.
            triangles.push(Triangle {
                v: [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)],
                x: [coord(i, j), coord(i + 1, j), coord(i + 1, j + 1)],
                col: i,
            });
            // Upper triangle: (i,j) → (i+1,j+1) → (i,j+1), CCW.
            triangles.push(Triangle {
                v: [vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)],
                x: [coord(i, j), coord(i + 1, j + 1), coord(i, j + 1)],
                col: i,
            });
        }
    }

    let bottom = (0..nx).collect();
    let top = (0..nx).map(|i| ny * nx + i).collect();
    let seam = (0..=ny).map(|j| j * nx).collect();

    Ok(Mesh {
        l1,
        nx,
        ny,
        level: 0,
        vertices,
        triangles,
        bottom,
        top,
        seam,
        h: dx.hypot(dy),
    })
}

/// Split every triangle into 4 congruent children. For this structured
/// family the result coincides with the grid at doubled resolution (the
/// midpoint split of a same-diagonal pattern reproduces the pattern), so the
/// refined mesh is built directly at 2nx×2ny; nestedness of the vertex sets
/// is a theorem of the construction and checked in tests.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let mut fine = build_reference_mesh(mesh.l1, 2 * mesh.nx, 2 * mesh.ny)
        .expect("refining a valid mesh cannot fail");
    fine.level = mesh.level + 1;
    fine
}

/// Locate a point: wrap x₁ modulo L₁, find the containing triangle, return
/// its index and barycentric coordinates (all ≥ −LOCATE_TOL).
pub fn locate_point(mesh: &Mesh, point: [f64; 2]) -> Result<(usize, [f64; 3])> {
    let [x1, x2] = point;
    if !(x1.is_finite() && x2.is_finite()) {
        return Err(Error::Data(format!("locate_point: non-finite point {point:?}")));
    }
    if !(-LOCATE_TOL..=1.0 + LOCATE_TOL).contains(&x2) {
        return Err(Error::Structural(format!(
            "point ({x1}, {x2}) outside the reference domain (x2 not in [0,1])"
        )));
    }

    let x1 = x1.rem_euclid(mesh.l1);
    let x1 = if x1 >= mesh.l1 { 0.0 } else { x1 }; // rem_euclid can round up to L1
    let x2 = x2.clamp(0.0, 1.0);

    let (dx, dy) = (mesh.dx(), mesh.dy());
    let i = ((x1 / dx) as usize).min(mesh.nx - 1);
    let j = ((x2 / dy) as usize).min(mesh.ny - 1);
    let lx = x1 - i as f64 * dx;
    let ly = x2 - j as f64 * dy;

    // Below (or on) the cell diagonal → lower triangle.
    let lower = ly * dx <= lx * dy;
    let t = 2 * (j * mesh.nx + i) + usize::from(!lower);
    let tri = &mesh.triangles[t];

    let [a, b, c] = tri.x;
    let det = tri.double_area();
    let l1b = ((x1 - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x2 - a[1])) / det;
    let l2b = ((b[0] - a[0]) * (x2 - a[1]) - (x1 - a[0]) * (b[1] - a[1])) / det;
    let bary = [1.0 - l1b - l2b, l1b, l2b];
    debug_assert!(bary.iter().all(|&l| l >= -LOCATE_TOL), "bary {bary:?} for {point:?}");
    let _ = (b, c);
    Ok((t, bary))
}

/// The induced 1D mesh on the top boundary Σ. Trace node i sits at
/// x₁ = i·Δx and is mesh vertex `top[i]`; segment i joins trace nodes
/// i and (i+1) mod nx.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub l1: f64,
    pub n: usize,
    /// Segment endpoints as trace node ids, [i, (i+1) % n].
    pub segments: Vec<[usize; 2]>,
    /// Unwrapped x₁ endpoints per segment.
    pub seg_x: Vec<[f64; 2]>,
    /// The top-row triangle owning each segment's parent edge.
    pub parent_tri: Vec<usize>,
}

impl SurfaceMesh {
    pub fn dx(&self) -> f64 {
        self.l1 / self.n as f64
    }

    /// Node coordinate (canonical, in [0, L₁)).
    pub fn node_x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }
}

pub fn surface_mesh(mesh: &Mesh) -> SurfaceMesh {
    let nx = mesh.nx;
    let dx = mesh.dx();
    let segments = (0..nx).map(|i| [i, (i + 1) % nx]).collect();
    let seg_x = (0..nx)
        .map(|i| [i as f64 * dx, (i + 1) as f64 * dx])
        .collect();
    // The top edge of column i belongs to the upper triangle of the top cell.
    let parent_tri = (0..nx).map(|i| 2 * ((mesh.ny - 1) * nx + i) + 1).collect();
    SurfaceMesh {
        l1: mesh.l1,
        n: nx,
        segments,
        seg_x,
        parent_tri,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_mesh_counts() {
        let m = build_reference_mesh(2.0, 2, 1).unwrap();
        assert_eq!(m.num_triangles(), 4);
        assert_eq!(m.num_vertices(), 4); // periodic merge: 2 per row, 2 rows
        assert_eq!(m.top, vec![2, 3]);
        assert_eq!(m.bottom, vec![0, 1]);
    }

    #[test]
    fn uniform_areas_8x4() {
        let m = build_reference_mesh(2.0, 8, 4).unwrap();
        assert_eq!(m.num_triangles(), 64);
        let expect = 2.0 / 8.0 * (1.0 / 4.0) / 2.0; // 1/32
        for t in &m.triangles {
            assert!((t.double_area() / 2.0 - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(build_reference_mesh(2.0, 1, 1).is_err());
        assert!(build_reference_mesh(2.0, 2, 0).is_err());
        assert!(build_reference_mesh(0.0, 2, 1).is_err());
    }

    #[test]
    fn total_area_is_exact_across_levels() {
        let mut m = build_reference_mesh(2.0, 8, 4).unwrap();
        for _ in 0..3 {
            let total: f64 = m.triangles.iter().map(|t| t.double_area() / 2.0).sum();
            assert!((total - m.l1).abs() <= 1e-13 * m.l1, "total {total}");
            m = refine_uniform(&m);
        }
    }

    #[test]
    fn ladder_h_matches_reported_values() {
        // 10×5 on the 2×1 rectangle: h = 0.2·√2 ≈ 2.83e-1, halving exactly.
        let mut m = build_reference_mesh(2.0, 10, 5).unwrap();
        assert!((m.h - 2.83e-1).abs() < 5e-4);
        let h0 = m.h;
        m = refine_uniform(&m);
        assert_eq!(m.level, 1);
        assert!((m.h - h0 / 2.0).abs() < 1e-15);
        assert!((m.h - 1.41e-1).abs() < 5e-4);
    }

    #[test]
    fn refinement_is_nested_and_quadruples() {
        let coarse = build_reference_mesh(2.0, 4, 2).unwrap();
        let fine = refine_uniform(&coarse);
        let grand = refine_uniform(&fine);
        assert_eq!(fine.num_triangles(), 4 * coarse.num_triangles());
        // Every coarse vertex appears verbatim two levels down.
        for v in &coarse.vertices {
            assert!(
                grand
                    .vertices
                    .iter()
                    .any(|w| (w[0] - v[0]).abs() < 1e-14 && (w[1] - v[1]).abs() < 1e-14),
                "coarse vertex {v:?} missing after two refinements"
            );
        }
    }

    #[test]
    fn shape_regularity_constant_across_levels() {
        let m0 = build_reference_mesh(2.0, 8, 4).unwrap();
        let m1 = refine_uniform(&m0);
        let r0 = m0.h / m0.inradius();
        let r1 = m1.h / m1.inradius();
        assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn conforming_shared_edges() {
        // Each interior edge must appear exactly twice (once per orientation),
        // boundary (top/bottom) edges exactly once.
        use std::collections::HashMap;
        let m = build_reference_mesh(2.0, 4, 3).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &m.triangles {
            for e in 0..3 {
                let (a, b) = (t.v[e], t.v[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_default() += 1;
            }
        }
        for (&(a, b), &c) in &count {
            let horizontal_boundary =
                (m.vertices[a][1] == m.vertices[b][1]) && (m.vertices[a][1] == 0.0 || m.vertices[a][1] == 1.0);
            if horizontal_boundary {
                assert_eq!(c, 1, "boundary edge ({a},{b}) shared {c} times");
            } else {
                assert_eq!(c, 2, "interior edge ({a},{b}) shared {c} times");
            }
        }
    }

    #[test]
    fn positive_orientation() {
        let m = build_reference_mesh(2.0, 6, 3).unwrap();
        for t in &m.triangles {
            assert!(t.double_area() > 0.0);
        }
    }

    #[test]
    fn locate_vertex_and_centroid() {
        let m = build_reference_mesh(2.0, 4, 2).unwrap();
        // A vertex: some barycentric coordinate is 1.
        let (_, b) = locate_point(&m, [0.5, 0.5]).unwrap();
        assert!(b.iter().any(|&l| (l - 1.0).abs() < 1e-12), "{b:?}");
        // A centroid: barycentrics (1/3, 1/3, 1/3).
        let t = &m.triangles[0];
        let cx = (t.x[0][0] + t.x[1][0] + t.x[2][0]) / 3.0;
        let cy = (t.x[0][1] + t.x[1][1] + t.x[2][1]) / 3.0;
        let (ti, b) = locate_point(&m, [cx, cy]).unwrap();
        assert_eq!(ti, 0);
        for l in b {
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_wraps_periodically() {
        let m = build_reference_mesh(2.0, 4, 2).unwrap();
        let a = locate_point(&m, [0.1, 0.3]).unwrap();
        let b = locate_point(&m, [2.1, 0.3]).unwrap();
        let c = locate_point(&m, [-1.9, 0.3]).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.0, c.0);
        for k in 0..3 {
            assert!((a.1[k] - b.1[k]).abs() < 1e-12);
            assert!((a.1[k] - c.1[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn locate_rejects_outside_domain() {
        let m = build_reference_mesh(2.0, 4, 2).unwrap();
        assert!(locate_point(&m, [0.5, 1.5]).is_err());
        assert!(locate_point(&m, [0.5, -0.2]).is_err());
    }

    #[test]
    fn locate_reproduces_point_under_affine_map() {
        let m = build_reference_mesh(2.0, 5, 3).unwrap();
        for &p in &[[0.013, 0.71], [1.999, 0.334], [0.4, 1.0], [1.2, 0.0]] {
            let (ti, b) = locate_point(&m, p).unwrap();
            let t = &m.triangles[ti];
            let x = (0..2)
                .map(|d| b[0] * t.x[0][d] + b[1] * t.x[1][d] + b[2] * t.x[2][d])
                .collect::<Vec<_>>();
            assert!((x[0] - p[0]).abs() < 1e-12 && (x[1] - p[1]).abs() < 1e-12);
            assert!(b.iter().all(|&l| l >= -LOCATE_TOL));
        }
    }

    #[test]
    fn seam_identification_unique_per_row() {
        let m = build_reference_mesh(2.0, 4, 3).unwrap();
        assert_eq!(m.seam.len(), m.ny + 1);
        for (j, &v) in m.seam.iter().enumerate() {
            assert_eq!(m.vertices[v][0], 0.0);
            assert!((m.vertices[v][1] - j as f64 * m.dy()).abs() < 1e-15);
        }
        // Seam triangles reference the x₁=0 vertex with unwrapped coordinate L₁.
        let t = &m.triangles[2 * (m.nx - 1)]; // lower triangle of last column, row 0
        assert_eq!(t.v[1], 0);
        assert_eq!(t.x[1][0], m.l1);
    }

    #[test]
    fn surface_mesh_partitions_sigma() {
        let m = build_reference_mesh(2.0, 8, 4).unwrap();
        let s = surface_mesh(&m);
        assert_eq!(s.n, 8);
        let total: f64 = s.seg_x.iter().map(|x| x[1] - x[0]).sum();
        assert!((total - m.l1).abs() < 1e-13);
        for (i, seg) in s.segments.iter().enumerate() {
            assert_eq!(seg[0], i);
            assert_eq!(seg[1], (i + 1) % s.n);
            // Parent triangle's top edge endpoints are the segment's mesh vertices.
            let t = &m.triangles[s.parent_tri[i]];
            assert!(t.v.contains(&m.top[seg[0]]) && t.v.contains(&m.top[seg[1]]));
        }
    }
}
