//! Assembly of the coupled momentum/curvature/continuity systems.
//!
//! Both time discretizations solve for the same unknown vector
//! [u1 | u2 | bubbles | z | p] (layout from [`crate::spaces`]): the plate
//! velocity is not a separate unknown because the top-boundary u2 vertex
//! dofs *are* the plate dofs. One step of the semi-implicit scheme is one
//! linear solve of the system built here; the fully implicit variant
//! ([`full`]) reuses the same layout with geometry evaluated at the guess.
//!
//! Sign conventions follow the weak form written as "sum of terms = 0":
//! the matrix carries the coefficients of the new unknowns, and everything
//! known moves to the right-hand side with its sign flipped. The applied
//! surface force `g` enters the right-hand side as +∫ g φ₂ dx₁, so positive
//! g pushes the plate upward.
//!
//! Volume integrals use the shared degree-6 triangle rule; the moving
//! geometry enters pointwise through [`crate::geometry`] (exactly, not via
//! per-element averages). Surface matrices (trace mass/stiffness) are exact
//! closed forms on segments. The convection pair is antisymmetrized inside
//! the quadrature loop, so skew-symmetry holds to rounding regardless of
//! geometry — that, plus reusing these exact integrals in the diagnostics,
//! is what turns the energy balance into a machine-precision identity.

pub mod full;
pub mod semi;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::TraceGeometry;
use crate::linsolve::Csr;
use crate::mesh::{Mesh, Triangle};
use crate::quadrature::{quadrature_rule, QuadratureRule};
use crate::spaces::{evaluate_basis, BasisEval, DofLayout};

/// Physical constants of the coupled problem.
#[derive(Debug, Clone, Copy)]
pub struct Params {
    pub rho_f: f64,
    pub rho_s: f64,
    pub mu: f64,
    /// Elastic (stretching) stiffness of the plate.
    pub gamma1: f64,
    /// Bending stiffness (acts through the curvature variable z).
    pub gamma2: f64,
    /// Structural damping on the plate velocity gradient.
    pub gamma3: f64,
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rho_f, self.rho_s, self.mu, self.gamma1, self.gamma2, self.gamma3];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite physical parameter".into()));
        }
        if self.rho_f <= 0.0 || self.rho_s <= 0.0 || self.mu <= 0.0 {
            return Err(Error::Config("densities and viscosity must be positive".into()));
        }
        if self.gamma1 <= 0.0 || self.gamma2 <= 0.0 || self.gamma3 < 0.0 {
            return Err(Error::Config(
                "plate stiffnesses must be positive and damping nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Which velocity multiplies the ½ρ_f J̇ compensation term in the momentum
/// row. The two conventions differ only in how they extrapolate between the
/// old and new velocity; they are first-order perturbations of each other,
/// but only one of them closes the discrete energy balance exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UStar {
    /// u* = 2u^k − u^{k−1}: leans on the new velocity (default).
    TwoNewMinusOld,
    /// u* = 2u^{k−1} − u^k: leans on the old velocity; this is the variant
    /// under which the energy identity residual vanishes to rounding.
    TwoOldMinusNew,
}

/// Assembled linear system plus the separately tracked load vector (the
/// forcing contribution alone), which the energy diagnostics dot against
/// the solution to get the external power.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    pub load: Vec<f64>,
}

/// Borrowed view of a velocity field in nodal + bubble coefficients
/// (per vertex / per triangle, both components, constrained entries
/// holding their physical values).
#[derive(Clone, Copy)]
pub struct VelocityField<'a> {
    pub vtx: [&'a [f64]; 2],
    pub bub: [&'a [f64]; 2],
}

impl VelocityField<'_> {
    /// Gather the 2×4 local coefficients (3 vertices + bubble) on `tri`.
    #[inline]
    fn local(&self, tri: &Triangle, t: usize) -> [[f64; 4]; 2] {
        let mut out = [[0.0; 4]; 2];
        for c in 0..2 {
            for a in 0..3 {
                out[c][a] = self.vtx[c][tri.v[a]];
            }
            out[c][3] = self.bub[c][t];
        }
        out
    }

    fn assert_finite(&self) -> Result<()> {
        for c in 0..2 {
            if self.vtx[c].iter().chain(self.bub[c]).any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite velocity coefficient".into()));
            }
        }
        Ok(())
    }
}

/// Basis values and reference gradients at every quadrature point, for the
/// two congruence classes of triangles (the uniform mesh has exactly two,
/// and gradients are translation invariant).
struct ElementTables {
    lam: Vec<[f64; 3]>,
    w: Vec<f64>,
    basis: [Vec<BasisEval>; 2],
    double_area: f64,
}

impl ElementTables {
    fn build(mesh: &Mesh, rule: &QuadratureRule) -> ElementTables {
        let lower = &mesh.triangles[0];
        let upper = &mesh.triangles[1];
        debug_assert_eq!(lower.v.len(), 3);
        let eval_all = |tri: &Triangle| -> Vec<BasisEval> {
            rule.tri_points.iter().map(|&l| evaluate_basis(tri, l)).collect()
        };
        ElementTables {
            lam: rule.tri_points.clone(),
            w: rule.tri_weights.clone(),
            basis: [eval_all(lower), eval_all(upper)],
            double_area: lower.double_area(),
        }
    }
}

/// Everything fixed for a given mesh + layout: quadrature tables, the
/// matrix sparsity pattern of the momentum step, and trace-segment data.
pub struct Assembler {
    pub mesh: Arc<Mesh>,
    pub layout: Arc<DofLayout>,
    pub rule: QuadratureRule,
    tables: ElementTables,
    /// Template matrix: correct pattern, zero values.
    pattern: Csr,
    /// Like `pattern` but with the trace-geometry coupling columns needed
    /// by the fully implicit Jacobian.
    pattern_full: Csr,
}

/// Local velocity dof ids of a triangle: `[component][vertex0..2, bubble]`,
/// `None` where the dof is constrained to zero.
#[inline]
fn vel_locals(layout: &DofLayout, tri: &Triangle, t: usize) -> [[Option<u32>; 4]; 2] {
    let mut out = [[None; 4]; 2];
    for c in 0..2 {
        for a in 0..3 {
            out[c][a] = layout.vel_vtx[c][tri.v[a]];
        }
        out[c][3] = Some(layout.vel_bub[c][t]);
    }
    out
}

#[inline]
fn p_locals(layout: &DofLayout, tri: &Triangle) -> [u32; 3] {
    [
        layout.p[tri.v[0]],
        layout.p[tri.v[1]],
        layout.p[tri.v[2]],
    ]
}

/// Exact 2×2 mass and stiffness of one trace segment of length `dx`.
#[inline]
pub(crate) fn segment_mass_stiffness(dx: f64) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let m = [[dx / 3.0, dx / 6.0], [dx / 6.0, dx / 3.0]];
    let k = [[1.0 / dx, -1.0 / dx], [-1.0 / dx, 1.0 / dx]];
    (m, k)
}

/// Assembled interface load: b[r] = ∫ g φ_r dx₁ on the top u₂ rows, zero
/// elsewhere. Kept as its own vector so the external power g·ξ seen by the
/// energy ledger is exactly the dot product of this vector with the
/// solution.
pub fn load_vector(asm: &Assembler, g: &(dyn Fn(f64) -> f64 + Sync)) -> Vec<f64> {
    let lay = &asm.layout;
    let dx = asm.mesh.dx();
    let mut load = vec![0.0; lay.step1_unknowns()];
    for s in 0..lay.n_trace {
        let nodes = [s, (s + 1) % lay.n_trace];
        let udof = nodes.map(|i| lay.vel_vtx[1][lay.trace_vertex[i]]);
        let xl = s as f64 * dx;
        for (&gp, &gw) in asm.rule.seg_points.iter().zip(&asm.rule.seg_weights) {
            let gv = g(xl + gp * dx);
            let phi = [1.0 - gp, gp];
            for i in 0..2 {
                if let Some(r) = udof[i] {
                    load[r as usize] += dx * gw * gv * phi[i];
                }
            }
        }
    }
    load
}

impl Assembler {
    pub fn new(mesh: Arc<Mesh>, layout: Arc<DofLayout>) -> Result<Assembler> {
        let rule = quadrature_rule(6)?;
        let tables = ElementTables::build(&mesh, &rule);
        let n = layout.step1_unknowns();

        let mut pairs: Vec<(u32, u32)> = Vec::new();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let vl = vel_locals(&layout, tri, t);
            let pl = p_locals(&layout, tri);
            let vflat: Vec<u32> = vl.iter().flatten().flatten().copied().collect();
            for &r in &vflat {
                for &c in &vflat {
                    pairs.push((r, c));
                }
                for &c in &pl {
                    pairs.push((r, c));
                    pairs.push((c, r));
                }
            }
        }
        let ntr = layout.n_trace;
        for s in 0..ntr {
            let nodes = [s, (s + 1) % ntr];
            for &a in &nodes {
                for &b in &nodes {
                    let ua = layout.vel_vtx[1][layout.trace_vertex[a]];
                    let ub = layout.vel_vtx[1][layout.trace_vertex[b]];
                    let za = layout.z[a];
                    let zb = layout.z[b];
                    for (r, c) in [(ua, ub), (ua, zb), (za, ub), (za, zb)] {
                        if let (Some(r), Some(c)) = (r, c) {
                            pairs.push((r, c));
                        }
                    }
                }
            }
        }
        let mut pairs_full = pairs.clone();
        // Geometry coupling for the implicit Jacobian: every row of an
        // element in mesh column i also sees the two trace u2 dofs whose
        // displacement shapes that column.
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let vl = vel_locals(&layout, tri, t);
            let pl = p_locals(&layout, tri);
            let col = tri.col;
            for tn in [col, (col + 1) % ntr] {
                if let Some(cdof) = layout.vel_vtx[1][layout.trace_vertex[tn]] {
                    for r in vl.iter().flatten().flatten() {
                        pairs_full.push((*r, cdof));
                    }
                    for &r in &pl {
                        pairs_full.push((r, cdof));
                    }
                }
            }
        }
        let pattern = Csr::from_pattern(n, &mut pairs);
        let pattern_full = Csr::from_pattern(n, &mut pairs_full);
        Ok(Assembler { mesh, layout, rule, tables, pattern, pattern_full })
    }

    /// Zero-valued matrix with the momentum-step pattern.
    pub fn matrix_template(&self) -> Csr {
        self.pattern.clone()
    }

    pub(crate) fn matrix_template_full(&self) -> Csr {
        self.pattern_full.clone()
    }

    pub fn n_unknowns(&self) -> usize {
        self.layout.step1_unknowns()
    }

    /// Physical quadrature weight of point `q` on any triangle.
    #[inline]
    pub(crate) fn qweight(&self, q: usize) -> f64 {
        self.tables.w[q] * self.tables.double_area
    }

    #[inline]
    pub(crate) fn n_qp(&self) -> usize {
        self.tables.lam.len()
    }

    /// Reference coordinates of quadrature point `q` of triangle `t`.
    #[inline]
    pub(crate) fn qpoint(&self, t: usize, q: usize) -> [f64; 2] {
        let tri = &self.mesh.triangles[t];
        let l = self.tables.lam[q];
        [
            l[0] * tri.x[0][0] + l[1] * tri.x[1][0] + l[2] * tri.x[2][0],
            l[0] * tri.x[0][1] + l[1] * tri.x[1][1] + l[2] * tri.x[2][1],
        ]
    }

    /// Basis table of triangle `t` at quadrature point `q`.
    #[inline]
    pub(crate) fn qbasis(&self, t: usize, q: usize) -> &BasisEval {
        &self.tables.basis[t & 1][q]
    }

    pub(crate) fn vel_locals(&self, t: usize) -> [[Option<u32>; 4]; 2] {
        vel_locals(&self.layout, &self.mesh.triangles[t], t)
    }

    pub(crate) fn p_locals(&self, t: usize) -> [u32; 3] {
        p_locals(&self.layout, &self.mesh.triangles[t])
    }

    pub(crate) fn gather_velocity(&self, field: &VelocityField, t: usize) -> [[f64; 4]; 2] {
        field.local(&self.mesh.triangles[t], t)
    }
}

/// Inputs of one semi-implicit momentum solve. Geometry and transport are
/// the frozen (previous-step) data that enter the matrix; the remaining
/// fields only enter the right-hand side, which keeps the step affine in
/// them — the superposition property the tests rely on. In production all
/// of these views come from the same previous state.
pub struct SemiInputs<'a> {
    pub params: &'a Params,
    pub tau: f64,
    pub ustar: UStar,
    /// Geometry of the previous step: J, F⁻¹, J̇ and the domain velocity.
    pub geo: &'a TraceGeometry,
    /// Transport velocity u^{k−1} (the convection field is frozen at the
    /// previous step; the relative motion subtracts the domain velocity
    /// from `geo` pointwise).
    pub transport: VelocityField<'a>,
    /// Previous velocity for the inertia and J̇ right-hand sides.
    pub u_prev: VelocityField<'a>,
    /// Previous plate velocity (structure inertia right-hand side).
    pub xi_prev: &'a [f64],
    /// Previous trace displacement (elastic and curvature right-hand sides).
    pub d_prev: &'a [f64],
    /// Applied vertical surface force at the *current* time, as a function
    /// of x1; `None` means unforced.
    pub load: Option<&'a (dyn Fn(f64) -> f64 + Sync)>,
}
