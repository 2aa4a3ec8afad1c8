//! Fully implicit residual and Jacobian.
//!
//! Same unknown vector as the semi-implicit step, but the geometry, the
//! transport field and the J̇ compensation all live at the *guess*: with
//! d = d_prev + τ·u₂|top substituted pointwise, J, F⁻¹ and the domain
//! velocity become functions of the current velocity unknowns, and the
//! momentum/continuity rows are genuinely nonlinear. The compensation term
//! is ½ρ_f ∫ J̇ u·φ with J̇ = ξ = u₂|top interpolated along the trace.
//!
//! The Jacobian is exact and computed by forward-mode differentiation: the
//! element kernel is written once, generic over the scalar type, and run
//! either on plain `f64` (residual) or on dual numbers carrying 13 partials
//! — 8 local velocity coefficients, 3 local pressures, and the 2 trace
//! displacement values that shape the element's column. The chain rule from
//! trace displacement to the top u₂ dof is the constant factor τ. A
//! finite-difference mode (central differences per column) exists solely to
//! cross-check the analytic matrix.

use std::ops::{Add, Div, Mul, Neg, Sub};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linsolve::Csr;

use super::{segment_mass_stiffness, Assembler, Params, VelocityField};

/// Minimal scalar interface for writing the element kernel once.
pub(crate) trait Num:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn lift(v: f64) -> Self;
}

impl Num for f64 {
    #[inline]
    fn lift(v: f64) -> f64 {
        v
    }
}

/// Forward-mode dual number: value plus N directional derivatives.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dual<const N: usize> {
    v: f64,
    d: [f64; N],
}

impl<const N: usize> Dual<N> {
    #[inline]
    fn seeded(v: f64, k: usize) -> Self {
        let mut d = [0.0; N];
        d[k] = 1.0;
        Dual { v, d }
    }
}

impl<const N: usize> Num for Dual<N> {
    #[inline]
    fn lift(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] += o.d[i];
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] -= o.d[i];
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - self.v * inv * o.d[i]) * inv;
        }
        Dual { v: self.v * inv, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut d = self.d;
        for v in d.iter_mut() {
            *v = -*v;
        }
        Dual { v: -self.v, d }
    }
}

/// Fixed data of one implicit solve: the previous state and the load.
pub struct ImplicitInputs<'a> {
    pub params: &'a Params,
    pub tau: f64,
    pub u_prev: VelocityField<'a>,
    pub xi_prev: &'a [f64],
    pub d_prev: &'a [f64],
    pub load: Option<&'a (dyn Fn(f64) -> f64 + Sync)>,
}

/// Momentum (8) and continuity (3) residual contributions of one element.
struct ElemRes<T> {
    rv: [T; 8],
    rp: [T; 3],
}

/// Element kernel: all volume terms at the guess geometry. `dl`/`dr` are
/// the (possibly seeded) trace displacements of the element's column, and
/// `dprev` their previous-step values — their difference over τ is the
/// interface velocity that drives J̇ and the domain velocity.
#[allow(clippy::too_many_arguments)]
fn element_residual<T: Num>(
    asm: &Assembler,
    t: usize,
    p: &Params,
    tau: f64,
    ul: &[[T; 4]; 2],
    pl: &[T; 3],
    dl: T,
    dr: T,
    dprev: [f64; 2],
    uprevl: &[[f64; 4]; 2],
) -> ElemRes<T> {
    let zero = T::lift(0.0);
    let mut rv = [zero; 8];
    let mut rp = [zero; 3];
    let col = &asm.mesh.triangles[t];
    let xl = col.col as f64 * asm.mesh.dx();
    let inv_dx = 1.0 / asm.mesh.dx();

    let s = (dr - dl) * T::lift(inv_dx);
    let xil = (dl - T::lift(dprev[0])) * T::lift(1.0 / tau);
    let xir = (dr - T::lift(dprev[1])) * T::lift(1.0 / tau);

    for q in 0..asm.n_qp() {
        let x = asm.qpoint(t, q);
        let w = (x[0] - xl) * inv_dx;
        let basis = asm.qbasis(t, q);
        let val = &basis.val;

        let d = dl * T::lift(1.0 - w) + dr * T::lift(w);
        let j = T::lift(1.0) + d;
        let jdot = xil * T::lift(1.0 - w) + xir * T::lift(w);
        let w2 = jdot * T::lift(x[1]);
        let finv10 = -(s * T::lift(x[1])) / j;
        let finv11 = T::lift(1.0) / j;

        let mut g = [[zero; 2]; 4];
        for a in 0..4 {
            g[a][0] = T::lift(basis.grad[a][0]) + finv10 * T::lift(basis.grad[a][1]);
            g[a][1] = finv11 * T::lift(basis.grad[a][1]);
        }

        let mut uq = [zero; 2];
        let mut up = [0.0; 2];
        let mut gu = [[zero; 2]; 2];
        for c in 0..2 {
            for a in 0..4 {
                let va = T::lift(val[a]);
                uq[c] = uq[c] + ul[c][a] * va;
                up[c] += uprevl[c][a] * val[a];
                gu[c][0] = gu[c][0] + ul[c][a] * g[a][0];
                gu[c][1] = gu[c][1] + ul[c][a] * g[a][1];
            }
        }
        let mut pq = zero;
        for b in 0..3 {
            pq = pq + pl[b] * T::lift(val[b]);
        }
        let v = [uq[0], uq[1] - w2];
        let guv = [
            gu[0][0] * v[0] + gu[0][1] * v[1],
            gu[1][0] * v[0] + gu[1][1] * v[1],
        ];
        let sym01 = (gu[0][1] + gu[1][0]) * T::lift(0.5);
        let sym = [[gu[0][0], sym01], [sym01, gu[1][1]]];
        let tr = gu[0][0] + gu[1][1];

        let wq = asm.qweight(q);
        let inert = T::lift(p.rho_f / tau) * j;
        let half_rho = T::lift(0.5 * p.rho_f);
        let two_mu = T::lift(2.0 * p.mu);

        for a in 0..4 {
            let va = T::lift(val[a]);
            let gav = g[a][0] * v[0] + g[a][1] * v[1];
            for c in 0..2 {
                let visc = two_mu * j * (sym[c][0] * g[a][0] + sym[c][1] * g[a][1]);
                let term = inert * (uq[c] - T::lift(up[c])) * va
                    + half_rho * jdot * uq[c] * va
                    + half_rho * j * (guv[c] * va - gav * uq[c])
                    + visc
                    - pq * j * g[a][c];
                rv[c * 4 + a] = rv[c * 4 + a] + term * T::lift(wq);
            }
        }
        for a in 0..3 {
            rp[a] = rp[a] + T::lift(wq * val[a]) * j * tr;
        }
    }
    ElemRes { rv, rp }
}

/// Decode per-trace-node guess displacement d = d_prev + τ·u₂|top.
fn guess_trace(asm: &Assembler, inp: &ImplicitInputs, x: &[f64]) -> Vec<f64> {
    let lay = &asm.layout;
    (0..lay.n_trace)
        .map(|i| {
            let u2 = lay.vel_vtx[1][lay.trace_vertex[i]]
                .map(|d| x[d as usize])
                .unwrap_or(0.0);
            inp.d_prev[i] + inp.tau * u2
        })
        .collect()
}

/// Local guess values of an element: velocity (with constrained zeros) and
/// pressure coefficients.
fn gather_guess(asm: &Assembler, x: &[f64], t: usize) -> ([[f64; 4]; 2], [f64; 3]) {
    let vl = asm.vel_locals(t);
    let pl = asm.p_locals(t);
    let mut u = [[0.0; 4]; 2];
    for c in 0..2 {
        for a in 0..4 {
            u[c][a] = vl[c][a].map(|d| x[d as usize]).unwrap_or(0.0);
        }
    }
    (u, [x[pl[0] as usize], x[pl[1] as usize], x[pl[2] as usize]])
}

fn validate(asm: &Assembler, inp: &ImplicitInputs, x: &[f64]) -> Result<()> {
    inp.params.validate()?;
    if !(inp.tau > 0.0 && inp.tau.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {}", inp.tau)));
    }
    if x.len() != asm.n_unknowns() {
        return Err(Error::Structural(format!(
            "guess has {} entries, layout expects {}",
            x.len(),
            asm.n_unknowns()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite entry in guess".into()));
    }
    inp.u_prev.assert_finite()?;
    if inp.d_prev.iter().chain(inp.xi_prev).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite trace history".into()));
    }
    Ok(())
}

/// Residual of the fully implicit system at guess `x`; zero exactly at a
/// discrete solution.
pub fn residual(asm: &Assembler, inp: &ImplicitInputs, x: &[f64]) -> Result<Vec<f64>> {
    validate(asm, inp, x)?;
    let dg = guess_trace(asm, inp, x);
    if dg.iter().any(|&d| 1.0 + d <= 0.0) {
        return Err(Error::Data("guess collapses the fluid height".into()));
    }
    let nt = asm.mesh.num_triangles();
    let parts: Vec<ElemRes<f64>> = (0..nt)
        .into_par_iter()
        .with_min_len(64)
        .map(|t| {
            let (ul, pl) = gather_guess(asm, x, t);
            let col = asm.mesh.triangles[t].col;
            let cr = (col + 1) % asm.layout.n_trace;
            let upl = asm.gather_velocity(&inp.u_prev, t);
            element_residual(
                asm,
                t,
                inp.params,
                inp.tau,
                &ul,
                &pl,
                dg[col],
                dg[cr],
                [inp.d_prev[col], inp.d_prev[cr]],
                &upl,
            )
        })
        .collect();

    let mut r = vec![0.0; asm.n_unknowns()];
    for (t, e) in parts.iter().enumerate() {
        let vl = asm.vel_locals(t);
        let pl = asm.p_locals(t);
        for c in 0..2 {
            for a in 0..4 {
                if let Some(row) = vl[c][a] {
                    r[row as usize] += e.rv[c * 4 + a];
                }
            }
        }
        for a in 0..3 {
            r[pl[a] as usize] += e.rp[a];
        }
    }
    surface_residual(asm, inp, x, &mut r);
    if let Some(g) = inp.load {
        for (ri, l) in super::load_vector(asm, g).iter().enumerate() {
            r[ri] -= l;
        }
    }
    Ok(r)
}

fn surface_residual(asm: &Assembler, inp: &ImplicitInputs, x: &[f64], r: &mut [f64]) {
    let lay = &asm.layout;
    let p = inp.params;
    let ntr = lay.n_trace;
    let dx = asm.mesh.dx();
    let (m2, k2) = segment_mass_stiffness(dx);
    for s in 0..ntr {
        let nodes = [s, (s + 1) % ntr];
        let udof = nodes.map(|i| lay.vel_vtx[1][lay.trace_vertex[i]]);
        let zdof = nodes.map(|i| lay.z[i]);
        let u2 = udof.map(|d| d.map(|k| x[k as usize]).unwrap_or(0.0));
        let z = zdof.map(|d| d.map(|k| x[k as usize]).unwrap_or(0.0));
        let dg = nodes.map(|i| inp.d_prev[i]).zip_add(u2, inp.tau);
        let xiv = nodes.map(|i| inp.xi_prev[i]);
        for i in 0..2 {
            if let Some(row) = udof[i] {
                let mut v = 0.0;
                for jj in 0..2 {
                    v += p.rho_s / inp.tau * m2[i][jj] * (u2[jj] - xiv[jj])
                        + p.gamma1 * k2[i][jj] * dg[jj]
                        - p.gamma2 * k2[i][jj] * z[jj]
                        + p.gamma3 * k2[i][jj] * u2[jj];
                }
                r[row as usize] += v;
            }
            if let Some(row) = zdof[i] {
                let mut v = 0.0;
                for jj in 0..2 {
                    v += m2[i][jj] * z[jj] + k2[i][jj] * dg[jj];
                }
                r[row as usize] += v;
            }
        }
    }
}

trait ZipAdd {
    fn zip_add(self, other: [f64; 2], scale: f64) -> [f64; 2];
}

impl ZipAdd for [f64; 2] {
    #[inline]
    fn zip_add(self, other: [f64; 2], scale: f64) -> [f64; 2] {
        [self[0] + scale * other[0], self[1] + scale * other[1]]
    }
}

/// Number of dual directions: 8 velocity + 3 pressure + 2 trace values.
const NDIR: usize = 13;

/// Analytic Jacobian at guess `x` (sparse, on the extended pattern that
/// includes the trace-geometry coupling columns).
pub fn jacobian(asm: &Assembler, inp: &ImplicitInputs, x: &[f64]) -> Result<Csr> {
    validate(asm, inp, x)?;
    let dg = guess_trace(asm, inp, x);
    let nt = asm.mesh.num_triangles();
    type D = Dual<NDIR>;
    let parts: Vec<ElemRes<D>> = (0..nt)
        .into_par_iter()
        .with_min_len(32)
        .map(|t| {
            let (ulf, plf) = gather_guess(asm, x, t);
            let vl = asm.vel_locals(t);
            let mut ul = [[D::lift(0.0); 4]; 2];
            for c in 0..2 {
                for a in 0..4 {
                    // Constrained entries stay constant (no direction).
                    ul[c][a] = match vl[c][a] {
                        Some(_) => D::seeded(ulf[c][a], c * 4 + a),
                        None => D::lift(ulf[c][a]),
                    };
                }
            }
            let pl = [
                D::seeded(plf[0], 8),
                D::seeded(plf[1], 9),
                D::seeded(plf[2], 10),
            ];
            let col = asm.mesh.triangles[t].col;
            let cr = (col + 1) % asm.layout.n_trace;
            let upl = asm.gather_velocity(&inp.u_prev, t);
            element_residual(
                asm,
                t,
                inp.params,
                inp.tau,
                &ul,
                &pl,
                D::seeded(dg[col], 11),
                D::seeded(dg[cr], 12),
                [inp.d_prev[col], inp.d_prev[cr]],
                &upl,
            )
        })
        .collect();

    let mut a = asm.matrix_template_full();
    let lay = &asm.layout;
    for (t, e) in parts.iter().enumerate() {
        let vl = asm.vel_locals(t);
        let pl = asm.p_locals(t);
        let col = asm.mesh.triangles[t].col;
        let cr = (col + 1) % lay.n_trace;
        // Chain from the column's trace displacements to the top u2 dofs.
        let geom_cols = [
            lay.vel_vtx[1][lay.trace_vertex[col]],
            lay.vel_vtx[1][lay.trace_vertex[cr]],
        ];
        // Continuity rows carry no pressure partials (the divergence term
        // is pressure-free), and the momentum pattern has no p–p block, so
        // pressure columns are scattered for momentum rows only.
        let mut scatter_row = |row: usize, d: &[f64; NDIR], with_p: bool| {
            for c in 0..2 {
                for b in 0..4 {
                    if let Some(cdof) = vl[c][b] {
                        a.add_at(row, cdof as usize, d[c * 4 + b]);
                    }
                }
            }
            if with_p {
                for b in 0..3 {
                    a.add_at(row, pl[b] as usize, d[8 + b]);
                }
            }
            for (k, gc) in geom_cols.iter().enumerate() {
                if let Some(cdof) = gc {
                    a.add_at(row, *cdof as usize, inp.tau * d[11 + k]);
                }
            }
        };
        for c in 0..2 {
            for i in 0..4 {
                if let Some(row) = vl[c][i] {
                    scatter_row(row as usize, &e.rv[c * 4 + i].d, true);
                }
            }
        }
        for i in 0..3 {
            scatter_row(pl[i] as usize, &e.rp[i].d, false);
        }
    }
    surface_jacobian(asm, inp, &mut a);
    Ok(a)
}

fn surface_jacobian(asm: &Assembler, inp: &ImplicitInputs, a: &mut Csr) {
    let lay = &asm.layout;
    let p = inp.params;
    let ntr = lay.n_trace;
    let (m2, k2) = segment_mass_stiffness(asm.mesh.dx());
    for s in 0..ntr {
        let nodes = [s, (s + 1) % ntr];
        let udof = nodes.map(|i| lay.vel_vtx[1][lay.trace_vertex[i]]);
        let zdof = nodes.map(|i| lay.z[i]);
        for i in 0..2 {
            for j in 0..2 {
                if let Some(r) = udof[i] {
                    if let Some(c) = udof[j] {
                        a.add_at(
                            r as usize,
                            c as usize,
                            p.rho_s / inp.tau * m2[i][j]
                                + (p.gamma1 * inp.tau + p.gamma3) * k2[i][j],
                        );
                    }
                    if let Some(c) = zdof[j] {
                        a.add_at(r as usize, c as usize, -p.gamma2 * k2[i][j]);
                    }
                }
                if let Some(r) = zdof[i] {
                    if let Some(c) = udof[j] {
                        a.add_at(r as usize, c as usize, inp.tau * k2[i][j]);
                    }
                    if let Some(c) = zdof[j] {
                        a.add_at(r as usize, c as usize, m2[i][j]);
                    }
                }
            }
        }
    }
}

/// Dense finite-difference Jacobian by central differences with the
/// per-column step 1e-7·(1 + |x_j|). Quadratic cost; for verification only.
pub fn fd_jacobian_dense(
    asm: &Assembler,
    inp: &ImplicitInputs,
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = asm.n_unknowns();
    let mut cols = vec![vec![0.0; n]; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let eps = 1e-7 * (1.0 + x[j].abs());
        xp[j] = x[j] + eps;
        let rp = residual(asm, inp, &xp)?;
        xp[j] = x[j] - eps;
        let rm = residual(asm, inp, &xp)?;
        xp[j] = x[j];
        for i in 0..n {
            cols[j][i] = (rp[i] - rm[i]) / (2.0 * eps);
        }
    }
    // Transpose into row-major dense.
    let mut dense = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            dense[i][j] = col[i];
        }
    }
    Ok(dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::semi::semi_system;
    use crate::assembly::{SemiInputs, UStar};
    use crate::geometry::TraceGeometry;
    use crate::mesh::{build_reference_mesh, Mesh};
    use crate::spaces::{DofLayout, TraceBc};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn params() -> Params {
        Params { rho_f: 1.0, rho_s: 1.0, mu: 0.1, gamma1: 0.1, gamma2: 0.1, gamma3: 0.05 }
    }

    fn setup(nx: usize, ny: usize) -> (Arc<Mesh>, Arc<DofLayout>, Assembler) {
        let mesh = Arc::new(build_reference_mesh(2.0, nx, ny).unwrap());
        let layout = Arc::new(DofLayout::build(&mesh, TraceBc::Periodic).unwrap());
        let asm = Assembler::new(mesh.clone(), layout.clone()).unwrap();
        (mesh, layout, asm)
    }

    struct Prev {
        vtx: [Vec<f64>; 2],
        bub: [Vec<f64>; 2],
        xi: Vec<f64>,
        d: Vec<f64>,
    }

    impl Prev {
        fn zero(mesh: &Mesh) -> Prev {
            Prev {
                vtx: [vec![0.0; mesh.num_vertices()], vec![0.0; mesh.num_vertices()]],
                bub: [vec![0.0; mesh.num_triangles()], vec![0.0; mesh.num_triangles()]],
                xi: vec![0.0; mesh.nx],
                d: vec![0.0; mesh.nx],
            }
        }
        fn inputs<'a>(&'a self, p: &'a Params, tau: f64) -> ImplicitInputs<'a> {
            ImplicitInputs {
                params: p,
                tau,
                u_prev: VelocityField {
                    vtx: [&self.vtx[0], &self.vtx[1]],
                    bub: [&self.bub[0], &self.bub[1]],
                },
                xi_prev: &self.xi,
                d_prev: &self.d,
                load: None,
            }
        }
    }

    #[test]
    fn zero_state_zero_forcing_zero_residual() {
        let (mesh, _, asm) = setup(4, 2);
        let p = params();
        let prev = Prev::zero(&mesh);
        let x = vec![0.0; asm.n_unknowns()];
        let r = residual(&asm, &prev.inputs(&p, 1e-2), &x).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_at_rest_equals_semi_implicit_matrix() {
        let (mesh, layout, asm) = setup(4, 2);
        let p = params();
        let tau = 2e-3;
        let prev = Prev::zero(&mesh);
        let x = vec![0.0; asm.n_unknowns()];
        let jac = jacobian(&asm, &prev.inputs(&p, tau), &x).unwrap();

        let geo = TraceGeometry::flat(&mesh);
        let vf = VelocityField {
            vtx: [&prev.vtx[0], &prev.vtx[1]],
            bub: [&prev.bub[0], &prev.bub[1]],
        };
        let semi = semi_system(
            &asm,
            &SemiInputs {
                params: &p,
                tau,
                ustar: UStar::TwoNewMinusOld,
                geo: &geo,
                transport: vf,
                u_prev: vf,
                xi_prev: &prev.xi,
                d_prev: &prev.d,
                load: None,
            },
        )
        .unwrap();

        let n = layout.step1_unknowns();
        let dense = |m: &Csr| {
            let mut d = vec![vec![0.0; n]; n];
            for r in 0..n {
                for k in m.row_ptr[r]..m.row_ptr[r + 1] {
                    d[r][m.col_idx[k] as usize] = m.values[k];
                }
            }
            d
        };
        let dj = dense(&jac);
        let ds = dense(&semi.matrix);
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..n {
                worst = worst.max((dj[r][c] - ds[r][c]).abs());
            }
        }
        assert!(worst <= 1e-12, "linearization about rest differs by {worst}");
    }

    fn random_state(asm: &Assembler, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..asm.n_unknowns()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let (mesh, _, asm) = setup(4, 2);
        let p = params();
        let tau = 5e-3;
        let mut prev = Prev::zero(&mesh);
        for (i, v) in prev.d.iter_mut().enumerate() {
            *v = 0.05 * (i as f64).sin();
        }
        let inp = prev.inputs(&p, tau);
        let x = random_state(&asm, 11, 0.3);
        let jac = jacobian(&asm, &inp, &x).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let dir: Vec<f64> =
            (0..asm.n_unknowns()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let eps = 1e-6;
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
        let rp = residual(&asm, &inp, &xp).unwrap();
        let rm = residual(&asm, &inp, &xm).unwrap();
        let jd = jac.matvec(&dir);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..jd.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * eps);
            num += (fd - jd[i]) * (fd - jd[i]);
            den += jd[i] * jd[i];
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-5, "directional derivative off by {rel}");
    }

    #[test]
    fn fd_matrix_matches_analytic_matrix() {
        let (mesh, _, asm) = setup(4, 2);
        let p = params();
        let tau = 5e-3;
        let mut prev = Prev::zero(&mesh);
        for (i, v) in prev.d.iter_mut().enumerate() {
            *v = 0.04 * (1.3 * i as f64).cos();
        }
        for (i, v) in prev.xi.iter_mut().enumerate() {
            *v = 0.2 * (0.7 * i as f64).sin();
        }
        let inp = prev.inputs(&p, tau);
        let x = random_state(&asm, 21, 0.2);
        let jac = jacobian(&asm, &inp, &x).unwrap();
        let fd = fd_jacobian_dense(&asm, &inp, &x).unwrap();
        let n = asm.n_unknowns();
        let mut dense = vec![vec![0.0; n]; n];
        for r in 0..n {
            for k in jac.row_ptr[r]..jac.row_ptr[r + 1] {
                dense[r][jac.col_idx[k] as usize] = jac.values[k];
            }
        }
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for r in 0..n {
            for c in 0..n {
                diff2 += (dense[r][c] - fd[r][c]) * (dense[r][c] - fd[r][c]);
                norm2 += dense[r][c] * dense[r][c];
            }
        }
        let rel = (diff2 / norm2).sqrt();
        assert!(rel <= 1e-5, "fd/analytic Frobenius mismatch {rel}");
    }

    #[test]
    fn rejects_collapsed_guess() {
        let (mesh, layout, asm) = setup(4, 2);
        let p = params();
        let prev = Prev::zero(&mesh);
        let mut x = vec![0.0; asm.n_unknowns()];
        // Push a top u2 dof so far down that d = τ·u2 < -1.
        let dof = layout.vel_vtx[1][layout.trace_vertex[0]].unwrap() as usize;
        x[dof] = -1.5 / 1e-2 * 1.5;
        let err = residual(&asm, &prev.inputs(&p, 1e-2), &x);
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
