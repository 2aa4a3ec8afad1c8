//! Semi-implicit momentum system: one linear solve per step.
//!
//! All geometric quantities (J, F⁻¹, J̇, domain velocity) and the convective
//! transport field are frozen at the previous step, which decouples the
//! geometry update from the momentum solve and makes the step linear. The
//! unknowns are (u, z, p); the trace displacement is updated afterwards by
//! d ← d + τ·u₂|top (see the stepper).
//!
//! Term-by-term, with φ the velocity test function, q the pressure test
//! function, ψ the curvature test function, and g = F⁻ᵀ∇̂(·) the pushed
//! gradient:
//!
//!   momentum:  ρ_f/τ ∫ J (u − u_prev)·φ
//!            + ½ρ_f ∫ J̇ u*·φ                  (u* per the `UStar` flag)
//!            + ½ρ_f ∫ J [(∇̂u F⁻¹ v)·φ − (∇̂φ F⁻¹ v)·u]   (v = transport − domain velocity)
//!            + ∫ J [2μ sym(∇̂u F⁻¹) − p I] : (∇̂φ F⁻¹)
//!            + ρ_s/τ ∫_Σ (u₂ − ξ_prev) φ₂
//!            + γ₁ ∫_Σ ∂ₓ(d_prev + τu₂) ∂ₓφ₂ − γ₂ ∫_Σ ∂ₓz ∂ₓφ₂ + γ₃ ∫_Σ ∂ₓu₂ ∂ₓφ₂
//!            − ∫_Σ g_load φ₂
//!   curvature: ∫_Σ z ψ + ∫_Σ ∂ₓ(d_prev + τu₂) ∂ₓψ
//!   continuity: ∫ J tr(∇̂u F⁻¹) q
//!
//! everything written as "= 0" and split into matrix (unknown factors) and
//! right-hand side (known factors, negated).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointGeom;

use super::{segment_mass_stiffness, Assembler, LinearSystem, SemiInputs, UStar};

/// Dense local blocks of one triangle. Velocity index = component*4 + basis.
struct ElemOut {
    avv: [[f64; 8]; 8],
    avp: [[f64; 3]; 8],
    apv: [[f64; 8]; 3],
    rv: [f64; 8],
}

fn element(asm: &Assembler, inp: &SemiInputs, t: usize) -> ElemOut {
    let mut out = ElemOut {
        avv: [[0.0; 8]; 8],
        avp: [[0.0; 3]; 8],
        apv: [[0.0; 8]; 3],
        rv: [0.0; 8],
    };
    let p = inp.params;
    let col = asm.mesh.triangles[t].col;
    let geo_col = inp.geo.column(col);
    let tl = asm.gather_velocity(&inp.transport, t);
    let ul = asm.gather_velocity(&inp.u_prev, t);

    for q in 0..asm.n_qp() {
        let x = asm.qpoint(t, q);
        let pg: PointGeom = geo_col.at(x);
        debug_assert!(pg.j > 0.0, "geometry must keep positive height");
        let w = asm.qweight(q);
        let basis = asm.qbasis(t, q);
        let mut g = [[0.0; 2]; 4];
        for a in 0..4 {
            g[a] = pg.push_gradient(basis.grad[a]);
        }
        let val = &basis.val;

        // Transport velocity relative to the moving domain.
        let mut v = [0.0; 2];
        let mut up = [0.0; 2];
        for c in 0..2 {
            for a in 0..4 {
                v[c] += tl[c][a] * val[a];
                up[c] += ul[c][a] * val[a];
            }
        }
        v[1] -= pg.w2;

        let inert = p.rho_f / inp.tau * pg.j;
        let (jlhs, jrhs) = match inp.ustar {
            UStar::TwoNewMinusOld => (p.rho_f * pg.jdot, 0.5 * p.rho_f * pg.jdot),
            UStar::TwoOldMinusNew => (-0.5 * p.rho_f * pg.jdot, -p.rho_f * pg.jdot),
        };
        let half_conv = 0.5 * p.rho_f * pg.j;
        let visc = p.mu * pg.j;

        let mut gv = [0.0; 4];
        for a in 0..4 {
            gv[a] = g[a][0] * v[0] + g[a][1] * v[1];
        }

        for a in 0..4 {
            for b in 0..4 {
                let mass = val[a] * val[b];
                let conv = half_conv * (val[a] * gv[b] - val[b] * gv[a]);
                let same = w * ((inert + jlhs) * mass + conv);
                let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                for c in 0..2 {
                    out.avv[c * 4 + a][c * 4 + b] += same + w * visc * gg;
                    for cp in 0..2 {
                        out.avv[cp * 4 + a][c * 4 + b] += w * visc * g[a][c] * g[b][cp];
                    }
                }
            }
            for bp in 0..3 {
                // -∫ p J (F⁻ᵀ∇̂φ)_c and its negative transpose (divergence).
                for c in 0..2 {
                    let s = w * val[bp] * pg.j * g[a][c];
                    out.avp[c * 4 + a][bp] -= s;
                }
            }
            for c in 0..2 {
                out.rv[c * 4 + a] += w * val[a] * (inert + jrhs) * up[c];
            }
        }
        for ap in 0..3 {
            for b in 0..4 {
                for c in 0..2 {
                    out.apv[ap][c * 4 + b] += w * val[ap] * pg.j * g[b][c];
                }
            }
        }
    }
    out
}

/// Assemble the semi-implicit system (matrix, right-hand side, load vector).
pub fn semi_system(asm: &Assembler, inp: &SemiInputs) -> Result<LinearSystem> {
    inp.params.validate()?;
    if !(inp.tau > 0.0 && inp.tau.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {}", inp.tau)));
    }
    inp.transport.assert_finite()?;
    inp.u_prev.assert_finite()?;
    if inp
        .d_prev
        .iter()
        .chain(inp.xi_prev)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Data("non-finite trace history".into()));
    }
    for c in &inp.geo.columns {
        if !(1.0 + c.dl > 0.0 && 1.0 + c.dr > 0.0) {
            return Err(Error::Data(format!(
                "nonpositive fluid height in geometry (column at x = {})",
                c.xl
            )));
        }
    }

    let nt = asm.mesh.num_triangles();
    let locals: Vec<ElemOut> = (0..nt)
        .into_par_iter()
        .with_min_len(64)
        .map(|t| element(asm, inp, t))
        .collect();

    let n = asm.n_unknowns();
    let mut a = asm.matrix_template();
    let mut rhs = vec![0.0; n];
    let mut load = vec![0.0; n];

    for (t, e) in locals.iter().enumerate() {
        let vl = asm.vel_locals(t);
        let pl = asm.p_locals(t);
        let row = |c: usize, i: usize| vl[c][i].map(|d| d as usize);
        for c in 0..2 {
            for i in 0..4 {
                let Some(r) = row(c, i) else { continue };
                for cc in 0..2 {
                    for j in 0..4 {
                        if let Some(cdof) = row(cc, j) {
                            a.add_at(r, cdof, e.avv[c * 4 + i][cc * 4 + j]);
                        }
                    }
                }
                for j in 0..3 {
                    a.add_at(r, pl[j] as usize, e.avp[c * 4 + i][j]);
                }
                rhs[r] += e.rv[c * 4 + i];
            }
        }
        for i in 0..3 {
            let r = pl[i] as usize;
            for cc in 0..2 {
                for j in 0..4 {
                    if let Some(cdof) = row(cc, j) {
                        a.add_at(r, cdof, e.apv[i][cc * 4 + j]);
                    }
                }
            }
        }
    }

    surface_terms(asm, inp, &mut a, &mut rhs)?;
    if let Some(g) = inp.load {
        load = super::load_vector(asm, g);
        for (r, l) in load.iter().enumerate() {
            rhs[r] += l;
        }
    }
    Ok(LinearSystem { matrix: a, rhs, load })
}

fn surface_terms(
    asm: &Assembler,
    inp: &SemiInputs,
    a: &mut crate::linsolve::Csr,
    rhs: &mut [f64],
) -> Result<()> {
    let lay = &asm.layout;
    let p = inp.params;
    let ntr = lay.n_trace;
    if inp.d_prev.len() != ntr || inp.xi_prev.len() != ntr {
        return Err(Error::Structural(format!(
            "trace history length mismatch: expected {ntr}"
        )));
    }
    let dx = asm.mesh.dx();
    let (m2, k2) = segment_mass_stiffness(dx);

    for s in 0..ntr {
        let nodes = [s, (s + 1) % ntr];
        let udof = nodes.map(|i| lay.vel_vtx[1][lay.trace_vertex[i]]);
        let zdof = nodes.map(|i| lay.z[i]);
        let dloc = nodes.map(|i| inp.d_prev[i]);
        let xiloc = nodes.map(|i| inp.xi_prev[i]);

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
            if let Some(r) = udof[i] {
                rhs[r as usize] += p.rho_s / inp.tau
                    * (m2[i][0] * xiloc[0] + m2[i][1] * xiloc[1])
                    - p.gamma1 * (k2[i][0] * dloc[0] + k2[i][1] * dloc[1]);
            }
            if let Some(r) = zdof[i] {
                rhs[r as usize] -= k2[i][0] * dloc[0] + k2[i][1] * dloc[1];
            }
        }
    }
    Ok(())
}
