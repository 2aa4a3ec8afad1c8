//! Time stepping: state layout, initialization, the two step variants, and
//! the run loop.
//!
//! A state after step k holds the velocity, pressure and curvature fields
//! together with the trace displacement at the current *and* the previous
//! step. The pair (d, d_prev) is the single source of truth for the
//! interface velocity: everything downstream (transport field, J̇, energy
//! bookkeeping) recomputes ξ = (d − d_prev)/τ from these vectors, never
//! from a separately stored copy, so the discrete identities see one
//! consistent value.
//!
//! Both schemes advance the same unknown vector. The semi-implicit step
//! freezes geometry and transport at the previous state and solves one
//! linear system; the fully implicit step runs an undamped Newton
//! iteration on the residual with the geometry tied to the guess. The
//! sparsity pattern of each variant is fixed over the whole run, so the
//! fill-reducing analysis is done once and refactorization is numeric
//! only.

use std::time::Instant;

use crate::assembly::{
    full, load_vector, semi::semi_system, Assembler, Params, SemiInputs, UStar, VelocityField,
};
use crate::error::{Error, Result};
use crate::geometry::{min_height, TraceGeometry};
use crate::linsolve::{self, Symbolic};
use crate::mesh::Mesh;
use crate::operators::TraceOps;
use crate::spaces::{DofLayout, TraceBc};
use std::sync::Arc;

/// Which step variant advances the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    SemiImplicit,
    FullyImplicit,
}

/// Newton controls for the fully implicit step. Convergence is declared on
/// the 2-norm of the residual, absolutely or relative to the initial one.
#[derive(Debug, Clone, Copy)]
pub struct NewtonControls {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonControls {
    fn default() -> Self {
        NewtonControls { abs_tol: 1e-10, rel_tol: 1e-9, max_iter: 25 }
    }
}

/// Everything that shapes a run apart from the physics parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepControls {
    pub tau: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub ustar: UStar,
    /// Abort when min(1 + d) falls to this value; the analysis (and the
    /// closed-form geometry) assumes a strictly positive fluid height.
    pub contact_floor: f64,
    pub newton: NewtonControls,
}

impl StepControls {
    pub fn new(tau: f64, t_end: f64) -> StepControls {
        StepControls {
            tau,
            t_end,
            scheme: Scheme::SemiImplicit,
            ustar: UStar::TwoNewMinusOld,
            contact_floor: 0.01,
            newton: NewtonControls::default(),
        }
    }
}

/// Discrete state after `step` steps: t = step·τ.
#[derive(Debug, Clone)]
pub struct State {
    pub step: usize,
    pub t: f64,
    /// Velocity vertex values per component, constrained entries zero.
    pub u_vtx: [Vec<f64>; 2],
    /// Velocity bubble coefficients per component.
    pub u_bub: [Vec<f64>; 2],
    /// Pressure vertex values.
    pub p: Vec<f64>,
    /// Plate curvature values per trace node.
    pub z: Vec<f64>,
    /// Trace displacement at this step and the one before.
    pub d: Vec<f64>,
    pub d_prev: Vec<f64>,
}

impl State {
    pub fn velocity(&self) -> VelocityField<'_> {
        VelocityField {
            vtx: [&self.u_vtx[0], &self.u_vtx[1]],
            bub: [&self.u_bub[0], &self.u_bub[1]],
        }
    }

    /// Interface velocity ξ = (d − d_prev)/τ.
    pub fn xi(&self, tau: f64) -> Vec<f64> {
        self.d
            .iter()
            .zip(&self.d_prev)
            .map(|(a, b)| (a - b) / tau)
            .collect()
    }
}

/// Per-step record: solver quality, conservation residual, external power,
/// and where the wall-clock time went.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepReport {
    /// Newton iterations taken (0 for the linear scheme).
    pub newton_iters: usize,
    /// Componentwise backward error of the last linear solve.
    pub backward_error: f64,
    /// Iterative refinement steps the last solve needed.
    pub refine_steps: usize,
    /// ∫ ξ dx₁ of the new interface velocity — the discrete volume drift.
    pub gcl: f64,
    /// Power fed in by the interface load, g·ξ in assembled form.
    pub p_ext: f64,
    /// Smallest fluid height after the step.
    pub min_height: f64,
    /// True if the LU pivot growth was extreme (solution suspect).
    pub pivot_alarm: bool,
    pub assembly_s: f64,
    pub factor_s: f64,
    pub solve_s: f64,
}

/// Time-dependent interface load g(t, x₁).
pub type Load<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

pub struct Stepper {
    asm: Assembler,
    ops: TraceOps,
    params: Params,
    controls: StepControls,
    symbolic: Option<Symbolic>,
    symbolic_full: Option<Symbolic>,
}

impl Stepper {
    pub fn new(mesh: Arc<Mesh>, params: Params, controls: StepControls) -> Result<Stepper> {
        params.validate()?;
        if !(controls.tau > 0.0 && controls.tau.is_finite()) {
            return Err(Error::Config(format!(
                "time step must be positive, got {}",
                controls.tau
            )));
        }
        if !(controls.contact_floor > 0.0) {
            return Err(Error::Config("contact floor must be positive".into()));
        }
        let layout = Arc::new(DofLayout::build(&mesh, TraceBc::Periodic)?);
        let ops = TraceOps::build(layout.n_trace, mesh.dx(), TraceBc::Periodic)?;
        let asm = Assembler::new(mesh, layout)?;
        Ok(Stepper { asm, ops, params, controls, symbolic: None, symbolic_full: None })
    }

    pub fn assembler(&self) -> &Assembler {
        &self.asm
    }

    pub fn trace_ops(&self) -> &TraceOps {
        &self.ops
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn controls(&self) -> &StepControls {
        &self.controls
    }

    /// Number of steps to reach t_end; τ must divide t_end.
    pub fn num_steps(&self) -> Result<usize> {
        let c = &self.controls;
        let n = (c.t_end / c.tau).round();
        if n < 1.0 || (n * c.tau - c.t_end).abs() > 1e-9 * c.t_end.max(1.0) {
            return Err(Error::Config(format!(
                "t_end = {} is not a positive integer multiple of tau = {}",
                c.t_end, c.tau
            )));
        }
        Ok(n as usize)
    }

    /// State 0 from initial plate position η₀, plate velocity ξ₀ and fluid
    /// velocity u₀ (each `None` = zero). The plate data enter through the
    /// gradient-matching trace projection; the fluid velocity is taken
    /// nodally, with the top u₂ values overwritten by the projected plate
    /// velocity so the kinematic coupling holds exactly at step 0. The
    /// curvature starts at the discrete Laplacian of d⁰ — the z-equation
    /// then holds at step 0, which the energy ledger of step 1 relies on.
    pub fn initial_state(
        &self,
        eta0: Option<&dyn Fn(f64) -> f64>,
        xi0: Option<&dyn Fn(f64) -> f64>,
        u0: Option<&dyn Fn([f64; 2]) -> [f64; 2]>,
    ) -> Result<State> {
        let tau = self.controls.tau;
        let lay = &self.asm.layout;
        let mesh = &self.asm.mesh;
        let ntr = lay.n_trace;

        let d_prev = match eta0 {
            Some(f) => self.ops.project(|x| f(x) - 1.0)?,
            None => vec![0.0; ntr],
        };
        let xi0n = match xi0 {
            Some(f) => self.ops.project(f)?,
            None => vec![0.0; ntr],
        };
        let d: Vec<f64> = d_prev.iter().zip(&xi0n).map(|(a, b)| a + tau * b).collect();
        for v in [&d_prev, &d] {
            let mh = min_height(v);
            if mh <= self.controls.contact_floor {
                return Err(Error::Contact {
                    step: 0,
                    t: 0.0,
                    min_height: mh,
                    floor: self.controls.contact_floor,
                });
            }
        }

        let nv = mesh.num_vertices();
        let mut u_vtx = [vec![0.0; nv], vec![0.0; nv]];
        if let Some(f) = u0 {
            for (v, xy) in mesh.vertices.iter().enumerate() {
                let val = f(*xy);
                for c in 0..2 {
                    if lay.vel_vtx[c][v].is_some() {
                        u_vtx[c][v] = val[c];
                    }
                }
            }
        }
        // Kinematic coupling at step 0: top u₂ is the plate velocity, in
        // exactly the (d − d_prev)/τ form everything else recomputes.
        for i in 0..ntr {
            u_vtx[1][lay.trace_vertex[i]] = (d[i] - d_prev[i]) / tau;
        }

        let z = self.ops.discrete_laplace(&d);
        let nt = mesh.num_triangles();
        Ok(State {
            step: 0,
            t: 0.0,
            u_vtx,
            u_bub: [vec![0.0; nt], vec![0.0; nt]],
            p: vec![0.0; nv],
            z,
            d,
            d_prev,
        })
    }

    /// Advance one step. The load is evaluated at the *new* time level.
    pub fn advance(&mut self, state: &State, load: Option<Load>) -> Result<(State, StepReport)> {
        let tau = self.controls.tau;
        let t_next = (state.step + 1) as f64 * tau;
        let bound = load.map(|g| move |x: f64| g(t_next, x));
        let g_ref: Option<&(dyn Fn(f64) -> f64 + Sync)> =
            bound.as_ref().map(|g| g as &(dyn Fn(f64) -> f64 + Sync));
        match self.controls.scheme {
            Scheme::SemiImplicit => self.advance_semi(state, g_ref, t_next),
            Scheme::FullyImplicit => self.advance_full(state, g_ref, t_next),
        }
    }

    fn advance_semi(
        &mut self,
        state: &State,
        g: Option<&(dyn Fn(f64) -> f64 + Sync)>,
        t_next: f64,
    ) -> Result<(State, StepReport)> {
        let tau = self.controls.tau;
        let xi_prev = state.xi(tau);

        let t0 = Instant::now();
        let geo = TraceGeometry::build(&self.asm.mesh, &state.d, &xi_prev);
        let sys = semi_system(
            &self.asm,
            &SemiInputs {
                params: &self.params,
                tau,
                ustar: self.controls.ustar,
                geo: &geo,
                transport: state.velocity(),
                u_prev: state.velocity(),
                xi_prev: &xi_prev,
                d_prev: &state.d,
                load: g,
            },
        )?;
        let assembly_s = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        if self.symbolic.is_none() {
            self.symbolic = Some(linsolve::analyze(&sys.matrix)?);
        }
        let fact = linsolve::factorize_with(self.symbolic.as_ref().unwrap(), &sys.matrix)?;
        let factor_s = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let (x, berr, refine) = linsolve::solve_refined(&sys.matrix, &fact, &sys.rhs);
        let solve_s = t2.elapsed().as_secs_f64();

        let p_ext = dot(&sys.load, &x);
        let (next, gcl, mh) = self.apply_solution(state, &x, t_next)?;
        Ok((
            next,
            StepReport {
                newton_iters: 0,
                backward_error: berr,
                refine_steps: refine,
                gcl,
                p_ext,
                min_height: mh,
                pivot_alarm: fact.extreme_growth(),
                assembly_s,
                factor_s,
                solve_s,
            },
        ))
    }

    fn advance_full(
        &mut self,
        state: &State,
        g: Option<&(dyn Fn(f64) -> f64 + Sync)>,
        t_next: f64,
    ) -> Result<(State, StepReport)> {
        let tau = self.controls.tau;
        let xi_prev = state.xi(tau);
        let nc = self.controls.newton;
        let inp = full::ImplicitInputs {
            params: &self.params,
            tau,
            u_prev: state.velocity(),
            xi_prev: &xi_prev,
            d_prev: &state.d,
            load: g,
        };

        let mut x = self.gather(state);
        let mut rep = StepReport::default();
        let mut r = full::residual(&self.asm, &inp, &x)?;
        let r0 = norm2(&r);
        let mut rn = r0;
        let mut history = vec![r0];
        let mut converged = r0 <= nc.abs_tol;
        while !converged && rep.newton_iters < nc.max_iter {
            let t0 = Instant::now();
            let jac = full::jacobian(&self.asm, &inp, &x)?;
            rep.assembly_s += t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            if self.symbolic_full.is_none() {
                self.symbolic_full = Some(linsolve::analyze(&jac)?);
            }
            let fact = linsolve::factorize_with(self.symbolic_full.as_ref().unwrap(), &jac)?;
            rep.factor_s += t1.elapsed().as_secs_f64();
            rep.pivot_alarm |= fact.extreme_growth();

            let t2 = Instant::now();
            let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
            let (dx, berr, refine) = linsolve::solve_refined(&jac, &fact, &neg_r);
            rep.solve_s += t2.elapsed().as_secs_f64();
            rep.backward_error = berr;
            rep.refine_steps = refine;

            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            r = full::residual(&self.asm, &inp, &x)?;
            rn = norm2(&r);
            history.push(rn);
            rep.newton_iters += 1;
            converged = rn <= nc.abs_tol || rn <= nc.rel_tol * r0;
        }
        if !converged {
            return Err(Error::NewtonDiverged {
                step: state.step + 1,
                iters: rep.newton_iters,
                history,
            });
        }
        let _ = rn;

        rep.p_ext = match g {
            Some(gf) => dot(&load_vector(&self.asm, gf), &x),
            None => 0.0,
        };
        let (next, gcl, mh) = self.apply_solution(state, &x, t_next)?;
        rep.gcl = gcl;
        rep.min_height = mh;
        Ok((next, rep))
    }

    /// Scatter a solution vector into a new state; advance the trace by
    /// τ·u₂|top, guard the fluid height, and measure the volume drift
    /// ∫ ξ dx₁ of the new interface velocity.
    fn apply_solution(
        &self,
        state: &State,
        x: &[f64],
        t_next: f64,
    ) -> Result<(State, f64, f64)> {
        let lay = &self.asm.layout;
        let mesh = &self.asm.mesh;
        let nv = mesh.num_vertices();
        let nt = mesh.num_triangles();
        let ntr = lay.n_trace;

        let mut u_vtx = [vec![0.0; nv], vec![0.0; nv]];
        let mut u_bub = [vec![0.0; nt], vec![0.0; nt]];
        for c in 0..2 {
            for v in 0..nv {
                if let Some(dof) = lay.vel_vtx[c][v] {
                    u_vtx[c][v] = x[dof as usize];
                }
            }
            for t in 0..nt {
                u_bub[c][t] = x[lay.vel_bub[c][t] as usize];
            }
        }
        let p: Vec<f64> = (0..nv).map(|v| x[lay.p[v] as usize]).collect();
        let z: Vec<f64> = (0..ntr)
            .map(|i| lay.z[i].map(|dof| x[dof as usize]).unwrap_or(0.0))
            .collect();

        let mut d = vec![0.0; ntr];
        let mut xi = vec![0.0; ntr];
        for i in 0..ntr {
            xi[i] = u_vtx[1][lay.trace_vertex[i]];
            d[i] = state.d[i] + self.controls.tau * xi[i];
        }
        let mh = min_height(&d);
        if mh <= self.controls.contact_floor {
            return Err(Error::Contact {
                step: state.step + 1,
                t: t_next,
                min_height: mh,
                floor: self.controls.contact_floor,
            });
        }
        let gcl = self.ops.mass.matvec(&xi).iter().sum();

        Ok((
            State {
                step: state.step + 1,
                t: t_next,
                u_vtx,
                u_bub,
                p,
                z,
                d: d.clone(),
                d_prev: state.d.clone(),
            },
            gcl,
            mh,
        ))
    }

    /// Inverse of `apply_solution`: state fields into a solution vector —
    /// the Newton initial guess.
    fn gather(&self, state: &State) -> Vec<f64> {
        let lay = &self.asm.layout;
        let mut x = vec![0.0; lay.step1_unknowns()];
        for c in 0..2 {
            for (v, dof) in lay.vel_vtx[c].iter().enumerate() {
                if let Some(dof) = dof {
                    x[*dof as usize] = state.u_vtx[c][v];
                }
            }
            for (t, dof) in lay.vel_bub[c].iter().enumerate() {
                x[*dof as usize] = state.u_bub[c][t];
            }
        }
        for (v, dof) in lay.p.iter().enumerate() {
            x[*dof as usize] = state.p[v];
        }
        for (i, dof) in lay.z.iter().enumerate() {
            if let Some(dof) = dof {
                x[*dof as usize] = state.z[i];
            }
        }
        x
    }

    /// Step from `state` to t_end, handing every transition to `on_step`.
    pub fn run<F>(&mut self, mut state: State, load: Option<Load>, mut on_step: F) -> Result<State>
    where
        F: FnMut(&State, &State, &StepReport) -> Result<()>,
    {
        let n = self.num_steps()?;
        while state.step < n {
            let (next, rep) = self.advance(&state, load)?;
            on_step(&state, &next, &rep)?;
            state = next;
        }
        Ok(state)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
