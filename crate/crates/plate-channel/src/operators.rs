//! Operators on the plate trace line: P1 mass and stiffness on the periodic
//! top boundary, the weak second derivative, and the gradient-projection
//! used to bring continuous initial data into the discrete trace space.
//!
//! The weak second derivative z = ∂²ₓ,h d is defined by
//!   ∫ z ψ = −∫ ∂ₓd ∂ₓψ   for all trace functions ψ,
//! i.e. M z = −K d. Initializing the curvature variable this way (rather
//! than pointwise) is what lets the bending energy enter the discrete
//! energy identity without a consistency remainder.
//!
//! The projection R maps a continuous profile to the trace function with the
//! same weak gradient and the same mean:
//!   ∫ ∂ₓ(Rη) ∂ₓψ = ∫ ∂ₓη ∂ₓψ ∀ψ,   ∫ Rη = ∫ η,
//! assembled as a saddle system with a single mean multiplier (the periodic
//! stiffness alone is singular on constants). On a line, integrating ∂ₓη
//! against the piecewise-constant ∂ₓψ is exact from endpoint values, so the
//! right-hand side needs no quadrature.

use crate::error::{Error, Result};
use crate::linsolve::{self, Csr, Factorization};
use crate::quadrature::gauss_segment;
use crate::spaces::TraceBc;

/// Mass, stiffness and solvers for one trace line with `n` nodes and
/// uniform spacing `dx` (period n·dx).
pub struct TraceOps {
    pub n: usize,
    pub dx: f64,
    pub bc: TraceBc,
    pub mass: Csr,
    pub stiffness: Csr,
    mass_lu: Factorization,
}

impl TraceOps {
    pub fn build(n: usize, dx: f64, bc: TraceBc) -> Result<TraceOps> {
        if n < 3 || dx <= 0.0 {
            return Err(Error::Structural(format!(
                "trace line needs >= 3 nodes and positive spacing (n = {n}, dx = {dx})"
            )));
        }
        let mut mt = Vec::with_capacity(3 * n);
        let mut kt = Vec::with_capacity(3 * n);
        for s in 0..n as u32 {
            // Segment s joins nodes s and s+1 (wrapping); local matrices
            // dx/6 [[2,1],[1,2]] and 1/dx [[1,-1],[-1,1]].
            let a = s;
            let b = (s + 1) % n as u32;
            let (m0, m1) = (dx / 3.0, dx / 6.0);
            mt.extend([(a, a, m0), (b, b, m0), (a, b, m1), (b, a, m1)]);
            let k = 1.0 / dx;
            kt.extend([(a, a, k), (b, b, k), (a, b, -k), (b, a, -k)]);
        }
        let mass = Csr::from_triplets(n, &mt)?;
        let stiffness = Csr::from_triplets(n, &kt)?;
        let mass_lu = match bc {
            TraceBc::Periodic => linsolve::factorize(&mass)?,
            TraceBc::Clamped => linsolve::factorize(&constrain_node0(&mass))?,
        };
        Ok(TraceOps { n, dx, bc, mass, stiffness, mass_lu })
    }

    /// ‖v‖²_{L²(Σ)} = vᵀ M v.
    pub fn l2_norm_sq(&self, v: &[f64]) -> f64 {
        quadratic_form(&self.mass, v)
    }

    /// ‖∂ₓv‖²_{L²(Σ)} = vᵀ K v.
    pub fn h1_semi_sq(&self, v: &[f64]) -> f64 {
        quadratic_form(&self.stiffness, v)
    }

    /// Weak second derivative: solve M z = −K d.
    pub fn discrete_laplace(&self, d: &[f64]) -> Vec<f64> {
        assert_eq!(d.len(), self.n);
        let mut rhs = self.stiffness.matvec(d);
        for v in rhs.iter_mut() {
            *v = -*v;
        }
        if self.bc == TraceBc::Clamped {
            rhs[0] = 0.0;
        }
        self.mass_lu.solve(&rhs)
    }

    /// Project a continuous periodic profile into the trace space, matching
    /// the weak gradient and the mean.
    pub fn project(&self, eta: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let n = self.n;
        let nodal: Vec<f64> = (0..n).map(|i| eta(i as f64 * self.dx)).collect();
        match self.bc {
            TraceBc::Periodic => {
                // [K, m; mᵀ, 0] [v; λ] = [K·nodal; ∫η], with m = M·1 so that
                // mᵀ v = ∫ v. The gradient data is exact from nodal values
                // because ∂ₓψ is constant per segment.
                let g = self.stiffness.matvec(&nodal);
                let ones = vec![1.0; n];
                let m1 = self.mass.matvec(&ones);
                let mut t: Vec<(u32, u32, f64)> = Vec::new();
                for r in 0..n {
                    for k in self.stiffness.row_ptr[r]..self.stiffness.row_ptr[r + 1] {
                        t.push((
                            r as u32,
                            self.stiffness.col_idx[k],
                            self.stiffness.values[k],
                        ));
                    }
                    t.push((r as u32, n as u32, m1[r]));
                    t.push((n as u32, r as u32, m1[r]));
                }
                let sys = Csr::from_triplets(n + 1, &t)?;
                let (pts, wts) = gauss_segment(5);
                let mut mean = 0.0;
                for s in 0..n {
                    let xl = s as f64 * self.dx;
                    for (p, w) in pts.iter().zip(&wts) {
                        mean += w * self.dx * eta(xl + p * self.dx);
                    }
                }
                let mut rhs = g;
                rhs.push(mean);
                let f = linsolve::factorize(&sys)?;
                let (mut sol, _, _) = linsolve::solve_refined(&sys, &f, &rhs);
                sol.truncate(n);
                Ok(sol)
            }
            TraceBc::Clamped => {
                // Pinned node fixes the constant; no multiplier needed.
                let mut g = self.stiffness.matvec(&nodal);
                g[0] = 0.0;
                let sys = constrain_node0(&self.stiffness);
                let f = linsolve::factorize(&sys)?;
                let (sol, _, _) = linsolve::solve_refined(&sys, &f, &g);
                Ok(sol)
            }
        }
    }
}

fn quadratic_form(a: &Csr, v: &[f64]) -> f64 {
    let av = a.matvec(v);
    v.iter().zip(&av).map(|(x, y)| x * y).sum()
}

/// Replace row/column 0 by the identity (value constrained to zero).
fn constrain_node0(a: &Csr) -> Csr {
    let mut t = Vec::new();
    for r in 0..a.n {
        for k in a.row_ptr[r]..a.row_ptr[r + 1] {
            let c = a.col_idx[k] as usize;
            if r != 0 && c != 0 {
                t.push((r as u32, c as u32, a.values[k]));
            }
        }
    }
    t.push((0, 0, 1.0));
    Csr::from_triplets(a.n, &t).expect("pattern stays in range")
}
