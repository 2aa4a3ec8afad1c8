//! Finite-element simulator for a 2D incompressible viscous flow coupled to
//! an elastic plate spanning the top of a periodic channel.
//!
//! The fluid occupies Ω(t) = {(x1, x2) : 0 < x2 < η(t, x1)} with η the plate
//! deflection; the plate obeys a damped Euler–Bernoulli law driven by the
//! fluid load, and the fluid follows the plate through the kinematic
//! condition u = (∂t η) e2 on the interface. Everything is computed on the
//! fixed reference channel via an explicit graph-type change of variables,
//! so the moving geometry enters only through per-point scalars (J, F⁻¹).
//!
//! Two time discretizations share one spatial setup: a linear semi-implicit
//! scheme that decouples geometry from the momentum solve (one sparse LU per
//! step), and a fully implicit variant solved by Newton. The design target
//! is verifiability: the semi-implicit scheme satisfies a discrete energy
//! identity to machine precision, and the library ships the bookkeeping to
//! check it, along with a discrete geometric conservation law and
//! convergence-rate harnesses.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod linsolve;
pub mod mesh;
pub mod operators;
pub mod quadrature;
pub mod spaces;
pub mod stepper;
pub mod vtk;

pub use error::{Error, Result};
