//! Linear time-invariant systems: representation, simulation and the
//! Lyapunov / Riccati solvers behind the Kalman oracle.

mod augment;
mod lyapunov;
mod psd;
mod riccati;
mod simulate;
mod system;

pub use augment::*;
pub use lyapunov::{lyapunov_residual, solve_lyapunov};
pub use psd::*;
pub use riccati::*;
pub use simulate::*;
pub use system::*;
