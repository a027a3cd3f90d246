//! Set-membership estimation, min-max receding-horizon control and
//! multiple-model learning for linear systems with ellipsoid-bounded noise.

pub mod adaptive;
pub mod ellipsoid;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod mpc;
pub mod sdp;
pub mod system;

pub use ellipsoid::Ellipsoid;
pub use error::{Error, Result};
