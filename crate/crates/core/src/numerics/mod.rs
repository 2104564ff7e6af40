//! Small numerical kernels shared by the physics modules.

pub mod fd;
pub mod fit;
pub mod interp;
pub mod ode;
pub mod quad;
pub mod tridiag;
