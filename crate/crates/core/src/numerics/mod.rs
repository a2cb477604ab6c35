//! Small numerical kernels shared by the solvers.

pub mod roots;
pub mod quad;
