pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod io;
pub mod kernels;
pub mod operator;
pub mod oracle;
pub mod sum;
