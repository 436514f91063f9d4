//! Orthogonalized-momentum optimization with diagonal equilibration, and the
//! numerical experiments around it.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`]: dense matrices, one-sided Jacobi SVD, polar factor, QR.
//! * [`rng`]: reproducible xoshiro256** randomness (splitmix64 seeding).
//! * [`equilibrate`]: row/column diagonal rescaling of momentum matrices.
//! * [`newton_schulz`]: polynomial orthogonalization iterations.
//! * [`problems`]: synthetic training objectives and matrix ensembles.
//! * [`theory`]: spectral diagnostics and checkable bounds for the methods.
//! * [`optimizer`]: the orthogonalized-momentum update rule and run driver.
//! * [`io`]: bit-exact matrix files, an NPY reader, CSV/SVG emission.
//! * [`experiments`]: reusable drivers shared by the CLI and the test suite.
//! * [`cli`]: the `orthopt` command-line experiment runner.

pub mod cli;
pub mod equilibrate;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod newton_schulz;
pub mod optimizer;
pub mod problems;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
