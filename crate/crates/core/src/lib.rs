//! Graph Laplacian learning from smooth signals under distributional
//! uncertainty.
//!
//! A Laplacian is chosen to minimize the worst-case expected smoothness
//! `E[x^T L x] + eta ||L||_F^2` over every distribution within Wasserstein
//! distance `eps` of the empirical one. Two solvers are provided: one for a
//! ball of Gaussians ([`gaussian`]) and a distribution-free one
//! ([`general`]) that reduces to the sample average approximation at
//! `eps = 0`.
//!
//! ```no_run
//! use wdrograph::synth::{generate_dataset, DatasetSpec, GraphSpec};
//! use wdrograph::experiment::{learn, LearnSettings};
//! use wdrograph::metrics::mcc;
//!
//! let spec = DatasetSpec { graph: GraphSpec::Rbf { d: 20, sigma: 0.5, tau: 0.7 }, n: 100, noise_sigma: 0.1, seed: 1, test_n: 0 };
//! let data = generate_dataset(&spec)?;
//! let out = learn(&data.train()?, &LearnSettings::default())?;
//! println!("MCC {}", mcc(&out.laplacian, &data.groundtruth, 1e-4)?);
//! # Ok::<(), wdrograph::Error>(())
//! ```

pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod general;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod moments;
pub mod pgd;
pub mod synth;

pub use error::{Error, Result};
pub use gaussian::{solve_gaussian, GaussianSolveResult, GaussianSolverConfig};
pub use general::{solve_general, solve_saa, GeneralSolveResult, GeneralSolverConfig};
pub use graph::{adjoint_weights, validate_laplacian, weights_to_laplacian, LaplacianMatrix, WeightVector};
pub use moments::{empirical_moments, EmpiricalMoments, SignalMatrix};
