//! Prescribed-time cooperative output regulation for linear heterogeneous
//! leader-follower multi-agent systems.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense kernels (eigenvalues, rank, Lyapunov and linear solves),
//!   generic over [`numerics::Real`].
//! - [`graph`], [`plant`], [`synthesis`]: communication graph, agent models,
//!   regulator equations, gain construction and certification.
//! - [`sim`]: the time-varying closed loop and its RK4 integrator.
//! - [`analysis`]: convergence certification and run comparison.
//! - [`scenario`]: TOML scenario files, including the two bundled examples.
//!
//! Simulation and analysis run in `f64`; the aliases below fix the scalar for
//! the generic layers.

pub mod analysis;
pub mod graph;
pub mod numerics;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod synthesis;

pub use numerics::Real;

pub type Mat = numerics::Matrix<f64>;
pub type CMat = numerics::CMatrix<f64>;
pub type Spectrum = numerics::Spectrum<f64>;
pub type Network = graph::Network<f64>;
pub type LaplacianParts = graph::LaplacianParts<f64>;
pub type ObserverRate = graph::ObserverRate<f64>;
pub type AgentModel = plant::AgentModel<f64>;
pub type Exosystem = plant::Exosystem<f64>;
pub type RegulatorSolution = plant::RegulatorSolution<f64>;
pub type GainSet = synthesis::GainSet<f64>;
pub type AgentGains = synthesis::AgentGains<f64>;
pub type GainSpec = synthesis::GainSpec<f64>;
pub type CascadeRates = synthesis::CascadeRates<f64>;
