//! Identification of radial distribution grid topology and second-order bus
//! interactions from squared voltage-magnitude time series.
//!
//! The pipeline is: build or load a [`grid::RadialGrid`], generate injection
//! profiles and solve the branch flow equations over time
//! ([`powerflow`]), map the voltage series to graph Volterra features
//! ([`features`]), fit sparse per-bus kernels ([`solver`]) and score the
//! recovered edges and triads against ground truth ([`identify`]).

pub mod error;
pub mod features;
pub mod grid;
pub mod identify;
pub mod io;
pub mod powerflow;
pub mod solver;

pub use error::{FeatureError, GridError, IdentifyError, IoError, PowerFlowError, SolverError};
pub use features::{FeatureMatrix, StackedModel, VolterraKernels};
pub use grid::{BusId, Line, RadialGrid};
pub use identify::{EdgeScores, EvaluationReport, Method, RocCurve, TriadScores};
pub use powerflow::{FlowModel, InjectionProfile, PowerFlowState, VoltageSeries};
pub use solver::{BusProblem, BusSolution, SolverConfig, SweepConfig};
