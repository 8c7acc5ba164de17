//! Finite-element laboratory for the linear thermoelastic Reissner-Mindlin-Timoshenko
//! plate with Cattaneo heat conduction.
//!
//! The crate assembles P1 operators on disk and rectangle meshes, marches the
//! first-order system with the implicit midpoint rule, and provides the
//! eigen-solvers, Bogovskii-type right inverse of the divergence and Lyapunov
//! diagnostics used to probe the stability behaviour of the model.

pub mod bogovskii;
pub mod diagnostics;
pub mod dynamics;
pub mod fem;
pub mod initial_data;
pub mod mesh;
pub mod params;
pub mod spectral;

pub use bogovskii::{bogovskii_apply, BogovskiiError, BogovskiiSolve};
pub use diagnostics::{
    lyapunov_decay_check, GronwallReport, LyapunovParts, SeriesRecorder,
    energy, fit_decay, DecayFit, DiagnosticsError, EnergyParts, LyapunovConfig, TimeSeries,
};
pub use dynamics::{DissipationParts, State, StepReport, Stepper, ThermalBc};
pub use fem::{assemble, AssembledOperators, SolverError, SparseMatrix};
pub use initial_data::{build_initial, InitialPreset, PresetKind};
pub use mesh::{mesh_disk, mesh_rectangle, Geometry, Mesh, MeshError};
pub use params::{build_stiffness_s, validate_params, ParamError, PlateParams, StiffnessS};
pub use spectral::{
    korn_constants, laplace_eigen, solenoidal_eigenmode, EigenResult, KornEstimates, SpectralError,
};
