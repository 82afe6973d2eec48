//! Numerical laboratory for the reduced Ginzburg-Landau model in a constant
//! magnetic field: discretized energies on square and cubic boxes, ground
//! states under Dirichlet and magnetic-periodic boundary conditions, the
//! lowest Landau band, the Abrikosov minimization, and thermodynamic limits.

pub mod cli;
pub mod energy;
pub mod grid;
pub mod landau;
pub mod minimize;
pub mod thermo;

pub use energy::{eval_energy, eval_gradient, eval_residual, EnergyBreakdown};
pub use grid::{build_gauge_links, Bc, GaugeLinks, GridError, GridSpec, OrderParameter};
pub use landau::{lowest_band, minimize_abrikosov, AbrikosovResult, LandauBand, LandauError};
pub use thermo::{
    bulk_trial_energy, estimate_e2_gl, estimate_e2_lattice, estimate_g, property_suite,
    PropertyCheck, PropertyConfig, ThermoError, ThermoSeries, TrialConfigReport,
};
pub use minimize::{
    continuum_extrapolate, minimize_dirichlet_2d, minimize_dirichlet_3d, minimize_periodic_2d,
    Extrapolation, MinimizeError, MinimizeOptions, MinimizeResult,
};
