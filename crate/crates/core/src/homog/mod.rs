//! Stochastic homogenization: random environments, passage times, spreading
//! speeds, Wulff shapes and the ballistic-rescaling test.

pub mod env;
pub mod passage;

pub use env::{EnvKind, EnvParams, RandomEnvironment};
pub use passage::{
    check_tau_laws, passage_table, passage_times, shift_pair, PassageEntry, PassageSetup, PassageStatus,
    PassageTable, TauLawReport,
};
pub mod wulff;

pub use wulff::{
    estimate_speeds, half_plane_speed, radii, support_speed, wulff, wulff_from_speeds, DirectionSpeed, FitBasis,
    HalfPlaneSetup, PassageClock, SpeedFit, WulffEstimate,
};
pub mod rescale;

pub use rescale::{disk_polygon, rescaled_convergence, InitialSet, RescaleSetup, RescaleTable};
