//! Nonlinear model families: the averaging demo with its irreversible slow
//! drift, and the stiff-potential constraint model.

pub mod averaging;
pub mod stiff;
pub mod wasserstein;

pub use averaging::{locking_gap_quadrature, make_averaging_demo, sigma_hk_mc, AveragingModel};
pub use stiff::{
    stiff_concentration, stiff_dynamic_check, stiff_limit_model, stiff_phase_map, Potential,
    StiffModel,
};
