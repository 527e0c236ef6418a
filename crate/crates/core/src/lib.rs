//! Hardcore broadcast model on the k-ary tree.
//!
//! Exact root posteriors (Bayes and the uniform-fugacity recursion), the
//! magnetization algebra and its second-moment bounds, finite-support atom
//! laws, and population dynamics for large trees.

pub mod atoms;
pub mod error;
pub mod export;
pub mod params;
pub mod popdyn;
pub mod posterior;
pub mod recursion;
pub mod streams;
pub mod tree;

pub use atoms::{
    atom_recursion, atom_recursion_with_cap, cal_a_ratio_check, moments_from_atoms, Atom,
    AtomDistribution, AtomLaws, CalARatio, Condition, MagnetizationMoments, Quantity,
};
pub use error::{Error, Result};
pub use params::{
    bounds_report, contraction_crossing, omega_bar, BoundsReport, ModelParams, BETA_STAR,
};
pub use popdyn::{
    run_decay, scan_threshold, t3_estimates, t3_expected_posterior, DecaySettings, DecayTrace,
    MomentEstimate, Population, ScanResult, T3Estimate, T3Method,
};
pub use posterior::{
    likelihood_pass, magnetization_of, paper_posterior_recursion, root_posterior, PosteriorMode,
};
pub use recursion::{
    add_edge, contraction_iterate, fold_children, fold_tree, level_bound, merge_magnetization,
    one_step_bound, DecayBoundTrace,
};
pub use streams::DEFAULT_SEED;
pub use tree::{Configuration, RootCondition, TreeShape};
