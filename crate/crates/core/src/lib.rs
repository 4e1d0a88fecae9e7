//! Multi-layered Bayesian record linkage.
//!
//! Two files are each partitioned into blocks. The engine jointly samples an
//! injective pairing of blocks and a one-to-one matching of records inside
//! every paired block, under a Fellegi-Sunter style mixture likelihood for
//! block-level and record-level agreement patterns.
//!
//! ```no_run
//! use mlbrl_core::{run_mlbrl, simulate, simulation_schema, ChainConfig, Hyperparams, SimulationConfig};
//!
//! let data = simulate(&SimulationConfig::default())?;
//! let out = run_mlbrl(
//!     &data.f1.file,
//!     &data.f2.file,
//!     &simulation_schema(false),
//!     &Hyperparams::default(),
//!     &ChainConfig::default(),
//! )?;
//! println!("{} samples", out.samples.len());
//! # Ok::<(), mlbrl_core::LinkError>(())
//! ```

pub mod analysis;
pub mod assignment;
pub mod baselines;
pub mod comparison;
pub mod data;
pub mod em;
pub mod error;
pub mod model;
pub mod output;
pub mod rng;
pub mod sampler;
pub mod simulation;

pub use analysis::{
    analyze_imputations, fit_logistic, link_count_summary, rubin_combine, AnalysisSpec, LogisticFit, MiEstimate,
    OddsRatio,
};
pub use assignment::solve_assignment;
pub use baselines::{run_brl, run_cibrl, DEFAULT_BRL_CAP};
pub use comparison::{
    build_comparison_cube, compare_values, AgreementLevel, Block, BlockedFile, ComparisonCube, ComparisonKind,
    ComparisonSpec, Record, Schema, Value,
};
pub use data::{read_blocked_csv, write_blocked_csv, Dataset, ExtraColumns};
pub use em::{em_mixture, EmFit, EmOptions, FsParams};
pub use error::{LinkError, Result};
pub use model::{
    log_component_density, log_joint_likelihood, log_prior_linkage, sample_parameters, BlockAssignment,
    Hyperparams, LinkageState, Matching, ModelParams,
};
pub use sampler::{
    build_proposal_pool, mh_block_move, record_full_conditional, run_mlbrl, sweep_record_links, ChainConfig,
    ChainOutput, Link, Method, PosteriorSample, ProposalPool, Sampler,
};
pub use simulation::{
    evaluate_sample, generate_dataset, inject_errors, run_study, simulate, simulation_schema, GroundTruth,
    LinkageMetrics, SimulationConfig, StudyConfig, StudyRow,
};
