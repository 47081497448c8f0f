//! Security games, adversarial servers and benchmarks.

pub mod adversary;
pub mod bench;
pub mod games;

pub use adversary::{AdversarialServer, Adversary};
pub use bench::{bench_audit, to_csv, BenchMode, BenchOptions, BenchRow};
pub use games::{
    forgery_bound, run_authenticity_game, run_retrievability_game, GameConfig, RetrievabilityReport,
    TrialReport,
};
