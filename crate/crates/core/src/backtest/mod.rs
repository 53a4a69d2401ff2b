//! Monte Carlo backtest of the recommender on a historical cohort.
//!
//! Each run draws, per individual, whether they follow the recommendation
//! (probability `pi_i`) and, if so, one of their top-z recommended
//! locations uniformly. Gains are always measured in predicted outcomes at
//! both the chosen and the actual location.

mod compliance;
mod config;
mod output;
mod robustness;
mod run;

pub use compliance::{assign_compliance, ComplianceAssignment};
pub use config::{ComplianceMode, SimulationConfig, DEFAULT_SUBGROUPS};
pub use output::{write_loo, write_summary, write_sweep};
pub use robustness::{
    leave_one_out, subset_removal, sweep, sweep_grid, LooReport, LooRow, SubsetReport, SubsetRule, SweepRow,
};
pub use run::{
    prepare, simulate, simulate_run, simulate_runs, subgroup_gains, summarize, BacktestInputs, Estimate, RunTrace,
    Scenario, ShiftRow, SimulationRun, SimulationSummary, SubgroupRow,
};
