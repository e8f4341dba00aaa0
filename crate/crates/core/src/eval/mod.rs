//! Evaluation: metrics, policy runs, trace analysis and ablation
//! experiments.

mod experiment;
mod metrics;
mod run;
mod trace;

pub use experiment::{ablation_arms, comparison_table, AblationKind, Arm, ArmOutcome, Experiment};
pub use metrics::{box_hits_target, compute_metrics, oracle_success, EpisodeResult, GroundedBox, MetricsReport};
pub use run::{evaluate_agent, random_policy_results};
pub use trace::{tercile_boundaries, trace_report, traces_from_str, traces_to_string, Bucket, TraceRecord, TraceReport, REPORT_SCHEMA};
