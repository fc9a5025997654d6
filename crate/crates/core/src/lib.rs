//! Maximally permissive reward machines.
//!
//! Enumerates every partial-order plan of a propositional STRIPS task,
//! synthesises reward machines from the plan set (or from single plans),
//! and trains tabular agents on a crafting gridworld under those machines.

pub mod craftworld;
pub mod domain_io;
pub mod experiment;
pub mod fixtures;
pub mod planning;
pub mod pop;
pub mod reward_machine;
pub mod trainer;

pub use domain_io::{parse_domain, serialize_domain, DomainFile, DomainParseError};
pub use planning::{
    ActionId, Fluent, FluentSet, Goal, GoalMode, Literal, PlanningAction, PlanningDomain,
    PlanningError, PlanningState, PlanningTask,
};
pub use pop::{
    brute_force_plans, canonicalize, enumerate_pops, enumerate_pops_with, is_consistent,
    linearisations, resolve_threats, validate_pop, CausalLink, EnumerateOptions, Ordering,
    PartialOrderPlan, PlanError, PlanSet, SequentialPlan, Step,
};
pub use reward_machine::{
    build_mprm, build_single_plan_rm, rm_step, rm_to_dot, signed_delta, ObservationLabel,
    PlanRef, RewardMachine, RmError, RmState, RmStateId,
};
pub use craftworld::{
    env_reset, env_step, label, parse_map, render, CellKind, Coord, CraftWorld, EnvAction,
    EnvError, EnvState, GridMap, MapParseError, StartSpec,
};
pub use trainer::{
    bfs_shortest_completion, build_product, evaluate, greedy_trajectory, train, train_setup,
    value_iteration, EnvModel, Hyperparams, ProductMdp, QTable, RmTable, RunLog, RunLogError,
    TrainError, TrainMode, Trajectory, TrainingSetup,
};
pub use experiment::{
    aggregate, aggregate_csv, aggregate_dir, build_rm, parse_experiment_config, percentile,
    run_experiment, AggregateRow, ExperimentConfig, ExperimentError, Family, RmKind, StartReduce,
};
