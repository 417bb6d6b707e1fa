//! Annealed direct sparsity control: schedules, pruning spaces, ranking,
//! keep-or-kill events and the run controller.

mod run;
mod schedule;
mod space;

pub use run::{
    dsc1_run, dsc2_run, run_phase, EpochObserver, EpochRecord, PhaseConfig, PhaseOutcome, RunData, TrainSettings,
};
pub use schedule::AnnealSchedule;
pub use space::{
    check_disjoint, freeze_killed, kill_member, prune_event, rank_channels, rank_neurons, rank_weights, select_top,
    Members, PruneMask, PruneSpace, RankMetric, RankMetricKind, SpaceConfig, SpaceKind,
};
