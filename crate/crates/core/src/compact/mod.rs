//! Cost accounting and structural removal of dead units.

mod cost;
mod structural;

pub use cost::{
    channel_counts, count_flops, count_nonzero, count_params, count_unmasked, flops_ratio, layer_flops, layer_report,
    layer_shapes, report_csv, LayerCostRow, REPORT_HEADER,
};
pub use structural::{compact, remove_dead_neurons, remove_zero_channels, CompactionReport, EQUIVALENCE_TOL};
