//! Downstream analysis of coded results: CSMF extraction and accuracy,
//! top-cause tables, cause-group aggregation, and plot artifacts.

mod metrics;
mod plot;

pub use metrics::{
    aggregate_csmf, csmf_accuracy, csmf_accuracy_aligned, empirical_csmf, get_csmf,
    get_indiv_prob, get_top_cod, CauseGrouping, CoderOutput, TopCod, UndeterminedHandling,
};
pub use plot::{emit_plot, PlotArtifact, PlotKind, PlotOptions};
