//! Segmentation metrics and statistical comparison.

pub mod distance;
pub mod overlap;
pub mod report;
pub mod stats;
pub mod surface;

pub use distance::{adb, hd95, nearest_rank, surface_distances, SurfaceDistances};
pub use overlap::{counts, overlap_metrics, Counts, Overlap};
pub use report::{
    aggregate, evaluate_case, evaluate_case_with_spacing, format_table, mean_sd, read_reports_csv, write_reports_csv,
    MeanSd, MetricsReport, METRIC_NAMES,
};
pub use stats::{anova_f, midranks, rank_sum_test, RankSum};
pub use surface::{directed_distances, extract_surface, squared_distance_map};

#[cfg(test)]
mod tests;
