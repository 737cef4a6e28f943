//! Metric logging and the post-run diagnostics.

mod decay;
mod metrics;
mod similarity;

pub use decay::{decay_report, PresenceBucket, PresenceHistogram, MAGNITUDE_FLOOR};
pub use metrics::{format_f64, Method, MetricLog, MetricRow, CSV_HEADER};
pub use similarity::{mask_similarity, mean_mask_similarity};
