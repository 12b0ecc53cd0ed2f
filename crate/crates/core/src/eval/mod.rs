//! Image metrics, analytic flow, warping and the warped consistency score.

pub mod consistency;
pub mod flow;
pub mod metrics;
pub mod report;
pub mod sequence;

pub use consistency::{consistency_score, pair_schedule, ConsistencyScore, FramePair, LONG_OFFSET, PAIRS_PER_RANGE, SHORT_OFFSET};
pub use flow::{depth_from_tensor, exact_flow, warp, FlowField};
pub use metrics::psnr;
pub use report::{report_rows, write_report, ReportRow, REPORT_NOTE};
pub use sequence::{mean_scores, score_sequence, MeanScores};
pub use crate::stylizer::style_distance;
