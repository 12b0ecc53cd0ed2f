//! Stage I scene fitting and Stage II prompt optimization.

pub mod geometry;
pub mod losses;
pub mod stage1;
pub mod stage2;

pub use geometry::GeometryCache;
pub use losses::{cycle_loss, rec_loss, weighted_cycle};
pub use stage1::{fit_scene, surface_cycle_errors, test_psnr, FitResult, LossRow, StageIConfig};
pub use stage2::{
    attach_ics, evaluate_gas, gas_from_stats, gas_loss, mean_gas, precompute_ics, prepare_views, train_prompt, GasRow, GasValue,
    PreparedView, PromptRun, StageIIConfig, StageIIScene, StyleTarget,
};
