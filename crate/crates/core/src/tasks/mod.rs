//! Task definitions: structural losses, instance generators and the
//! block-ambiguous theory fixtures.

mod instance;
mod losses;
mod theory;

pub use instance::{
    brute_force_tour, generate_instance, heuristic_tour, random_tour_length, Anchor, ImageKind, InstanceSpec,
    LogitMask, TaskInstance, TaskKind, DECODE_MASK, EXACT_TOUR_LIMIT, TRAIN_MASK,
};
pub use losses::{
    distance_matrix, expected_tour_loss, jigsaw_arrangement_loss, jigsaw_smoothness_loss, monotonicity_loss,
    soft_reorder, successor_heatmap_var, tour_length, tsp_tour_loss, JigsawLayout,
};
pub use theory::{
    block_cost_matrix, check_beta, compatible_fixture, default_beta_grid, hard_block_closed_form, incompatible_fixture,
    log_uniform_grid, proposition1_bounds, verify_no_global_beta, BetaCheck, BlockAmbiguousSpec, GlobalBetaReport,
    PropositionBounds, BLOCK_SINKHORN_ITERS,
};
