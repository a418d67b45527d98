//! Correspondence search, closed-form rigid alignment, ICP and the
//! coarse-to-fine ICP ladder.

mod align;
mod cofi;
mod icp;
pub mod kdtree;

pub use align::best_rigid_align;
pub use cofi::{
    cofi_icp, gate_check, stage_correspondence_distance, CofiResult, CofiSchedule, GateParams, StageReport,
};
pub use icp::{evaluate_registration, find_correspondences, icp, Correspondence, IcpParams, RegistrationResult};
pub use kdtree::KdTree;
