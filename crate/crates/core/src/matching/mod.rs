//! Hungarian label assignment and the 3D detection loss.

mod hungarian;
mod loss;

pub use hungarian::{hungarian, AssignError, Assignment, CostMatrix};
pub use loss::{
    detection_loss, focal_element, focal_loss, l1_loss, loss_with_assignment, regression_target, GtBox, LossConfig,
    LossError, LossReport, FOCAL_EPS,
};
