//! Dense numeric core: matrices, feed-forward networks with exact gradients,
//! Adam, finite-difference checks, seeded randomness and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod linalg;
pub mod net;
pub mod rng;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use gradcheck::{check_gradient, finite_diff_check, relative_error, GradCheckReport};
pub use linalg::Mat;
pub use net::{mlp_backward, mlp_forward, Activation, FeedForwardNet, ForwardCache, TangentCache};
pub use rng::Rng;
