//! Dense network core: layers, forward/backward passes, losses and optimizers.

mod checkpoint;
mod layer;
mod loss;
mod net;
mod optim;

pub use checkpoint::{Checkpoint, SeedLineage, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layer::{sigmoid, Layer, LayerGrad};
pub use loss::{bce, bce_grad, bce_loss, bce_rows, EPS_CLIP};
pub use net::{Forward, Gradients, LayeredNet, Mode, Slice};
pub use optim::{Optimizer, OptimizerKind, ParamSlot};
