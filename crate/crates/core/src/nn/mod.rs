//! Minimal dense neural toolkit: layers, exact backpropagation, SGD,
//! checkpoints and finite-difference gradient checking.

mod checkpoint;
mod gradcheck;
mod gru;
mod layers;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, FORMAT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_flat, gradient_check_with, relative_error};
pub use gru::GatedCell;
pub use layers::{ForwardPass, Gradients, Input, Layer, LayerSpec, LayerStack};
pub use tensor::{Real, Tensor2};


/// Global gradient-norm clipping threshold used by every trainer.
pub const GRAD_CLIP_NORM: f64 = 5.0;
