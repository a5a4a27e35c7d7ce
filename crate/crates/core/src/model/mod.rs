//! The JetFormer encoder: particle embedding, a learnable class token,
//! pre-norm transformer blocks with batchnorm and ReLU, and a log-softmax
//! classification head. No positional encoding, so the output is invariant
//! to particle order.

mod checkpoint;
mod config;
mod forward;
mod state;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, payload_bytes, read_checkpoint, save_checkpoint, write_checkpoint,
    Format,
};
pub use config::{Architecture, BlockDims, ModelConfig};
pub use forward::Forward;
pub use state::{Block, Linear, ModelState};
