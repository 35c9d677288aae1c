//! Time-sliced duplex dialogue runtime.
//!
//! Conversations are cut into short time slices and processed one tick at a
//! time: each tick pairs one input slice with one output slice, and the
//! `<idle>` marker stands for silence on either side. The crate provides the
//! slicing rules, the session state machine, generator backends, the
//! dataset construction pipeline and a scripted evaluation harness.

pub mod backends;
pub mod forge;
pub mod harness;
pub mod session;
pub mod slicer;

pub use backends::{BackendError, Chunk, GeneratorBackend};
pub use session::{GenConfig, Session, SessionId, SessionState, SlicePair};
pub use slicer::{Role, Slice, SlicerConfig, Tokenizer, WhitespaceTokenizer};
