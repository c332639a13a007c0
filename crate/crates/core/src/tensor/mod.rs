//! Dense tensors with a reverse-mode gradient tape.
//!
//! [`Array`] is plain storage. A [`Tape`] records every operation applied to
//! [`Tensor`] handles during a forward pass; [`Tape::backward`] then walks the
//! record in reverse and returns [`Gradients`]. Parameters live in a
//! [`ParamStore`] and are bound onto a tape with [`Tape::param`].

mod array;
mod params;
mod tape;

pub use array::{softmax_along, Array};
pub use params::{ParamId, ParamStore};
pub use tape::{Dropout, Gradients, Mask, Tape, Tensor, MASK_FILL};
