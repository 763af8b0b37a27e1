//! Minimal dense network with exact backpropagation and SGD with momentum.

mod net;
mod params;
mod sgd;

pub use net::{Activation, DenseNet, Layer};
pub use params::{LayerShape, ParamVector};
pub use sgd::SgdState;

pub(crate) use params::cosine;
