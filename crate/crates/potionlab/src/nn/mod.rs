//! Neural-network core: specs, models, gradients, training, persistence.

mod io;
mod model;
mod spec;
mod train;

pub use io::{load_model, model_content_id, save_model};
pub use model::{argmax, Model, OutnormGradient, OUTNORM_EPS};
pub use spec::{plan_layers, InputShape, LayerPlan, LayerSpec, ModelSpec, Shape};
pub use train::{train, EpochStats, TrainConfig};
