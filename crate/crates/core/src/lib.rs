pub mod analytics;
pub mod compress;
pub mod costmodel;
pub mod engine;
pub mod evalsmooth;
pub mod inner_optim;
pub mod linalg;
pub mod model_zoo;
pub mod outer_optim;
pub mod params;
pub mod rng;
pub mod scaling_fit;
