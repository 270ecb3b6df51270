pub mod exec;
pub mod fairness;
pub mod hrv;
pub mod nnet;
pub mod rng;
pub mod dataset;
pub mod mitigation;
pub mod saliency;
