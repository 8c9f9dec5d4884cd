//! Hyperbolic attention networks.
//!
//! * [`geometry`]: hyperboloid and Klein models, pseudo-polar lift, Einstein midpoint.
//! * [`autodiff`]: a small reverse-mode differentiation engine.
//! * [`attention`]: Euclidean and hyperbolic attentive reads and a multi-head layer.
//! * [`model`]: the weight-tied Recursive Transformer and its task heads.
//! * [`graphgen`]: hyperbolic random graphs, task sampling and the angular curriculum.
//! * [`training`]: optimizer, training loop, metrics, baselines and checkpoints.

pub mod attention;
pub mod autodiff;
pub mod geometry;
pub mod graphgen;
pub mod model;
pub mod training;
