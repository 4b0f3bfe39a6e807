//! Particle filters for joint state and time-varying parameter estimation in
//! ODE models, with the benchmark models and synthetic data they are tested on.

pub mod datagen;
pub mod ensemble;
pub mod filters;
pub mod models;
pub mod ode;
