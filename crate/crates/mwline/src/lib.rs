//! Depth estimation for structured line maps observed by a moving camera.
//!
//! A camera with an IMU moves through a static scene whose lines are aligned
//! with the three axes of a Manhattan frame. Line directions and moments are
//! measurable from images; line depths are not. This crate simulates such a
//! setup, runs cascaded nonlinear observers that recover the unknown depths
//! (and, when velocity is not measured directly, the camera velocity from a
//! reference plane), and batches seeded Monte-Carlo trials over random scenes.
//!
//! Module layout follows the data flow: [`geometry`] holds the line and
//! rotation primitives, [`integrator`] the fixed-step ODE driver,
//! [`world_sim`] the scene/measurement synthesis, [`observers`] the estimator
//! right-hand sides, and [`trials`] the trial runner with its aggregation
//! and CSV reporting in [`montecarlo`].

pub mod geometry;
pub mod integrator;
pub mod metrics;
pub mod montecarlo;
pub mod observers;
pub mod trials;
pub mod world_sim;
