//! Traffic models of periodic event-triggered control (PETC) loops.

pub mod abstraction;
pub mod bounds;
pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod reach;
pub mod sdp;
pub mod sim;
