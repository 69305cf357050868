//! Skill-chaining RRT planning over scripted manipulation skills.

pub mod connector;
pub mod domain;
pub mod error;
pub mod filtering;
pub mod geometry;
pub mod planner;
pub mod seed;

pub use error::{Error, Result};
