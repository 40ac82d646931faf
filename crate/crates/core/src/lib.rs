pub mod data;
pub mod detect;
pub mod experiment;
pub mod inject;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod stats;
