pub mod error;
pub mod field;
pub mod harness;
pub mod merkle;
pub mod parallel;
pub mod params;
pub mod por;
pub mod pubpor;
pub mod store;
pub mod wire;
