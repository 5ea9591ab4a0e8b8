pub mod dsl;
pub mod matrix;
pub mod panel;
pub mod stats;
pub mod logic;
pub mod model;
pub mod backtest;
pub mod agent;
pub mod loops;
pub mod synthetic;
pub mod config;
