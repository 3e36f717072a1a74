pub mod browser;
pub mod config;
pub mod gateway;
pub mod kernel;
pub mod ledger;
pub mod memory;
pub mod message;
pub mod toolkit;
pub mod evolution;
pub mod exploration;
pub mod cli;
