pub mod broker;
pub mod deploy;
pub mod eval;
pub mod fault;
pub mod fsutil;
pub mod gateway;
pub mod history;
pub mod meta;
pub mod process;
pub mod registry;
pub mod runner;
pub mod runtime;
pub mod workspace;
