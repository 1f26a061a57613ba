pub mod broker;
pub mod campaign;
pub mod cli;
pub mod clock;
pub mod proxy;
pub mod synapp;
pub mod taskserver;
pub mod thinker;
pub mod wire;
