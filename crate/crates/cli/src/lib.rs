pub mod commands;
pub mod family;
pub mod scenario;
