//! Door-opening and traversal simulation with teacher/student training.

pub mod config;
pub mod distill;
pub mod door;
pub mod env;
pub mod eval;
pub mod interaction;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod randomization;
pub mod rewards;
pub mod robot;
pub mod runlog;
pub mod scripted;
