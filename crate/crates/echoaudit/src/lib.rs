//! Audit harness for conversational bias in multi-agent LLM systems.
//!
//! The harness simulates echo-chamber chatrooms of persona-initialized
//! agents, classifies the stance of every generated message with ensemble
//! classifier agents, and reports unwarranted opinion-change statistics
//! alongside a one-shot Likert baseline.

pub mod agents;
pub mod backend;
pub mod campaign;
pub mod chatroom;
pub mod classify;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod level;
pub mod metrics;
pub mod oneshot;
pub mod prompt;
pub mod store;
