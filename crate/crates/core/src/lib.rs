//! Supervisor-routed multi-agent control plane for Kubernetes clusters.

pub mod api;
pub mod codegen;
pub mod config;
pub mod directive;
pub mod engine;
pub mod framed;
pub mod kube;
pub mod llm;
pub mod gateway;
pub mod governance;
pub mod memory;
pub mod registry;
pub mod scenario;
pub mod system;
pub mod sandbox;
