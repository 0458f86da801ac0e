//! Deterministic discrete-event simulator for data-center congestion control.
//!
//! The crate models hosts, switches and links at packet granularity, TCP
//! (NewReno and DCTCP) and UDP endpoints, and two transport-agnostic
//! enforcement schemes that run in the hypervisor: a distributed
//! hypervisor-to-hypervisor loop ([`hygenicc`]) and a controller-driven loop
//! ([`sdngcc`]). The [`harness`] module builds scenarios, runs them and writes
//! CSV results.

pub mod harness;
pub mod hygenicc;
pub mod netelem;
pub mod ratelimit;
pub mod rng;
pub mod sdngcc;
pub mod shim;
pub mod sim;
pub mod time;
pub mod transport;
pub mod world;

pub use time::SimTime;
