//! Controller-driven congestion control: an SDN application that watches
//! switch mark counters and end-host shims that enforce its notifications.

pub mod controller;
pub mod shim;

pub use controller::{CongestionMsg, Controller, ControllerConfig, PacketIn};
pub use shim::{SgConfig, SgShim, SgVmState};
