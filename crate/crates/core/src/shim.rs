//! The hypervisor layer between a host's VMs and its NIC. One [`Shim`] per
//! host selects the enforcement scheme for the run.

use std::collections::{BTreeMap, VecDeque};

use crate::hygenicc::{Arrival, Departure, HgShim};
use crate::netelem::packet::{Packet, VmAddr};
use crate::ratelimit::{bucket_depth, TokenBucket};
use crate::sdngcc::SgShim;
use crate::time::SimTime;

/// What happened to a packet a VM handed to the hypervisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outbound {
    Transmit,
    Drop,
    /// Held in a per-VM queue. Carries the release time when the caller must
    /// schedule one.
    Held(Option<SimTime>),
}

impl From<Departure> for Outbound {
    fn from(d: Departure) -> Self {
        match d {
            Departure::Transmit => Outbound::Transmit,
            Departure::Drop => Outbound::Drop,
        }
    }
}

#[derive(Debug, Clone)]
struct ShapedVm {
    bucket: TokenBucket,
    queue: VecDeque<Packet>,
    release_pending: bool,
}

/// Fixed per-VM reservation: a token bucket with a queue in front of it, so
/// a VM can never exceed its rate but also never loses its reservation to
/// drops.
#[derive(Debug, Clone)]
pub struct StaticShaper {
    pub rate_bps: f64,
    pub queue_pkts: usize,
    depth: f64,
    vms: BTreeMap<VmAddr, ShapedVm>,
    pub drops: u64,
}

impl StaticShaper {
    pub fn new(rate_bps: f64, queue_pkts: usize) -> Self {
        StaticShaper {
            rate_bps,
            queue_pkts,
            depth: bucket_depth(rate_bps, SimTime::from_micros(500), 2.0),
            vms: BTreeMap::new(),
            drops: 0,
        }
    }

    pub fn backlog(&self, vm: VmAddr) -> usize {
        self.vms.get(&vm).map_or(0, |v| v.queue.len())
    }

    pub fn outbound(&mut self, now: SimTime, p: &Packet) -> Outbound {
        let (rate, depth) = (self.rate_bps, self.depth);
        let v = self.vms.entry(p.src).or_insert_with(|| ShapedVm {
            bucket: TokenBucket::new(rate, depth, now),
            queue: VecDeque::new(),
            release_pending: false,
        });
        if v.queue.is_empty() && v.bucket.try_consume(now, p.size_bytes()) {
            return Outbound::Transmit;
        }
        if v.queue.len() >= self.queue_pkts {
            self.drops += 1;
            return Outbound::Drop;
        }
        v.queue.push_back(*p);
        if v.release_pending {
            return Outbound::Held(None);
        }
        match v.bucket.ready_at(p.size_bytes()) {
            Some(t) => {
                v.release_pending = true;
                Outbound::Held(Some(t.max(now)))
            }
            None => {
                v.queue.pop_back();
                self.drops += 1;
                Outbound::Drop
            }
        }
    }

    /// Releases whatever the bucket now covers; returns the next release time
    /// if packets remain queued.
    pub fn release(&mut self, now: SimTime, vm: VmAddr, out: &mut Vec<Packet>) -> Option<SimTime> {
        let v = self.vms.get_mut(&vm)?;
        while let Some(p) = v.queue.front() {
            if !v.bucket.try_consume(now, p.size_bytes()) {
                break;
            }
            out.push(v.queue.pop_front().expect("front"));
        }
        match v.queue.front() {
            Some(p) => {
                let next = v.bucket.ready_at(p.size_bytes()).map(|t| t.max(now + SimTime(1)));
                v.release_pending = next.is_some();
                next
            }
            None => {
                v.release_pending = false;
                None
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Shim {
    /// Pass-through.
    None,
    Static(StaticShaper),
    HyGenIcc(HgShim),
    SdnGcc(SgShim),
}

impl Shim {
    pub fn outbound(&mut self, now: SimTime, p: &mut Packet) -> Outbound {
        match self {
            Shim::None => Outbound::Transmit,
            Shim::Static(s) => s.outbound(now, p),
            Shim::HyGenIcc(h) => h.outbound(now, p).into(),
            Shim::SdnGcc(s) => s.outbound(now, p).into(),
        }
    }

    /// Handles a packet addressed to a local VM. Packets the shim generates
    /// in response (explicit feedback) are appended to `out`.
    pub fn inbound(&mut self, now: SimTime, p: &mut Packet, out: &mut Vec<Packet>) -> Arrival {
        match self {
            Shim::None | Shim::Static(_) => Arrival::Deliver,
            Shim::HyGenIcc(h) => h.inbound(now, p, out),
            Shim::SdnGcc(s) => s.inbound(now, p),
        }
    }

    pub fn tick_period(&self) -> Option<SimTime> {
        match self {
            Shim::None | Shim::Static(_) => None,
            Shim::HyGenIcc(h) => Some(h.cfg.update_interval),
            Shim::SdnGcc(s) => Some(s.cfg.update_period),
        }
    }

    pub fn tick(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        match self {
            Shim::None | Shim::Static(_) => {}
            Shim::HyGenIcc(h) => h.timer_timeout(now, out),
            Shim::SdnGcc(s) => s.state_update(now),
        }
    }

    pub fn release(&mut self, now: SimTime, vm: VmAddr, out: &mut Vec<Packet>) -> Option<SimTime> {
        match self {
            Shim::Static(s) => s.release(now, vm, out),
            _ => None,
        }
    }

    pub fn as_hygenicc(&self) -> Option<&HgShim> {
        match self {
            Shim::HyGenIcc(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_sdngcc(&self) -> Option<&SgShim> {
        match self {
            Shim::SdnGcc(s) => Some(s),
            _ => None,
        }
    }
}
