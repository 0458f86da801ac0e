//! End-host enforcement for the controller-driven variant.
//!
//! The shim keeps one token bucket per local VM, splits the NIC capacity
//! equally among active VMs, stamps ECT on everything it transmits, and
//! turns controller notifications into rate decreases. A periodic update
//! recovers rates toward the equal share.

use std::collections::BTreeMap;

use crate::netelem::packet::{Packet, Proto, VmAddr, CONTROL_PAYLOAD_BYTES};
use crate::ratelimit::{bucket_depth, TokenBucket};
use crate::time::SimTime;

pub use crate::hygenicc::{Arrival, Departure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgConfig {
    pub nic_capacity_bps: f64,
    /// Controller monitor interval T_i, used to normalise mark counts.
    pub monitor_interval: SimTime,
    pub update_period: SimTime,
    /// T_c
    pub congestion_grace: SimTime,
    /// T_o
    pub inactivity_timeout: SimTime,
    pub rmin_fraction: f64,
    pub scale_bps: f64,
    pub k_fast: f64,
    /// Bucket depth in update periods.
    pub bucket_intervals: f64,
    /// Clear CE before delivery to the VM.
    pub clear_ce: bool,
}

impl Default for SgConfig {
    fn default() -> Self {
        SgConfig::with_interval(SimTime::from_millis(5))
    }
}

impl SgConfig {
    /// Defaults derived from a monitor interval: update period T_i, grace 2 T_i.
    pub fn with_interval(t_i: SimTime) -> Self {
        SgConfig {
            nic_capacity_bps: 1e9,
            monitor_interval: t_i,
            update_period: t_i,
            congestion_grace: SimTime(2 * t_i.as_nanos()),
            inactivity_timeout: SimTime::from_secs(1),
            rmin_fraction: 0.01,
            scale_bps: crate::hygenicc::scale_for(SimTime::from_millis(1)),
            k_fast: 5.0,
            bucket_intervals: 2.0,
            clear_ce: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgVmState {
    pub source: VmAddr,
    pub vport: u32,
    pub weight: f64,
    pub bucket: TokenBucket,
    pub sent_time: SimTime,
    pub cong_detected: bool,
    pub cong_time: SimTime,
    pub active: bool,
    /// E(i)
    pub share: f64,
    pub r_min: f64,
    /// Marks received while the VM was inactive, applied on its next packet.
    pub pending_marks: u64,
}

impl SgVmState {
    pub fn rate(&self) -> f64 {
        self.bucket.rate_bps
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SgCounters {
    pub ctrl_received: u64,
    pub ctrl_ignored: u64,
    pub malformed_ctrl: u64,
    pub tx_dropped: u64,
    pub ce_cleared: u64,
}

#[derive(Debug, Clone)]
pub struct SgShim {
    pub cfg: SgConfig,
    vms: BTreeMap<VmAddr, SgVmState>,
    pub counters: SgCounters,
}

impl SgShim {
    pub fn new(cfg: SgConfig) -> Self {
        SgShim {
            cfg,
            vms: BTreeMap::new(),
            counters: SgCounters::default(),
        }
    }

    pub fn vm(&self, vm: VmAddr) -> Option<&SgVmState> {
        self.vms.get(&vm)
    }

    pub fn vms(&self) -> impl Iterator<Item = (&VmAddr, &SgVmState)> {
        self.vms.iter()
    }

    /// Sum of E(i) over active VMs.
    pub fn total_share(&self) -> f64 {
        self.vms.values().filter(|v| v.active).map(|v| v.share).sum()
    }

    /// Registers a local VM with an operator weight; otherwise VMs are
    /// discovered from their first packet with weight 1.
    pub fn add_vm(&mut self, vm: VmAddr, weight: f64, now: SimTime) {
        let vport = self.vms.len() as u32;
        self.vms.entry(vm).or_insert(SgVmState {
            source: vm,
            vport,
            weight,
            bucket: TokenBucket::new(0.0, 0.0, now),
            sent_time: now,
            cong_detected: false,
            cong_time: SimTime::ZERO,
            active: false,
            share: 0.0,
            r_min: 0.0,
            pending_marks: 0,
        });
    }

    fn set_rate(&mut self, vm: VmAddr, now: SimTime, rate: f64) {
        let span = self.cfg.update_period;
        let k = self.cfg.bucket_intervals;
        let v = self.vms.get_mut(&vm).expect("known vm");
        let rate = rate.min(v.share).max(v.r_min);
        v.bucket.reconfigure(now, rate, bucket_depth(rate, span, k));
    }

    fn redistribute(&mut self, now: SimTime) {
        let total_w: f64 = self.vms.values().filter(|v| v.active).map(|v| v.weight).sum();
        let cap = self.cfg.nic_capacity_bps;
        let frac = self.cfg.rmin_fraction;
        let active: Vec<VmAddr> = self.vms.iter().filter(|(_, v)| v.active).map(|(a, _)| *a).collect();
        for a in active {
            let v = self.vms.get_mut(&a).unwrap();
            v.share = cap * v.weight / total_w;
            v.r_min = frac * v.share;
            let r = v.rate();
            self.set_rate(a, now, r);
        }
    }

    fn activate(&mut self, vm: VmAddr, now: SimTime) {
        self.add_vm(vm, 1.0, now);
        if self.vms[&vm].active {
            return;
        }
        let v = self.vms.get_mut(&vm).unwrap();
        v.active = true;
        v.sent_time = now;
        self.redistribute(now);
        let v = self.vms.get_mut(&vm).unwrap();
        let depth = bucket_depth(v.share, self.cfg.update_period, self.cfg.bucket_intervals);
        v.bucket = TokenBucket::new(v.share, depth, now);
        let pending = std::mem::take(&mut v.pending_marks);
        if pending > 0 {
            self.decrease(vm, now, pending);
        }
    }

    /// Token-bucket admission for a packet from local VM `p.src`; stamps ECT.
    pub fn outbound(&mut self, now: SimTime, p: &mut Packet) -> Departure {
        let vm = p.src;
        self.activate(vm, now);
        let size = p.size_bytes();
        let v = self.vms.get_mut(&vm).unwrap();
        if !v.bucket.try_consume(now, size) {
            self.counters.tx_dropped += 1;
            return Departure::Drop;
        }
        v.sent_time = now;
        p.ect = true;
        Departure::Transmit
    }

    /// Intercepts CTRLMSG packets and optionally clears CE on everything else.
    pub fn inbound(&mut self, now: SimTime, p: &mut Packet) -> Arrival {
        if p.proto == Proto::CtrlMsg {
            if p.payload_len != CONTROL_PAYLOAD_BYTES {
                self.counters.malformed_ctrl += 1;
                return Arrival::Discarded;
            }
            self.on_control(now, p.dst, p.ctrl_value);
            return Arrival::Consumed;
        }
        if self.cfg.clear_ce && p.ce {
            p.ce = false;
            self.counters.ce_cleared += 1;
        }
        Arrival::Deliver
    }

    /// Applies a controller notification of `marks` to local VM `vm`.
    pub fn on_control(&mut self, now: SimTime, vm: VmAddr, marks: u16) {
        self.counters.ctrl_received += 1;
        if marks == 0 {
            self.counters.ctrl_ignored += 1;
            return;
        }
        self.add_vm(vm, 1.0, now);
        let v = self.vms.get_mut(&vm).unwrap();
        if !v.active {
            v.pending_marks += marks as u64;
            return;
        }
        self.decrease(vm, now, marks as u64);
    }

    fn decrease(&mut self, vm: VmAddr, now: SimTime, marks: u64) {
        let t_i = self.cfg.monitor_interval.as_secs_f64();
        let scale = self.cfg.scale_bps;
        let v = self.vms.get_mut(&vm).unwrap();
        v.cong_detected = true;
        let elapsed = now.saturating_sub(v.cong_time).as_secs_f64();
        let mark_rate = marks as f64 / (elapsed / t_i).max(1.0);
        let r = v.rate() - mark_rate * scale;
        v.cong_time = now;
        self.set_rate(vm, now, r);
    }

    /// Periodic update: grace expiry, inactivity, and additive recovery.
    pub fn state_update(&mut self, now: SimTime) {
        let grace = self.cfg.congestion_grace;
        let idle = self.cfg.inactivity_timeout;
        let mut retired = false;
        for v in self.vms.values_mut() {
            if v.cong_detected && now.saturating_sub(v.cong_time) >= grace {
                v.cong_detected = false;
            }
            if v.active && now.saturating_sub(v.sent_time) >= idle {
                v.active = false;
                v.share = 0.0;
                v.r_min = 0.0;
                v.cong_detected = false;
                retired = true;
            }
        }
        if retired {
            self.redistribute(now);
        }
        let scale = self.cfg.scale_bps;
        let k_fast = self.cfg.k_fast;
        let active: Vec<(VmAddr, f64)> = self
            .vms
            .iter()
            .filter(|(_, v)| v.active)
            .map(|(a, v)| (*a, v.rate() + if v.cong_detected { scale } else { k_fast * scale }))
            .collect();
        for (a, r) in active {
            self.set_rate(a, now, r);
        }
    }
}
