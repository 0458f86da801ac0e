//! Hypervisor-to-hypervisor congestion control.
//!
//! Each host runs one [`HgShim`]. Outgoing VM traffic passes a per-VM token
//! bucket and is stamped ECT. At the receiving hypervisor CE marks are counted
//! per source/destination pair, cleared, and reflected to the sender either as
//! the reserved IP bit on reverse traffic or, when reverse traffic is scarce,
//! in a 36-byte FEEDBACK packet. A periodic timer turns accumulated feedback
//! into rate decreases and otherwise probes upward toward the VM's share of
//! the NIC.

use std::collections::BTreeMap;

use crate::netelem::packet::{Packet, Proto, VmAddr, CONTROL_PAYLOAD_BYTES};
use crate::ratelimit::{bucket_depth, TokenBucket};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgConfig {
    pub nic_capacity_bps: f64,
    pub update_interval: SimTime,
    pub congestion_timeout: SimTime,
    pub feedback_timeout: SimTime,
    pub inactivity_timeout: SimTime,
    /// Rate step per mark / per probe, bits per second.
    pub scale_bps: f64,
    pub k_fast: f64,
    /// Bucket depth in update intervals.
    pub bucket_intervals: f64,
}

impl Default for HgConfig {
    fn default() -> Self {
        HgConfig {
            nic_capacity_bps: 1e9,
            update_interval: SimTime::from_micros(500),
            congestion_timeout: SimTime::from_millis(5),
            feedback_timeout: SimTime::from_micros(500),
            inactivity_timeout: SimTime::from_secs(1),
            scale_bps: scale_for(SimTime::from_millis(1)),
            k_fast: 5.0,
            bucket_intervals: 2.0,
        }
    }
}

/// One 1000-byte packet per reference RTT, in bits per second.
pub fn scale_for(rtt_ref: SimTime) -> f64 {
    1000.0 * 8.0 / rtt_ref.as_secs_f64()
}

/// Verdict for a packet leaving a VM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Departure {
    Transmit,
    Drop,
}

/// Verdict for a packet arriving from the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    Deliver,
    /// Swallowed by the shim (feedback).
    Consumed,
    /// Malformed control traffic.
    Discarded,
}

/// Per source/destination VM pair. The sender-side fields are used on the
/// source's host, the receiver-side fields on the destination's host.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HgFlowEntry {
    pub source: Option<VmAddr>,
    pub dest: Option<VmAddr>,
    pub out_packet_count: u64,
    pub ipr_packet_count: u64,
    pub ecn_packet_count: u64,
    pub senttime: SimTime,
    pub feedback: u64,
    pub rbdetected: bool,
    pub feedbacktime: SimTime,
    pub ecnmarks: u64,
    pub feedbacksenttime: SimTime,
    pub active: bool,
    /// Receiver side: marks handed back so far (IPR + FEEDBACK payloads).
    pub reflected_ipr: u64,
    pub reflected_feedback: u64,
}

impl HgFlowEntry {
    fn new(source: VmAddr, dest: VmAddr) -> Self {
        HgFlowEntry {
            source: Some(source),
            dest: Some(dest),
            ..Default::default()
        }
    }

    fn reset_sender(&mut self) {
        self.out_packet_count = 0;
        self.ipr_packet_count = 0;
        self.feedback = 0;
        self.rbdetected = false;
        self.active = false;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgVm {
    pub weight: f64,
    pub active: bool,
    pub capacity_share: f64,
    pub bucket: TokenBucket,
    pub last_sent: SimTime,
}

impl HgVm {
    pub fn rate(&self) -> f64 {
        self.bucket.rate_bps
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HgCounters {
    pub malformed_feedback: u64,
    pub feedback_packets: u64,
    pub tx_dropped: u64,
    pub ce_observed: u64,
}

#[derive(Debug, Clone)]
pub struct HgShim {
    pub cfg: HgConfig,
    vms: BTreeMap<VmAddr, HgVm>,
    flows: BTreeMap<(VmAddr, VmAddr), HgFlowEntry>,
    pub counters: HgCounters,
}

impl HgShim {
    pub fn new(cfg: HgConfig) -> Self {
        HgShim {
            cfg,
            vms: BTreeMap::new(),
            flows: BTreeMap::new(),
            counters: HgCounters::default(),
        }
    }

    /// Registers a local VM with an operator weight (default 1). VMs are
    /// otherwise discovered on their first packet.
    pub fn add_vm(&mut self, vm: VmAddr, weight: f64, now: SimTime) {
        let depth = bucket_depth(0.0, self.cfg.update_interval, self.cfg.bucket_intervals);
        self.vms.entry(vm).or_insert(HgVm {
            weight,
            active: false,
            capacity_share: 0.0,
            bucket: TokenBucket::new(0.0, depth, now),
            last_sent: now,
        });
    }

    pub fn vm(&self, vm: VmAddr) -> Option<&HgVm> {
        self.vms.get(&vm)
    }

    pub fn vm_mut(&mut self, vm: VmAddr) -> Option<&mut HgVm> {
        self.vms.get_mut(&vm)
    }

    pub fn vms(&self) -> impl Iterator<Item = (&VmAddr, &HgVm)> {
        self.vms.iter()
    }

    pub fn flow(&self, source: VmAddr, dest: VmAddr) -> Option<&HgFlowEntry> {
        self.flows.get(&(source, dest))
    }

    pub fn flow_mut(&mut self, source: VmAddr, dest: VmAddr) -> &mut HgFlowEntry {
        self.flows
            .entry((source, dest))
            .or_insert_with(|| HgFlowEntry::new(source, dest))
    }

    pub fn flows(&self) -> impl Iterator<Item = &HgFlowEntry> {
        self.flows.values()
    }

    /// Sum of active VMs' shares; equals the NIC capacity whenever any VM is active.
    pub fn total_share(&self) -> f64 {
        self.vms.values().filter(|v| v.active).map(|v| v.capacity_share).sum()
    }

    fn set_rate(&mut self, vm: VmAddr, now: SimTime, rate: f64) {
        let interval = self.cfg.update_interval;
        let k = self.cfg.bucket_intervals;
        let v = self.vms.get_mut(&vm).expect("known vm");
        let rate = rate.clamp(0.0, v.capacity_share);
        v.bucket.reconfigure(now, rate, bucket_depth(rate, interval, k));
    }

    /// Splits the NIC capacity over active VMs in proportion to their weights
    /// and pulls any rate above its new share down to it.
    fn redistribute(&mut self, now: SimTime) {
        let total_w: f64 = self.vms.values().filter(|v| v.active).map(|v| v.weight).sum();
        let cap = self.cfg.nic_capacity_bps;
        let addrs: Vec<VmAddr> = self.vms.iter().filter(|(_, v)| v.active).map(|(a, _)| *a).collect();
        for a in addrs {
            let v = self.vms.get_mut(&a).unwrap();
            v.capacity_share = cap * v.weight / total_w;
            let r = v.rate();
            self.set_rate(a, now, r);
        }
    }

    fn activate(&mut self, vm: VmAddr, now: SimTime) {
        self.add_vm(vm, 1.0, now);
        let v = self.vms.get_mut(&vm).unwrap();
        if v.active {
            return;
        }
        v.active = true;
        v.last_sent = now;
        self.redistribute(now);
        let v = self.vms.get_mut(&vm).unwrap();
        let share = v.capacity_share;
        let depth = bucket_depth(share, self.cfg.update_interval, self.cfg.bucket_intervals);
        v.bucket = TokenBucket::new(share, depth, now);
    }

    /// Token-bucket admission of a packet leaving local VM `p.src`; stamps ECT.
    pub fn packet_departure(&mut self, now: SimTime, p: &mut Packet) -> Departure {
        let vm = p.src;
        self.activate(vm, now);
        let size = p.size_bytes();
        let v = self.vms.get_mut(&vm).unwrap();
        if !v.bucket.try_consume(now, size) {
            self.counters.tx_dropped += 1;
            return Departure::Drop;
        }
        v.last_sent = now;
        let f = self.flow_mut(p.src, p.dst);
        f.senttime = now;
        f.active = true;
        f.out_packet_count += 1;
        p.ect = true;
        Departure::Transmit
    }

    /// Piggybacks one pending mark on a packet heading back to the marked flow's source.
    pub fn receiver_on_departure(&mut self, now: SimTime, p: &mut Packet) {
        if let Some(f) = self.flows.get_mut(&(p.dst, p.src)) {
            if f.ecnmarks >= 1 {
                p.ipr = true;
                f.feedbacksenttime = now;
                f.ecnmarks -= 1;
                f.reflected_ipr += 1;
            }
        }
    }

    /// Full outbound path: admission, then reflection on admitted packets only
    /// (a dropped packet cannot carry a mark).
    pub fn outbound(&mut self, now: SimTime, p: &mut Packet) -> Departure {
        let d = self.packet_departure(now, p);
        if d == Departure::Transmit {
            self.receiver_on_departure(now, p);
        }
        d
    }

    /// Sender-side arrival: consume FEEDBACK, absorb IPR marks.
    pub fn sender_on_arrival(&mut self, now: SimTime, p: &mut Packet) -> Arrival {
        if p.proto == Proto::Feedback {
            if p.payload_len != CONTROL_PAYLOAD_BYTES {
                self.counters.malformed_feedback += 1;
                return Arrival::Discarded;
            }
            let f = self.flow_mut(p.dst, p.src);
            f.feedback += p.ctrl_value as u64;
            f.rbdetected = true;
            f.feedbacktime = now;
            return Arrival::Consumed;
        }
        if p.ipr {
            let f = self.flow_mut(p.dst, p.src);
            f.feedback += 1;
            f.ipr_packet_count += 1;
            f.rbdetected = true;
            f.feedbacktime = now;
            p.ipr = false;
        }
        Arrival::Deliver
    }

    /// Receiver-side arrival: count and clear CE; send explicit feedback when
    /// marks have waited at least the feedback timeout.
    pub fn receiver_on_arrival(&mut self, now: SimTime, p: &mut Packet, out: &mut Vec<Packet>) {
        let timeout = self.cfg.feedback_timeout;
        let f = self
            .flows
            .entry((p.src, p.dst))
            .or_insert_with(|| HgFlowEntry::new(p.src, p.dst));
        if p.ce {
            f.ecnmarks += 1;
            f.ecn_packet_count += 1;
            p.ce = false;
            self.counters.ce_observed += 1;
        }
        if f.ecnmarks > 0 && now.saturating_sub(f.feedbacksenttime) >= timeout {
            if let Some(pkt) = Self::make_feedback(f, now) {
                self.counters.feedback_packets += 1;
                out.push(pkt);
            }
        }
    }

    fn make_feedback(f: &mut HgFlowEntry, now: SimTime) -> Option<Packet> {
        let (source, dest) = (f.source?, f.dest?);
        let value = f.ecnmarks.min(u16::MAX as u64) as u16;
        if value == 0 {
            return None;
        }
        f.ecnmarks -= value as u64;
        f.reflected_feedback += value as u64;
        f.feedbacksenttime = now;
        Some(Packet::control(Proto::Feedback, dest, source, value))
    }

    /// Full inbound path for a packet addressed to a local VM.
    pub fn inbound(&mut self, now: SimTime, p: &mut Packet, out: &mut Vec<Packet>) -> Arrival {
        let a = self.sender_on_arrival(now, p);
        if a != Arrival::Deliver {
            return a;
        }
        self.receiver_on_arrival(now, p, out);
        Arrival::Deliver
    }

    /// Periodic update: retire idle VMs, expire congestion state, adapt rates,
    /// and flush marks that reverse traffic has not carried back.
    pub fn timer_timeout(&mut self, now: SimTime, out: &mut Vec<Packet>) {
        let idle = self.cfg.inactivity_timeout;
        let retired: Vec<VmAddr> = self
            .vms
            .iter()
            .filter(|(_, v)| v.active && now.saturating_sub(v.last_sent) >= idle)
            .map(|(a, _)| *a)
            .collect();
        if !retired.is_empty() {
            for a in &retired {
                let v = self.vms.get_mut(a).unwrap();
                v.active = false;
                v.capacity_share = 0.0;
                for ((src, _), f) in self.flows.iter_mut() {
                    if src == a {
                        f.reset_sender();
                    }
                }
            }
            self.redistribute(now);
        }

        // (feedback sum, any detected) per active VM
        let mut per_vm: BTreeMap<VmAddr, (u64, bool)> = BTreeMap::new();
        let ct = self.cfg.congestion_timeout;
        for ((src, _), f) in self.flows.iter_mut() {
            let Some(v) = self.vms.get(src) else { continue };
            if !v.active || !f.active {
                continue;
            }
            if f.rbdetected && now.saturating_sub(f.feedbacktime) >= ct {
                f.rbdetected = false;
            }
            let e = per_vm.entry(*src).or_default();
            if f.rbdetected {
                e.0 += f.feedback;
                e.1 = true;
            }
            f.feedback = 0;
        }
        let scale = self.cfg.scale_bps;
        for (vm, (fb, detected)) in per_vm {
            let r = self.vms[&vm].rate();
            let next = if !detected {
                r + self.cfg.k_fast * scale
            } else if fb > 0 {
                r - fb as f64 * scale
            } else {
                r + scale
            };
            self.set_rate(vm, now, next);
        }

        let timeout = self.cfg.feedback_timeout;
        for f in self.flows.values_mut() {
            if f.ecnmarks > 0 && now.saturating_sub(f.feedbacksenttime) >= timeout {
                if let Some(pkt) = Self::make_feedback(f, now) {
                    self.counters.feedback_packets += 1;
                    out.push(pkt);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netelem::packet::MSS;

    const A: VmAddr = VmAddr(1);
    const B: VmAddr = VmAddr(2);

    fn data(src: VmAddr, dst: VmAddr) -> Packet {
        Packet::data(0, src, dst, Proto::Udp, 0, MSS)
    }

    fn shim() -> HgShim {
        HgShim::new(HgConfig::default())
    }

    #[test]
    fn scale_default_is_8mbps() {
        assert_eq!(HgConfig::default().scale_bps, 8e6);
    }

    #[test]
    fn departure_stamps_ect_and_spends_tokens() {
        let mut s = shim();
        let mut p = data(A, B);
        assert_eq!(s.packet_departure(SimTime::ZERO, &mut p), Departure::Transmit);
        assert!(p.ect);
        let v = s.vm(A).unwrap();
        assert_eq!(v.rate(), 1e9);
        assert_eq!(v.bucket.tokens, 125_000.0 - 1500.0);
        assert_eq!(s.flow(A, B).unwrap().out_packet_count, 1);
    }

    #[test]
    fn departure_drops_without_tokens() {
        let mut s = shim();
        let mut p = data(A, B);
        s.packet_departure(SimTime::ZERO, &mut p);
        s.vm_mut(A).unwrap().bucket.tokens = 1000.0;
        let mut p = data(A, B);
        assert_eq!(s.packet_departure(SimTime::ZERO, &mut p), Departure::Drop);
        assert_eq!(s.counters.tx_dropped, 1);
    }

    #[test]
    fn feedback_packet_consumed() {
        let mut s = shim();
        let mut fb = Packet::control(Proto::Feedback, B, A, 7);
        assert_eq!(s.sender_on_arrival(SimTime(5), &mut fb), Arrival::Consumed);
        let f = s.flow(A, B).unwrap();
        assert_eq!(f.feedback, 7);
        assert!(f.rbdetected);
        assert_eq!(f.feedbacktime, SimTime(5));
    }

    #[test]
    fn malformed_feedback_discarded() {
        let mut s = shim();
        let mut fb = Packet::control(Proto::Feedback, B, A, 7);
        fb.payload_len = 3;
        assert_eq!(s.sender_on_arrival(SimTime(5), &mut fb), Arrival::Discarded);
        assert_eq!(s.counters.malformed_feedback, 1);
        assert!(s.flow(A, B).is_none());
    }

    #[test]
    fn ipr_ack_counts_and_is_cleared() {
        let mut s = shim();
        let mut ack = Packet::ack(0, B, A, 0, 0, false, SimTime::ZERO);
        ack.ipr = true;
        assert_eq!(s.sender_on_arrival(SimTime(9), &mut ack), Arrival::Deliver);
        assert!(!ack.ipr);
        assert_eq!(s.flow(A, B).unwrap().feedback, 1);
    }

    #[test]
    fn unmarked_packet_changes_nothing() {
        let mut s = shim();
        let mut p = data(B, A);
        let mut out = Vec::new();
        assert_eq!(s.inbound(SimTime(1), &mut p, &mut out), Arrival::Deliver);
        assert!(out.is_empty());
        assert!(s.flow(A, B).is_none());
        assert_eq!(s.flow(B, A).unwrap().ecnmarks, 0);
    }

    #[test]
    fn ce_counted_and_cleared() {
        let mut s = shim();
        let mut p = data(B, A);
        p.ect = true;
        p.ce = true;
        let mut out = Vec::new();
        // at t=0 the feedback timeout has not elapsed since the entry's birth
        s.receiver_on_arrival(SimTime::ZERO, &mut p, &mut out);
        assert!(!p.ce);
        assert_eq!(s.flow(B, A).unwrap().ecnmarks, 1);
        assert!(out.is_empty());
    }

    #[test]
    fn feedback_emitted_after_timeout() {
        let mut s = shim();
        s.flow_mut(B, A).ecnmarks = 3;
        let mut p = data(B, A);
        let mut out = Vec::new();
        s.receiver_on_arrival(SimTime::from_micros(500), &mut p, &mut out);
        assert_eq!(out.len(), 1);
        let fb = out[0];
        assert_eq!((fb.proto, fb.src, fb.dst, fb.ctrl_value), (Proto::Feedback, A, B, 3));
        assert_eq!(fb.size_bytes(), 36);
        let f = s.flow(B, A).unwrap();
        assert_eq!(f.ecnmarks, 0);
        assert_eq!(f.feedbacksenttime, SimTime::from_micros(500));
    }

    #[test]
    fn reflection_drains_one_mark_per_departure() {
        let mut s = shim();
        s.flow_mut(B, A).ecnmarks = 3;
        for _ in 0..2 {
            let mut ack = Packet::ack(0, A, B, 0, 0, false, SimTime::ZERO);
            s.receiver_on_departure(SimTime(3), &mut ack);
            assert!(ack.ipr);
        }
        assert_eq!(s.flow(B, A).unwrap().ecnmarks, 1);
        s.flow_mut(B, A).ecnmarks = 0;
        let mut ack = Packet::ack(0, A, B, 0, 0, false, SimTime::ZERO);
        s.receiver_on_departure(SimTime(3), &mut ack);
        assert!(!ack.ipr);
    }

    #[test]
    fn decrement_by_feedback_times_scale() {
        let mut s = shim();
        let mut p = data(A, B);
        s.packet_departure(SimTime::ZERO, &mut p);
        s.set_rate(A, SimTime::ZERO, 250e6);
        let f = s.flow_mut(A, B);
        f.feedback = 4;
        f.rbdetected = true;
        f.feedbacktime = SimTime::from_micros(400);
        let mut out = Vec::new();
        s.timer_timeout(SimTime::from_micros(500), &mut out);
        assert_eq!(s.vm(A).unwrap().rate(), 218e6);
        assert_eq!(s.flow(A, B).unwrap().feedback, 0);
    }

    #[test]
    fn increases_clamped_at_share() {
        let mut s = shim();
        let mut p = data(A, B);
        s.packet_departure(SimTime::ZERO, &mut p);
        let mut out = Vec::new();
        s.timer_timeout(SimTime::from_micros(500), &mut out);
        assert_eq!(s.vm(A).unwrap().rate(), 1e9);
    }

    #[test]
    fn quiet_but_detected_probes_by_one_step() {
        let mut s = shim();
        let mut p = data(A, B);
        s.packet_departure(SimTime::ZERO, &mut p);
        s.set_rate(A, SimTime::ZERO, 100e6);
        let f = s.flow_mut(A, B);
        f.rbdetected = true;
        f.feedbacktime = SimTime::from_micros(400);
        let mut out = Vec::new();
        s.timer_timeout(SimTime::from_micros(500), &mut out);
        assert_eq!(s.vm(A).unwrap().rate(), 108e6);
        // congestion timeout passes: fast increase
        s.timer_timeout(SimTime::from_micros(5400), &mut out);
        assert_eq!(s.vm(A).unwrap().rate(), 148e6);
    }

    #[test]
    fn rate_never_negative() {
        let mut s = shim();
        let mut p = data(A, B);
        s.packet_departure(SimTime::ZERO, &mut p);
        let f = s.flow_mut(A, B);
        f.feedback = 10_000;
        f.rbdetected = true;
        let mut out = Vec::new();
        s.timer_timeout(SimTime::from_micros(500), &mut out);
        assert_eq!(s.vm(A).unwrap().rate(), 0.0);
    }

    #[test]
    fn idle_vm_releases_its_share() {
        let mut s = shim();
        let vms = [VmAddr(1), VmAddr(2), VmAddr(3)];
        for v in vms {
            let mut p = data(v, VmAddr(9));
            s.packet_departure(SimTime::ZERO, &mut p);
        }
        assert!(s.vms().all(|(_, v)| v.capacity_share == 1e9 / 3.0));
        // VMs 2 and 3 keep sending; VM 1 goes quiet for 1.2 s
        let t = SimTime::from_millis(1200);
        for v in &vms[1..] {
            let mut p = data(*v, VmAddr(9));
            s.packet_departure(t, &mut p);
        }
        let mut out = Vec::new();
        s.timer_timeout(t, &mut out);
        assert!(!s.vm(vms[0]).unwrap().active);
        assert_eq!(s.vm(vms[1]).unwrap().capacity_share, 500e6);
        assert_eq!(s.vm(vms[2]).unwrap().capacity_share, 500e6);
        assert_eq!(s.total_share(), 1e9);
    }

    #[test]
    fn one_way_flow_drains_by_feedback_only() {
        // receiver host sees a marked one-way stream; it never sends reverse traffic
        let mut rx = shim();
        let mut out = Vec::new();
        let mut marks = 0;
        let mut t = SimTime::ZERO;
        for i in 0..1000u64 {
            t = SimTime::from_micros(12 * i);
            let mut p = data(B, A);
            p.ect = true;
            p.ce = i % 3 == 0;
            marks += p.ce as u64;
            rx.inbound(t, &mut p, &mut out);
            if i % 40 == 0 {
                rx.timer_timeout(t, &mut out);
            }
        }
        rx.timer_timeout(t + SimTime::from_millis(1), &mut out);
        let fed: u64 = out.iter().map(|p| p.ctrl_value as u64).sum();
        assert_eq!(fed, marks);
        assert_eq!(rx.flow(B, A).unwrap().ecnmarks, 0);
        assert_eq!(rx.flow(B, A).unwrap().reflected_ipr, 0);
    }
}
