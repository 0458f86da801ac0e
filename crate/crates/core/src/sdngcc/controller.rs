//! The network application on the controller.
//!
//! It learns which sources talk to which destinations from first-packet
//! reports, polls per-port mark counters, and when a port has accumulated new
//! marks it splits them equally over the (destination, source) pairs whose
//! traffic leaves through that port.

use std::collections::{BTreeMap, BTreeSet};

use crate::netelem::packet::{Packet, Proto, VmAddr};
use crate::netelem::NodeId;
use crate::time::SimTime;

/// Local port index on a switch.
pub type SwitchPort = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// T_i
    pub monitor_interval: SimTime,
    /// One-way delay between controller and switches or shims.
    pub control_delay: SimTime,
    /// Learned pairs not refreshed for this long are forgotten.
    pub aging: SimTime,
    /// Also learn and poll the hypervisor virtual switch behind each host NIC.
    pub monitor_hosts: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            monitor_interval: SimTime::from_millis(5),
            control_delay: SimTime::from_micros(250),
            aging: SimTime::from_secs(10),
            monitor_hosts: false,
        }
    }
}

/// First-packet report from a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketIn {
    pub switch: NodeId,
    pub in_port: SwitchPort,
    pub out_port: SwitchPort,
    pub src: VmAddr,
    pub dst: VmAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CongestionMsg {
    pub m: u64,
    pub to_source: VmAddr,
    pub from_dest: VmAddr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerCounters {
    pub packet_ins: u64,
    pub polls: u64,
    pub messages: u64,
    pub orphan_notifications: u64,
    pub mark_saturation: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Controller {
    pub cfg: ControllerConfig,
    switches: BTreeSet<NodeId>,
    dstsrc: BTreeMap<VmAddr, BTreeSet<VmAddr>>,
    iptoport: BTreeMap<(NodeId, VmAddr), SwitchPort>,
    /// Egress port per (switch, destination).
    egress: BTreeMap<(NodeId, VmAddr), SwitchPort>,
    /// Last refresh per (destination, source) pair.
    seen: BTreeMap<(VmAddr, VmAddr), SimTime>,
    marks: BTreeMap<NodeId, Vec<u64>>,
    tx: BTreeMap<NodeId, Vec<u64>>,
    timer_armed: bool,
    pub counters: ControllerCounters,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Self {
        Controller {
            cfg,
            ..Default::default()
        }
    }

    pub fn timer_armed(&self) -> bool {
        self.timer_armed
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.switches.iter().copied()
    }

    pub fn sources_of(&self, dst: VmAddr) -> Vec<VmAddr> {
        self.dstsrc.get(&dst).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    pub fn ip_to_port(&self, sw: NodeId, vm: VmAddr) -> Option<SwitchPort> {
        self.iptoport.get(&(sw, vm)).copied()
    }

    pub fn last_marks(&self, sw: NodeId) -> Option<&[u64]> {
        self.marks.get(&sw).map(|v| v.as_slice())
    }

    /// Learns from a first-packet report. Returns true when the monitor timer
    /// should be started.
    pub fn packet_in(&mut self, now: SimTime, ev: PacketIn) -> bool {
        self.counters.packet_ins += 1;
        self.switches.insert(ev.switch);
        self.dstsrc.entry(ev.dst).or_default().insert(ev.src);
        self.iptoport.insert((ev.switch, ev.src), ev.in_port);
        self.egress.insert((ev.switch, ev.dst), ev.out_port);
        self.seen.insert((ev.dst, ev.src), now);
        let start = !self.timer_armed;
        self.timer_armed = true;
        start
    }

    /// Processes one switch's counters (cum marks and cum tx bytes per port)
    /// and returns the notifications to send.
    pub fn on_stats(&mut self, now: SimTime, sw: NodeId, marks: &[u64], tx_bytes: &[u64]) -> Vec<CongestionMsg> {
        self.counters.polls += 1;
        let old_marks = self.marks.insert(sw, marks.to_vec()).unwrap_or_default();
        let old_tx = self.tx.insert(sw, tx_bytes.to_vec()).unwrap_or_default();

        let busy: BTreeSet<SwitchPort> = tx_bytes
            .iter()
            .enumerate()
            .filter(|(p, b)| **b > old_tx.get(*p).copied().unwrap_or(0))
            .map(|(p, _)| p)
            .collect();
        self.refresh(now, sw, &busy);

        let mut out = Vec::new();
        for (p, new) in marks.iter().enumerate() {
            let old = old_marks.get(p).copied().unwrap_or(0);
            let alpha = new.saturating_sub(old);
            if alpha == 0 {
                continue;
            }
            let dsts: Vec<VmAddr> = self
                .egress
                .iter()
                .filter(|((s, _), port)| *s == sw && **port == p)
                .map(|((_, d), _)| *d)
                .collect();
            let beta: u64 = dsts.iter().map(|d| self.dstsrc.get(d).map_or(0, |s| s.len() as u64)).sum();
            if beta == 0 {
                continue;
            }
            let m = alpha.div_ceil(beta);
            for d in dsts {
                for s in self.dstsrc.get(&d).into_iter().flatten() {
                    if self.iptoport.contains_key(&(sw, *s)) {
                        out.push(CongestionMsg {
                            m,
                            to_source: *s,
                            from_dest: d,
                        });
                    } else {
                        self.counters.orphan_notifications += 1;
                    }
                }
            }
        }
        self.counters.messages += out.len() as u64;
        out
    }

    /// Marks pairs whose destination egresses a port that carried traffic
    /// since the last poll as fresh, and forgets pairs older than the aging
    /// period.
    fn refresh(&mut self, now: SimTime, sw: NodeId, busy: &BTreeSet<SwitchPort>) {
        for ((d, _), t) in self.seen.iter_mut() {
            if let Some(p) = self.egress.get(&(sw, *d)) {
                if busy.contains(p) {
                    *t = now;
                }
            }
        }
        let aging = self.cfg.aging;
        let stale: Vec<(VmAddr, VmAddr)> = self
            .seen
            .iter()
            .filter(|(_, t)| now.saturating_sub(**t) >= aging)
            .map(|(k, _)| *k)
            .collect();
        for (d, s) in stale {
            self.seen.remove(&(d, s));
            if let Some(set) = self.dstsrc.get_mut(&d) {
                set.remove(&s);
                if set.is_empty() {
                    self.dstsrc.remove(&d);
                    self.egress.retain(|(_, dd), _| *dd != d);
                }
            }
            if !self.seen.keys().any(|(_, ss)| *ss == s) {
                self.iptoport.retain(|(_, vm), _| *vm != s);
            }
        }
    }

    /// Builds the CTRLMSG for a notification, saturating the 16-bit count.
    pub fn emit(&mut self, msg: CongestionMsg) -> Packet {
        let value = if msg.m > u16::MAX as u64 {
            self.counters.mark_saturation += 1;
            u16::MAX
        } else {
            msg.m as u16
        };
        Packet::control(Proto::CtrlMsg, msg.from_dest, msg.to_source, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netelem::wire::encode_control;
    use proptest::prelude::*;

    const SW: NodeId = 7;
    const D: VmAddr = VmAddr(100);

    fn learn(c: &mut Controller, src: u32, dst: VmAddr, out_port: SwitchPort) -> bool {
        c.packet_in(
            SimTime::ZERO,
            PacketIn {
                switch: SW,
                in_port: src as usize,
                out_port,
                src: VmAddr(src),
                dst,
            },
        )
    }

    #[test]
    fn packet_in_learns_and_arms_once() {
        let mut c = Controller::default();
        assert!(learn(&mut c, 1, D, 5));
        assert_eq!(c.sources_of(D), vec![VmAddr(1)]);
        assert_eq!(c.ip_to_port(SW, VmAddr(1)), Some(1));
        assert!(!learn(&mut c, 1, D, 5));
        assert_eq!(c.sources_of(D), vec![VmAddr(1)]);
        learn(&mut c, 2, D, 5);
        assert_eq!(c.sources_of(D), vec![VmAddr(1), VmAddr(2)]);
        assert!(c.timer_armed());
    }

    #[test]
    fn equal_split() {
        let mut c = Controller::default();
        for s in 1..=3 {
            learn(&mut c, s, D, 5);
        }
        let mut marks = vec![0; 8];
        c.on_stats(SimTime::ZERO, SW, &marks, &[0; 8]);
        marks[5] = 12;
        let msgs = c.on_stats(SimTime::from_millis(5), SW, &marks, &[0; 8]);
        assert_eq!(msgs.len(), 3);
        assert!(msgs.iter().all(|m| m.m == 4 && m.from_dest == D));
        assert_eq!(c.last_marks(SW).unwrap()[5], 12);
    }

    #[test]
    fn no_new_marks_no_messages() {
        let mut c = Controller::default();
        learn(&mut c, 1, D, 5);
        let marks = vec![0, 0, 0, 0, 0, 9];
        assert_eq!(c.on_stats(SimTime::ZERO, SW, &marks, &[0; 6]).len(), 1);
        assert!(c.on_stats(SimTime::from_millis(5), SW, &marks, &[0; 6]).is_empty());
    }

    #[test]
    fn ceiling_division() {
        let mut c = Controller::default();
        for s in 1..=3 {
            learn(&mut c, s, D, 5);
        }
        let msgs = c.on_stats(SimTime::ZERO, SW, &[0, 0, 0, 0, 0, 7], &[0; 6]);
        assert!(msgs.iter().all(|m| m.m == 3));
    }

    #[test]
    fn port_scoped_attribution() {
        let mut c = Controller::default();
        learn(&mut c, 1, D, 5);
        learn(&mut c, 2, VmAddr(200), 6);
        let msgs = c.on_stats(SimTime::ZERO, SW, &[0, 0, 0, 0, 0, 4, 0], &[0; 7]);
        assert_eq!(msgs, vec![CongestionMsg { m: 4, to_source: VmAddr(1), from_dest: D }]);
    }

    #[test]
    fn pair_count_beta() {
        // source 1 feeds two destinations through the same port
        let mut c = Controller::default();
        learn(&mut c, 1, D, 5);
        learn(&mut c, 1, VmAddr(200), 5);
        learn(&mut c, 2, D, 5);
        let msgs = c.on_stats(SimTime::ZERO, SW, &[0, 0, 0, 0, 0, 9], &[0; 6]);
        assert_eq!(msgs.len(), 3);
        assert!(msgs.iter().all(|m| m.m == 3));
        assert_eq!(msgs.iter().filter(|m| m.to_source == VmAddr(1)).count(), 2);
    }

    #[test]
    fn emit_addressing_and_wire() {
        let mut c = Controller::default();
        let p = c.emit(CongestionMsg { m: 4, to_source: VmAddr(1), from_dest: D });
        assert_eq!((p.src, p.dst, p.ctrl_value, p.proto), (D, VmAddr(1), 4, Proto::CtrlMsg));
        let bytes = encode_control(&p);
        assert_eq!(bytes.len(), 36);
        assert_eq!(&bytes[34..], &[0x00, 0x04]);
        assert_eq!(c.counters.mark_saturation, 0);
    }

    #[test]
    fn emit_saturates() {
        let mut c = Controller::default();
        let p = c.emit(CongestionMsg { m: 70_000, to_source: VmAddr(1), from_dest: D });
        assert_eq!(p.ctrl_value, 0xFFFF);
        assert_eq!(c.counters.mark_saturation, 1);
    }

    #[test]
    fn stale_pairs_age_out() {
        let mut c = Controller::default();
        learn(&mut c, 1, D, 5);
        learn(&mut c, 2, VmAddr(200), 6);
        // port 6 keeps carrying traffic, port 5 goes quiet
        for k in 1..=3u64 {
            let t = SimTime::from_secs(5 * k);
            c.on_stats(t, SW, &[0; 7], &[0, 0, 0, 0, 0, 0, k * 1000]);
        }
        assert!(c.sources_of(D).is_empty());
        assert_eq!(c.ip_to_port(SW, VmAddr(1)), None);
        assert_eq!(c.sources_of(VmAddr(200)), vec![VmAddr(2)]);
    }

    proptest! {
        #[test]
        fn apportionment_covers_alpha(nsrc in 1u32..40, ndst in 1u32..4, alpha in 1u64..100_000) {
            let mut c = Controller::default();
            for d in 0..ndst {
                for s in 0..nsrc {
                    learn(&mut c, s, VmAddr(1000 + d), 3);
                }
            }
            let msgs = c.on_stats(SimTime::ZERO, SW, &[0, 0, 0, alpha], &[0; 4]);
            let beta = (nsrc * ndst) as u64;
            prop_assert_eq!(msgs.len() as u64, beta);
            let m = msgs[0].m;
            prop_assert!(msgs.iter().all(|x| x.m == m));
            prop_assert!(beta * m >= alpha);
            prop_assert!(beta * m - alpha < beta);
        }
    }
}
