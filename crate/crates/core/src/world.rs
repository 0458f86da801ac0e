//! A runnable simulation instance: network, endpoints, hypervisor shims and
//! (for the controller-driven variant) the SDN controller, all driven by one
//! event scheduler.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hygenicc::{Arrival, HgConfig, HgShim};
use crate::netelem::packet::{Packet, Proto, Segment, VmAddr, MSS};
use crate::netelem::{Network, NodeId, NodeKind, PortId};
use crate::sdngcc::{Controller, ControllerConfig, PacketIn, SgConfig, SgShim};
use crate::rng::SeedBank;
use crate::shim::{Outbound, Shim, StaticShaper};
use crate::sim::{EventKind, Handler, Scheduler};
use crate::time::SimTime;
use crate::transport::{CcVariant, GoodputLedger, MiceFlow, TcpConfig, TcpReceiver, TcpSender, UdpCbr};

/// Congestion-control arrangement of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    BaselineNoEcn,
    BaselineEcn,
    StaticLimit,
    HyGenIcc,
    SdnGcc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BaselineNoEcn,
        Variant::BaselineEcn,
        Variant::StaticLimit,
        Variant::HyGenIcc,
        Variant::SdnGcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineNoEcn => "baseline-noecn",
            Variant::BaselineEcn => "baseline-ecn",
            Variant::StaticLimit => "static-limit",
            Variant::HyGenIcc => "hygenicc",
            Variant::SdnGcc => "sdngcc",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether tenant NewReno flows negotiate ECN.
    pub fn tenant_ecn(self) -> bool {
        self != Variant::BaselineNoEcn
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowKind {
    /// NewReno; ECN follows the variant.
    Tcp,
    Dctcp,
    Udp { rate_bps: u64 },
    /// Request/response: `dst` asks `src` for `response_bytes` at start.
    Mice { response_bytes: u64 },
}

impl FlowKind {
    pub fn label(&self) -> &'static str {
        match self {
            FlowKind::Tcp => "tcp",
            FlowKind::Dctcp => "dctcp",
            FlowKind::Udp { .. } => "udp",
            FlowKind::Mice { .. } => "mice",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowDef {
    pub name: String,
    pub kind: FlowKind,
    /// Data sender.
    pub src: VmAddr,
    /// Data receiver.
    pub dst: VmAddr,
    pub start: SimTime,
    pub stop: SimTime,
    pub tagged: bool,
}

/// Everything needed to instantiate a [`World`].
#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub net: Network,
    pub vm_host: BTreeMap<VmAddr, NodeId>,
    pub flows: Vec<FlowDef>,
    pub variant: Variant,
    pub tcp: TcpConfig,
    /// DCTCP estimator gain.
    pub dctcp_g: f64,
    pub hg: HgConfig,
    pub sg: SgConfig,
    pub controller: ControllerConfig,
    pub static_rate_bps: f64,
    pub static_queue_pkts: usize,
    /// Virtual NIC between each VM and its hypervisor; `None` rate means the host's line rate.
    pub vnic_rate_bps: Option<u64>,
    pub vnic_queue_pkts: usize,
    /// Each packet reaches the shim a uniform random delay in [0, jitter) after
    /// leaving its vNIC, never overtaking the previous one.
    pub vnic_jitter: SimTime,
    pub seed: u64,
    pub duration: SimTime,
    pub bin_width: SimTime,
    pub queue_sample: Option<SimTime>,
    pub mice_retry: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ev {
    TxDone(PortId),
    Arrive { node: NodeId, pkt: Packet },
    FlowStart(usize),
    FlowStop(usize),
    UdpTick(usize),
    TcpTimer(usize),
    MiceRetry(usize),
    ShimTick(NodeId),
    ShaperRelease { host: NodeId, vm: VmAddr },
    VnicDone(VmAddr),
    Handoff(Packet),
    ControllerPoll,
    StatsReply { sw: NodeId, marks: Vec<u64>, tx: Vec<u64> },
    PacketIn(PacketIn),
    CtrlDeliver { host: NodeId, pkt: Packet },
    QueueSample,
}

impl EventKind for Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::TxDone(_) => "tx_done",
            Ev::Arrive { .. } => "arrive",
            Ev::FlowStart(_) => "flow_start",
            Ev::FlowStop(_) => "flow_stop",
            Ev::UdpTick(_) => "udp_tick",
            Ev::TcpTimer(_) => "tcp_timer",
            Ev::MiceRetry(_) => "mice_retry",
            Ev::ShimTick(_) => "shim_tick",
            Ev::ShaperRelease { .. } => "shaper_release",
            Ev::VnicDone(_) => "vnic_done",
            Ev::Handoff(_) => "handoff",
            Ev::ControllerPoll => "ctrl_poll",
            Ev::StatsReply { .. } => "stats_reply",
            Ev::PacketIn(_) => "packet_in",
            Ev::CtrlDeliver { .. } => "ctrl_deliver",
            Ev::QueueSample => "queue_sample",
        }
    }

    fn target(&self) -> u64 {
        match self {
            Ev::TxDone(p) => *p as u64,
            Ev::Arrive { node, pkt } => ((*node as u64) << 32) ^ pkt.seq ^ ((pkt.flow_id as u64) << 48),
            Ev::FlowStart(f) | Ev::FlowStop(f) | Ev::UdpTick(f) | Ev::TcpTimer(f) | Ev::MiceRetry(f) => *f as u64,
            Ev::ShimTick(h) => *h as u64,
            Ev::ShaperRelease { host, vm } => ((*host as u64) << 32) | vm.0 as u64,
            Ev::VnicDone(vm) => vm.0 as u64,
            Ev::Handoff(pkt) => ((pkt.src.0 as u64) << 32) ^ pkt.seq,
            Ev::StatsReply { sw, .. } => *sw as u64,
            Ev::PacketIn(p) => ((p.src.0 as u64) << 32) | p.dst.0 as u64,
            Ev::CtrlDeliver { host, pkt } => ((*host as u64) << 32) | pkt.ctrl_value as u64,
            Ev::ControllerPoll | Ev::QueueSample => 0,
        }
    }
}

/// Runtime state of one flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub def: FlowDef,
    pub sender: Option<TcpSender>,
    pub receiver: TcpReceiver,
    pub udp: Option<UdpCbr>,
    pub goodput: GoodputLedger,
    pub mice: Option<MiceFlow>,
    pub active: bool,
    pub shim_drops: u64,
    timer_at: Option<SimTime>,
}

/// One row of the queue trace.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueSample {
    pub at: SimTime,
    pub node: NodeId,
    pub port: usize,
    pub occupancy: usize,
    pub cum_marks: u64,
    pub cum_drops: u64,
}

/// A VM's virtual NIC: packets leave the VM one at a time at `rate_bps`
/// and reach the hypervisor shim when their serialization ends.
#[derive(Debug, Clone)]
pub struct Vnic {
    pub rate_bps: u64,
    pub capacity: usize,
    pub queue: VecDeque<Packet>,
    pub busy: bool,
    pub drops: u64,
    last_handoff: SimTime,
}

/// Packets handed to VMs that should never have reached them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransparencyCounters {
    pub delivered: u64,
    pub ce_delivered: u64,
    pub ipr_delivered: u64,
    pub control_delivered: u64,
}

pub struct World {
    pub net: Network,
    pub variant: Variant,
    pub flows: Vec<FlowState>,
    pub shims: BTreeMap<NodeId, Shim>,
    pub vnics: BTreeMap<VmAddr, Vnic>,
    pub controller: Option<Controller>,
    pub queue_samples: Vec<QueueSample>,
    pub transparency: TransparencyCounters,
    /// Control-loop latencies: from stats snapshot to CTRLMSG delivery.
    pub control_latencies: Vec<SimTime>,
    vm_host: BTreeMap<VmAddr, NodeId>,
    tcp: TcpConfig,
    dctcp_g: f64,
    duration: SimTime,
    queue_sample: Option<SimTime>,
    mice_retry: SimTime,
    vnic_jitter: SimTime,
    jitter_rng: ChaCha8Rng,
    /// Switch flow tables for first-packet detection: last packet time per (src, dst).
    miss_tables: BTreeMap<NodeId, BTreeMap<(VmAddr, VmAddr), SimTime>>,
    /// Time of the latest stats snapshot.
    poll_started: SimTime,
    scratch: Vec<Packet>,
    pub sched: Scheduler<Ev>,
}

impl World {
    pub fn new(spec: WorldSpec) -> World {
        let WorldSpec {
            net,
            vm_host,
            flows,
            variant,
            tcp,
            dctcp_g,
            hg,
            sg,
            controller,
            static_rate_bps,
            static_queue_pkts,
            vnic_rate_bps,
            vnic_queue_pkts,
            vnic_jitter,
            seed,
            duration,
            bin_width,
            queue_sample,
            mice_retry,
        } = spec;
        let mut shims = BTreeMap::new();
        for (id, node) in net.nodes().iter().enumerate() {
            if node.kind != NodeKind::Host {
                continue;
            }
            let nic_rate = net.nic(id).map_or(1e9, |p| net.port(p).link.rate_bps as f64);
            let shim = match variant {
                Variant::BaselineNoEcn | Variant::BaselineEcn => Shim::None,
                Variant::StaticLimit => Shim::Static(StaticShaper::new(static_rate_bps, static_queue_pkts)),
                Variant::HyGenIcc => Shim::HyGenIcc(HgShim::new(HgConfig {
                    nic_capacity_bps: nic_rate,
                    ..hg
                })),
                Variant::SdnGcc => Shim::SdnGcc(SgShim::new(SgConfig {
                    nic_capacity_bps: nic_rate,
                    ..sg
                })),
            };
            shims.insert(id, shim);
        }
        let vnics = vm_host
            .iter()
            .map(|(&vm, &host)| {
                let line = net.nic(host).map_or(1_000_000_000, |p| net.port(p).link.rate_bps);
                let vnic = Vnic {
                    rate_bps: vnic_rate_bps.unwrap_or(line),
                    capacity: vnic_queue_pkts,
                    queue: VecDeque::new(),
                    busy: false,
                    drops: 0,
                    last_handoff: SimTime::ZERO,
                };
                (vm, vnic)
            })
            .collect();
        let flows = flows
            .into_iter()
            .map(|def| FlowState {
                mice: match def.kind {
                    FlowKind::Mice { response_bytes } => Some(MiceFlow::new(response_bytes)),
                    _ => None,
                },
                def,
                sender: None,
                receiver: TcpReceiver::new(),
                udp: None,
                goodput: GoodputLedger::new(bin_width, duration),
                active: false,
                shim_drops: 0,
                timer_at: None,
            })
            .collect();
        let mut w = World {
            net,
            variant,
            flows,
            shims,
            vnics,
            controller: (variant == Variant::SdnGcc).then(|| Controller::new(controller)),
            queue_samples: Vec::new(),
            transparency: TransparencyCounters::default(),
            control_latencies: Vec::new(),
            vm_host,
            tcp,
            dctcp_g,
            duration,
            queue_sample,
            mice_retry,
            vnic_jitter,
            jitter_rng: SeedBank::new(seed).stream("vnic-jitter"),
            miss_tables: BTreeMap::new(),
            poll_started: SimTime::ZERO,
            scratch: Vec::new(),
            sched: Scheduler::new(),
        };
        w.net.compute_routes();
        for i in 0..w.flows.len() {
            let f = &w.flows[i].def;
            let (start, stop) = (f.start, f.stop);
            w.sched.schedule(start, Ev::FlowStart(i));
            if stop < duration {
                w.sched.schedule(stop, Ev::FlowStop(i));
            }
        }
        let ticks: Vec<(NodeId, SimTime)> =
            w.shims.iter().filter_map(|(h, s)| s.tick_period().map(|p| (*h, p))).collect();
        for (h, p) in ticks {
            w.sched.schedule(p, Ev::ShimTick(h));
        }
        if w.queue_sample.is_some() {
            w.sched.schedule(SimTime::ZERO, Ev::QueueSample);
        }
        w
    }

    pub fn duration(&self) -> SimTime {
        self.duration
    }

    pub fn host_of(&self, vm: VmAddr) -> NodeId {
        self.vm_host[&vm]
    }

    /// Runs to the configured duration. Returns the number of events processed.
    pub fn run(&mut self) -> u64 {
        self.run_until(self.duration)
    }

    /// Advances to `t` (capped at the duration). Returns the events processed.
    pub fn run_until(&mut self, t: SimTime) -> u64 {
        let mut sched = std::mem::take(&mut self.sched);
        let n = sched.run_until(self, t.min(self.duration));
        self.sched = sched;
        n
    }

    fn tcp_config(&self, kind: FlowKind) -> TcpConfig {
        match kind {
            FlowKind::Dctcp => TcpConfig {
                ecn_enabled: true,
                variant: CcVariant::Dctcp { g: self.dctcp_g },
                ..self.tcp
            },
            _ => TcpConfig {
                ecn_enabled: self.variant.tenant_ecn(),
                ..self.tcp
            },
        }
    }

    fn kick(&mut self, sched: &mut Scheduler<Ev>, port: PortId) {
        if let Some((pkt, done, arrive)) = self.net.start_tx(port, sched.now()) {
            let peer = self.net.port(port).peer;
            sched.schedule(done, Ev::TxDone(port));
            sched.schedule(arrive, Ev::Arrive { node: peer, pkt });
        }
    }

    /// Puts a packet on a host's NIC, bypassing the shim.
    fn nic_send(&mut self, sched: &mut Scheduler<Ev>, host: NodeId, pkt: Packet) {
        let port = self.net.nic(host).expect("host has a NIC");
        self.net.offer(port, pkt);
        self.kick(sched, port);
    }

    /// A VM queues a packet on its virtual NIC.
    fn vm_send(&mut self, sched: &mut Scheduler<Ev>, pkt: Packet) {
        let v = self.vnics.get_mut(&pkt.src).expect("every VM has a vNIC");
        if v.queue.len() >= v.capacity {
            v.drops += 1;
            return;
        }
        v.queue.push_back(pkt);
        if !v.busy {
            self.vnic_kick(sched, pkt.src);
        }
    }

    fn vnic_kick(&mut self, sched: &mut Scheduler<Ev>, vm: VmAddr) {
        let v = self.vnics.get_mut(&vm).expect("vNIC");
        if let Some(p) = v.queue.front() {
            v.busy = true;
            let t = SimTime::serialization(p.size_bytes() as u64, v.rate_bps);
            sched.schedule_in(t, Ev::VnicDone(vm));
        } else {
            v.busy = false;
        }
    }

    /// A packet reaches the hypervisor from a VM's vNIC.
    fn hypervisor_send(&mut self, sched: &mut Scheduler<Ev>, mut pkt: Packet) {
        let now = sched.now();
        let host = self.host_of(pkt.src);
        let shim = self.shims.get_mut(&host).expect("every host has a shim");
        match shim.outbound(now, &mut pkt) {
            Outbound::Transmit => {
                if self.controller.as_ref().is_some_and(|c| c.cfg.monitor_hosts) {
                    let nic = self.net.nic(host).expect("host has a NIC");
                    let out_port = self.net.port(nic).local_index;
                    self.report_first_packet(sched, host, out_port, out_port, &pkt);
                }
                self.nic_send(sched, host, pkt)
            }
            Outbound::Drop => {
                if let Some(f) = self.flows.get_mut(pkt.flow_id as usize) {
                    f.shim_drops += 1;
                }
            }
            Outbound::Held(Some(t)) => {
                sched.schedule(t, Ev::ShaperRelease { host, vm: pkt.src });
            }
            Outbound::Held(None) => {}
        }
    }

    fn send_all(&mut self, sched: &mut Scheduler<Ev>, pkts: &mut Vec<Packet>) {
        for p in pkts.drain(..) {
            self.vm_send(sched, p);
        }
    }

    fn arm_tcp_timer(&mut self, sched: &mut Scheduler<Ev>, i: usize) {
        let f = &mut self.flows[i];
        let Some(deadline) = f.sender.as_ref().and_then(|s| s.timer_deadline()) else {
            return;
        };
        if f.timer_at.is_none_or(|t| deadline < t) {
            f.timer_at = Some(deadline);
            sched.schedule(deadline, Ev::TcpTimer(i));
        }
    }

    fn start_flow(&mut self, sched: &mut Scheduler<Ev>, i: usize) {
        let now = sched.now();
        let def = self.flows[i].def.clone();
        self.flows[i].active = true;
        match def.kind {
            FlowKind::Tcp | FlowKind::Dctcp => {
                let cfg = self.tcp_config(def.kind);
                let mut s = TcpSender::new(cfg, i as u32, def.src, def.dst, None);
                let mut out = std::mem::take(&mut self.scratch);
                s.send_available(now, &mut out);
                self.flows[i].sender = Some(s);
                self.send_all(sched, &mut out);
                self.scratch = out;
                self.arm_tcp_timer(sched, i);
            }
            FlowKind::Udp { rate_bps } => {
                self.flows[i].udp = Some(UdpCbr::new(i as u32, def.src, def.dst, rate_bps, now));
                sched.schedule(now, Ev::UdpTick(i));
            }
            FlowKind::Mice { .. } => {
                if let Some(m) = self.flows[i].mice.as_mut() {
                    m.start = Some(now);
                }
                self.send_request(sched, i);
            }
        }
    }

    fn send_request(&mut self, sched: &mut Scheduler<Ev>, i: usize) {
        let def = &self.flows[i].def;
        let mut req = Packet::request(i as u32, def.dst, def.src);
        req.ect = self.tcp_config(def.kind).sends_ect();
        req.ts = sched.now();
        if let Some(m) = self.flows[i].mice.as_mut() {
            m.requests_sent += 1;
        }
        self.vm_send(sched, req);
        sched.schedule_in(self.mice_retry, Ev::MiceRetry(i));
    }

    fn stop_flow(&mut self, i: usize) {
        let f = &mut self.flows[i];
        f.active = false;
        if let Some(s) = f.sender.as_mut() {
            s.stop();
        }
    }

    fn on_switch(&mut self, sched: &mut Scheduler<Ev>, sw: NodeId, pkt: Packet) {
        let dst_host = self.host_of(pkt.dst);
        let port = self.net.forward(sw, dst_host).expect("routes cover every host");
        if self.controller.is_some() {
            let in_port = self
                .net
                .forward(sw, self.host_of(pkt.src))
                .map_or(0, |p| self.net.port(p).local_index);
            let out_port = self.net.port(port).local_index;
            self.report_first_packet(sched, sw, in_port, out_port, &pkt);
        }
        self.net.offer(port, pkt);
        self.kick(sched, port);
    }

    /// Sends a first-packet report to the controller when `node` has not seen
    /// the (src, dst) pair within the aging window.
    fn report_first_packet(&mut self, sched: &mut Scheduler<Ev>, node: NodeId, in_port: usize, out_port: usize, pkt: &Packet) {
        let Some(ctrl) = &self.controller else { return };
        let now = sched.now();
        let aging = ctrl.cfg.aging;
        let delay = ctrl.cfg.control_delay;
        let table = self.miss_tables.entry(node).or_default();
        let last = table.insert((pkt.src, pkt.dst), now);
        if last.is_none_or(|t| now.saturating_sub(t) >= aging) {
            let ev = PacketIn {
                switch: node,
                in_port,
                out_port,
                src: pkt.src,
                dst: pkt.dst,
            };
            sched.schedule(now + delay, Ev::PacketIn(ev));
        }
    }

    fn on_host(&mut self, sched: &mut Scheduler<Ev>, host: NodeId, mut pkt: Packet) {
        let now = sched.now();
        let mut extra = std::mem::take(&mut self.scratch);
        let verdict = self
            .shims
            .get_mut(&host)
            .expect("every host has a shim")
            .inbound(now, &mut pkt, &mut extra);
        for p in extra.drain(..) {
            self.nic_send(sched, host, p);
        }
        self.scratch = extra;
        if verdict != Arrival::Deliver {
            return;
        }
        self.deliver(sched, pkt);
    }

    /// Hands a packet to its destination VM's endpoint.
    fn deliver(&mut self, sched: &mut Scheduler<Ev>, pkt: Packet) {
        let now = sched.now();
        let t = &mut self.transparency;
        t.delivered += 1;
        t.ce_delivered += pkt.ce as u64;
        t.ipr_delivered += pkt.ipr as u64;
        if pkt.is_control() {
            t.control_delivered += 1;
            return;
        }
        let i = pkt.flow_id as usize;
        if i >= self.flows.len() {
            return;
        }
        match pkt.segment {
            Segment::Data => {
                if pkt.proto == Proto::Udp {
                    self.flows[i].goodput.credit(now, pkt.payload_len as u64);
                    return;
                }
                let f = &mut self.flows[i];
                let (credited, ack) = f.receiver.on_data(&pkt);
                f.goodput.credit(now, credited);
                if let Some(m) = f.mice.as_mut() {
                    if m.completion.is_none() && f.receiver.rcv_nxt() >= m.response_size {
                        m.completion = Some(now);
                    }
                }
                self.vm_send(sched, ack);
            }
            Segment::Ack => {
                let mut out = std::mem::take(&mut self.scratch);
                if let Some(s) = self.flows[i].sender.as_mut() {
                    s.on_ack(now, &pkt, &mut out);
                }
                self.send_all(sched, &mut out);
                self.scratch = out;
                self.arm_tcp_timer(sched, i);
            }
            Segment::Request => {
                let f = &self.flows[i];
                if f.sender.is_some() {
                    return;
                }
                let FlowKind::Mice { response_bytes } = f.def.kind else {
                    return;
                };
                let (src, dst) = (f.def.src, f.def.dst);
                let cfg = self.tcp_config(f.def.kind);
                let mut s = TcpSender::new(cfg, i as u32, src, dst, Some(response_bytes));
                let mut out = std::mem::take(&mut self.scratch);
                s.send_available(now, &mut out);
                self.flows[i].sender = Some(s);
                self.send_all(sched, &mut out);
                self.scratch = out;
                self.arm_tcp_timer(sched, i);
            }
        }
    }

    fn poll_switches(&mut self, sched: &mut Scheduler<Ev>) {
        let Some(ctrl) = &self.controller else { return };
        let delay = ctrl.cfg.control_delay;
        let interval = ctrl.cfg.monitor_interval;
        let switches: Vec<NodeId> = ctrl.switches().collect();
        self.poll_started = sched.now();
        for sw in switches {
            let (marks, tx) = self.net.read_port_counters(sw).expect("monitored node");
            sched.schedule_in(delay, Ev::StatsReply { sw, marks, tx });
        }
        sched.schedule_in(interval, Ev::ControllerPoll);
    }

    fn sample_queues(&mut self, now: SimTime) {
        for (id, node) in self.net.nodes().iter().enumerate() {
            for (k, &p) in node.ports.iter().enumerate() {
                let q = &self.net.port(p).queue;
                self.queue_samples.push(QueueSample {
                    at: now,
                    node: id,
                    port: k,
                    occupancy: q.occupancy(),
                    cum_marks: q.cum_marks,
                    cum_drops: q.cum_drops,
                });
            }
        }
    }
}

impl Handler<Ev> for World {
    fn handle(&mut self, sched: &mut Scheduler<Ev>, ev: Ev) {
        let now = sched.now();
        match ev {
            Ev::TxDone(port) => {
                self.net.tx_done(port);
                self.kick(sched, port);
            }
            Ev::Arrive { node, pkt } => match self.net.node(node).kind {
                NodeKind::Switch => self.on_switch(sched, node, pkt),
                NodeKind::Host => self.on_host(sched, node, pkt),
            },
            Ev::FlowStart(i) => self.start_flow(sched, i),
            Ev::FlowStop(i) => self.stop_flow(i),
            Ev::UdpTick(i) => {
                let f = &mut self.flows[i];
                if !f.active {
                    return;
                }
                let Some(u) = f.udp.as_mut() else { return };
                let (pkt, next) = u.tick();
                self.vm_send(sched, pkt);
                if next < self.duration {
                    sched.schedule(next, Ev::UdpTick(i));
                }
            }
            Ev::TcpTimer(i) => {
                let f = &mut self.flows[i];
                if f.timer_at != Some(now) {
                    return;
                }
                f.timer_at = None;
                let Some(s) = f.sender.as_mut() else { return };
                match s.timer_deadline() {
                    Some(d) if d <= now => {
                        let mut out = std::mem::take(&mut self.scratch);
                        s.on_timer(now, &mut out);
                        self.send_all(sched, &mut out);
                        self.scratch = out;
                    }
                    _ => {}
                }
                self.arm_tcp_timer(sched, i);
            }
            Ev::MiceRetry(i) => {
                let f = &self.flows[i];
                if f.active && f.sender.is_none() && f.receiver.rcv_nxt() == 0 {
                    self.send_request(sched, i);
                }
            }
            Ev::ShimTick(h) => {
                let mut out = std::mem::take(&mut self.scratch);
                let shim = self.shims.get_mut(&h).expect("shim");
                shim.tick(now, &mut out);
                let period = shim.tick_period().expect("ticking shim");
                for p in out.drain(..) {
                    self.nic_send(sched, h, p);
                }
                self.scratch = out;
                sched.schedule_in(period, Ev::ShimTick(h));
            }
            Ev::ShaperRelease { host, vm } => {
                let mut out = std::mem::take(&mut self.scratch);
                let next = self.shims.get_mut(&host).expect("shim").release(now, vm, &mut out);
                for p in out.drain(..) {
                    self.nic_send(sched, host, p);
                }
                self.scratch = out;
                if let Some(t) = next {
                    sched.schedule(t, Ev::ShaperRelease { host, vm });
                }
            }
            Ev::VnicDone(vm) => {
                let jitter = match self.vnic_jitter.as_nanos() {
                    0 => 0,
                    j => self.jitter_rng.gen_range(0..j),
                };
                let v = self.vnics.get_mut(&vm).expect("vNIC");
                if let Some(p) = v.queue.pop_front() {
                    let at = (now + SimTime(jitter)).max(v.last_handoff);
                    v.last_handoff = at;
                    if at == now {
                        self.hypervisor_send(sched, p);
                    } else {
                        sched.schedule(at, Ev::Handoff(p));
                    }
                }
                self.vnic_kick(sched, vm);
            }
            Ev::Handoff(p) => self.hypervisor_send(sched, p),
            Ev::ControllerPoll => self.poll_switches(sched),
            Ev::StatsReply { sw, marks, tx } => {
                let Some(ctrl) = self.controller.as_mut() else { return };
                let msgs = ctrl.on_stats(now, sw, &marks, &tx);
                let delay = ctrl.cfg.control_delay;
                for m in msgs {
                    let pkt = ctrl.emit(m);
                    let host = self.vm_host[&m.to_source];
                    sched.schedule_in(delay, Ev::CtrlDeliver { host, pkt });
                }
            }
            Ev::PacketIn(p) => {
                let Some(ctrl) = self.controller.as_mut() else { return };
                if ctrl.packet_in(now, p) {
                    let interval = ctrl.cfg.monitor_interval;
                    sched.schedule_in(interval, Ev::ControllerPoll);
                }
            }
            Ev::CtrlDeliver { host, mut pkt } => {
                self.control_latencies.push(now.saturating_sub(self.poll_started));
                let mut extra = Vec::new();
                let verdict = self.shims.get_mut(&host).expect("shim").inbound(now, &mut pkt, &mut extra);
                if verdict == Arrival::Deliver {
                    self.deliver(sched, pkt);
                }
            }
            Ev::QueueSample => {
                self.sample_queues(now);
                if let Some(p) = self.queue_sample {
                    sched.schedule_in(p, Ev::QueueSample);
                }
            }
        }
    }
}

/// Default UDP rate when a scenario does not give one: 1.5x an equal share of
/// the line among the UDP senders, so UDP alone oversubscribes the bottleneck.
pub fn default_udp_rate(line_bps: u64, udp_senders: usize) -> u64 {
    (line_bps as f64 / udp_senders.max(1) as f64 * 1.5).round() as u64
}

/// Payload goodput of a saturated 1500-byte link, as a fraction of line rate.
pub fn goodput_efficiency() -> f64 {
    MSS as f64 / crate::netelem::packet::DATA_PACKET_BYTES as f64
}
