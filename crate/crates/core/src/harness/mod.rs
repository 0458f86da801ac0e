//! Scenario construction, execution and result files.

pub mod builtin;
pub mod config;
pub mod metrics;
pub mod output;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::hygenicc::{scale_for, HgConfig};
use crate::netelem::packet::VmAddr;
use crate::netelem::{Link, Network, NodeKind, PortQueue};
use crate::rng::SeedBank;
use crate::sdngcc::controller::ControllerCounters;
use crate::sdngcc::{ControllerConfig, SgConfig};
use crate::time::SimTime;
use crate::transport::TcpConfig;
use crate::world::{default_udp_rate, FlowDef, FlowKind, TransparencyCounters, Variant, World, WorldSpec};

pub use config::ScenarioConfig;
use config::{FlowKindConfig, NodeKindConfig, PeriodConfig};
use metrics::{FctSummary, FlowMetrics};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("unknown scenario '{0}' (not a file or built-in name)")]
    UnknownScenario(String),
    #[error("unknown variant '{0}'")]
    UnknownVariant(String),
    #[error("no variant given and the scenario names none")]
    NoVariant,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Loads a scenario from a file path or a built-in name.
pub fn load_scenario(arg: &str) -> Result<ScenarioConfig, HarnessError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: arg.to_string(),
            source,
        })?;
        return ScenarioConfig::from_toml(&text);
    }
    builtin::builtin(arg).ok_or_else(|| HarnessError::UnknownScenario(arg.to_string()))
}

/// The variant to run: the explicit choice, else the scenario's default.
pub fn resolve_variant(cfg: &ScenarioConfig, explicit: Option<&str>) -> Result<Variant, HarnessError> {
    let name = explicit.or(cfg.scenario.variant.as_deref()).ok_or(HarnessError::NoVariant)?;
    Variant::parse(name).ok_or_else(|| HarnessError::UnknownVariant(name.to_string()))
}

fn us(v: f64) -> SimTime {
    SimTime::from_secs_f64(v * 1e-6)
}

fn ms(v: f64) -> SimTime {
    SimTime::from_secs_f64(v * 1e-3)
}

/// Names of the simulated objects, for reports.
#[derive(Debug, Clone, Default)]
pub struct Naming {
    pub nodes: Vec<String>,
    pub vms: BTreeMap<VmAddr, String>,
}

/// Instantiates the topology, VMs and flows of a validated scenario.
pub fn build(cfg: &ScenarioConfig, variant: Variant) -> Result<(WorldSpec, Naming), HarnessError> {
    cfg.validate()?;
    let d = &cfg.defaults;
    let p = &cfg.params;
    let mut net = Network::new();
    let mut ids = BTreeMap::new();
    for n in &cfg.nodes {
        let kind = match n.kind {
            NodeKindConfig::Host => NodeKind::Host,
            NodeKindConfig::Switch => NodeKind::Switch,
        };
        ids.insert(n.name.clone(), net.add_node(n.name.clone(), kind));
    }
    for l in &cfg.links {
        let link = Link {
            rate_bps: (l.rate_mbps.unwrap_or(d.rate_mbps) * 1e6).round() as u64,
            prop_delay: us(l.delay_us.unwrap_or(d.delay_us)),
        };
        let cap = l.queue_capacity_pkts.unwrap_or(d.queue_capacity_pkts);
        let thr = l.mark_threshold_pkts.unwrap_or(d.mark_threshold_pkts);
        net.connect(
            ids[&l.a],
            ids[&l.b],
            link,
            PortQueue::step_marking(cap, thr),
            PortQueue::step_marking(cap, thr),
        );
    }

    let mut vm_host = BTreeMap::new();
    let mut vm_ids = BTreeMap::<String, VmAddr>::new();
    let mut naming = Naming {
        nodes: cfg.nodes.iter().map(|n| n.name.clone()).collect(),
        vms: BTreeMap::new(),
    };
    let mut vm_of = |name: String, host: &str| -> VmAddr {
        let next = VmAddr(vm_ids.len() as u32 + 1);
        let a = *vm_ids.entry(name.clone()).or_insert(next);
        vm_host.insert(a, ids[host]);
        naming.vms.insert(a, name);
        a
    };

    let udp_count = cfg.flows.iter().filter(|f| f.kind == FlowKindConfig::Udp).count();
    let line_bps = (d.rate_mbps * 1e6).round() as u64;
    let mut mice_rng = SeedBank::new(cfg.scenario.seed).stream("mice");
    let duration = SimTime::from_secs_f64(cfg.scenario.duration_s);
    let mut flows = Vec::new();
    for f in &cfg.flows {
        let src = vm_of(f.src_vm_name(), &f.src_host);
        let dst = vm_of(f.dst_vm_name(), &f.dst_host);
        let kind = match f.kind {
            FlowKindConfig::Tcp => FlowKind::Tcp,
            FlowKindConfig::Dctcp => FlowKind::Dctcp,
            FlowKindConfig::Udp => FlowKind::Udp {
                rate_bps: f
                    .rate_mbps
                    .map(|r| (r * 1e6).round() as u64)
                    .unwrap_or_else(|| default_udp_rate(line_bps, udp_count)),
            },
            FlowKindConfig::Mice => FlowKind::Mice {
                response_bytes: f.response_bytes.unwrap_or(crate::transport::MICE_RESPONSE_BYTES),
            },
        };
        let mut start = SimTime::from_secs_f64(f.start_s);
        if f.kind == FlowKindConfig::Mice && p.mice_jitter_us > 0.0 {
            let jitter_ns = (p.mice_jitter_us * 1e3) as u64;
            start += SimTime(mice_rng.gen_range(0..jitter_ns));
        }
        flows.push(FlowDef {
            name: f.name.clone(),
            kind,
            src,
            dst,
            start: start.min(duration),
            stop: f.stop_s.map_or(duration, SimTime::from_secs_f64),
            tagged: f.tagged,
        });
    }

    let t_i = us(p.monitor_interval_us);
    let tcp = TcpConfig {
        init_cwnd_segs: p.tcp_init_cwnd_segs,
        rto_min: ms(p.tcp_rto_min_ms),
        rto_init: ms(p.tcp_rto_min_ms),
        rwnd_bytes: p.tcp_rwnd_bytes,
        ..TcpConfig::default()
    };
    let scale_bps = scale_for(us(p.scale_rtt_ref_us));
    let hg = HgConfig {
        nic_capacity_bps: line_bps as f64,
        update_interval: us(p.hg_update_interval_us),
        congestion_timeout: us(p.hg_congestion_timeout_us),
        feedback_timeout: us(p.hg_feedback_timeout_us),
        inactivity_timeout: ms(p.inactivity_timeout_ms),
        scale_bps,
        k_fast: p.k_fast,
        bucket_intervals: p.hg_bucket_intervals,
    };
    let mut sg = SgConfig::with_interval(t_i);
    sg.update_period = p.sg_update_period_us.map_or(t_i, us);
    sg.congestion_grace = p.sg_grace_us.map_or(SimTime(2 * t_i.as_nanos()), us);
    sg.inactivity_timeout = ms(p.inactivity_timeout_ms);
    sg.rmin_fraction = p.rmin_fraction;
    sg.scale_bps = scale_bps;
    sg.k_fast = p.k_fast;
    sg.bucket_intervals = p.sg_bucket_intervals;
    sg.clear_ce = p.clear_ce;
    let controller = ControllerConfig {
        monitor_interval: t_i,
        control_delay: us(p.control_delay_us),
        aging: ms(p.controller_aging_ms),
        monitor_hosts: p.monitor_host_ports,
    };
    let spec = WorldSpec {
        net,
        vm_host,
        flows,
        variant,
        tcp,
        dctcp_g: p.dctcp_g,
        hg,
        sg,
        controller,
        static_rate_bps: p.static_limit_mbps * 1e6,
        static_queue_pkts: p.static_queue_pkts,
        vnic_rate_bps: p.vnic_rate_mbps.map(|r| (r * 1e6).round() as u64),
        vnic_queue_pkts: p.vnic_queue_pkts,
        vnic_jitter: us(p.vnic_jitter_us),
        seed: cfg.scenario.seed,
        duration,
        bin_width: ms(cfg.scenario.bin_width_ms),
        queue_sample: (cfg.scenario.queue_sample_ms > 0.0).then(|| ms(cfg.scenario.queue_sample_ms)),
        mice_retry: ms(p.mice_retry_ms),
    };
    Ok((spec, naming))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodMean {
    pub flow: String,
    pub period: String,
    pub mean_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueRow {
    pub time_s: f64,
    pub node: String,
    pub port: usize,
    pub occupancy: usize,
    pub cum_marks: u64,
    pub cum_drops: u64,
}

/// Counters gathered from the shims and controller at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunCounters {
    pub events: u64,
    pub vm_deliveries: u64,
    pub ce_delivered: u64,
    pub ipr_delivered: u64,
    pub control_delivered: u64,
    pub shim_drops: u64,
    pub switch_marks: u64,
    pub switch_drops: u64,
    pub host_nic_drops: u64,
    pub feedback_packets: u64,
    pub malformed_feedback: u64,
    /// Receiver-side CE count minus (IPR reflections + feedback + pending) over all pairs.
    pub mark_conservation_error: i64,
    pub ctrl_packet_ins: u64,
    pub ctrl_polls: u64,
    pub ctrl_messages: u64,
    pub orphan_notifications: u64,
    pub mark_saturation: u64,
    /// Longest snapshot-to-shim control latency observed, microseconds.
    pub max_control_latency_us: f64,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub bin_width: SimTime,
    pub duration: SimTime,
    pub flows: Vec<FlowMetrics>,
    pub periods: Vec<PeriodConfig>,
    pub period_means: Vec<PeriodMean>,
    /// Jain index per period over non-mice flows active for all of it.
    pub jain: Vec<(String, f64)>,
    pub fct: FctSummary,
    pub mice_starts: Vec<(String, SimTime, Option<SimTime>)>,
    pub queues: Vec<QueueRow>,
    pub counters: RunCounters,
}

impl RunMetrics {
    pub fn flow(&self, name: &str) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.name == name)
    }

    pub fn tagged(&self) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.tagged)
    }

    pub fn period(&self, name: &str) -> Option<&PeriodConfig> {
        self.periods.iter().find(|p| p.name == name)
    }

    /// Mean goodput of `flow` over the named period, Mb/s.
    pub fn period_mean(&self, flow: &str, period: &str) -> Option<f64> {
        self.period_means
            .iter()
            .find(|m| m.flow == flow && m.period == period)
            .map(|m| m.mean_mbps)
    }

    pub fn jain(&self, period: &str) -> Option<f64> {
        self.jain.iter().find(|(p, _)| p == period).map(|(_, j)| *j)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub metrics: RunMetrics,
}

/// Builds and runs one scenario under one variant.
pub fn run(cfg: &ScenarioConfig, variant: Variant) -> Result<RunOutput, HarnessError> {
    let (spec, naming) = build(cfg, variant)?;
    let mut world = World::new(spec);
    let events = world.run();
    let metrics = collect(cfg, &world, &naming, events);
    Ok(RunOutput {
        scenario: cfg.scenario.name.clone(),
        variant,
        seed: cfg.scenario.seed,
        config: cfg.clone(),
        metrics,
    })
}

/// Runs several (scenario, variant) pairs one after another.
pub fn run_batch(jobs: &[(ScenarioConfig, Variant)]) -> Result<Vec<RunOutput>, HarnessError> {
    jobs.iter().map(|(c, v)| run(c, *v)).collect()
}

fn collect(cfg: &ScenarioConfig, world: &World, naming: &Naming, events: u64) -> RunMetrics {
    let bin_width = SimTime::from_secs_f64(cfg.scenario.bin_width_ms * 1e-3);
    let duration = world.duration();
    let flows: Vec<FlowMetrics> = world
        .flows
        .iter()
        .map(|f| {
            let g = &f.goodput;
            FlowMetrics {
                name: f.def.name.clone(),
                kind: f.def.kind.label(),
                tagged: f.def.tagged,
                start: f.def.start,
                stop: f.def.stop,
                bins_bps: (0..g.bins().len()).map(|i| g.bin_bps(i)).collect(),
                delivered_bytes: g.total_bytes(),
                shim_drops: f.shim_drops,
                fct: f.mice.and_then(|m| m.fct()),
            }
        })
        .collect();

    let mut period_means = Vec::new();
    let mut jain = Vec::new();
    for p in &cfg.periods {
        let (a, b) = (SimTime::from_secs_f64(p.start_s), SimTime::from_secs_f64(p.end_s));
        let mut active = Vec::new();
        for f in flows.iter().filter(|f| !f.is_mice()) {
            let m = f.mean_bps(bin_width, a, b) / 1e6;
            period_means.push(PeriodMean {
                flow: f.name.clone(),
                period: p.name.clone(),
                mean_mbps: m,
            });
            if f.covers(a, b) {
                active.push(m);
            }
        }
        jain.push((p.name.clone(), metrics::jain(&active)));
    }

    let mice: Vec<&FlowMetrics> = flows.iter().filter(|f| f.is_mice()).collect();
    let fcts: Vec<f64> = mice.iter().filter_map(|f| f.fct).map(|t| t.as_millis_f64()).collect();
    let fct = FctSummary::from_fcts(mice.len(), &fcts);
    let mice_starts = mice.iter().map(|f| (f.name.clone(), f.start, f.fct)).collect();

    let queues = world
        .queue_samples
        .iter()
        .map(|q| QueueRow {
            time_s: q.at.as_secs_f64(),
            node: naming.nodes[q.node].clone(),
            port: q.port,
            occupancy: q.occupancy,
            cum_marks: q.cum_marks,
            cum_drops: q.cum_drops,
        })
        .collect();

    RunMetrics {
        bin_width,
        duration,
        period_means,
        jain,
        fct,
        mice_starts,
        queues,
        counters: counters(world, events),
        periods: cfg.periods.clone(),
        flows,
    }
}

fn counters(world: &World, events: u64) -> RunCounters {
    let TransparencyCounters {
        delivered,
        ce_delivered,
        ipr_delivered,
        control_delivered,
    } = world.transparency;
    let mut c = RunCounters {
        events,
        vm_deliveries: delivered,
        ce_delivered,
        ipr_delivered,
        control_delivered,
        shim_drops: world.flows.iter().map(|f| f.shim_drops).sum(),
        ..Default::default()
    };
    for port in world.net.ports() {
        match world.net.node(port.node).kind {
            NodeKind::Switch => {
                c.switch_marks += port.queue.cum_marks;
                c.switch_drops += port.queue.cum_drops;
            }
            NodeKind::Host => c.host_nic_drops += port.queue.cum_drops,
        }
    }
    let mut conservation = 0i64;
    for shim in world.shims.values() {
        if let Some(h) = shim.as_hygenicc() {
            c.feedback_packets += h.counters.feedback_packets;
            c.malformed_feedback += h.counters.malformed_feedback;
            for f in h.flows() {
                conservation += f.ecn_packet_count as i64
                    - (f.reflected_ipr + f.reflected_feedback + f.ecnmarks) as i64;
            }
        }
    }
    c.mark_conservation_error = conservation;
    if let Some(ctrl) = &world.controller {
        let ControllerCounters {
            packet_ins,
            polls,
            messages,
            orphan_notifications,
            mark_saturation,
        } = ctrl.counters;
        c.ctrl_packet_ins = packet_ins;
        c.ctrl_polls = polls;
        c.ctrl_messages = messages;
        c.orphan_notifications = orphan_notifications;
        c.mark_saturation = mark_saturation;
    }
    c.max_control_latency_us = world
        .control_latencies
        .iter()
        .map(|t| t.as_nanos() as f64 / 1e3)
        .fold(0.0, f64::max);
    c
}
