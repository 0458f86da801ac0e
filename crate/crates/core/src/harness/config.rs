//! Scenario files: TOML with explicit units in key names.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioMeta,
    #[serde(default)]
    pub defaults: LinkDefaults,
    #[serde(default)]
    pub params: Params,
    #[serde(rename = "node", default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(rename = "link", default)]
    pub links: Vec<LinkConfig>,
    #[serde(rename = "flow", default)]
    pub flows: Vec<FlowConfig>,
    #[serde(rename = "period", default)]
    pub periods: Vec<PeriodConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub name: String,
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Default variant when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default = "default_bin_width_ms")]
    pub bin_width_ms: f64,
    /// Queue trace interval; 0 disables the trace.
    #[serde(default = "default_queue_sample_ms")]
    pub queue_sample_ms: f64,
}

fn default_seed() -> u64 {
    1
}
fn default_bin_width_ms() -> f64 {
    100.0
}
fn default_queue_sample_ms() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkDefaults {
    pub rate_mbps: f64,
    pub delay_us: f64,
    pub queue_capacity_pkts: usize,
    pub mark_threshold_pkts: usize,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        LinkDefaults {
            rate_mbps: 1000.0,
            delay_us: 25.0,
            queue_capacity_pkts: 100,
            mark_threshold_pkts: 20,
        }
    }
}

/// Tunables of the endpoints and both enforcement schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub hg_update_interval_us: f64,
    pub hg_congestion_timeout_us: f64,
    pub hg_feedback_timeout_us: f64,
    pub hg_bucket_intervals: f64,
    pub inactivity_timeout_ms: f64,
    pub scale_rtt_ref_us: f64,
    pub k_fast: f64,
    pub monitor_interval_us: f64,
    /// Defaults to the monitor interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sg_update_period_us: Option<f64>,
    /// Defaults to twice the monitor interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sg_grace_us: Option<f64>,
    pub sg_bucket_intervals: f64,
    pub rmin_fraction: f64,
    pub control_delay_us: f64,
    pub controller_aging_ms: f64,
    /// The controller also polls each hypervisor's NIC port.
    pub monitor_host_ports: bool,
    pub clear_ce: bool,
    pub static_limit_mbps: f64,
    pub static_queue_pkts: usize,
    /// VM virtual NIC rate; defaults to the host's line rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vnic_rate_mbps: Option<f64>,
    pub vnic_queue_pkts: usize,
    /// Random delay between a packet leaving a VM's vNIC and reaching the shim.
    pub vnic_jitter_us: f64,
    pub tcp_init_cwnd_segs: u32,
    pub tcp_rto_min_ms: f64,
    pub tcp_rwnd_bytes: u64,
    pub dctcp_g: f64,
    pub mice_retry_ms: f64,
    /// Mice start times are spread uniformly over this window.
    pub mice_jitter_us: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            hg_update_interval_us: 500.0,
            hg_congestion_timeout_us: 5000.0,
            hg_feedback_timeout_us: 500.0,
            hg_bucket_intervals: 2.0,
            inactivity_timeout_ms: 1000.0,
            scale_rtt_ref_us: 1000.0,
            k_fast: 5.0,
            monitor_interval_us: 5000.0,
            sg_update_period_us: None,
            sg_grace_us: None,
            sg_bucket_intervals: 2.0,
            rmin_fraction: 0.01,
            control_delay_us: 250.0,
            controller_aging_ms: 10_000.0,
            monitor_host_ports: false,
            clear_ce: true,
            static_limit_mbps: 250.0,
            static_queue_pkts: 1000,
            vnic_rate_mbps: None,
            vnic_queue_pkts: 1000,
            vnic_jitter_us: 10.0,
            tcp_init_cwnd_segs: 10,
            tcp_rto_min_ms: 200.0,
            tcp_rwnd_bytes: 256 * 1024,
            dctcp_g: 1.0 / 16.0,
            mice_retry_ms: 200.0,
            mice_jitter_us: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKindConfig {
    Host,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    pub kind: NodeKindConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_capacity_pkts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mark_threshold_pkts: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKindConfig {
    Tcp,
    Dctcp,
    Udp,
    Mice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub name: String,
    pub kind: FlowKindConfig,
    /// Host of the data sender.
    pub src_host: String,
    /// Host of the data receiver.
    pub dst_host: String,
    /// VM names; flows naming the same VM share its rate allocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_vm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_vm: Option<String>,
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_s: Option<f64>,
    /// UDP only; defaults to 1.5x an equal split of the line among UDP flows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_mbps: Option<f64>,
    /// Mice only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tagged: bool,
}

impl FlowConfig {
    pub fn src_vm_name(&self) -> String {
        self.src_vm.clone().unwrap_or_else(|| format!("{}.src", self.name))
    }

    pub fn dst_vm_name(&self) -> String {
        self.dst_vm.clone().unwrap_or_else(|| format!("{}.dst", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodConfig {
    pub name: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<ScenarioConfig, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Shortens or extends the run. Flows starting after the new end are
    /// removed, stop times and periods are clipped to it, and periods that
    /// would be empty are removed.
    pub fn with_duration(mut self, duration_s: f64) -> ScenarioConfig {
        self.scenario.duration_s = duration_s;
        self.flows.retain(|f| f.start_s < duration_s);
        for f in &mut self.flows {
            if f.stop_s.is_some_and(|t| t >= duration_s) {
                f.stop_s = None;
            }
        }
        self.periods.retain(|p| p.start_s < duration_s);
        for p in &mut self.periods {
            p.end_s = p.end_s.min(duration_s);
        }
        self
    }

    /// Checks references and ranges. Every problem found is reported.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mut errs = Vec::new();
        let s = &self.scenario;
        if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
            errs.push(format!("scenario.duration_s: must be positive, got {}", s.duration_s));
        }
        if !(s.bin_width_ms > 0.0) {
            errs.push(format!("scenario.bin_width_ms: must be positive, got {}", s.bin_width_ms));
        }
        if s.queue_sample_ms < 0.0 {
            errs.push("scenario.queue_sample_ms: must not be negative".into());
        }
        if let Some(v) = &s.variant {
            if crate::world::Variant::parse(v).is_none() {
                errs.push(format!("scenario.variant: unknown variant '{v}'"));
            }
        }
        let d = &self.defaults;
        if !(d.rate_mbps > 0.0) {
            errs.push("defaults.rate_mbps: must be positive".into());
        }
        if d.delay_us < 0.0 {
            errs.push("defaults.delay_us: must not be negative".into());
        }
        if d.queue_capacity_pkts == 0 {
            errs.push("defaults.queue_capacity_pkts: must be positive".into());
        }
        if d.mark_threshold_pkts > d.queue_capacity_pkts {
            errs.push("defaults.mark_threshold_pkts: exceeds queue capacity".into());
        }
        self.validate_params(&mut errs);

        let mut kinds = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if kinds.insert(n.name.clone(), n.kind).is_some() {
                errs.push(format!("node[{i}].name: duplicate node '{}'", n.name));
            }
        }
        let mut linked = BTreeMap::<String, usize>::new();
        let mut pairs = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            for (field, end) in [("a", &l.a), ("b", &l.b)] {
                if !kinds.contains_key(end) {
                    errs.push(format!("link[{i}].{field}: unknown node '{end}'"));
                }
                *linked.entry(end.clone()).or_default() += 1;
            }
            if l.a == l.b {
                errs.push(format!("link[{i}]: connects '{}' to itself", l.a));
            }
            let key = if l.a < l.b { (&l.a, &l.b) } else { (&l.b, &l.a) };
            if !pairs.insert(key) {
                errs.push(format!("link[{i}]: duplicate link between '{}' and '{}'", l.a, l.b));
            }
            if l.rate_mbps.is_some_and(|r| !(r > 0.0)) {
                errs.push(format!("link[{i}].rate_mbps: must be positive"));
            }
            if l.delay_us.is_some_and(|r| r < 0.0) {
                errs.push(format!("link[{i}].delay_us: must not be negative"));
            }
            if l.queue_capacity_pkts == Some(0) {
                errs.push(format!("link[{i}].queue_capacity_pkts: must be positive"));
            }
        }
        for (name, kind) in &kinds {
            let n = linked.get(name).copied().unwrap_or(0);
            if *kind == NodeKindConfig::Host && n != 1 {
                errs.push(format!("node '{name}': a host needs exactly one link, has {n}"));
            }
        }

        let mut names = BTreeSet::new();
        let mut vm_hosts = BTreeMap::<String, String>::new();
        for (i, f) in self.flows.iter().enumerate() {
            if !names.insert(&f.name) {
                errs.push(format!("flow[{i}].name: duplicate flow '{}'", f.name));
            }
            for (field, host) in [("src_host", &f.src_host), ("dst_host", &f.dst_host)] {
                match kinds.get(host) {
                    Some(NodeKindConfig::Host) => {}
                    Some(NodeKindConfig::Switch) => errs.push(format!("flow[{i}].{field}: '{host}' is a switch")),
                    None => errs.push(format!("flow[{i}].{field}: unknown node '{host}'")),
                }
            }
            for (field, vm, host) in [("src_vm", f.src_vm_name(), &f.src_host), ("dst_vm", f.dst_vm_name(), &f.dst_host)] {
                if let Some(prev) = vm_hosts.insert(vm.clone(), host.clone()) {
                    if &prev != host {
                        errs.push(format!("flow[{i}].{field}: VM '{vm}' placed on both '{prev}' and '{host}'"));
                    }
                }
            }
            if f.src_vm_name() == f.dst_vm_name() {
                errs.push(format!("flow[{i}]: source and destination VM are the same"));
            }
            if !(f.start_s >= 0.0 && f.start_s <= s.duration_s) {
                errs.push(format!("flow[{i}].start_s: {} outside [0, duration]", f.start_s));
            }
            if let Some(stop) = f.stop_s {
                if !(stop > f.start_s && stop <= s.duration_s) {
                    errs.push(format!("flow[{i}].stop_s: {stop} must lie in (start_s, duration]"));
                }
            }
            match f.kind {
                FlowKindConfig::Udp => {
                    if f.rate_mbps.is_some_and(|r| !(r > 0.0)) {
                        errs.push(format!("flow[{i}].rate_mbps: must be positive"));
                    }
                }
                _ if f.rate_mbps.is_some() => {
                    errs.push(format!("flow[{i}].rate_mbps: only UDP flows take a rate"));
                }
                _ => {}
            }
            match f.kind {
                FlowKindConfig::Mice => {
                    if f.response_bytes == Some(0) {
                        errs.push(format!("flow[{i}].response_bytes: must be positive"));
                    }
                }
                _ if f.response_bytes.is_some() => {
                    errs.push(format!("flow[{i}].response_bytes: only mice flows take a response size"));
                }
                _ => {}
            }
        }
        for (i, p) in self.periods.iter().enumerate() {
            if !(p.start_s >= 0.0 && p.end_s > p.start_s && p.end_s <= s.duration_s + 1e-9) {
                errs.push(format!("period[{i}] '{}': window must lie within [0, duration]", p.name));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Invalid(errs))
        }
    }

    fn validate_params(&self, errs: &mut Vec<String>) {
        let p = &self.params;
        let positive = [
            ("hg_update_interval_us", p.hg_update_interval_us),
            ("hg_congestion_timeout_us", p.hg_congestion_timeout_us),
            ("hg_feedback_timeout_us", p.hg_feedback_timeout_us),
            ("hg_bucket_intervals", p.hg_bucket_intervals),
            ("inactivity_timeout_ms", p.inactivity_timeout_ms),
            ("scale_rtt_ref_us", p.scale_rtt_ref_us),
            ("k_fast", p.k_fast),
            ("monitor_interval_us", p.monitor_interval_us),
            ("sg_bucket_intervals", p.sg_bucket_intervals),
            ("controller_aging_ms", p.controller_aging_ms),
            ("static_limit_mbps", p.static_limit_mbps),
            ("tcp_rto_min_ms", p.tcp_rto_min_ms),
            ("mice_retry_ms", p.mice_retry_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("params.{name}: must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("sg_update_period_us", p.sg_update_period_us),
            ("sg_grace_us", p.sg_grace_us),
            ("vnic_rate_mbps", p.vnic_rate_mbps),
        ] {
            if v.is_some_and(|v| !(v > 0.0)) {
                errs.push(format!("params.{name}: must be positive"));
            }
        }
        let grace = p.sg_grace_us.unwrap_or(2.0 * p.monitor_interval_us);
        if p.inactivity_timeout_ms * 1000.0 <= grace {
            errs.push("params.inactivity_timeout_ms: must exceed the congestion grace period".into());
        }
        if !(0.0..1.0).contains(&p.rmin_fraction) {
            errs.push(format!("params.rmin_fraction: must lie in [0, 1), got {}", p.rmin_fraction));
        }
        if p.control_delay_us < 0.0 {
            errs.push("params.control_delay_us: must not be negative".into());
        }
        if p.mice_jitter_us < 0.0 {
            errs.push("params.mice_jitter_us: must not be negative".into());
        }
        if !(p.dctcp_g > 0.0 && p.dctcp_g <= 1.0) {
            errs.push(format!("params.dctcp_g: must lie in (0, 1], got {}", p.dctcp_g));
        }
        if p.tcp_init_cwnd_segs == 0 {
            errs.push("params.tcp_init_cwnd_segs: must be positive".into());
        }
        if p.tcp_rwnd_bytes < 2 * crate::netelem::packet::MSS as u64 {
            errs.push("params.tcp_rwnd_bytes: must hold at least two segments".into());
        }
        if p.static_queue_pkts == 0 {
            errs.push("params.static_queue_pkts: must be positive".into());
        }
        if !(p.vnic_jitter_us >= 0.0 && p.vnic_jitter_us.is_finite()) {
            errs.push(format!("params.vnic_jitter_us: must be non-negative, got {}", p.vnic_jitter_us));
        }
        if p.vnic_queue_pkts == 0 {
            errs.push("params.vnic_queue_pkts: must be positive".into());
        }
    }
}
