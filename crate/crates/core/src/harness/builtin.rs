//! Built-in scenarios.

use super::config::{
    FlowConfig, FlowKindConfig, LinkConfig, LinkDefaults, NodeConfig, NodeKindConfig, Params, PeriodConfig,
    ScenarioConfig, ScenarioMeta,
};

/// Names accepted by [`builtin`], with a one-line description each.
pub const BUILTINS: &[(&str, &str)] = &[
    ("fourflow", "tagged NewReno vs 3 UDP competitors, 30 s, periods p1/p2/p3"),
    ("fourflow-udp", "same as fourflow"),
    ("fourflow-tcp", "tagged NewReno vs 3 NewReno competitors"),
    ("fourflow-dctcp", "tagged NewReno vs 3 DCTCP competitors"),
    ("scale-8", "tagged NewReno + 7 mixed competitors on one hypervisor, 20 s"),
    ("scale-16", "tagged NewReno + 15 mixed competitors on one hypervisor, 20 s"),
    ("scale-32", "tagged NewReno + 31 mixed competitors on one hypervisor, 20 s"),
    ("delay-sweep-1ms", "fourflow with a 1 ms controller monitor interval"),
    ("delay-sweep-10ms", "fourflow with a 10 ms controller monitor interval"),
    ("delay-sweep-50ms", "fourflow with a 50 ms controller monitor interval"),
    ("incast-mice", "3 racks x 7 hosts of TCP+UDP elephants, 126 mice at t = 10 s"),
];

/// Suites expand to several built-ins run one after another.
pub const SUITES: &[(&str, &[&str])] = &[
    ("delay-sweep", &["delay-sweep-1ms", "delay-sweep-10ms", "delay-sweep-50ms"]),
    ("scale", &["scale-8", "scale-16", "scale-32"]),
];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "fourflow" | "fourflow-udp" => Some(fourflow(name, FlowKindConfig::Udp)),
        "fourflow-tcp" => Some(fourflow(name, FlowKindConfig::Tcp)),
        "fourflow-dctcp" => Some(fourflow(name, FlowKindConfig::Dctcp)),
        "scale-8" => Some(scale(8)),
        "scale-16" => Some(scale(16)),
        "scale-32" => Some(scale(32)),
        "delay-sweep-1ms" => Some(delay_sweep(1)),
        "delay-sweep-10ms" => Some(delay_sweep(10)),
        "delay-sweep-50ms" => Some(delay_sweep(50)),
        "incast-mice" => Some(incast_mice()),
        _ => None,
    }
}

pub fn suite(name: &str) -> Option<&'static [&'static str]> {
    SUITES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn node(name: &str, kind: NodeKindConfig) -> NodeConfig {
    NodeConfig {
        name: name.into(),
        kind,
    }
}

fn link(a: &str, b: &str) -> LinkConfig {
    LinkConfig {
        a: a.into(),
        b: b.into(),
        rate_mbps: None,
        delay_us: None,
        queue_capacity_pkts: None,
        mark_threshold_pkts: None,
    }
}

fn flow(name: &str, kind: FlowKindConfig, src_host: &str, dst_host: &str, start_s: f64, stop_s: Option<f64>) -> FlowConfig {
    FlowConfig {
        name: name.into(),
        kind,
        src_host: src_host.into(),
        dst_host: dst_host.into(),
        src_vm: None,
        dst_vm: None,
        start_s,
        stop_s,
        rate_mbps: None,
        response_bytes: None,
        tagged: false,
    }
}

fn period(name: &str, start_s: f64, end_s: f64) -> PeriodConfig {
    PeriodConfig {
        name: name.into(),
        start_s,
        end_s,
    }
}

fn meta(name: &str, duration_s: f64, variant: &str) -> ScenarioMeta {
    ScenarioMeta {
        name: name.into(),
        duration_s,
        seed: 1,
        variant: Some(variant.into()),
        bin_width_ms: 100.0,
        queue_sample_ms: 10.0,
    }
}

/// All sender VMs share one hypervisor (`hv0`) whose 1 Gb/s uplink feeds a
/// switch; every flow ends at its own VM on the receiver host `rx0`.
fn single_hypervisor(name: &str, duration_s: f64, variant: &str) -> ScenarioConfig {
    ScenarioConfig {
        scenario: meta(name, duration_s, variant),
        defaults: LinkDefaults::default(),
        params: Params::default(),
        nodes: vec![
            node("hv0", NodeKindConfig::Host),
            node("s0", NodeKindConfig::Switch),
            node("rx0", NodeKindConfig::Host),
        ],
        links: vec![link("hv0", "s0"), link("s0", "rx0")],
        flows: Vec::new(),
        periods: Vec::new(),
    }
}

fn fourflow(name: &str, competitor: FlowKindConfig) -> ScenarioConfig {
    let mut c = single_hypervisor(name, 30.0, "sdngcc");
    for k in 1..=3 {
        c.flows.push(flow(&format!("c{k}"), competitor, "hv0", "rx0", 0.0, Some(20.0)));
    }
    let mut tagged = flow("tagged", FlowKindConfig::Tcp, "hv0", "rx0", 10.0, None);
    tagged.tagged = true;
    c.flows.push(tagged);
    c.periods = vec![
        period("p1", 0.0, 10.0),
        period("p2", 10.0, 20.0),
        period("p3", 20.0, 30.0),
        period("all", 0.0, 30.0),
    ];
    c
}

fn scale(n: usize) -> ScenarioConfig {
    let mut c = single_hypervisor(&format!("scale-{n}"), 20.0, "sdngcc");
    let mix = [FlowKindConfig::Tcp, FlowKindConfig::Dctcp, FlowKindConfig::Udp];
    let mut tagged = flow("tagged", FlowKindConfig::Tcp, "hv0", "rx0", 0.0, None);
    tagged.tagged = true;
    c.flows.push(tagged);
    for k in 1..n {
        c.flows.push(flow(&format!("c{k}"), mix[(k - 1) % 3], "hv0", "rx0", 0.0, None));
    }
    c.periods = vec![period("all", 0.0, 20.0), period("eq", 15.0, 20.0)];
    c
}

fn delay_sweep(ms: u32) -> ScenarioConfig {
    let mut c = fourflow(&format!("delay-sweep-{ms}ms"), FlowKindConfig::Udp);
    c.params.monitor_interval_us = ms as f64 * 1000.0;
    c
}

/// Three sender racks and one receiver rack of seven hosts each, every rack
/// behind its own ToR, ToRs joined by a core switch. Each sender host runs a
/// TCP elephant, a UDP elephant and a web server; each receiver host runs the
/// elephant sinks and one client that fetches the page six times from each
/// of the three servers with the same host index.
fn incast_mice() -> ScenarioConfig {
    let mut c = ScenarioConfig {
        scenario: meta("incast-mice", 20.0, "sdngcc"),
        defaults: LinkDefaults::default(),
        params: Params::default(),
        nodes: vec![node("core", NodeKindConfig::Switch)],
        links: Vec::new(),
        flows: Vec::new(),
        periods: vec![
            period("pre", 5.0, 10.0),
            period("mice", 10.0, 15.0),
            period("steady", 5.0, 20.0),
            period("all", 0.0, 20.0),
        ],
    };
    for rack in 0..4 {
        let tor = format!("tor{rack}");
        c.nodes.push(node(&tor, NodeKindConfig::Switch));
        c.links.push(link(&tor, "core"));
        for h in 0..7 {
            let host = format!("r{rack}h{h}");
            c.nodes.push(node(&host, NodeKindConfig::Host));
            c.links.push(link(&host, &tor));
        }
    }
    for rack in 0..3 {
        for h in 0..7 {
            let src = format!("r{rack}h{h}");
            let dst = format!("r3h{h}");
            let mut t = flow(&format!("tcp-{rack}-{h}"), FlowKindConfig::Tcp, &src, &dst, 0.0, None);
            t.src_vm = Some(format!("{src}.tcp"));
            c.flows.push(t);
            let mut u = flow(&format!("udp-{rack}-{h}"), FlowKindConfig::Udp, &src, &dst, 0.0, None);
            u.src_vm = Some(format!("{src}.udp"));
            c.flows.push(u);
        }
    }
    for rack in 0..3 {
        for h in 0..7 {
            let src = format!("r{rack}h{h}");
            let dst = format!("r3h{h}");
            for k in 0..6 {
                let mut m = flow(&format!("mice-{rack}-{h}-{k}"), FlowKindConfig::Mice, &src, &dst, 10.0, None);
                m.src_vm = Some(format!("{src}.web"));
                m.dst_vm = Some(format!("{dst}.client"));
                m.response_bytes = Some(crate::transport::MICE_RESPONSE_BYTES);
                c.flows.push(m);
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates() {
        for (name, _) in BUILTINS {
            let c = builtin(name).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn scale_counts() {
        assert_eq!(builtin("scale-8").unwrap().flows.len(), 8);
        assert_eq!(builtin("scale-32").unwrap().flows.len(), 32);
    }

    #[test]
    fn incast_has_126_mice() {
        let c = builtin("incast-mice").unwrap();
        let mice = c.flows.iter().filter(|f| f.kind == FlowKindConfig::Mice).count();
        assert_eq!(mice, 126);
        assert_eq!(c.flows.len(), 126 + 42);
    }

    #[test]
    fn suites_name_builtins() {
        for (_, names) in SUITES {
            for n in *names {
                assert!(builtin(n).is_some(), "{n}");
            }
        }
    }
}
