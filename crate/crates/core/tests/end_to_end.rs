use std::fs;

use dcsim::harness::{self, builtin, output, ScenarioConfig};
use dcsim::world::Variant;

fn short(name: &str, secs: f64) -> ScenarioConfig {
    builtin::builtin(name).unwrap().with_duration(secs)
}

#[test]
fn hygenicc_conserves_marks_and_hides_them() {
    for name in ["fourflow-tcp", "fourflow-dctcp", "fourflow-udp"] {
        let out = harness::run(&short(name, 12.0), Variant::HyGenIcc).unwrap();
        let c = &out.metrics.counters;
        assert!(c.switch_marks > 0 || c.feedback_packets > 0 || c.shim_drops > 0, "{name}: {c:?}");
        assert_eq!(c.mark_conservation_error, 0, "{name}");
        assert_eq!(c.malformed_feedback, 0, "{name}");
        assert_eq!((c.ce_delivered, c.ipr_delivered, c.control_delivered), (0, 0, 0), "{name}");
    }
}

#[test]
fn sdngcc_keeps_control_traffic_from_vms() {
    for name in ["fourflow-dctcp", "incast-mice"] {
        let out = harness::run(&short(name, 10.5), Variant::SdnGcc).unwrap();
        let c = &out.metrics.counters;
        assert!(c.ctrl_packet_ins > 0 && c.ctrl_polls > 0, "{name}: {c:?}");
        assert_eq!((c.ce_delivered, c.ipr_delivered, c.control_delivered), (0, 0, 0), "{name}");
    }
}

#[test]
fn sdngcc_control_loop_latency_is_bounded() {
    let cfg = short("incast-mice", 10.5);
    let out = harness::run(&cfg, Variant::SdnGcc).unwrap();
    let c = &out.metrics.counters;
    assert!(c.ctrl_messages > 0);
    let bound_us = cfg.params.monitor_interval_us + 2.0 * cfg.params.control_delay_us;
    assert!(c.max_control_latency_us <= bound_us, "{} > {bound_us}", c.max_control_latency_us);
}

#[test]
fn baseline_ecn_delivers_marks_to_dctcp() {
    let out = harness::run(&short("fourflow-dctcp", 5.0), Variant::BaselineEcn).unwrap();
    assert!(out.metrics.counters.ce_delivered > 0);
}

#[test]
fn delivered_bytes_fit_the_bottleneck() {
    let cfg = short("fourflow-tcp", 12.0);
    let out = harness::run(&cfg, Variant::BaselineEcn).unwrap();
    let total: u64 = out.metrics.flows.iter().map(|f| f.delivered_bytes).sum();
    let capacity = cfg.defaults.rate_mbps * 1e6 / 8.0 * cfg.scenario.duration_s;
    assert!((total as f64) <= capacity, "{total} > {capacity}");
}

fn files(cfg: &ScenarioConfig, variant: Variant) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run(cfg, variant).unwrap();
    output::write_outputs(&out, dir.path())
        .unwrap()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn identical_seeds_give_identical_files() {
    let cfg = short("fourflow-tcp", 11.0);
    for v in [Variant::BaselineEcn, Variant::HyGenIcc, Variant::SdnGcc] {
        assert_eq!(files(&cfg, v), files(&cfg, v), "{v:?}");
    }
}

#[test]
fn seed_changes_the_run() {
    let a = short("fourflow-tcp", 11.0);
    let mut b = a.clone();
    b.scenario.seed = a.scenario.seed + 1;
    let fa = files(&a, Variant::BaselineEcn);
    let fb = files(&b, Variant::BaselineEcn);
    let goodput = |f: &[(String, Vec<u8>)]| f.iter().find(|(n, _)| n == output::GOODPUT_CSV).unwrap().1.clone();
    assert_ne!(goodput(&fa), goodput(&fb));
}
