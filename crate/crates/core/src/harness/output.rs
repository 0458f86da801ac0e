//! Result files: four CSV tables and a JSON run summary.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ScenarioConfig;
use super::metrics::FctSummary;
use super::{HarnessError, PeriodMean, RunCounters, RunOutput};

pub const GOODPUT_CSV: &str = "goodput.csv";
pub const PERIODS_CSV: &str = "periods.csv";
pub const FCT_CSV: &str = "fct.csv";
pub const QUEUES_CSV: &str = "queues.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Serialize)]
struct GoodputRow<'a> {
    bin_start_s: f64,
    flow_id: &'a str,
    variant: &'a str,
    goodput_mbps: f64,
}

#[derive(Debug, Serialize)]
struct PeriodRow<'a> {
    flow_id: &'a str,
    period: &'a str,
    mean_mbps: f64,
}

#[derive(Debug, Serialize)]
struct FctRow<'a> {
    flow_id: &'a str,
    start_s: f64,
    fct_ms: Option<f64>,
}

#[derive(Debug, Serialize)]
struct QueueCsvRow<'a> {
    time_s: f64,
    switch: &'a str,
    port: usize,
    occupancy: usize,
    cum_marks: u64,
    cum_drops: u64,
}

#[derive(Debug, Serialize)]
struct FlowSummary<'a> {
    flow_id: &'a str,
    kind: &'a str,
    tagged: bool,
    start_s: f64,
    stop_s: f64,
    delivered_bytes: u64,
    shim_drops: u64,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    variant: &'a str,
    seed: u64,
    duration_s: f64,
    bin_width_ms: f64,
    config: &'a ScenarioConfig,
    flows: Vec<FlowSummary<'a>>,
    period_means: &'a [PeriodMean],
    jain: Vec<JainEntry<'a>>,
    fct: &'a FctSummary,
    counters: &'a RunCounters,
}

#[derive(Debug, Serialize)]
struct JainEntry<'a> {
    period: &'a str,
    index: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A CSV writer with the header written up front, so empty tables still name their columns.
fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>, HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

/// Writes every result file for `run` into `dir`, creating it if needed.
/// Returns the paths written.
pub fn write_outputs(run: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let m = &run.metrics;
    let variant = run.variant.name();
    let bin_s = m.bin_width.as_secs_f64();

    let goodput = dir.join(GOODPUT_CSV);
    let mut w = csv_writer(&goodput, &["bin_start_s", "flow_id", "variant", "goodput_mbps"])?;
    for f in m.flows.iter().filter(|f| !f.is_mice()) {
        for (i, bps) in f.bins_bps.iter().enumerate() {
            w.serialize(GoodputRow {
                bin_start_s: i as f64 * bin_s,
                flow_id: &f.name,
                variant,
                goodput_mbps: bps / 1e6,
            })?;
        }
    }
    w.flush().map_err(io_err(&goodput))?;

    let periods = dir.join(PERIODS_CSV);
    let mut w = csv_writer(&periods, &["flow_id", "period", "mean_mbps"])?;
    for p in &m.period_means {
        w.serialize(PeriodRow {
            flow_id: &p.flow,
            period: &p.period,
            mean_mbps: p.mean_mbps,
        })?;
    }
    w.flush().map_err(io_err(&periods))?;

    let fct = dir.join(FCT_CSV);
    let mut w = csv_writer(&fct, &["flow_id", "start_s", "fct_ms"])?;
    for (name, start, done) in &m.mice_starts {
        w.serialize(FctRow {
            flow_id: name,
            start_s: start.as_secs_f64(),
            fct_ms: done.map(|t| t.as_millis_f64()),
        })?;
    }
    w.flush().map_err(io_err(&fct))?;

    let queues = dir.join(QUEUES_CSV);
    let mut w = csv_writer(&queues, &["time_s", "switch", "port", "occupancy", "cum_marks", "cum_drops"])?;
    for q in &m.queues {
        w.serialize(QueueCsvRow {
            time_s: q.time_s,
            switch: &q.node,
            port: q.port,
            occupancy: q.occupancy,
            cum_marks: q.cum_marks,
            cum_drops: q.cum_drops,
        })?;
    }
    w.flush().map_err(io_err(&queues))?;

    let summary_path = dir.join(SUMMARY_JSON);
    let summary = Summary {
        scenario: &run.scenario,
        variant,
        seed: run.seed,
        duration_s: m.duration.as_secs_f64(),
        bin_width_ms: m.bin_width.as_millis_f64(),
        config: &run.config,
        flows: m
            .flows
            .iter()
            .map(|f| FlowSummary {
                flow_id: &f.name,
                kind: f.kind,
                tagged: f.tagged,
                start_s: f.start.as_secs_f64(),
                stop_s: f.stop.as_secs_f64(),
                delivered_bytes: f.delivered_bytes,
                shim_drops: f.shim_drops,
            })
            .collect(),
        period_means: &m.period_means,
        jain: m.jain.iter().map(|(p, j)| JainEntry { period: p, index: *j }).collect(),
        fct: &m.fct,
        counters: &m.counters,
    };
    let mut file = File::create(&summary_path).map_err(io_err(&summary_path))?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    file.write_all(text.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .map_err(io_err(&summary_path))?;

    Ok(vec![goodput, periods, fct, queues, summary_path])
}
