use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dcsim::harness::{self, builtin, output, HarnessError, RunOutput, ScenarioConfig};
use dcsim::world::Variant;

#[derive(Parser, Debug)]
#[command(name = "dcsim", version, about = "Data-center congestion control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario (file, built-in name or suite) and write result files.
    Run {
        #[arg(long)]
        scenario: String,
        /// Control variant, or "all" for every variant.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "DCSIM_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
        /// Override the scenario duration, seconds.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// List built-in scenarios and suites.
    ListScenarios,
    /// Parse and check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: String,
    },
}

fn scenarios(arg: &str) -> Result<Vec<ScenarioConfig>, HarnessError> {
    match builtin::suite(arg) {
        Some(names) => names.iter().map(|n| harness::load_scenario(n)).collect(),
        None => Ok(vec![harness::load_scenario(arg)?]),
    }
}

fn variants(cfg: &ScenarioConfig, arg: Option<&str>) -> Result<Vec<Variant>, HarnessError> {
    match arg {
        Some("all") => Ok(Variant::ALL.to_vec()),
        other => Ok(vec![harness::resolve_variant(cfg, other)?]),
    }
}

fn report(run: &RunOutput, dir: &Path, wall_s: f64) {
    let m = &run.metrics;
    println!(
        "{} [{}] seed {}: {} events in {:.2} s -> {}",
        run.scenario,
        run.variant,
        run.seed,
        m.counters.events,
        wall_s,
        dir.display()
    );
    if let Some(t) = m.tagged() {
        let means: Vec<String> = m
            .periods
            .iter()
            .filter_map(|p| m.period_mean(&t.name, &p.name).map(|v| format!("{}={v:.1}", p.name)))
            .collect();
        println!("  tagged '{}' Mb/s: {}", t.name, means.join(" "));
    }
    let jain: Vec<String> = m.jain.iter().map(|(p, j)| format!("{p}={j:.3}")).collect();
    println!("  jain: {}", jain.join(" "));
    if m.fct.count > 0 {
        println!(
            "  mice: {}/{} completed, fct mean {:.2} ms, stddev {:.2} ms",
            m.fct.completed, m.fct.count, m.fct.mean_ms, m.fct.stddev_ms
        );
    }
}

fn run(scenario: &str, variant: Option<&str>, seed: Option<u64>, out_dir: &Path, duration_s: Option<f64>) -> Result<()> {
    let mut jobs = Vec::new();
    for mut cfg in scenarios(scenario)? {
        if let Some(s) = seed {
            cfg.scenario.seed = s;
        }
        if let Some(d) = duration_s {
            if !(d > 0.0 && d.is_finite()) {
                bail!("--duration-s must be positive, got {d}");
            }
            cfg = cfg.with_duration(d);
        }
        cfg.validate()?;
        for v in variants(&cfg, variant)? {
            jobs.push((cfg.clone(), v));
        }
    }
    let nested = jobs.len() > 1;
    for (cfg, v) in jobs {
        let started = Instant::now();
        let out = harness::run(&cfg, v)?;
        let dir = if nested {
            out_dir.join(&cfg.scenario.name).join(v.name())
        } else {
            out_dir.to_path_buf()
        };
        output::write_outputs(&out, &dir).with_context(|| format!("writing results to {}", dir.display()))?;
        report(&out, &dir, started.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            variant,
            seed,
            out_dir,
            duration_s,
        } => run(&scenario, variant.as_deref(), seed, &out_dir, duration_s),
        Command::ListScenarios => {
            for (name, about) in builtin::BUILTINS {
                println!("{name:<18} {about}");
            }
            for (name, members) in builtin::SUITES {
                println!("{name:<18} suite: {}", members.join(", "));
            }
            Ok(())
        }
        Command::Validate { scenario } => scenarios(&scenario)
            .and_then(|cfgs| cfgs.iter().try_for_each(ScenarioConfig::validate))
            .map(|()| println!("{scenario}: ok"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
