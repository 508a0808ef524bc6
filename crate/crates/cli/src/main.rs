use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tdcosim::cosim::{compare_runs, run_scenario, Mode, RunOptions, Scenario};
use tdcosim::derms::SyntheticAgc;

#[derive(Parser)]
#[command(name = "tdcosim", version, about = "Transmission-distribution-DER co-simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Threads,
    Wire,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Deterministic => Mode::Deterministic,
            ModeArg::Threads => Mode::Threads,
            ModeArg::Wire => Mode::Wire,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario. Exit status 0 if stable, 2 if unstable, 1 on error.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "deterministic")]
        mode: ModeArg,
        /// Shorthand for `--mode wire`: every component on its own TCP connection.
        #[arg(long, conflicts_with = "mode")]
        wire: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Co-simulation exchange step in seconds.
        #[arg(long)]
        step: Option<f64>,
        /// Simulated duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Pace ticks to wall-clock time.
        #[arg(long)]
        realtime: bool,
        /// Output directory (default: the scenario's [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config value, e.g. --set tsnet.area.1.h_s=4.0
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Seconds to wait for a tick to complete before reporting a deadlock.
        #[arg(long, default_value_t = 5.0)]
        deadlock_timeout: f64,
    },
    /// Check a scenario without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Compare head power and frequency of two run directories.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        /// Write the aligned series here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic regulation trace (t_s,r_pu).
    GenAgc {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long, default_value_t = 2.0)]
        interval: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, mode, wire, seed, step, duration, realtime, out, mut overrides, deadlock_timeout } => {
            if let Some(v) = seed {
                overrides.push(format!("scenario.seed={v}"));
            }
            if let Some(v) = step {
                overrides.push(format!("scenario.step_s={v:?}"));
            }
            if let Some(v) = duration {
                overrides.push(format!("scenario.duration_s={v:?}"));
            }
            let scn = Scenario::load(&config, &overrides)?;
            let opts = RunOptions {
                mode: if wire { Mode::Wire } else { mode.into() },
                realtime,
                out_dir: out,
                deadlock_timeout: std::time::Duration::from_secs_f64(deadlock_timeout),
                extra: Vec::new(),
            };
            let report = run_scenario(&scn, opts)?;
            let m = &report.manifest.metrics;
            println!("scenario    {}", report.manifest.scenario);
            println!("output      {}", report.out_dir.display());
            println!("final tick  {}", report.final_tick);
            if let Some(why) = &report.halted {
                println!("halted      {why}");
            }
            println!("freq range  {:.4} .. {:.4} Hz ({})", m.min_freq_hz, m.max_freq_hz, report.manifest.monitor_area);
            println!("settling    {:.4} Hz", m.settling_freq_hz);
            println!("losses      {:.3} kWh", m.total_losses_kwh);
            if let Some(e) = m.agc_nrmse {
                println!("agc nrmse   {:.4} %", e * 100.0);
            }
            println!("stable      {}", m.stable);
            Ok(if m.stable { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Cmd::Validate { config, overrides } => match Scenario::load(&config, &overrides) {
            Ok(scn) => {
                tdcosim::cosim::assemble(&scn)?;
                println!("{}: ok", config.display());
                Ok(ExitCode::SUCCESS)
            }
            Err(e) => {
                eprintln!("{e}");
                Ok(ExitCode::from(1))
            }
        },
        Cmd::Compare { run_a, run_b, out } => {
            let c = compare_runs(&run_a, &run_b)?;
            if let Some(p) = out {
                c.write_csv(&p).with_context(|| format!("writing {}", p.display()))?;
            }
            println!("samples                 {}{}", c.t_s.len(), if c.truncated { " (truncated to common span)" } else { "" });
            println!("delivered offset A-B    {:.6} MW", c.mean_delivered_offset_mw);
            println!("loss increase B-A       {:.6} kW", c.mean_loss_increase_kw);
            println!("max freq A / B          {:.4} / {:.4} Hz", c.max_freq_a_hz, c.max_freq_b_hz);
            println!("min freq A / B          {:.4} / {:.4} Hz", c.min_freq_a_hz, c.min_freq_b_hz);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::GenAgc { seed, duration, interval, out } => {
            let sig = SyntheticAgc { duration_s: duration, interval_s: interval, ..SyntheticAgc::default() }.generate(seed)?;
            sig.write_csv(&out)?;
            println!("{} samples -> {}", sig.samples().len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
