use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kljn_core::attacks::Waveform;
use kljn_harness::oracles::{amplify_rows, bb84_rows, parse_range};
use kljn_harness::schema::{amplify_csv, bb84_csv, read_table, sweep_csv};
use kljn_harness::{git_describe, run_experiment, Experiment, ExperimentSpec};
use kljn_netwire::{
    parse_addr, run_channel, run_eve, run_party, ChannelMode, CompareEndpoint, EveMode, NetConfig, Role,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kljn", version, about = "KLJN key exchange simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the experiment's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path prefix.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct Net {
    #[arg(long, default_value_t = 1)]
    session_id: u64,
    /// Fraction of outgoing frames corrupted on purpose.
    #[arg(long, default_value_t = 0.0)]
    fault_rate: f64,
    /// Socket timeout in seconds.
    #[arg(long, default_value_t = 5.0)]
    timeout: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run sessions over the experiment's sweep, ignoring any attack.
    Simulate(Common),
    /// Run the experiment's attack over its sweep.
    AttackSweep(Common),
    /// XOR privacy amplification against a synthetic guess stream.
    Amplify {
        #[command(flatten)]
        common: Common,
        /// Eve's per-bit guess probabilities.
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.75,0.9")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        steps: u32,
        #[arg(long, default_value_t = 1_000_000)]
        bits: usize,
    },
    /// BB84 intercept-resend detection probability against 1 - (3/4)^n.
    Bb84Oracle {
        #[command(flatten)]
        common: Common,
        /// Qubit counts, `a..b` inclusive.
        #[arg(long, default_value = "1..10")]
        n: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Alice over TCP. Listens on --compare for Bob.
    NetAlice(Party),
    /// Bob over TCP. Connects to Alice's --compare address.
    NetBob(Party),
    /// Wire emulator.
    NetChannel {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: Net,
        #[arg(long)]
        listen: String,
        /// Accept an Eve tap.
        #[arg(long)]
        eve: bool,
        /// Replace the wire with a man-in-the-middle splitter seeded so.
        #[arg(long)]
        splitter_seed: Option<u64>,
    },
    /// Eve at the wire midpoint.
    NetEve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: Net,
        #[arg(long)]
        connect: String,
        /// Injected current relative to the mixed-state RMS; passive if absent.
        #[arg(long)]
        inject: Option<f64>,
    },
    /// Print a CSV produced by this tool after checking its schema.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Party {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    net: Net,
    /// Channel address.
    #[arg(long)]
    connect: String,
    #[arg(long)]
    compare: String,
    #[arg(long)]
    auth_key_file: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let path = common.config.as_ref().context("--config is required")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let mut spec =
        ExperimentSpec::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// `--out`, else the experiment's `output`, else the config path without extension.
fn prefix(common: &Common, spec_output: Option<&str>, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| spec_output.map(PathBuf::from))
        .or_else(|| common.config.as_ref().map(|c| c.with_extension("")))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_experiment(exp: &Experiment, command: &str, out: &Path) -> Result<()> {
    write(&with_suffix(out, ".csv"), &sweep_csv(&exp.rows))?;
    let points: Vec<_> = exp
        .rows
        .iter()
        .map(|r| json!({ "param": r.param, "wall_seconds": r.wall_seconds, "amplification": r.amplification }))
        .collect();
    let summary = json!({
        "schema": "kljn-summary v1",
        "command": command,
        "git_describe": git_describe(),
        "spec": exp.spec,
        "points": points,
        "wall_seconds": exp.wall_seconds,
    });
    write(&with_suffix(out, ".summary.json"), &serde_json::to_string_pretty(&summary)?)
}

fn experiment(common: &Common, command: &str, with_attack: bool) -> Result<()> {
    let mut spec = load_spec(common)?;
    if with_attack && spec.attack.is_none() {
        bail!("attack-sweep needs an `attack` in the experiment");
    }
    if !with_attack {
        spec.attack = None;
    }
    let out = prefix(common, spec.output.as_deref(), &spec.name);
    let exp = run_experiment(&spec)?;
    write_experiment(&exp, command, &out)?;
    if !common.quiet {
        let leak: Vec<String> = exp
            .rows
            .iter()
            .map(|r| r.attack.as_ref().map_or(format!("{:.4}", r.sift_fraction), |a| format!("{:.4}", a.success_rate)))
            .collect();
        let what = if with_attack { "p" } else { "sift" };
        println!(
            "{}: {} points, {what} [{}], {:.1} s -> {}",
            spec.name,
            exp.rows.len(),
            leak.join(", "),
            exp.wall_seconds,
            with_suffix(&out, ".csv").display()
        );
    }
    Ok(())
}

fn net_config(common: &Common, net: &Net) -> Result<(NetConfig, u64)> {
    let spec = load_spec(common)?;
    let cfg = NetConfig {
        timeout: std::time::Duration::from_secs_f64(net.timeout),
        fault_rate: net.fault_rate,
        fault_seed: spec.seed,
        ..NetConfig::new(spec.base, net.session_id)
    };
    Ok((cfg, spec.seed))
}

fn party(role: Role, p: &Party) -> Result<()> {
    let (cfg, seed) = net_config(&p.common, &p.net)?;
    let key = std::fs::read(&p.auth_key_file)
        .with_context(|| format!("cannot read auth key {}", p.auth_key_file.display()))?;
    let compare = match role {
        Role::Alice => CompareEndpoint::Listen(
            TcpListener::bind(&p.compare).with_context(|| format!("cannot listen on {}", p.compare))?,
        ),
        _ => CompareEndpoint::Connect(parse_addr(&p.compare)?),
    };
    let result = run_party(role, parse_addr(&p.connect)?, compare, &cfg, seed, &key)?;
    let name = if role == Role::Alice { "alice" } else { "bob" };
    if let Some(out) = &p.common.out {
        write(&with_suffix(out, &format!(".{name}.json")), &serde_json::to_string_pretty(&result)?)?;
    }
    if !p.common.quiet {
        println!(
            "{name}: {} bits, {} sifted, {} alarms{}",
            result.bits_run,
            result.sifted_indices.len(),
            result.alarms.len(),
            result.aborted_at.map(|b| format!(", aborted at bit {b}")).unwrap_or_default()
        );
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(c) => experiment(&c, "simulate", false),
        Command::AttackSweep(c) => experiment(&c, "attack-sweep", true),
        Command::Amplify { common, p, steps, bits } => {
            let started = Instant::now();
            let rows = amplify_rows(&p, steps, bits, common.seed.unwrap_or(0))?;
            let out = prefix(&common, None, "amplify");
            write(&with_suffix(&out, ".csv"), &amplify_csv(&rows))?;
            if !common.quiet {
                println!("amplify: {} rows, {:.1} s", rows.len(), started.elapsed().as_secs_f64());
            }
            Ok(())
        }
        Command::Bb84Oracle { common, n, trials } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let started = Instant::now();
            let rows = bb84_rows(parse_range(&n)?, trials, common.seed.unwrap_or(0))?;
            let out = prefix(&common, None, "bb84");
            write(&with_suffix(&out, ".csv"), &bb84_csv(&rows))?;
            if !common.quiet {
                println!("bb84-oracle: {} rows, {:.1} s", rows.len(), started.elapsed().as_secs_f64());
            }
            Ok(())
        }
        Command::NetAlice(p) => party(Role::Alice, &p),
        Command::NetBob(p) => party(Role::Bob, &p),
        Command::NetChannel { common, net, listen, eve, splitter_seed } => {
            let (cfg, _) = net_config(&common, &net)?;
            let listener = TcpListener::bind(&listen).with_context(|| format!("cannot listen on {listen}"))?;
            let mode = splitter_seed.map_or(ChannelMode::Wire, |seed| ChannelMode::Splitter { seed });
            let report = run_channel(&listener, &cfg, mode, eve)?;
            if !common.quiet {
                println!(
                    "channel: {} bits, {} retransmissions{}",
                    report.bits,
                    report.retransmissions,
                    report.aborted_at.map(|b| format!(", aborted at bit {b}")).unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::NetEve { common, net, connect, inject } => {
            let (cfg, seed) = net_config(&common, &net)?;
            let mode = inject.map_or(EveMode::Passive, |amplitude| EveMode::Inject {
                amplitude,
                waveform: Waveform::Gaussian,
            });
            let log = run_eve(parse_addr(&connect)?, &cfg, mode, seed)?;
            if !common.quiet {
                println!(
                    "eve: {} periods observed{}",
                    log.periods.len(),
                    log.aborted_at.map(|b| format!(", session aborted at bit {b}")).unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::Report { input } => {
            let text =
                std::fs::read_to_string(&input).with_context(|| format!("cannot read {}", input.display()))?;
            let table = read_table(&text).with_context(|| format!("{}", input.display()))?;
            print!("{}", table.render());
            Ok(())
        }
    }
}
