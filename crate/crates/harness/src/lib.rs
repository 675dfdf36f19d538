//! Configuration-driven Monte Carlo runner for the KLJN simulator, and the
//! report formats behind the `kljn` command line.

pub mod experiment;
pub mod oracles;
pub mod schema;

pub use experiment::{run_experiment, Experiment, ExperimentRow, ExperimentSpec, Sweep};

/// `git describe` of the source tree this binary was built from.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}
