use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use kljn_core::attacks::{pool_trials, run_attack, AttackConfig, AttackReport, AttackTrial};
use kljn_core::privacy::{empirical_leak, AmplificationReport, LeakModel};
use kljn_core::protocol::{run_session, SessionConfig, SessionResult};
use kljn_core::rng::SessionRngs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One experiment: a base session, an optional sweep over one parameter and
/// an optional attack, each point repeated `trials_per_point` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: SessionConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub amplification_steps: Option<u32>,
    pub trials_per_point: usize,
    pub seed: u64,
    /// Output path prefix; `<prefix>.csv` and `<prefix>.summary.json`.
    #[serde(default)]
    pub output: Option<String>,
}

/// Dotted path into `{"base": ..., "attack": ...}`, e.g. `base.wire.r_wire`
/// or `attack.params.temperature_ratio`. Paths without either root are
/// taken relative to `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub path: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    /// Attack name, or `session` without an attack.
    pub kind: String,
    pub param: Option<f64>,
    /// Sifted bits the row's statistics rest on.
    pub n_trials: usize,
    pub attack: Option<AttackReport>,
    /// Sessions with at least one alarm.
    pub alarms: usize,
    pub ber: f64,
    pub sift_fraction: f64,
    pub amplification: Option<AmplificationReport>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub rows: Vec<ExperimentRow>,
    pub wall_seconds: f64,
}

/// Swept value, session and attack for one sweep point.
pub type Point = (Option<f64>, SessionConfig, Option<AttackConfig>);

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        Ok(spec)
    }

    /// Session and attack for every point, validated.
    pub fn points(&self) -> Result<Vec<Point>> {
        if self.trials_per_point == 0 {
            bail!("trials_per_point must be at least 1");
        }
        let points = match &self.sweep {
            None => vec![(None, self.base.clone(), self.attack)],
            Some(sweep) => {
                if sweep.values.is_empty() {
                    bail!("empty sweep");
                }
                let doc = serde_json::json!({ "base": self.base, "attack": self.attack });
                sweep
                    .values
                    .iter()
                    .map(|&v| {
                        let mut d = doc.clone();
                        set_path(&mut d, &sweep.path, v)?;
                        let base = serde_json::from_value(d["base"].take())
                            .with_context(|| format!("{} = {v}", sweep.path))?;
                        let attack = serde_json::from_value(d["attack"].take())
                            .with_context(|| format!("{} = {v}", sweep.path))?;
                        Ok((Some(v), base, attack))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for (v, cfg, attack) in &points {
            let at = v.map(|v| format!(" at {v}")).unwrap_or_default();
            cfg.validate().with_context(|| format!("invalid session{at}"))?;
            if let Some(a) = attack {
                a.validate().with_context(|| format!("invalid attack{at}"))?;
            }
        }
        Ok(points)
    }
}

fn set_path(doc: &mut Value, path: &str, v: f64) -> Result<()> {
    let unknown = || anyhow!("unknown sweep path `{path}`");
    let mut keys: Vec<&str> = path.split('.').collect();
    if !matches!(keys[0], "base" | "attack") {
        keys.insert(0, "base");
    }
    let (leaf, parents) = keys.split_last().ok_or_else(unknown)?;
    let mut node = doc;
    for k in parents {
        node = node.as_object_mut().and_then(|o| o.get_mut(*k)).ok_or_else(unknown)?;
    }
    let slot = node.as_object_mut().and_then(|o| o.get_mut(*leaf)).ok_or_else(unknown)?;
    *slot = match slot {
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            if v.fract() != 0.0 || v < 0.0 {
                bail!("sweep path `{path}` takes non-negative integers, got {v}");
            }
            Value::from(v as u64)
        }
        Value::Number(_) => Value::from(v),
        _ => bail!("sweep path `{path}` is not numeric"),
    };
    Ok(())
}

enum Outcome {
    Session(SessionResult),
    Attack(Box<AttackTrial>),
}

impl Outcome {
    fn session(&self) -> &SessionResult {
        match self {
            Outcome::Session(s) => s,
            Outcome::Attack(t) => &t.session,
        }
    }
}

/// Runs every (point, trial) pair in parallel. Trial `t` of point `p` draws
/// from `SessionRngs::new(seed, p, t)`, so results do not depend on the
/// thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Experiment> {
    let start = Instant::now();
    let points = spec.points()?;
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..spec.trials_per_point).map(move |t| (p, t))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(p, t)| {
            let began = Instant::now();
            let (_, cfg, attack) = &points[p];
            let rngs = SessionRngs::new(spec.seed, p as u64, t as u64);
            let out = match attack {
                Some(a) => Outcome::Attack(Box::new(run_attack(a, cfg, rngs)?)),
                None => Outcome::Session(run_session(cfg, rngs)?),
            };
            Ok((out, began.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>, kljn_core::Error>>()?;

    let rows = outcomes
        .chunks(spec.trials_per_point)
        .zip(&points)
        .map(|(trials, (param, _, attack))| aggregate(trials, *param, attack.as_ref(), spec.amplification_steps))
        .collect::<Result<Vec<_>>>()?;
    Ok(Experiment { spec: spec.clone(), rows, wall_seconds: start.elapsed().as_secs_f64() })
}

fn aggregate(
    trials: &[(Outcome, f64)],
    param: Option<f64>,
    attack: Option<&AttackConfig>,
    steps: Option<u32>,
) -> Result<ExperimentRow> {
    let (mut sifted, mut bits, mut errors, mut alarms) = (0, 0, 0, 0);
    for (o, _) in trials {
        let s = o.session();
        sifted += s.sifted_indices.len();
        bits += s.bits_run;
        errors += s.shared_key_alice.bits().iter().zip(s.shared_key_bob.bits()).filter(|(a, b)| a != b).count();
        alarms += !s.alarms.is_empty() as usize;
    }
    let attack_trials: Vec<&AttackTrial> = trials
        .iter()
        .filter_map(|(o, _)| match o {
            Outcome::Attack(t) => Some(t.as_ref()),
            Outcome::Session(_) => None,
        })
        .collect();
    let report = match attack {
        Some(_) => Some(pool_trials(attack_trials.iter().copied())?),
        None => None,
    };
    let amplification = match (steps, &report) {
        (Some(n), Some(r)) => {
            let truth: Vec<bool> = attack_trials.iter().flat_map(|t| t.truth.iter().copied()).collect();
            let guesses: Vec<bool> = attack_trials.iter().flat_map(|t| t.guesses.iter().copied()).collect();
            let mut a = AmplificationReport::new(truth.len(), n, r.success_rate, LeakModel::Advantage)?;
            a.empirical_leak = empirical_leak(&truth, &guesses, n).ok();
            Some(a)
        }
        _ => None,
    };
    Ok(ExperimentRow {
        kind: attack.map_or("session", |a| a.kind.name()).to_string(),
        param,
        n_trials: report.as_ref().map_or(sifted, |r| r.n_trials),
        attack: report,
        alarms,
        ber: if sifted == 0 { 0.0 } else { errors as f64 / sifted as f64 },
        sift_fraction: if bits == 0 { 0.0 } else { sifted as f64 / bits as f64 },
        amplification,
        wall_seconds: trials.iter().map(|(_, w)| w).sum(),
    })
}
