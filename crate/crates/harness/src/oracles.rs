//! Analytic-versus-simulated tables for the BB84 baseline and XOR privacy
//! amplification.

use anyhow::{bail, Result};
use kljn_core::privacy::{amplified_len, empirical_leak, predict_leak, predicted_guess_probability, LeakModel};
use kljn_core::qkd::{detection_probability, simulate_intercept_resend, EveBasis};
use kljn_core::rng::{stream, Party};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bb84Row {
    pub n: usize,
    pub analytic: f64,
    pub empirical: f64,
    /// 95 % half-width of the empirical rate.
    pub ci: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AmplifyRow {
    pub p: f64,
    pub steps: u32,
    pub bits_before: usize,
    pub bits_after: usize,
    /// Advantage `|2p - 1|` after `steps` XOR halvings.
    pub predicted: f64,
    pub empirical: f64,
    pub ci: f64,
}

/// Parses `a..b` (inclusive) or a single number.
pub fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?, b.trim_start_matches('=').trim().parse()?),
        None => {
            let n = s.trim().parse()?;
            (n, n)
        }
    };
    if lo == 0 || hi < lo {
        bail!("bad range `{s}`: need 1 <= start <= end");
    }
    Ok(lo..=hi)
}

/// Intercept-resend detection rate per qubit count `n`, one RNG stream per `n`.
pub fn bb84_rows(ns: std::ops::RangeInclusive<usize>, trials: usize, seed: u64) -> Result<Vec<Bb84Row>> {
    ns.collect::<Vec<_>>()
        .into_par_iter()
        .map(|n| {
            let mut rng = stream(seed, n as u64, 0, Party::Harness);
            let analytic = detection_probability(n as i64)?;
            let empirical = simulate_intercept_resend(n, trials, EveBasis::Random, &mut rng)?;
            let ci = Z95 * (empirical * (1.0 - empirical) / trials as f64).sqrt();
            Ok(Bb84Row { n, analytic, empirical, ci })
        })
        .collect()
}

/// Synthetic key of `bits` bits and a guess stream right with probability
/// `p`, amplified `1..=steps` times.
pub fn amplify_rows(ps: &[f64], steps: u32, bits: usize, seed: u64) -> Result<Vec<AmplifyRow>> {
    if bits < 2 || steps == 0 {
        bail!("need at least 2 bits and 1 step");
    }
    let mut rows = Vec::new();
    for (k, &p) in ps.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            bail!("guess probability {p} outside [0, 1]");
        }
        let mut rng = stream(seed, k as u64, 0, Party::Harness);
        let key: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
        let guesses: Vec<bool> = key.iter().map(|&b| if rng.random::<f64>() < p { b } else { !b }).collect();
        for n in 1..=steps {
            let after = amplified_len(bits, n);
            if after == 0 {
                break;
            }
            let q = predicted_guess_probability(p, n);
            rows.push(AmplifyRow {
                p,
                steps: n,
                bits_before: bits,
                bits_after: after,
                predicted: predict_leak(p, n, LeakModel::Advantage)?,
                empirical: empirical_leak(&key, &guesses, n)?,
                ci: Z95 * 2.0 * (q * (1.0 - q) / after as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}
