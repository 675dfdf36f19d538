//! Privacy amplification by XOR-ing consecutive bit pairs.
//!
//! Each step maps `k[2i], k[2i+1]` to `k[2i] ^ k[2i+1]`, halving the key (a
//! trailing odd bit is dropped). Two leak models predict Eve's knowledge
//! after `N` steps:
//!
//! * certainty: Eve knows a fraction of the bits exactly and nothing about
//!   the rest; she knows an XOR only if she knows both inputs, so the known
//!   fraction goes `f -> f^2`.
//! * advantage: Eve guesses every bit correctly with probability `p`; she
//!   guesses the XOR correctly with `p^2 + (1-p)^2`, i.e. the advantage
//!   `2p - 1` squares every step.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub fn xor_halve(key: &[bool]) -> Result<Vec<bool>> {
    if key.len() < 2 {
        return Err(Error::KeyExhausted { len: key.len(), steps: 1 });
    }
    Ok(key.chunks_exact(2).map(|p| p[0] ^ p[1]).collect())
}

pub fn amplify(key: &[bool], steps: u32) -> Result<Vec<bool>> {
    if steps >= usize::BITS || key.len() >> steps == 0 {
        return Err(Error::KeyExhausted { len: key.len(), steps });
    }
    let mut out = key.to_vec();
    for _ in 0..steps {
        out = xor_halve(&out)?;
    }
    Ok(out)
}

/// Key length after `steps` floor-halvings.
pub fn amplified_len(len: usize, steps: u32) -> usize {
    (0..steps).fold(len, |n, _| n / 2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakModel {
    /// Input: fraction of bits Eve knows. Output: the same after amplification.
    Certainty,
    /// Input: Eve's per-bit guess probability `p`. Output: her advantage
    /// `|2p_N - 1|` after amplification.
    Advantage,
}

pub fn predict_leak(initial: f64, steps: u32, model: LeakModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&initial) {
        return Err(invalid(format!("initial leak {initial} outside [0, 1]")));
    }
    let base = match model {
        LeakModel::Certainty => initial,
        LeakModel::Advantage => (2.0 * initial - 1.0).abs(),
    };
    Ok((0..steps).fold(base, |x, _| x * x))
}

/// Eve's guess probability after amplification under the advantage model.
pub fn predicted_guess_probability(p: f64, steps: u32) -> f64 {
    (0..steps).fold(p, |p, _| p * p + (1.0 - p) * (1.0 - p))
}

/// Smallest step count that brings the predicted leak to `target` or below.
pub fn steps_needed(initial: f64, target: f64, model: LeakModel) -> Option<u32> {
    (0..usize::BITS).find(|&n| predict_leak(initial, n, model).is_ok_and(|l| l <= target))
}

/// Eve's agreement advantage `2p - 1` after amplifying both streams.
pub fn empirical_leak(alice_key: &[bool], eve_guesses: &[bool], steps: u32) -> Result<f64> {
    if alice_key.len() != eve_guesses.len() {
        return Err(Error::LengthMismatch { left: alice_key.len(), right: eve_guesses.len() });
    }
    let a = amplify(alice_key, steps)?;
    let e = amplify(eve_guesses, steps)?;
    let agree = a.iter().zip(&e).filter(|(x, y)| x == y).count();
    Ok(2.0 * agree as f64 / a.len() as f64 - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationReport {
    pub steps: u32,
    pub key_len_before: usize,
    pub key_len_after: usize,
    pub model: LeakModel,
    pub predicted_leak: f64,
    pub empirical_leak: Option<f64>,
    pub slowdown: u64,
}

impl AmplificationReport {
    pub fn new(key_len: usize, steps: u32, initial: f64, model: LeakModel) -> Result<Self> {
        Ok(Self {
            steps,
            key_len_before: key_len,
            key_len_after: amplified_len(key_len, steps),
            model,
            predicted_leak: predict_leak(initial, steps, model)?,
            empirical_leak: None,
            slowdown: 1u64 << steps,
        })
    }
}
