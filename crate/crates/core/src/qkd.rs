//! BB84 intercept-resend baseline.
//!
//! Qubits are `(basis, value)` pairs. Measuring in the preparation basis
//! returns the value; measuring in the other basis returns a fair coin and
//! re-prepares the qubit in the measurement basis. Every intercepted bit is
//! a checked bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Probability that intercepting `n` bits is noticed: `1 - (3/4)^n`.
pub fn detection_probability(n: i64) -> Result<f64> {
    if n < 0 {
        return Err(invalid(format!("bit count must be non-negative, got {n}")));
    }
    let n = i32::try_from(n).unwrap_or(i32::MAX);
    Ok(1.0 - 0.75f64.powi(n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveBasis {
    #[default]
    Random,
    /// Eve always knows Alice's basis; nothing is disturbed.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterceptResult {
    pub n_bits: usize,
    pub detected: bool,
    pub disturbed_count: usize,
}

fn measure(basis: bool, value: bool, in_basis: bool, rng: &mut impl Rng) -> bool {
    if basis == in_basis {
        value
    } else {
        rng.random()
    }
}

/// One intercept-resend run over `n` bits.
pub fn intercept_resend_once(n: usize, eve: EveBasis, rng: &mut impl Rng) -> InterceptResult {
    let mut disturbed = 0;
    for _ in 0..n {
        let alice_basis: bool = rng.random();
        let value: bool = rng.random();
        let eve_basis = match eve {
            EveBasis::Random => rng.random(),
            EveBasis::Oracle => alice_basis,
        };
        let eve_value = measure(alice_basis, value, eve_basis, rng);
        let bob_value = measure(eve_basis, eve_value, alice_basis, rng);
        disturbed += (bob_value != value) as usize;
    }
    InterceptResult { n_bits: n, detected: disturbed > 0, disturbed_count: disturbed }
}

/// Fraction of `trials` runs in which the interception was detected.
pub fn simulate_intercept_resend(
    n: usize,
    trials: usize,
    eve: EveBasis,
    rng: &mut impl Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let detected = (0..trials).filter(|_| intercept_resend_once(n, eve, rng).detected).count();
    Ok(detected as f64 / trials as f64)
}
