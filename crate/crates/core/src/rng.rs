//! Deterministic random streams.
//!
//! All randomness comes from ChaCha8. A stream is identified by
//! `(seed, point, trial, party)`: the first three are folded into the
//! 256-bit ChaCha key with SplitMix64, and the party selects the ChaCha
//! stream number. A party's draws therefore never depend on how much another
//! party consumed, nor on the order in which trials are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
    Eve,
    Harness,
}

impl Party {
    fn stream_id(self) -> u64 {
        match self {
            Party::Alice => 1,
            Party::Bob => 2,
            Party::Eve => 3,
            Party::Harness => 4,
        }
    }
}

/// One step of SplitMix64.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, point: u64, trial: u64, party: Party) -> StreamRng {
    let mut state = seed;
    splitmix64(&mut state);
    state ^= splitmix64(&mut point.wrapping_add(0xA076_1D64_78BD_642F));
    splitmix64(&mut state);
    state ^= splitmix64(&mut trial.wrapping_add(0xE703_7ED1_A0B4_28DB));

    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(party.stream_id());
    rng
}

/// The per-party generators used by one session.
#[derive(Clone, Debug)]
pub struct SessionRngs {
    pub alice: StreamRng,
    pub bob: StreamRng,
    pub eve: StreamRng,
}

impl SessionRngs {
    pub fn new(seed: u64, point: u64, trial: u64) -> Self {
        Self {
            alice: stream(seed, point, trial, Party::Alice),
            bob: stream(seed, point, trial, Party::Bob),
            eve: stream(seed, point, trial, Party::Eve),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, 0)
    }
}
