//! Networked KLJN session: Alice, Bob and the wire emulator run as separate
//! TCP endpoints in lockstep, with an optional tap for Eve.
//!
//! Each period starts with both parties announcing their resistor to the
//! channel, which answers with the warm-up length. Source samples then go to
//! the channel in blocks; the channel steps the loop solver and returns each
//! party its own end voltage and current. The parties publish those on the
//! authenticated compare link and check every sample against the peer's.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::ops::Range;
use std::time::{Duration, Instant};

use kljn_core::protocol::SessionConfig;

mod channel;
mod eve;
pub mod frame;
mod link;
mod party;

pub use channel::{run_channel, ChannelMode, ChannelReport};
pub use eve::{run_eve, EveLog, EveMode};
pub use frame::Role;
pub use link::FaultInjector;
pub use party::{run_party, CompareEndpoint};

/// Samples per frame sent by a party; replies carry twice as many values.
pub const BLOCK_SAMPLES: usize = 512;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("timed out")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("authentication failed at bit {bit}, block {block}")]
    Authentication { bit: usize, block: usize },
    #[error("session aborted at bit {bit}")]
    Aborted { bit: usize },
    #[error(transparent)]
    Core(#[from] kljn_core::Error),
}

/// Settings shared by every endpoint of one session.
#[derive(Clone, Debug)]
pub struct NetConfig {
    pub session: SessionConfig,
    pub session_id: u64,
    pub timeout: Duration,
    /// Fraction of outgoing data frames corrupted on purpose.
    pub fault_rate: f64,
    pub fault_seed: u64,
}

impl NetConfig {
    pub fn new(session: SessionConfig, session_id: u64) -> Self {
        Self { session, session_id, timeout: DEFAULT_TIMEOUT, fault_rate: 0.0, fault_seed: 0 }
    }

    fn faults(&self, lane: u64) -> Option<FaultInjector> {
        (self.fault_rate > 0.0).then(|| FaultInjector::new(self.fault_rate, self.fault_seed, lane))
    }
}

/// Sample ranges of the blocks of one period.
pub fn blocks(samples_per_bit: usize) -> impl Iterator<Item = (usize, Range<usize>)> {
    (0..samples_per_bit.div_ceil(BLOCK_SAMPLES)).map(move |b| {
        (b, b * BLOCK_SAMPLES..((b + 1) * BLOCK_SAMPLES).min(samples_per_bit))
    })
}

fn interleave(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).flat_map(|(x, y)| [*x, *y]).collect()
}

fn split_pairs(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    v.chunks_exact(2).map(|p| (p[0], p[1])).unzip()
}

fn accept_within(listener: &TcpListener, timeout: Duration) -> Result<TcpStream, NetError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let stream = loop {
        match listener.accept() {
            Ok((s, _)) => break s,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(NetError::Timeout);
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    };
    stream.set_nonblocking(false)?;
    Ok(stream)
}

/// Reads a local address from a `host:port` string.
pub fn parse_addr(s: &str) -> Result<SocketAddr, NetError> {
    use std::net::ToSocketAddrs;
    s.to_socket_addrs()?.next().ok_or_else(|| NetError::Protocol(format!("no address for {s}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_period() {
        let b: Vec<_> = blocks(1100).collect();
        assert_eq!(b, vec![(0, 0..512), (1, 512..1024), (2, 1024..1100)]);
        assert_eq!(blocks(4096).count(), 8);
    }

    #[test]
    fn pairs_roundtrip() {
        let v = interleave(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(v, vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(split_pairs(&v), (vec![1.0, 2.0], vec![3.0, 4.0]));
    }
}
