use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use kljn_core::rng::{stream, Party, StreamRng};
use rand::Rng;

use crate::frame::{
    corruptible_range, read_incoming, ControlFrame, ControlKind, Incoming, Role, SampleFrame,
};
use crate::NetError;

/// Flips one bit in a fraction of outgoing frames.
#[derive(Clone, Debug)]
pub struct FaultInjector {
    rate: f64,
    rng: StreamRng,
}

impl FaultInjector {
    pub fn new(rate: f64, seed: u64, lane: u64) -> Self {
        Self { rate, rng: stream(seed, lane, 0, Party::Harness) }
    }

    fn maybe_corrupt(&mut self, frame: &mut [u8]) -> bool {
        if self.rate <= 0.0 || self.rng.random::<f64>() >= self.rate {
            return false;
        }
        let range = corruptible_range(frame);
        let at = self.rng.random_range(range);
        frame[at] ^= 1 << self.rng.random_range(0..8);
        true
    }
}

/// One end of a lockstep link. Every frame is answered with an ACK or, if
/// its CRC fails, a NACK, and the sender repeats it until acknowledged.
pub struct Link {
    stream: TcpStream,
    role: Role,
    session_id: u64,
    faults: Option<FaultInjector>,
    /// Corrupt frames received and re-requested.
    pub retransmissions: usize,
}

impl Link {
    pub fn new(stream: TcpStream, role: Role, session_id: u64, timeout: Duration) -> Result<Self, NetError> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream, role, session_id, faults: None, retransmissions: 0 })
    }

    pub fn with_faults(mut self, faults: Option<FaultInjector>) -> Self {
        self.faults = faults;
        self
    }

    fn send_bytes(&mut self, bytes: Vec<u8>) -> Result<(), NetError> {
        loop {
            let mut wire = bytes.clone();
            if let Some(f) = self.faults.as_mut() {
                f.maybe_corrupt(&mut wire);
            }
            self.stream.write_all(&wire)?;
            match read_incoming(&mut self.stream)? {
                Incoming::Control(c) if c.kind == ControlKind::Ack => return Ok(()),
                Incoming::Control(c) if c.kind == ControlKind::Nack => continue,
                Incoming::Control(c) if c.kind == ControlKind::Abort => {
                    return Err(NetError::Aborted { bit: c.bit_index as usize })
                }
                other => return Err(NetError::Protocol(format!("expected acknowledgement, got {other:?}"))),
            }
        }
    }

    pub fn send_sample(&mut self, bit: usize, block: usize, payload: Vec<f64>) -> Result<(), NetError> {
        let header = crate::frame::Header {
            role: self.role,
            session_id: self.session_id,
            bit_index: bit as u32,
            block_index: block as u16,
        };
        let bytes = SampleFrame { header, payload }.encode()?;
        self.send_bytes(bytes)
    }

    pub fn send_control(&mut self, kind: ControlKind, bit: usize, value: f64) -> Result<(), NetError> {
        let f = ControlFrame { role: self.role, session_id: self.session_id, kind, bit_index: bit as u32, value };
        self.send_bytes(f.encode())
    }

    /// Best-effort notice that this side is leaving; errors are ignored.
    pub fn send_abort(&mut self, bit: usize) {
        let f = ControlFrame {
            role: self.role,
            session_id: self.session_id,
            kind: ControlKind::Abort,
            bit_index: bit as u32,
            value: 0.0,
        };
        let _ = self.stream.write_all(&f.encode());
    }

    /// ACKs and NACKs are never corrupted, so a retransmission cannot loop.
    fn send_reply(&mut self, kind: ControlKind) -> Result<(), NetError> {
        let f = ControlFrame { role: self.role, session_id: self.session_id, kind, bit_index: 0, value: 0.0 };
        self.stream.write_all(&f.encode())?;
        Ok(())
    }

    /// Next valid frame from the peer. Aborts are passed through unanswered.
    pub fn recv(&mut self) -> Result<Incoming, NetError> {
        loop {
            match read_incoming(&mut self.stream)? {
                Incoming::Corrupt => {
                    self.retransmissions += 1;
                    self.send_reply(ControlKind::Nack)?;
                }
                Incoming::Control(c) if c.kind == ControlKind::Abort => return Ok(Incoming::Control(c)),
                Incoming::Control(c) if matches!(c.kind, ControlKind::Ack | ControlKind::Nack) => {
                    return Err(NetError::Protocol(format!("unsolicited {:?}", c.kind)));
                }
                other => {
                    self.check_session(&other)?;
                    self.send_reply(ControlKind::Ack)?;
                    return Ok(other);
                }
            }
        }
    }

    fn check_session(&self, f: &Incoming) -> Result<(), NetError> {
        let sid = match f {
            Incoming::Sample(s) => s.header.session_id,
            Incoming::Control(c) => c.session_id,
            Incoming::Corrupt => return Ok(()),
        };
        if sid != self.session_id {
            return Err(NetError::Protocol(format!("session id {sid} != {}", self.session_id)));
        }
        Ok(())
    }

    /// Receives a sample frame for `(bit, block)`. Control frames other than
    /// an abort are protocol errors.
    pub fn recv_sample(&mut self, bit: usize, block: usize) -> Result<SampleFrame, NetError> {
        match self.recv()? {
            Incoming::Sample(s) => {
                if s.header.bit_index as usize != bit || s.header.block_index as usize != block {
                    return Err(NetError::Protocol(format!(
                        "expected frame ({bit}, {block}), got ({}, {})",
                        s.header.bit_index, s.header.block_index
                    )));
                }
                Ok(s)
            }
            Incoming::Control(c) if c.kind == ControlKind::Abort => {
                Err(NetError::Aborted { bit: c.bit_index as usize })
            }
            other => Err(NetError::Protocol(format!("expected sample frame, got {other:?}"))),
        }
    }

    /// Receives a control frame of the given kind for `bit`.
    pub fn recv_control(&mut self, kind: ControlKind, bit: usize) -> Result<ControlFrame, NetError> {
        match self.recv()? {
            Incoming::Control(c) if c.kind == kind && c.bit_index as usize == bit => Ok(c),
            Incoming::Control(c) if c.kind == ControlKind::Abort => {
                Err(NetError::Aborted { bit: c.bit_index as usize })
            }
            other => Err(NetError::Protocol(format!("expected {kind:?} for bit {bit}, got {other:?}"))),
        }
    }
}

/// Connects, retrying until `timeout` so endpoints may start in any order.
pub fn connect_retry(addr: SocketAddr, timeout: Duration) -> Result<TcpStream, NetError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect_timeout(&addr, timeout) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                let _ = e;
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => return Err(NetError::Timeout),
        }
    }
}
