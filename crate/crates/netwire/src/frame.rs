//! Wire formats. All integers and floats are little-endian.
//!
//! Sample frame (`KLJN`):
//!
//! | offset | size | field       |
//! |--------|------|-------------|
//! | 0      | 4    | magic       |
//! | 4      | 1    | version = 1 |
//! | 5      | 1    | role        |
//! | 6      | 8    | session_id  |
//! | 14     | 4    | bit_index   |
//! | 18     | 2    | block_index |
//! | 20     | 2    | count       |
//! | 22     | 8n   | payload     |
//! | 22+8n  | 4    | crc32       |
//!
//! A compare frame has the same header and payload followed by a 32-byte
//! HMAC-SHA256 tag over header and payload instead of the CRC. Control
//! frames (`KLJX`) carry a kind byte, a bit index and one f64 value, and end
//! in a CRC like sample frames.

use std::io::{self, Read};

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::NetError;

pub const MAGIC: [u8; 4] = *b"KLJN";
pub const CONTROL_MAGIC: [u8; 4] = *b"KLJX";
pub const VERSION: u8 = 1;
pub const MAX_COUNT: usize = 1024;
pub const HEADER_LEN: usize = 22;
pub const TAG_LEN: usize = 32;
pub const CONTROL_LEN: usize = 4 + 1 + 1 + 8 + 1 + 4 + 8 + 4;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Alice = 0,
    Bob = 1,
    Channel = 2,
    Eve = 3,
}

impl Role {
    pub fn from_u8(v: u8) -> Option<Role> {
        match v {
            0 => Some(Role::Alice),
            1 => Some(Role::Bob),
            2 => Some(Role::Channel),
            3 => Some(Role::Eve),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub role: Role,
    pub session_id: u64,
    pub bit_index: u32,
    pub block_index: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleFrame {
    pub header: Header,
    pub payload: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareFrame {
    pub header: Header,
    /// Interleaved `(u_end, i_end)` pairs.
    pub payload: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ControlKind {
    Hello = 0,
    /// Party -> channel: start of a period; value = connected resistance.
    Start = 1,
    /// Channel -> party: value = warm-up samples for this period.
    Period = 2,
    Nack = 3,
    Abort = 4,
    Done = 5,
    Ack = 6,
}

impl ControlKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Hello,
            1 => Self::Start,
            2 => Self::Period,
            3 => Self::Nack,
            4 => Self::Abort,
            5 => Self::Done,
            6 => Self::Ack,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlFrame {
    pub role: Role,
    pub session_id: u64,
    pub kind: ControlKind,
    pub bit_index: u32,
    pub value: f64,
}

/// A frame read from a channel link.
#[derive(Clone, Debug, PartialEq)]
pub enum Incoming {
    Sample(SampleFrame),
    Control(ControlFrame),
    /// Framing intact but the CRC did not verify.
    Corrupt,
}

fn put_header(out: &mut Vec<u8>, h: &Header, count: usize) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(h.role as u8);
    out.extend_from_slice(&h.session_id.to_le_bytes());
    out.extend_from_slice(&h.bit_index.to_le_bytes());
    out.extend_from_slice(&h.block_index.to_le_bytes());
    out.extend_from_slice(&(count as u16).to_le_bytes());
}

fn check_count(n: usize) -> Result<(), NetError> {
    if n > MAX_COUNT {
        return Err(NetError::Protocol(format!("payload of {n} values exceeds {MAX_COUNT}")));
    }
    Ok(())
}

impl SampleFrame {
    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        check_count(self.payload.len())?;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len() + 4);
        put_header(&mut out, &self.header, self.payload.len());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }
}

impl CompareFrame {
    pub fn encode(&self, key: &[u8]) -> Result<Vec<u8>, NetError> {
        check_count(self.payload.len())?;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len() + TAG_LEN);
        put_header(&mut out, &self.header, self.payload.len());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tag = tag(key, &out);
        out.extend_from_slice(&tag);
        Ok(out)
    }

    /// Reads one frame and verifies its tag.
    pub fn read(r: &mut impl Read, key: &[u8]) -> Result<CompareFrame, NetError> {
        let mut head = [0u8; HEADER_LEN];
        read_exact(r, &mut head)?;
        if head[..4] != MAGIC {
            return Err(NetError::Protocol("bad compare magic".into()));
        }
        let (header, count) = parse_header(&head)?;
        let mut body = vec![0u8; 8 * count + TAG_LEN];
        read_exact(r, &mut body)?;
        let (payload_bytes, got) = body.split_at(8 * count);
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&head);
        mac.update(payload_bytes);
        if mac.verify_slice(got).is_err() {
            return Err(NetError::Authentication {
                bit: header.bit_index as usize,
                block: header.block_index as usize,
            });
        }
        Ok(CompareFrame { header, payload: floats(payload_bytes) })
    }
}

impl ControlFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CONTROL_LEN);
        out.extend_from_slice(&CONTROL_MAGIC);
        out.push(VERSION);
        out.push(self.role as u8);
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.bit_index.to_le_bytes());
        out.extend_from_slice(&self.value.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

fn tag(key: &[u8], data: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

fn floats(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn parse_header(head: &[u8; HEADER_LEN]) -> Result<(Header, usize), NetError> {
    if head[4] != VERSION {
        return Err(NetError::Protocol(format!("unsupported version {}", head[4])));
    }
    let role = Role::from_u8(head[5]).ok_or_else(|| NetError::Protocol(format!("bad role {}", head[5])))?;
    let count = u16::from_le_bytes([head[20], head[21]]) as usize;
    check_count(count)?;
    let header = Header {
        role,
        session_id: u64::from_le_bytes(head[6..14].try_into().unwrap()),
        bit_index: u32::from_le_bytes(head[14..18].try_into().unwrap()),
        block_index: u16::from_le_bytes([head[18], head[19]]),
    };
    Ok((header, count))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), NetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => NetError::Timeout,
        io::ErrorKind::UnexpectedEof => NetError::Closed,
        _ => NetError::Io(e),
    })
}

fn crc_ok(bytes: &[u8]) -> bool {
    let (data, crc) = bytes.split_at(bytes.len() - 4);
    crc32fast::hash(data) == u32::from_le_bytes(crc.try_into().unwrap())
}

/// Reads one sample or control frame. A CRC mismatch is reported as
/// [`Incoming::Corrupt`] once the whole frame has been consumed.
pub fn read_incoming(r: &mut impl Read) -> Result<Incoming, NetError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if magic == CONTROL_MAGIC {
        let mut buf = [0u8; CONTROL_LEN];
        buf[..4].copy_from_slice(&magic);
        read_exact(r, &mut buf[4..])?;
        if !crc_ok(&buf) {
            return Ok(Incoming::Corrupt);
        }
        if buf[4] != VERSION {
            return Err(NetError::Protocol(format!("unsupported version {}", buf[4])));
        }
        let role = Role::from_u8(buf[5]).ok_or_else(|| NetError::Protocol(format!("bad role {}", buf[5])))?;
        let kind = ControlKind::from_u8(buf[14])
            .ok_or_else(|| NetError::Protocol(format!("bad control kind {}", buf[14])))?;
        return Ok(Incoming::Control(ControlFrame {
            role,
            session_id: u64::from_le_bytes(buf[6..14].try_into().unwrap()),
            kind,
            bit_index: u32::from_le_bytes(buf[15..19].try_into().unwrap()),
            value: f64::from_le_bytes(buf[19..27].try_into().unwrap()),
        }));
    }
    if magic != MAGIC {
        return Err(NetError::Protocol(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; HEADER_LEN];
    head[..4].copy_from_slice(&magic);
    read_exact(r, &mut head[4..])?;
    let count = u16::from_le_bytes([head[20], head[21]]) as usize;
    check_count(count)?;
    let mut frame = head.to_vec();
    frame.resize(HEADER_LEN + 8 * count + 4, 0);
    read_exact(r, &mut frame[HEADER_LEN..])?;
    if !crc_ok(&frame) {
        return Ok(Incoming::Corrupt);
    }
    let (header, _) = parse_header(&head)?;
    Ok(Incoming::Sample(SampleFrame { header, payload: floats(&frame[HEADER_LEN..HEADER_LEN + 8 * count]) }))
}

/// Byte range a fault injector may flip without breaking framing: everything
/// after the length-bearing header.
pub fn corruptible_range(frame: &[u8]) -> std::ops::Range<usize> {
    if frame[..4] == CONTROL_MAGIC {
        15..frame.len()
    } else {
        HEADER_LEN..frame.len()
    }
}
