use std::io::Write;
use std::net::{SocketAddr, TcpListener};

use kljn_core::circuit::EndSample;
use kljn_core::protocol::{
    end_statistics, party_band, AlarmEvent, AlarmMonitor, AlarmScale, Band, PartyEngine,
    SessionLedger, SessionResult,
};
use kljn_core::rng::{stream, Party};

use crate::frame::{CompareFrame, ControlKind, Header, Role};
use crate::link::{connect_retry, Link};
use crate::{accept_within, blocks, split_pairs, NetConfig, NetError};

/// How the authenticated compare link between Alice and Bob is set up.
pub enum CompareEndpoint {
    Listen(TcpListener),
    Connect(SocketAddr),
}

/// Runs Alice or Bob against the channel at `channel`.
///
/// Returns the party's view of the session. Its own choices are exact; the
/// peer's are inferred from the public band (a mixed band means the
/// opposite choice), so they are exact on every sifted bit.
pub fn run_party(
    role: Role,
    channel: SocketAddr,
    compare: CompareEndpoint,
    cfg: &NetConfig,
    seed: u64,
    auth_key: &[u8],
) -> Result<SessionResult, NetError> {
    let s = &cfg.session;
    s.validate()?;
    if s.level_oracle {
        return Err(NetError::Protocol("level_oracle is an in-process shortcut only".into()));
    }
    let (party, lane, peer_role) = match role {
        Role::Alice => (Party::Alice, 1, Role::Bob),
        Role::Bob => (Party::Bob, 2, Role::Alice),
        r => return Err(NetError::Protocol(format!("{r:?} is not a party"))),
    };

    let mut link = Link::new(connect_retry(channel, cfg.timeout)?, role, cfg.session_id, cfg.timeout)?
        .with_faults(cfg.faults(lane));
    link.send_control(ControlKind::Hello, 0, 0.0)?;
    let mut peer = match compare {
        CompareEndpoint::Listen(l) => accept_within(&l, cfg.timeout)?,
        CompareEndpoint::Connect(addr) => connect_retry(addr, cfg.timeout)?,
    };
    peer.set_read_timeout(Some(cfg.timeout))?;
    peer.set_nodelay(true)?;
    link.recv_control(ControlKind::Hello, 0)?;

    let rng = stream(seed, 0, 0, party);
    let mut engine = match role {
        Role::Alice => PartyEngine::alice(s, rng)?,
        _ => PartyEngine::bob(s, rng)?,
    };
    let m = s.noise.samples_per_bit;
    let levels = s.expected_levels();
    let scale = AlarmScale::from_levels(&levels);
    let mut monitor = AlarmMonitor::new(&s.wire, s.noise.dt(), s.alarm_tol_rel, scale);
    let mut ledger = SessionLedger::default();
    let mut u = vec![0.0; m];

    for bit in 0..s.n_bits {
        let (high, r) = engine.next_period(&mut u)?;
        let period = link.send_control(ControlKind::Start, bit, r).and_then(|_| link.recv_control(ControlKind::Period, bit));
        let Some(period) = unless_aborted(period)? else {
            ledger.abort(bit);
            return Ok(ledger.finish());
        };
        let warmup = period.value as usize;
        monitor.reset();
        let mut alarm: Option<AlarmEvent> = None;
        let (mut own_u, mut own_i) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let (mut peer_u, mut peer_i) = (Vec::with_capacity(m), Vec::with_capacity(m));

        for (block, range) in blocks(m) {
            let reply = link
                .send_sample(bit, block, u[range.clone()].to_vec())
                .and_then(|_| link.recv_sample(bit, block));
            let Some(reply) = unless_aborted(reply)? else {
                ledger.abort(bit);
                return Ok(ledger.finish());
            };
            let mut values = reply.payload;
            if values.len() != 2 * range.len() {
                return Err(NetError::Protocol(format!("short reply for block {block} of bit {bit}")));
            }
            if let Some(q) = &s.quantizer {
                for pair in values.chunks_exact_mut(2) {
                    pair[0] = q.quantize(pair[0], scale.u_rms);
                    pair[1] = q.quantize(pair[1], scale.i_rms);
                }
            }
            let header = Header { role, session_id: cfg.session_id, bit_index: bit as u32, block_index: block as u16 };
            let mine = CompareFrame { header, payload: values.clone() };
            peer.write_all(&mine.encode(auth_key)?)?;
            let theirs = match CompareFrame::read(&mut peer, auth_key) {
                Ok(f) => f,
                Err(e) => {
                    link.send_abort(bit);
                    return Err(e);
                }
            };
            let h = theirs.header;
            if h.role != peer_role
                || h.session_id != cfg.session_id
                || h.bit_index as usize != bit
                || h.block_index as usize != block
                || theirs.payload.len() != values.len()
            {
                link.send_abort(bit);
                return Err(NetError::Protocol(format!("compare frame out of step at bit {bit}, block {block}")));
            }
            let (ou, oi) = split_pairs(&values);
            let (pu, pi) = split_pairs(&theirs.payload);
            for n in 0..ou.len() {
                let sample = match role {
                    Role::Alice => EndSample { u_end_a: ou[n], i_a: oi[n], u_end_b: pu[n], i_b: pi[n], u_mid: 0.0 },
                    _ => EndSample { u_end_a: pu[n], i_a: pi[n], u_end_b: ou[n], i_b: oi[n], u_mid: 0.0 },
                };
                let event = monitor.push(&sample);
                if alarm.is_none() {
                    alarm = event;
                }
            }
            own_u.extend(ou);
            own_i.extend(oi);
            peer_u.extend(pu);
            peer_i.extend(pi);
        }

        let (ou, oi) = end_statistics(&own_u, &own_i, warmup);
        let (pu, pi) = end_statistics(&peer_u, &peer_i, warmup);
        let own_band = party_band(ou, oi, &levels, s.decision_stat)?;
        let peer_band = party_band(pu, pi, &levels, s.decision_stat)?;
        let peer_high = match own_band.or(peer_band) {
            Some(Band::Low) => false,
            Some(Band::High) => true,
            Some(Band::Mixed) | None => !high,
        };
        match role {
            Role::Alice => ledger.record(bit, high, peer_high, own_band, peer_band, alarm),
            _ => ledger.record(bit, peer_high, high, peer_band, own_band, alarm),
        }
        if alarm.is_some() && s.abort_on_alarm {
            ledger.abort(bit);
            link.send_abort(bit);
            return Ok(ledger.finish());
        }
    }

    link.send_control(ControlKind::Done, s.n_bits, 0.0)?;
    // the channel's reply is a courtesy; the key is already settled
    let _ = link.recv_control(ControlKind::Done, s.n_bits);
    Ok(ledger.finish())
}

/// `None` when the other side aborted the session.
fn unless_aborted<T>(r: Result<T, NetError>) -> Result<Option<T>, NetError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(NetError::Aborted { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}
