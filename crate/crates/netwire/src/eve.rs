use std::net::SocketAddr;

use kljn_core::attacks::{injection_rms, injection_waveform, Waveform};
use kljn_core::circuit::Trace;
use kljn_core::rng::{stream, Party};

use crate::frame::{ControlKind, Role};
use crate::link::{connect_retry, Link};
use crate::{blocks, split_pairs, NetConfig, NetError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EveMode {
    /// Listen at the wire midpoint only.
    Passive,
    /// Inject a current at the midpoint. `amplitude` is relative to the
    /// mixed-state current RMS.
    Inject { amplitude: f64, waveform: Waveform },
}

#[derive(Clone, Debug, Default)]
pub struct EveLog {
    /// Midpoint voltage and current per observed period.
    pub periods: Vec<Trace>,
    pub aborted_at: Option<usize>,
}

/// Attaches Eve to the channel's tap and follows the session to its end.
pub fn run_eve(channel: SocketAddr, cfg: &NetConfig, mode: EveMode, seed: u64) -> Result<EveLog, NetError> {
    let s = &cfg.session;
    let m = s.noise.samples_per_bit;
    let dt = s.noise.dt();
    let mut link = Link::new(connect_retry(channel, cfg.timeout)?, Role::Eve, cfg.session_id, cfg.timeout)?
        .with_faults(cfg.faults(3));
    link.send_control(ControlKind::Hello, 0, 0.0)?;
    link.recv_control(ControlKind::Hello, 0)?;
    let mut rng = stream(seed, 0, 0, Party::Eve);
    let mut log = EveLog::default();

    for bit in 0..s.n_bits {
        let injection = match mode {
            EveMode::Passive => None,
            EveMode::Inject { amplitude, waveform } => Some(injection_waveform(
                waveform,
                injection_rms(s, amplitude),
                0.5 * s.noise.bandwidth_hz * dt,
                m,
                &mut rng,
            )),
        };
        let (mut u, mut i) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for (block, range) in blocks(m) {
            let payload = injection.as_ref().map_or_else(Vec::new, |v| v[range].to_vec());
            match link.send_sample(bit, block, payload).and_then(|_| link.recv_sample(bit, block)) {
                Ok(f) => {
                    let (bu, bi) = split_pairs(&f.payload);
                    u.extend(bu);
                    i.extend(bi);
                }
                Err(NetError::Aborted { .. }) => {
                    log.aborted_at = Some(bit);
                    return Ok(log);
                }
                Err(e) => return Err(e),
            }
        }
        log.periods.push(Trace { u_ch: u, i_ch: i, dt });
    }
    Ok(log)
}
