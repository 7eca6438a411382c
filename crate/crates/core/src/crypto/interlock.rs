//! Interlock exchange of sealed records.
//!
//! Each 128-bit cipher block travels as two 64-bit halves. All first halves
//! go both ways before any second half is sent; an endpoint that sees a
//! second half while its own first-half phase is still open aborts.
//!
//! Wire frame (13 bytes): `block_index: u32 BE | half_index: u8 | payload: [u8; 8]`.

use serde::Serialize;

use super::{decrypt_block, Ciphertext, SessionKey, BLOCK_LEN};
use crate::error::{Error, Result};

pub const FRAME_LEN: usize = 13;
const HALF_LEN: usize = BLOCK_LEN / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherHalf {
    pub block_index: u32,
    pub half_index: u8,
    pub payload: [u8; 8],
}

impl CipherHalf {
    pub fn to_frame(&self) -> [u8; FRAME_LEN] {
        let mut f = [0u8; FRAME_LEN];
        f[..4].copy_from_slice(&self.block_index.to_be_bytes());
        f[4] = self.half_index;
        f[5..].copy_from_slice(&self.payload);
        f
    }

    pub fn from_frame(frame: &[u8]) -> Result<Self> {
        if frame.len() != FRAME_LEN {
            return Err(Error::Framing(format!("frame has {} bytes, expected {FRAME_LEN}", frame.len())));
        }
        let half_index = frame[4];
        if half_index > 1 {
            return Err(Error::Framing(format!("half index {half_index}")));
        }
        Ok(Self {
            block_index: u32::from_be_bytes(frame[..4].try_into().unwrap()),
            half_index,
            payload: frame[5..].try_into().unwrap(),
        })
    }
}

/// Halves in block-major, half-minor order.
pub fn split_into_halves(ciphertext: &[u8]) -> Result<Vec<CipherHalf>> {
    if !ciphertext.len().is_multiple_of(BLOCK_LEN) {
        return Err(Error::Framing(format!(
            "ciphertext length {} is not a multiple of {BLOCK_LEN}",
            ciphertext.len()
        )));
    }
    let mut out = Vec::with_capacity(ciphertext.len() / HALF_LEN);
    for (b, block) in ciphertext.chunks_exact(BLOCK_LEN).enumerate() {
        let block_index = u32::try_from(b).map_err(|_| Error::Framing("too many blocks".into()))?;
        for (h, half) in block.chunks_exact(HALF_LEN).enumerate() {
            out.push(CipherHalf {
                block_index,
                half_index: h as u8,
                payload: half.try_into().unwrap(),
            });
        }
    }
    Ok(out)
}

/// Inverse of [`split_into_halves`]; the input must be in canonical order.
pub fn join_halves(halves: &[CipherHalf]) -> Result<Vec<u8>> {
    if !halves.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("odd number of halves ({})", halves.len())));
    }
    let mut out = Vec::with_capacity(halves.len() * HALF_LEN);
    for (i, h) in halves.iter().enumerate() {
        if h.block_index as usize != i / 2 || h.half_index as usize != i % 2 {
            return Err(Error::Framing(format!(
                "half {i} is ({}, {}), expected ({}, {})",
                h.block_index,
                h.half_index,
                i / 2,
                i % 2
            )));
        }
        out.extend_from_slice(&h.payload);
    }
    Ok(out)
}

/// How an endpoint schedules its outgoing halves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterlockBehavior {
    #[default]
    Honest,
    /// Sends its second halves together with its first halves.
    EarlySecondHalves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    First,
    Second,
}

/// One side of an interlock exchange.
#[derive(Debug, Clone)]
pub struct InterlockEndpoint {
    key: SessionKey,
    own: Vec<CipherHalf>,
    expected_blocks: usize,
    first: Vec<Option<[u8; 8]>>,
    second: Vec<Option<[u8; 8]>>,
    phase: Phase,
    first_sent: bool,
    behavior: InterlockBehavior,
}

impl InterlockEndpoint {
    /// `expected_blocks` is the peer's block count, known from the agreed
    /// probe count.
    pub fn new(key: SessionKey, sealed: &Ciphertext, expected_blocks: usize) -> Self {
        Self {
            key,
            own: split_into_halves(sealed.as_bytes()).expect("ciphertext is block aligned"),
            expected_blocks,
            first: vec![None; expected_blocks],
            second: vec![None; expected_blocks],
            phase: Phase::First,
            first_sent: false,
            behavior: InterlockBehavior::Honest,
        }
    }

    pub fn with_behavior(mut self, behavior: InterlockBehavior) -> Self {
        self.behavior = behavior;
        self
    }

    fn first_phase_complete(&self) -> bool {
        self.first_sent && self.first.iter().all(Option::is_some)
    }

    /// Outgoing halves for phase one.
    pub fn phase_one(&mut self) -> Vec<CipherHalf> {
        self.first_sent = true;
        match self.behavior {
            InterlockBehavior::Honest => self.own.iter().filter(|h| h.half_index == 0).copied().collect(),
            InterlockBehavior::EarlySecondHalves => self.own.clone(),
        }
    }

    /// Outgoing halves for phase two. Fails unless every first half has
    /// gone both ways.
    pub fn phase_two(&mut self) -> Result<Vec<CipherHalf>> {
        if !self.first_phase_complete() {
            return Err(Error::InterlockOrdering(
                "second halves requested before the first-half phase completed".into(),
            ));
        }
        self.phase = Phase::Second;
        Ok(match self.behavior {
            InterlockBehavior::Honest => self.own.iter().filter(|h| h.half_index == 1).copied().collect(),
            InterlockBehavior::EarlySecondHalves => Vec::new(),
        })
    }

    /// Receives a half that arrived in the given exchange round. Round 1
    /// carries first halves only.
    pub fn receive_in_round(&mut self, half: CipherHalf, round: u8) -> Result<()> {
        if round == 1 && half.half_index == 1 {
            return Err(Error::InterlockOrdering(format!(
                "second half of block {} sent during the first-half round",
                half.block_index
            )));
        }
        self.receive(half)
    }

    pub fn receive(&mut self, half: CipherHalf) -> Result<()> {
        let b = half.block_index as usize;
        if b >= self.expected_blocks {
            return Err(Error::Framing(format!(
                "block index {b} beyond the expected {} blocks",
                self.expected_blocks
            )));
        }
        let slot = match half.half_index {
            0 => &mut self.first[b],
            1 => {
                if self.phase != Phase::Second && !self.first_phase_complete() {
                    return Err(Error::InterlockOrdering(format!(
                        "second half of block {b} arrived before the first-half phase completed"
                    )));
                }
                &mut self.second[b]
            }
            h => return Err(Error::Framing(format!("half index {h}"))),
        };
        if slot.is_some() {
            return Err(Error::Framing(format!("duplicate half ({b}, {})", half.half_index)));
        }
        *slot = Some(half.payload);
        Ok(())
    }

    /// Blocks for which both halves are held, decrypted.
    pub fn decryptable_blocks(&self) -> Vec<(usize, [u8; 16])> {
        self.first
            .iter()
            .zip(&self.second)
            .enumerate()
            .filter_map(|(i, (a, b))| {
                let (a, b) = (a.as_ref()?, b.as_ref()?);
                let mut block = [0u8; 16];
                block[..8].copy_from_slice(a);
                block[8..].copy_from_slice(b);
                Some((i, decrypt_block(&self.key, &block)))
            })
            .collect()
    }

    /// The peer's reassembled ciphertext.
    pub fn reassembled(&self) -> Result<Ciphertext> {
        let mut halves = Vec::with_capacity(2 * self.expected_blocks);
        for (i, (a, b)) in self.first.iter().zip(&self.second).enumerate() {
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::Framing(format!("block {i} incomplete")));
            };
            halves.push(CipherHalf { block_index: i as u32, half_index: 0, payload: *a });
            halves.push(CipherHalf { block_index: i as u32, half_index: 1, payload: *b });
        }
        Ciphertext::from_bytes(join_halves(&halves)?)
    }

    /// Decrypted and unpadded peer plaintext.
    pub fn finish(&self) -> Result<Vec<u8>> {
        super::open(&self.key, &self.reassembled()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub phase: u8,
    pub from: Side,
    pub frame_hex: String,
}

/// Every frame put on the wire, in send order.
#[derive(Debug, Clone, Default, Serialize)]
pub struct InterlockLog {
    pub frames: Vec<FrameRecord>,
}

fn deliver(
    halves: Vec<CipherHalf>,
    from: Side,
    phase: u8,
    to: &mut InterlockEndpoint,
    log: &mut InterlockLog,
) -> Result<()> {
    for h in halves {
        let frame = h.to_frame();
        log.frames.push(FrameRecord {
            phase,
            from,
            frame_hex: hex::encode(frame),
        });
        to.receive_in_round(CipherHalf::from_frame(&frame)?, phase)?;
    }
    Ok(())
}

/// Runs both phases in lockstep and returns each side's decrypted view of
/// its peer's plaintext as `(initiator_received, responder_received)`.
pub fn interlock_exchange(
    initiator: &mut InterlockEndpoint,
    responder: &mut InterlockEndpoint,
    log: &mut InterlockLog,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let out = initiator.phase_one();
    deliver(out, Side::Initiator, 1, responder, log)?;
    let out = responder.phase_one();
    deliver(out, Side::Responder, 1, initiator, log)?;

    let out = initiator.phase_two()?;
    deliver(out, Side::Initiator, 2, responder, log)?;
    let out = responder.phase_two()?;
    deliver(out, Side::Responder, 2, initiator, log)?;

    Ok((initiator.finish()?, responder.finish()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seal;
    use proptest::prelude::*;

    fn endpoint(key: u8, msg: &[u8], peer_blocks: usize) -> InterlockEndpoint {
        let k = SessionKey([key; 16]);
        InterlockEndpoint::new(k, &seal(&k, msg), peer_blocks)
    }

    #[test]
    fn one_block_splits_into_two_halves() {
        let c: Vec<u8> = (0..16).collect();
        let h = split_into_halves(&c).unwrap();
        let idx: Vec<(u32, u8)> = h.iter().map(|h| (h.block_index, h.half_index)).collect();
        assert_eq!(idx, vec![(0, 0), (0, 1)]);
        assert_eq!(h[0].payload, [0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn three_blocks_block_major_order() {
        let h = split_into_halves(&[0u8; 48]).unwrap();
        let idx: Vec<(u32, u8)> = h.iter().map(|h| (h.block_index, h.half_index)).collect();
        assert_eq!(idx, vec![(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]);
    }

    #[test]
    fn misaligned_split_is_framing_error() {
        assert!(matches!(split_into_halves(&[0u8; 20]), Err(Error::Framing(_))));
    }

    #[test]
    fn frame_golden_bytes() {
        let h = CipherHalf {
            block_index: 0x0102_0304,
            half_index: 1,
            payload: [0xA0, 0xA1, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7],
        };
        let f = h.to_frame();
        assert_eq!(hex::encode(f), "0102030401a0a1a2a3a4a5a6a7");
        assert_eq!(CipherHalf::from_frame(&f).unwrap(), h);
        assert!(CipherHalf::from_frame(&f[..12]).is_err());
        let mut bad = f;
        bad[4] = 2;
        assert!(CipherHalf::from_frame(&bad).is_err());
    }

    #[test]
    fn honest_exchange_recovers_both_messages() {
        let a_msg = b"record from A, a bit longer than one block".to_vec();
        let b_msg = b"record from B, also longer than a block!!!".to_vec();
        let blocks = a_msg.len() / 16 + 1;
        let mut a = endpoint(3, &a_msg, blocks);
        let mut b = endpoint(3, &b_msg, blocks);
        let mut log = InterlockLog::default();
        let (a_got, b_got) = interlock_exchange(&mut a, &mut b, &mut log).unwrap();
        assert_eq!(a_got, b_msg);
        assert_eq!(b_got, a_msg);
        assert_eq!(log.frames.len(), 4 * blocks);
        // Phase 1 frames all precede phase 2 frames and carry half index 0.
        let first_phase_two = log.frames.iter().position(|f| f.phase == 2).unwrap();
        assert_eq!(first_phase_two, 2 * blocks);
        assert!(log.frames[..first_phase_two].iter().all(|f| &f.frame_hex[8..10] == "00"));
    }

    #[test]
    fn early_second_half_aborts_both_directions() {
        for offender_is_initiator in [true, false] {
            let mut a = endpoint(4, b"hello", 1);
            let mut b = endpoint(4, b"world", 1);
            if offender_is_initiator {
                a = a.with_behavior(InterlockBehavior::EarlySecondHalves);
            } else {
                b = b.with_behavior(InterlockBehavior::EarlySecondHalves);
            }
            let err = interlock_exchange(&mut a, &mut b, &mut InterlockLog::default()).unwrap_err();
            assert!(matches!(err, Error::InterlockOrdering(_)), "{err:?}");
        }
    }

    #[test]
    fn second_half_before_own_phase_complete_rejected() {
        let mut a = endpoint(5, b"x", 1);
        let second = CipherHalf { block_index: 0, half_index: 1, payload: [0; 8] };
        assert!(matches!(a.receive(second), Err(Error::InterlockOrdering(_))));
    }

    #[test]
    fn first_halves_alone_decrypt_nothing() {
        let msg = vec![0x5Au8; 100];
        let blocks = msg.len() / 16 + 1;
        let k = SessionKey([6; 16]);
        let mut holder = InterlockEndpoint::new(k, &seal(&k, b"a"), blocks);
        let _ = holder.phase_one();
        for h in split_into_halves(seal(&k, &msg).as_bytes()).unwrap() {
            if h.half_index == 0 {
                holder.receive(h).unwrap();
            }
        }
        assert!(holder.decryptable_blocks().is_empty());
        assert!(holder.finish().is_err());
    }

    #[test]
    fn block_count_mismatch_is_framing_error() {
        let mut a = endpoint(7, &[1u8; 40], 1);
        let mut b = endpoint(7, &[2u8; 40], 1);
        let err = interlock_exchange(&mut a, &mut b, &mut InterlockLog::default()).unwrap_err();
        assert!(matches!(err, Error::Framing(_)));
    }

    #[test]
    fn duplicate_half_is_framing_error() {
        let mut a = endpoint(8, b"a", 1);
        let h = CipherHalf { block_index: 0, half_index: 0, payload: [1; 8] };
        a.receive(h).unwrap();
        assert!(matches!(a.receive(h), Err(Error::Framing(_))));
    }

    proptest! {
        #[test]
        fn split_join_identity(blocks in prop::collection::vec(any::<[u8; 16]>(), 0..40)) {
            let c: Vec<u8> = blocks.concat();
            prop_assert_eq!(join_halves(&split_into_halves(&c).unwrap()).unwrap(), c);
        }
    }
}
