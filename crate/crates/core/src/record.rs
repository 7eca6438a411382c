//! Power records and their canonical byte encoding.
//!
//! Layout (big-endian):
//!
//! | bytes      | field                                   |
//! |------------|-----------------------------------------|
//! | 0..4       | magic `PWRR`                            |
//! | 4          | version (1)                             |
//! | 5..7       | probe count `n` (u16)                   |
//! | 7..7+2n    | Tx series, i16 hundredths of a dB       |
//! | 7+2n..7+4n | Rx series, i16 hundredths of a dB       |
//!
//! Values are rounded to 0.01 dB on encode, so a decoded record can differ
//! from a full-precision original by at most 0.005 dB per value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_MAGIC: [u8; 4] = *b"PWRR";
pub const RECORD_VERSION: u8 = 1;
const HEADER_LEN: usize = 7;
/// Largest magnitude representable in an i16 of hundredths.
pub const MAX_ABS_DB: f64 = i16::MAX as f64 / 100.0;

/// A device's Tx series followed by its Rx series, one entry per probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub tx_dbm: Vec<f64>,
    pub rx_dbm: Vec<f64>,
}

impl PowerRecord {
    pub fn new(tx_dbm: Vec<f64>, rx_dbm: Vec<f64>) -> Result<Self> {
        if tx_dbm.len() != rx_dbm.len() {
            return Err(Error::Framing(format!(
                "tx series has {} entries, rx series has {}",
                tx_dbm.len(),
                rx_dbm.len()
            )));
        }
        Ok(Self { tx_dbm, rx_dbm })
    }

    pub fn n(&self) -> usize {
        self.tx_dbm.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let n = self.n();
        if self.rx_dbm.len() != n {
            return Err(Error::Framing("tx/rx length mismatch".into()));
        }
        let count = u16::try_from(n)
            .map_err(|_| Error::RecordFormat(format!("{n} probes exceed the u16 count field")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
        out.extend_from_slice(&RECORD_MAGIC);
        out.push(RECORD_VERSION);
        out.extend_from_slice(&count.to_be_bytes());
        for &v in self.tx_dbm.iter().chain(&self.rx_dbm) {
            out.extend_from_slice(&to_centi(v)?.to_be_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::RecordFormat(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if bytes[..4] != RECORD_MAGIC {
            return Err(Error::RecordFormat("bad magic".into()));
        }
        if bytes[4] != RECORD_VERSION {
            return Err(Error::RecordFormat(format!("unsupported version {}", bytes[4])));
        }
        let n = u16::from_be_bytes([bytes[5], bytes[6]]) as usize;
        if n == 0 {
            return Err(Error::RecordFormat("empty record".into()));
        }
        if bytes.len() != HEADER_LEN + 4 * n {
            return Err(Error::RecordFormat(format!(
                "length {} does not match {n} probes",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as f64 / 100.0)
            .collect();
        let (tx, rx) = values.split_at(n);
        Ok(Self {
            tx_dbm: tx.to_vec(),
            rx_dbm: rx.to_vec(),
        })
    }

    /// The record as the peer will see it after encoding.
    pub fn quantized(&self) -> Result<Self> {
        Self::decode(&self.encode()?)
    }

    /// Sanity bounds a receiver applies to a peer's decrypted claims: Tx
    /// values inside the agreed Tx range (with `slack_db` either side) and Rx
    /// values inside `rx_bounds`.
    pub fn validate_claims(&self, tx_range: (f64, f64), rx_bounds: (f64, f64), slack_db: f64) -> Result<()> {
        if let Some((i, v)) = self
            .tx_dbm
            .iter()
            .enumerate()
            .find(|(_, &v)| v < tx_range.0 - slack_db || v > tx_range.1 + slack_db)
        {
            return Err(Error::RecordFormat(format!("tx[{i}] = {v} dBm outside the agreed range")));
        }
        if let Some((i, v)) = self
            .rx_dbm
            .iter()
            .enumerate()
            .find(|(_, &v)| v < rx_bounds.0 || v > rx_bounds.1)
        {
            return Err(Error::RecordFormat(format!("rx[{i}] = {v} dBm is implausible")));
        }
        Ok(())
    }
}

fn to_centi(v: f64) -> Result<i16> {
    let c = (v * 100.0).round();
    if !c.is_finite() || c < i16::MIN as f64 || c > i16::MAX as f64 {
        return Err(Error::RecordFormat(format!("{v} dB does not fit the encoding")));
    }
    Ok(c as i16)
}
