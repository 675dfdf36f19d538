//! Bit strings with a compact hex serialization.
//!
//! Bits are packed MSB-first into bytes; the JSON form carries the bit
//! length next to the hex string so trailing padding is unambiguous.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitKey(pub Vec<bool>);

impl BitKey {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .0
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |b, (k, bit)| b | ((*bit as u8) << (7 - k))))
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| invalid(format!("bad hex key: {e}")))?;
        if bytes.len() != len.div_ceil(8) {
            return Err(invalid(format!(
                "hex key holds {} bytes, {len} bits need {}",
                bytes.len(),
                len.div_ceil(8)
            )));
        }
        Ok(Self((0..len).map(|k| bytes[k / 8] >> (7 - k % 8) & 1 == 1).collect()))
    }
}

impl From<Vec<bool>> for BitKey {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HexForm {
    len: usize,
    hex: String,
}

impl Serialize for BitKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HexForm { len: self.len(), hex: self.to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let h = HexForm::deserialize(d)?;
        BitKey::from_hex(&h.hex, h.len).map_err(serde::de::Error::custom)
    }
}
