//! Wire format. Every multi-byte field is little-endian:
//!
//! ```text
//! A5 5A | ver u8 | type u8 | device u16 | seq u16 | t_us u64 | n_ch u8 | payload | crc u16
//! ```
//!
//! Data payloads are `n_ch` i16 ADC codes. Meta and event frames carry
//! `n_ch = 0` followed by a u16 byte length and UTF-8 text. The CRC is
//! CRC-16/CCITT-FALSE over version through payload.

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};

use super::TelemetryError;

pub const MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const VERSION: u8 = 1;
/// Magic through n_ch.
pub const HEADER_LEN: usize = 17;
pub const CRC_LEN: usize = 2;
pub const MAX_TEXT_LEN: usize = 4096;
/// Size of a single-channel data frame on the wire.
pub const DATA_FRAME_LEN_1CH: usize = HEADER_LEN + 2 + CRC_LEN;

/// CRC-16/CCITT-FALSE (catalogued as CRC-16/IBM-3740).
const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgType {
    Data = 0x01,
    Meta = 0x02,
    Event = 0x03,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::Data),
            0x02 => Some(Self::Meta),
            0x03 => Some(Self::Event),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Samples(Vec<i16>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub device_id: u16,
    pub seq: u16,
    pub timestamp_us: u64,
    pub payload: Payload,
}

impl Frame {
    pub fn data(device_id: u16, seq: u16, timestamp_us: u64, counts: Vec<i16>) -> Self {
        Self { msg_type: MsgType::Data, device_id, seq, timestamp_us, payload: Payload::Samples(counts) }
    }

    pub fn meta(device_id: u16, seq: u16, timestamp_us: u64, text: impl Into<String>) -> Self {
        Self { msg_type: MsgType::Meta, device_id, seq, timestamp_us, payload: Payload::Text(text.into()) }
    }

    pub fn event(device_id: u16, seq: u16, timestamp_us: u64, text: impl Into<String>) -> Self {
        Self { msg_type: MsgType::Event, device_id, seq, timestamp_us, payload: Payload::Text(text.into()) }
    }

    pub fn samples(&self) -> Option<&[i16]> {
        match &self.payload {
            Payload::Samples(s) => Some(s),
            Payload::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            Payload::Text(t) => Some(t),
            Payload::Samples(_) => None,
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + CRC_LEN
            + match &self.payload {
                Payload::Samples(s) => 2 * s.len(),
                Payload::Text(t) => 2 + t.len(),
            }
    }

    pub fn encode(&self) -> Result<Vec<u8>, TelemetryError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Appends the encoded frame to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), TelemetryError> {
        let n_ch: u8 = match (&self.msg_type, &self.payload) {
            (MsgType::Data, Payload::Samples(s)) if !s.is_empty() && s.len() <= u8::MAX as usize => s.len() as u8,
            (MsgType::Meta | MsgType::Event, Payload::Text(t)) if t.len() <= MAX_TEXT_LEN => 0,
            _ => {
                return Err(TelemetryError::InvalidFrame(format!(
                    "{:?} frame with incompatible payload",
                    self.msg_type
                )))
            }
        };
        let start = out.len();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.device_id.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.timestamp_us.to_le_bytes());
        out.push(n_ch);
        match &self.payload {
            Payload::Samples(s) => s.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes())),
            Payload::Text(t) => {
                out.extend_from_slice(&(t.len() as u16).to_le_bytes());
                out.extend_from_slice(t.as_bytes());
            }
        }
        let crc = crc16_ccitt_false(&out[start + 2..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// More bytes are needed; the value is the total frame length if known.
    Incomplete(Option<usize>),
    BadMagic,
    BadVersion(u8),
    BadType(u8),
    BadLength,
    CrcMismatch { expected: u16, got: u16 },
    BadUtf8,
}

/// Total frame length implied by a header prefix, or `Incomplete`/structural errors.
pub fn frame_len(buf: &[u8]) -> Result<usize, DecodeError> {
    if buf.len() < 2 {
        return Err(DecodeError::Incomplete(None));
    }
    if buf[..2] != MAGIC {
        return Err(DecodeError::BadMagic);
    }
    if buf.len() < 4 {
        return Err(DecodeError::Incomplete(None));
    }
    if buf[2] != VERSION {
        return Err(DecodeError::BadVersion(buf[2]));
    }
    let ty = MsgType::from_byte(buf[3]).ok_or(DecodeError::BadType(buf[3]))?;
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::Incomplete(None));
    }
    let n_ch = buf[HEADER_LEN - 1] as usize;
    match ty {
        MsgType::Data if n_ch == 0 => Err(DecodeError::BadLength),
        MsgType::Data => Ok(HEADER_LEN + 2 * n_ch + CRC_LEN),
        _ if n_ch != 0 => Err(DecodeError::BadLength),
        _ => {
            if buf.len() < HEADER_LEN + 2 {
                return Err(DecodeError::Incomplete(None));
            }
            let len = u16::from_le_bytes([buf[HEADER_LEN], buf[HEADER_LEN + 1]]) as usize;
            if len > MAX_TEXT_LEN {
                return Err(DecodeError::BadLength);
            }
            Ok(HEADER_LEN + 2 + len + CRC_LEN)
        }
    }
}

/// Decodes one frame from the start of `buf`, returning it with its length.
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize), DecodeError> {
    let len = frame_len(buf)?;
    if buf.len() < len {
        return Err(DecodeError::Incomplete(Some(len)));
    }
    let body = &buf[2..len - CRC_LEN];
    let got = u16::from_le_bytes([buf[len - 2], buf[len - 1]]);
    let expected = crc16_ccitt_false(body);
    if got != expected {
        return Err(DecodeError::CrcMismatch { expected, got });
    }
    let msg_type = MsgType::from_byte(buf[3]).expect("checked in frame_len");
    let device_id = u16::from_le_bytes([buf[4], buf[5]]);
    let seq = u16::from_le_bytes([buf[6], buf[7]]);
    let timestamp_us = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
    let payload_bytes = &buf[HEADER_LEN..len - CRC_LEN];
    let payload = match msg_type {
        MsgType::Data => {
            Payload::Samples(payload_bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
        }
        _ => Payload::Text(String::from_utf8(payload_bytes[2..].to_vec()).map_err(|_| DecodeError::BadUtf8)?),
    };
    Ok((Frame { msg_type, device_id, seq, timestamp_us, payload }, len))
}
