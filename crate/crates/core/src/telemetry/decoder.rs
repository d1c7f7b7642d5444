//! Incremental, resynchronizing frame decoder.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, DecodeError, Frame};

const NO_SEQ: u64 = u64::MAX;

/// Live counters, shareable across threads. All counters only increase.
#[derive(Debug)]
pub struct StreamHealth {
    frames_ok: AtomicU64,
    frames_crc_fail: AtomicU64,
    frames_resync: AtomicU64,
    gaps: AtomicU64,
    missing_frames: AtomicU64,
    bytes_discarded: AtomicU64,
    last_seq: AtomicU64,
}

impl Default for StreamHealth {
    fn default() -> Self {
        Self {
            frames_ok: AtomicU64::new(0),
            frames_crc_fail: AtomicU64::new(0),
            frames_resync: AtomicU64::new(0),
            gaps: AtomicU64::new(0),
            missing_frames: AtomicU64::new(0),
            bytes_discarded: AtomicU64::new(0),
            last_seq: AtomicU64::new(NO_SEQ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthSnapshot {
    pub frames_ok: u64,
    pub frames_crc_fail: u64,
    pub frames_resync: u64,
    pub gaps: u64,
    pub missing_frames: u64,
    pub bytes_discarded: u64,
    pub last_seq: Option<u16>,
}

impl StreamHealth {
    pub fn snapshot(&self) -> HealthSnapshot {
        let last = self.last_seq.load(Ordering::Relaxed);
        HealthSnapshot {
            frames_ok: self.frames_ok.load(Ordering::Relaxed),
            frames_crc_fail: self.frames_crc_fail.load(Ordering::Relaxed),
            frames_resync: self.frames_resync.load(Ordering::Relaxed),
            gaps: self.gaps.load(Ordering::Relaxed),
            missing_frames: self.missing_frames.load(Ordering::Relaxed),
            bytes_discarded: self.bytes_discarded.load(Ordering::Relaxed),
            last_seq: (last != NO_SEQ).then_some(last as u16),
        }
    }
}

/// One sequence discontinuity: `missing` frames between `after` and `next`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub after: u16,
    pub next: u16,
    pub missing: u16,
}

/// Feed bytes with [`push`](Self::push), drain frames with
/// [`next_frame`](Self::next_frame), call [`finish`](Self::finish) at end of
/// stream. Corrupt input is counted, never fatal.
#[derive(Debug)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    pos: usize,
    health: Arc<StreamHealth>,
    last_seq: Option<u16>,
    discarding: bool,
    eof: bool,
    gaps: Vec<Gap>,
}

impl Default for StreamDecoder {
    fn default() -> Self {
        Self::new()
    }
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::with_health(Arc::new(StreamHealth::default()))
    }

    pub fn with_health(health: Arc<StreamHealth>) -> Self {
        Self { buf: Vec::new(), pos: 0, health, last_seq: None, discarding: false, eof: false, gaps: Vec::new() }
    }

    pub fn health(&self) -> Arc<StreamHealth> {
        Arc::clone(&self.health)
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos * 2 >= self.buf.len() {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Marks end of input; trailing partial frames are then scanned past.
    pub fn finish(&mut self) {
        self.eof = true;
    }

    /// Gaps seen since the last call.
    pub fn take_gaps(&mut self) -> Vec<Gap> {
        std::mem::take(&mut self.gaps)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn skip_byte(&mut self) {
        if !self.discarding {
            self.discarding = true;
            self.health.frames_resync.fetch_add(1, Ordering::Relaxed);
        }
        self.health.bytes_discarded.fetch_add(1, Ordering::Relaxed);
        self.pos += 1;
    }

    fn note_seq(&mut self, seq: u16) {
        if let Some(prev) = self.last_seq {
            let expected = prev.wrapping_add(1);
            if seq != expected {
                let missing = seq.wrapping_sub(expected);
                self.health.gaps.fetch_add(1, Ordering::Relaxed);
                self.health.missing_frames.fetch_add(missing as u64, Ordering::Relaxed);
                self.gaps.push(Gap { after: prev, next: seq, missing });
            }
        }
        self.last_seq = Some(seq);
        self.health.last_seq.store(seq as u64, Ordering::Relaxed);
    }

    pub fn next_frame(&mut self) -> Option<Frame> {
        loop {
            let rest = &self.buf[self.pos..];
            if rest.is_empty() {
                return None;
            }
            match decode_frame(rest) {
                Ok((frame, len)) => {
                    self.pos += len;
                    self.discarding = false;
                    self.health.frames_ok.fetch_add(1, Ordering::Relaxed);
                    self.note_seq(frame.seq);
                    return Some(frame);
                }
                Err(DecodeError::Incomplete(_)) => {
                    if !self.eof {
                        return None;
                    }
                    self.skip_byte();
                }
                Err(DecodeError::CrcMismatch { .. }) => {
                    self.health.frames_crc_fail.fetch_add(1, Ordering::Relaxed);
                    self.skip_byte();
                }
                Err(_) => self.skip_byte(),
            }
        }
    }

    /// Pushes `bytes` and drains every complete frame.
    pub fn decode(&mut self, bytes: &[u8]) -> Vec<Frame> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_frame()).collect()
    }
}

/// Decodes a complete byte buffer.
pub fn decode_all(bytes: &[u8]) -> (Vec<Frame>, HealthSnapshot) {
    let mut d = StreamDecoder::new();
    d.push(bytes);
    d.finish();
    let frames = std::iter::from_fn(|| d.next_frame()).collect();
    (frames, d.health.snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::frame::Frame;

    fn stream(n: u16) -> (Vec<Frame>, Vec<u8>) {
        let frames: Vec<Frame> = (0..n).map(|i| Frame::data(1, i, i as u64 * 20_000, vec![i as i16])).collect();
        let mut bytes = Vec::new();
        frames.iter().for_each(|f| f.encode_into(&mut bytes).unwrap());
        (frames, bytes)
    }

    #[test]
    fn clean_stream() {
        let (frames, bytes) = stream(1000);
        let (got, h) = decode_all(&bytes);
        assert_eq!(got, frames);
        assert_eq!(h.frames_ok, 1000);
        assert_eq!(h.frames_resync, 0);
        assert_eq!(h.gaps, 0);
        assert_eq!(h.last_seq, Some(999));
    }

    #[test]
    fn byte_at_a_time_matches_bulk() {
        let (frames, bytes) = stream(50);
        let mut d = StreamDecoder::new();
        let mut got = Vec::new();
        for b in &bytes {
            got.extend(d.decode(std::slice::from_ref(b)));
        }
        assert_eq!(got, frames);
    }

    #[test]
    fn seq_jump_counts_one_gap() {
        let mut bytes = Vec::new();
        for s in [5u16, 6, 7, 10, 11] {
            Frame::data(1, s, 0, vec![0]).encode_into(&mut bytes).unwrap();
        }
        let mut d = StreamDecoder::new();
        assert_eq!(d.decode(&bytes).len(), 5);
        let h = d.health().snapshot();
        assert_eq!(h.gaps, 1);
        assert_eq!(h.missing_frames, 2);
        assert_eq!(d.take_gaps(), vec![Gap { after: 7, next: 10, missing: 2 }]);
    }

    #[test]
    fn seq_wraps_without_gap() {
        let mut bytes = Vec::new();
        for s in [65534u16, 65535, 0, 1] {
            Frame::data(1, s, 0, vec![0]).encode_into(&mut bytes).unwrap();
        }
        let (_, h) = decode_all(&bytes);
        assert_eq!(h.gaps, 0);
    }

    #[test]
    fn truncated_tail_is_discarded() {
        let (frames, mut bytes) = stream(3);
        bytes.truncate(bytes.len() - 5);
        let (got, h) = decode_all(&bytes);
        assert_eq!(got, frames[..2]);
        assert_eq!(h.frames_resync, 1);
        assert_eq!(h.bytes_discarded, 16);
    }

    #[test]
    fn corrupt_frame_counts_crc_failure() {
        let (frames, mut bytes) = stream(3);
        bytes[21 + 17] ^= 1;
        let (got, h) = decode_all(&bytes);
        assert_eq!(got, vec![frames[0].clone(), frames[2].clone()]);
        assert_eq!(h.frames_crc_fail, 1);
        assert_eq!(h.frames_resync, 1);
        assert_eq!(h.gaps, 1);
    }
}
