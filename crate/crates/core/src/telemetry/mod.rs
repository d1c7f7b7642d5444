//! Device wire protocol, ingestion, emulation and sample fan-out.

pub mod decoder;
pub mod emulator;
pub mod frame;
pub mod publisher;

use thiserror::Error;

pub use decoder::{decode_all, Gap, HealthSnapshot, StreamDecoder, StreamHealth};
pub use emulator::{emulate_device, DeviceStream, EmulatorReport, Pacing};
pub use frame::{crc16_ccitt_false, decode_frame, DecodeError, Frame, MsgType, Payload};
pub use publisher::{Publisher, Subscription};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("sink closed after {} data frames: {source}", report.data_frames)]
    SinkClosed { report: EmulatorReport, source: std::io::Error },
    #[error("timestamp {0} us is negative")]
    NegativeTimestamp(i64),
}
