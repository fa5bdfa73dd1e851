//! Framed wire format for control-plane messages.
//!
//! ```text
//! "OTRF" | version u8 | type u8 | length u32 BE | JSON payload | CRC32 BE
//! ```
//! The CRC covers everything before it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FlowTableEntry, SignalPlan, VehicleReport};
use crate::routing::LinkRecord;

pub const FRAME_MAGIC: [u8; 4] = *b"OTRF";
pub const FRAME_VERSION: u8 = 1;

const HEADER: usize = 10;
const TRAILER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    VehicleReport(VehicleReport),
    FlowTable(Vec<FlowTableEntry>),
    SignalPlan(SignalPlan),
    LinkState(LinkRecord),
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::VehicleReport(_) => 1,
            Message::FlowTable(_) => 2,
            Message::SignalPlan(_) => 3,
            Message::LinkState(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad magic")]
    BadMagic,
    #[error("checksum mismatch")]
    BadCrc,
    #[error("unknown frame version {0}")]
    UnknownVersion(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    BadPayload(String),
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    let payload = match msg {
        Message::VehicleReport(m) => serde_json::to_vec(m),
        Message::FlowTable(m) => serde_json::to_vec(m),
        Message::SignalPlan(m) => serde_json::to_vec(m),
        Message::LinkState(m) => serde_json::to_vec(m),
    }
    .expect("message types serialize");
    let mut out = Vec::with_capacity(HEADER + payload.len() + TRAILER);
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(msg.tag());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

pub fn decode_message(frame: &[u8]) -> Result<Message, CodecError> {
    if frame.len() < HEADER + TRAILER {
        return Err(CodecError::Truncated);
    }
    let (body, crc) = frame.split_at(frame.len() - TRAILER);
    if crc32fast::hash(body) != u32::from_be_bytes(crc.try_into().expect("4 bytes")) {
        return Err(CodecError::BadCrc);
    }
    if body[..4] != FRAME_MAGIC {
        return Err(CodecError::BadMagic);
    }
    if body[4] != FRAME_VERSION {
        return Err(CodecError::UnknownVersion(body[4]));
    }
    let len = u32::from_be_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
    if body.len() - HEADER != len {
        return Err(CodecError::Truncated);
    }
    let payload = &body[HEADER..];
    let bad = |e: serde_json::Error| CodecError::BadPayload(e.to_string());
    Ok(match body[5] {
        1 => Message::VehicleReport(serde_json::from_slice(payload).map_err(bad)?),
        2 => Message::FlowTable(serde_json::from_slice(payload).map_err(bad)?),
        3 => Message::SignalPlan(serde_json::from_slice(payload).map_err(bad)?),
        4 => Message::LinkState(serde_json::from_slice(payload).map_err(bad)?),
        t => return Err(CodecError::UnknownType(t)),
    })
}
