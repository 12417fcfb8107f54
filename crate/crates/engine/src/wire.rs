//! Frame format shared by every connection.
//!
//! ```text
//! "SMDM" | version u8 | kind u8 | edge_id u16 | target_partition u16 | seq u64 | payload_len u32 | payload
//! ```
//!
//! All integers are big-endian.

use std::io::{self, Read, Write};

use smdm_core::codec::{DecodeError, Reader, Writer};
use smdm_core::{Cell, DatasetSchema, Flags, Instance};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SMDM";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 22;
pub const UNLABELED: u16 = 0xFFFF;
/// Upper bound on a payload accepted from the network.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("frame truncated")]
    TruncatedFrame,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("instance does not match the edge schema: {0}")]
    SchemaMismatch(String),
}

impl From<DecodeError> for WireError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Truncated { .. } => WireError::TruncatedFrame,
            DecodeError::Malformed(m) => WireError::MalformedPayload(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FrameKind {
    Control = 0x00,
    Data = 0x01,
    EndOfStream = 0x02,
    Ack = 0x03,
    StateTransfer = 0x04,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x00 => Self::Control,
            0x01 => Self::Data,
            0x02 => Self::EndOfStream,
            0x03 => Self::Ack,
            0x04 => Self::StateTransfer,
            _ => return None,
        })
    }
}

/// A raw frame with an uninterpreted payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub edge_id: u16,
    pub target_partition: u16,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameKind, edge_id: u16, target_partition: u16, seq: u64, payload: Vec<u8>) -> Self {
        Self {
            kind,
            edge_id,
            target_partition,
            seq,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(HEADER_LEN + self.payload.len());
        w.bytes(&MAGIC)
            .u8(VERSION)
            .u8(self.kind as u8)
            .u16(self.edge_id)
            .u16(self.target_partition)
            .u64(self.seq)
            .u32(self.payload.len() as u32)
            .bytes(&self.payload);
        w.into_bytes()
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, WireError> {
        let (header, payload_len) = parse_header(bytes.get(..HEADER_LEN).ok_or(WireError::TruncatedFrame)?)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < payload_len {
            return Err(WireError::TruncatedFrame);
        }
        if body.len() > payload_len {
            return Err(WireError::MalformedPayload(format!(
                "{} bytes after the payload",
                body.len() - payload_len
            )));
        }
        Ok(Frame {
            payload: body.to_vec(),
            ..header
        })
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream before any header byte.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Frame>, ReadError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match r.read(&mut header[filled..]) {
                Ok(0) if filled == 0 => return Ok(None),
                Ok(0) => return Err(ReadError::Wire(WireError::TruncatedFrame)),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(ReadError::Io(e)),
            }
        }
        let (frame, len) = parse_header(&header)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ReadError::Wire(WireError::TruncatedFrame),
            _ => ReadError::Io(e),
        })?;
        Ok(Some(Frame { payload, ..frame }))
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn parse_header(h: &[u8]) -> Result<(Frame, usize), WireError> {
    let mut r = Reader::new(h);
    if r.take(4)? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let kind_byte = r.u8()?;
    let kind = FrameKind::from_byte(kind_byte)
        .ok_or_else(|| WireError::MalformedPayload(format!("unknown frame kind {kind_byte:#04x}")))?;
    let edge_id = r.u16()?;
    let target_partition = r.u16()?;
    let seq = r.u64()?;
    let len = r.u32()?;
    if len > MAX_PAYLOAD {
        return Err(WireError::MalformedPayload(format!("payload of {len} bytes")));
    }
    Ok((
        Frame {
            kind,
            edge_id,
            target_partition,
            seq,
            payload: Vec::new(),
        },
        len as usize,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Data(Instance),
    EndOfStream,
}

/// Unit of data flowing along an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEvent {
    pub edge_id: u16,
    pub target_partition: u16,
    pub seq: u64,
    pub kind: EventKind,
}

pub fn serialize_event(event: &ContentEvent, schema: &DatasetSchema) -> Result<Vec<u8>, WireError> {
    let (kind, payload) = match &event.kind {
        EventKind::Data(instance) => (FrameKind::Data, encode_instance(instance, schema)?),
        EventKind::EndOfStream => (FrameKind::EndOfStream, Vec::new()),
    };
    Ok(Frame::new(kind, event.edge_id, event.target_partition, event.seq, payload).encode())
}

pub fn deserialize_event(bytes: &[u8], schema: &DatasetSchema) -> Result<ContentEvent, WireError> {
    event_from_frame(Frame::decode(bytes)?, schema)
}

pub fn event_from_frame(frame: Frame, schema: &DatasetSchema) -> Result<ContentEvent, WireError> {
    let kind = match frame.kind {
        FrameKind::Data => EventKind::Data(decode_instance(&frame.payload, schema)?),
        FrameKind::EndOfStream if frame.payload.is_empty() => EventKind::EndOfStream,
        FrameKind::EndOfStream => return Err(WireError::MalformedPayload("end_of_stream with a payload".into())),
        other => {
            return Err(WireError::MalformedPayload(format!(
                "{other:?} frame is not a content event"
            )))
        }
    };
    Ok(ContentEvent {
        edge_id: frame.edge_id,
        target_partition: frame.target_partition,
        seq: frame.seq,
        kind,
    })
}

/// Presence bitmap over the feature cells (LSB-first), present cells, label, flags.
pub fn encode_instance(instance: &Instance, schema: &DatasetSchema) -> Result<Vec<u8>, WireError> {
    schema
        .check_instance(instance)
        .map_err(|e| WireError::SchemaMismatch(e.to_string()))?;
    let n = instance.values.len();
    let mut bitmap = vec![0u8; n.div_ceil(8)];
    for (i, cell) in instance.values.iter().enumerate() {
        if !cell.is_missing() {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    let mut w = Writer::with_capacity(bitmap.len() + 8 * n + 3);
    w.bytes(&bitmap);
    for cell in &instance.values {
        match cell {
            Cell::Numeric(v) => w.f64(*v),
            Cell::Categorical(c) => w.u16(*c),
            Cell::Missing => &mut w,
        };
    }
    w.u16(instance.label.unwrap_or(UNLABELED)).u8(instance.flags.bits());
    Ok(w.into_bytes())
}

pub fn decode_instance(payload: &[u8], schema: &DatasetSchema) -> Result<Instance, WireError> {
    let n = schema.feature_count();
    let mut r = Reader::new(payload);
    let bitmap = r.take(n.div_ceil(8))?;
    if !n.is_multiple_of(8) && bitmap[n / 8] >> (n % 8) != 0 {
        return Err(WireError::MalformedPayload(
            "presence bits set past the last attribute".into(),
        ));
    }
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        if bitmap[i / 8] & (1 << (i % 8)) == 0 {
            values.push(Cell::Missing);
        } else if schema.feature(i).is_numeric() {
            values.push(Cell::Numeric(r.f64()?));
        } else {
            values.push(Cell::Categorical(r.u16()?));
        }
    }
    let label = match r.u16()? {
        UNLABELED => None,
        l => Some(l),
    };
    let flags = Flags::from_bits(r.u8()?).ok_or_else(|| WireError::MalformedPayload("unknown flag bits".into()))?;
    r.finish()?;
    let instance = Instance { values, label, flags };
    schema
        .check_instance(&instance)
        .map_err(|e| WireError::MalformedPayload(e.to_string()))?;
    Ok(instance)
}

/// Payload of a control-handshake frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub topology_hash: u64,
    pub schema_hash: u64,
    pub worker_id: u16,
}

impl Handshake {
    pub const LEN: usize = 18;

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(Self::LEN);
        w.u64(self.topology_hash).u64(self.schema_hash).u16(self.worker_id);
        w.into_bytes()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(payload);
        let h = Handshake {
            topology_hash: r.u64()?,
            schema_hash: r.u64()?,
            worker_id: r.u16()?,
        };
        r.finish()?;
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smdm_core::schema::parse_schema;

    fn schema() -> DatasetSchema {
        parse_schema("x numeric\nc categorical {a,b,c}\ny class {no,yes}").unwrap()
    }

    #[test]
    fn end_of_stream_frame() {
        let e = ContentEvent {
            edge_id: 0,
            target_partition: 0,
            seq: 7,
            kind: EventKind::EndOfStream,
        };
        let bytes = serialize_event(&e, &schema()).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[18..22], &[0, 0, 0, 0]);
        assert_eq!(deserialize_event(&bytes, &schema()).unwrap(), e);
    }

    #[test]
    fn missing_cell_clears_bit() {
        let inst = Instance::new(vec![Cell::Missing, Cell::Categorical(2)], Some(1));
        let p = encode_instance(&inst, &schema()).unwrap();
        assert_eq!(p, vec![0b10, 0, 2, 0, 1, 0]);
        assert_eq!(decode_instance(&p, &schema()).unwrap(), inst);
    }

    #[test]
    fn header_errors() {
        let e = ContentEvent {
            edge_id: 3,
            target_partition: 1,
            seq: 9,
            kind: EventKind::Data(Instance::new(vec![Cell::Numeric(1.0), Cell::Missing], None)),
        };
        let good = serialize_event(&e, &schema()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(deserialize_event(&bad, &schema()), Err(WireError::BadMagic));
        let mut bad = good.clone();
        bad[4] = 99;
        assert_eq!(
            deserialize_event(&bad, &schema()),
            Err(WireError::UnsupportedVersion(99))
        );
        assert_eq!(
            deserialize_event(&good[..good.len() - 2], &schema()),
            Err(WireError::TruncatedFrame)
        );
        assert_eq!(
            deserialize_event(&good[..10], &schema()),
            Err(WireError::TruncatedFrame)
        );
    }

    #[test]
    fn schema_mismatch_on_serialize() {
        let e = ContentEvent {
            edge_id: 0,
            target_partition: 0,
            seq: 0,
            kind: EventKind::Data(Instance::new(vec![Cell::Categorical(0), Cell::Missing], None)),
        };
        assert!(matches!(
            serialize_event(&e, &schema()),
            Err(WireError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn stray_presence_bits_rejected() {
        let p = vec![0b100, 0, 0xFF, 0xFF, 0];
        assert!(matches!(
            decode_instance(&p, &schema()),
            Err(WireError::MalformedPayload(_))
        ));
    }

    #[test]
    fn read_from_stream() {
        let f = Frame::new(FrameKind::Ack, 1, 2, 64, vec![]);
        let g = Frame::new(FrameKind::StateTransfer, 4, 0, 1, vec![1, 2, 3]);
        let mut buf = f.encode();
        buf.extend(g.encode());
        let mut cur = std::io::Cursor::new(buf);
        assert_eq!(Frame::read_from(&mut cur).unwrap(), Some(f));
        assert_eq!(Frame::read_from(&mut cur).unwrap(), Some(g));
        assert!(Frame::read_from(&mut cur).unwrap().is_none());
    }

    #[test]
    fn handshake_round_trip() {
        let h = Handshake {
            topology_hash: 1,
            schema_hash: u64::MAX,
            worker_id: 3,
        };
        assert_eq!(Handshake::decode(&h.encode()).unwrap(), h);
        assert!(Handshake::decode(&h.encode()[..10]).is_err());
    }
}
