use std::fmt;
use std::io::{self, Read, Write};

use super::TransportError;

pub const FRAME_HEADER_LEN: usize = 16;
/// Transfer grain. Every payload except the last frame of a column is a
/// multiple of this.
pub const BEAT_BYTES: usize = 64;
pub const MAX_PAYLOAD: usize = 65536;
/// Column index of the schema frame, whose payload is a 24-byte column file
/// header describing the stream that follows.
pub const SCHEMA_COLUMN: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Data = 1,
    Config = 2,
    End = 3,
    Error = 4,
    Ack = 5,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => FrameType::Data,
            2 => FrameType::Config,
            3 => FrameType::End,
            4 => FrameType::Error,
            5 => FrameType::Ack,
            _ => return None,
        })
    }
}

impl fmt::Display for FrameType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameType::Data => "DATA",
            FrameType::Config => "CONFIG",
            FrameType::End => "END",
            FrameType::Error => "ERROR",
            FrameType::Ack => "ACK",
        };
        f.write_str(s)
    }
}

/// 16-byte little-endian frame header:
/// `type:u8 | slot:u8 | column:u16 | payload_len:u32 | sequence:u64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_type: FrameType,
    pub slot_id: u8,
    pub column_index: u16,
    pub payload_len: u32,
    pub sequence: u64,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut b = [0u8; FRAME_HEADER_LEN];
        b[0] = self.frame_type as u8;
        b[1] = self.slot_id;
        b[2..4].copy_from_slice(&self.column_index.to_le_bytes());
        b[4..8].copy_from_slice(&self.payload_len.to_le_bytes());
        b[8..16].copy_from_slice(&self.sequence.to_le_bytes());
        b
    }

    pub fn from_bytes(
        b: &[u8; FRAME_HEADER_LEN],
        max_payload: usize,
    ) -> Result<Self, TransportError> {
        let sequence = u64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
        let frame_type = FrameType::from_u8(b[0]).ok_or_else(|| TransportError::Protocol {
            sequence,
            reason: format!("unknown frame type {}", b[0]),
        })?;
        let payload_len = u32::from_le_bytes(b[4..8].try_into().expect("4 bytes"));
        if payload_len as usize > max_payload {
            return Err(TransportError::Protocol {
                sequence,
                reason: format!("payload length {payload_len} exceeds {max_payload}"),
            });
        }
        Ok(Self {
            frame_type,
            slot_id: b[1],
            column_index: u16::from_le_bytes([b[2], b[3]]),
            payload_len,
            sequence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamFrame {
    pub header: FrameHeader,
    pub payload: Vec<u8>,
}

impl StreamFrame {
    pub fn new(
        frame_type: FrameType,
        slot_id: u8,
        column_index: u16,
        sequence: u64,
        payload: Vec<u8>,
    ) -> Self {
        Self {
            header: FrameHeader {
                frame_type,
                slot_id,
                column_index,
                payload_len: payload.len() as u32,
                sequence,
            },
            payload,
        }
    }

    pub fn data(column_index: u16, sequence: u64, payload: Vec<u8>) -> Self {
        Self::new(FrameType::Data, 0, column_index, sequence, payload)
    }

    pub fn column(&self) -> usize {
        usize::from(self.header.column_index)
    }

    pub fn sequence(&self) -> u64 {
        self.header.sequence
    }

    pub fn frame_type(&self) -> FrameType {
        self.header.frame_type
    }
}

/// Rows per full frame for elements of `width` bytes: the largest multiple
/// of 64 rows that fits in `max_payload`, so payloads stay beat-aligned and
/// never split an element.
pub fn rows_per_frame(width: usize, max_payload: usize) -> usize {
    ((max_payload / width.max(1)) / BEAT_BYTES * BEAT_BYTES).max(BEAT_BYTES)
}

/// Reads one frame. `Ok(None)` on a clean end of stream before the header.
pub fn read_frame<R: Read>(
    r: &mut R,
    max_payload: usize,
) -> Result<Option<StreamFrame>, TransportError> {
    let mut hb = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < FRAME_HEADER_LEN {
        match r.read(&mut hb[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(TransportError::Protocol {
                    sequence: 0,
                    reason: format!("stream ended inside a frame header ({filled} bytes)"),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = FrameHeader::from_bytes(&hb, max_payload)?;
    let mut payload = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            TransportError::Protocol {
                sequence: header.sequence,
                reason: "stream ended inside a frame payload".into(),
            }
        } else {
            e.into()
        }
    })?;
    Ok(Some(StreamFrame { header, payload }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &StreamFrame) -> io::Result<()> {
    w.write_all(&frame.header.to_bytes())?;
    w.write_all(&frame.payload)
}

/// Writes frames for one slot lane, numbering them 1, 2, 3, ...
pub struct FrameWriter<W: Write> {
    out: W,
    slot_id: u8,
    next_sequence: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(out: W, slot_id: u8) -> Self {
        Self {
            out,
            slot_id,
            next_sequence: 1,
        }
    }

    pub fn slot_id(&self) -> u8 {
        self.slot_id
    }

    /// Sequence number of the last frame sent (0 before the first).
    pub fn last_sequence(&self) -> u64 {
        self.next_sequence - 1
    }

    pub fn send(
        &mut self,
        frame_type: FrameType,
        column_index: u16,
        payload: &[u8],
    ) -> io::Result<u64> {
        let seq = self.next_sequence;
        let header = FrameHeader {
            frame_type,
            slot_id: self.slot_id,
            column_index,
            payload_len: payload.len() as u32,
            sequence: seq,
        };
        self.out.write_all(&header.to_bytes())?;
        self.out.write_all(payload)?;
        self.next_sequence += 1;
        Ok(seq)
    }

    pub fn send_error(&mut self, message: &str) -> io::Result<u64> {
        let seq = self.send(FrameType::Error, 0, message.as_bytes())?;
        self.flush()?;
        Ok(seq)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn get_mut(&mut self) -> &mut W {
        &mut self.out
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
