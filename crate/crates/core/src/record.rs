//! Bit-exact 64-bit FIFO record format.
//!
//! bits 63..62  kind: 00 Basic, 01 CompressedPair, 10 Library, 11 Control
//! Basic:       bit 48 type, bits 47..32 id, bits 31..0 address
//! Pair:        bits 31..30 slot-valid mask (bit 30 = slot0, bit 31 =
//!              slot1), bits 29..15 slot1, bits 14..0 slot0
//! Library:     bits 61..60 sub-tag: 00 header (info-word bits 20..17 and
//!              15..0), 01 load-addr, 10 store-addr, 11 length-word; the
//!              header precedes its operands, length low word first
//! Control:     bits 61..60 = 00 marks end-of-stream

use thiserror::Error;

use crate::instr::AccessKind;
use crate::mir::InstructionId;
use crate::packet::{CompressedSlot, DfiPacket};

const KIND_BASIC: u64 = 0b00;
const KIND_PAIR: u64 = 0b01;
const KIND_LIBRARY: u64 = 0b10;
const KIND_CONTROL: u64 = 0b11;

const LIB_HEADER: u64 = 0b00;
const LIB_LOAD_ADDR: u64 = 0b01;
const LIB_STORE_ADDR: u64 = 0b10;
const LIB_LENGTH: u64 = 0b11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    Basic {
        kind: AccessKind,
        id: InstructionId,
        addr: u32,
    },
    Pair {
        slot0: CompressedSlot,
        slot1: Option<CompressedSlot>,
    },
    LibHeader {
        has_load: bool,
        has_store: bool,
        len64: bool,
        id: InstructionId,
    },
    LibLoadAddr(u32),
    LibStoreAddr(u32),
    LibLength(u32),
    EndOfStream,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unknown control sub-tag {0:#x}")]
    UnknownControl(u64),
    #[error("compressed pair with empty slot mask")]
    EmptyPair,
    #[error("library operand record without a pending header")]
    OperandWithoutHeader,
    #[error("library sequence out of order")]
    SequenceOutOfOrder,
}

pub fn encode_record(record: &Record) -> u64 {
    match record {
        Record::Basic { kind, id, addr } => {
            (KIND_BASIC << 62)
                | (u64::from(kind.bit()) << 48)
                | (u64::from(id.0) << 32)
                | u64::from(*addr)
        }
        Record::Pair { slot0, slot1 } => {
            let mut word: u64 = u64::from(slot0.to_bits());
            let mut mask: u64 = 0b01;
            if let Some(s1) = slot1 {
                word |= u64::from(s1.to_bits()) << 15;
                mask |= 0b10;
            }
            (KIND_PAIR << 62) | (mask << 30) | word
        }
        Record::LibHeader {
            has_load,
            has_store,
            len64,
            id,
        } => {
            (KIND_LIBRARY << 62)
                | (LIB_HEADER << 60)
                | (1 << 20)
                | (u64::from(*has_load) << 19)
                | (u64::from(*len64) << 18)
                | (u64::from(*has_store) << 17)
                | u64::from(id.0)
        }
        Record::LibLoadAddr(a) => (KIND_LIBRARY << 62) | (LIB_LOAD_ADDR << 60) | u64::from(*a),
        Record::LibStoreAddr(a) => (KIND_LIBRARY << 62) | (LIB_STORE_ADDR << 60) | u64::from(*a),
        Record::LibLength(w) => (KIND_LIBRARY << 62) | (LIB_LENGTH << 60) | u64::from(*w),
        Record::EndOfStream => KIND_CONTROL << 62,
    }
}

pub fn decode_record(raw: u64) -> Result<Record, DecodeError> {
    match raw >> 62 {
        KIND_BASIC => Ok(Record::Basic {
            kind: AccessKind::from_bit(((raw >> 48) & 1) as u32),
            id: InstructionId(((raw >> 32) & 0xFFFF) as u16),
            addr: (raw & 0xFFFF_FFFF) as u32,
        }),
        KIND_PAIR => {
            let mask = (raw >> 30) & 0b11;
            if mask & 0b01 == 0 {
                return Err(DecodeError::EmptyPair);
            }
            let slot0 = CompressedSlot::from_bits((raw & 0x7FFF) as u16);
            let slot1 = if mask & 0b10 != 0 {
                Some(CompressedSlot::from_bits(((raw >> 15) & 0x7FFF) as u16))
            } else {
                None
            };
            Ok(Record::Pair { slot0, slot1 })
        }
        KIND_LIBRARY => {
            let payload = raw & 0xFFFF_FFFF;
            match (raw >> 60) & 0b11 {
                LIB_HEADER => Ok(Record::LibHeader {
                    has_load: (payload >> 19) & 1 == 1,
                    has_store: (payload >> 17) & 1 == 1,
                    len64: (payload >> 18) & 1 == 1,
                    id: InstructionId((payload & 0xFFFF) as u16),
                }),
                LIB_LOAD_ADDR => Ok(Record::LibLoadAddr(payload as u32)),
                LIB_STORE_ADDR => Ok(Record::LibStoreAddr(payload as u32)),
                _ => Ok(Record::LibLength(payload as u32)),
            }
        }
        _ => {
            let sub = (raw >> 60) & 0b11;
            if sub == 0 {
                Ok(Record::EndOfStream)
            } else {
                Err(DecodeError::UnknownControl(sub))
            }
        }
    }
}

/// Emits the record sequence of a library packet in transmission order.
pub fn library_records(
    id: InstructionId,
    load_addr: Option<u32>,
    store_addr: Option<u32>,
    len_words: u64,
    len64: bool,
) -> Vec<Record> {
    let mut out = vec![Record::LibHeader {
        has_load: load_addr.is_some(),
        has_store: store_addr.is_some(),
        len64,
        id,
    }];
    if let Some(a) = load_addr {
        out.push(Record::LibLoadAddr(a));
    }
    if let Some(a) = store_addr {
        out.push(Record::LibStoreAddr(a));
    }
    out.push(Record::LibLength((len_words & 0xFFFF_FFFF) as u32));
    if len64 {
        out.push(Record::LibLength((len_words >> 32) as u32));
    }
    out
}

/// One decoded unit of the stream. Compressed slots stay deltas; the
/// consumer is responsible for decompression against its references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamUnit {
    Basic {
        kind: AccessKind,
        id: InstructionId,
        addr: u32,
    },
    Compressed(CompressedSlot),
    Library {
        id: InstructionId,
        load_addr: Option<u32>,
        store_addr: Option<u32>,
        len_words: u64,
        len64: bool,
    },
    EndOfStream,
}

#[derive(Debug, Default)]
struct LibPending {
    id: InstructionId,
    want_load: bool,
    want_store: bool,
    len64: bool,
    load_addr: Option<u32>,
    store_addr: Option<u32>,
    len_lo: Option<u32>,
    len_hi: Option<u32>,
}

/// Reassembles multi-record library sequences into whole stream units.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    pending: Option<LibPending>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        StreamDecoder { pending: None }
    }

    pub fn push(&mut self, raw: u64) -> Result<Vec<StreamUnit>, DecodeError> {
        let record = decode_record(raw)?;
        let mut out = Vec::new();
        match record {
            Record::LibHeader {
                has_load,
                has_store,
                len64,
                id,
            } => {
                if self.pending.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                self.pending = Some(LibPending {
                    id,
                    want_load: has_load,
                    want_store: has_store,
                    len64,
                    ..LibPending::default()
                });
            }
            Record::LibLoadAddr(a) => {
                let p = self
                    .pending
                    .as_mut()
                    .ok_or(DecodeError::OperandWithoutHeader)?;
                if !p.want_load || p.load_addr.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                p.load_addr = Some(a);
            }
            Record::LibStoreAddr(a) => {
                let p = self
                    .pending
                    .as_mut()
                    .ok_or(DecodeError::OperandWithoutHeader)?;
                if !p.want_store || p.store_addr.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                if p.want_load && p.load_addr.is_none() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                p.store_addr = Some(a);
            }
            Record::LibLength(w) => {
                let p = self
                    .pending
                    .as_mut()
                    .ok_or(DecodeError::OperandWithoutHeader)?;
                if (p.want_load && p.load_addr.is_none())
                    || (p.want_store && p.store_addr.is_none())
                {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                if p.len_lo.is_none() {
                    p.len_lo = Some(w);
                } else if p.len64 && p.len_hi.is_none() {
                    p.len_hi = Some(w);
                } else {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
            }
            Record::Basic { kind, id, addr } => {
                if self.pending.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                out.push(StreamUnit::Basic { kind, id, addr });
            }
            Record::Pair { slot0, slot1 } => {
                if self.pending.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                out.push(StreamUnit::Compressed(slot0));
                if let Some(s1) = slot1 {
                    out.push(StreamUnit::Compressed(s1));
                }
            }
            Record::EndOfStream => {
                if self.pending.is_some() {
                    return Err(DecodeError::SequenceOutOfOrder);
                }
                out.push(StreamUnit::EndOfStream);
            }
        }
        if let Some(p) = &self.pending {
            let complete = (!p.want_load || p.load_addr.is_some())
                && (!p.want_store || p.store_addr.is_some())
                && p.len_lo.is_some()
                && (!p.len64 || p.len_hi.is_some());
            if complete {
                let p = self.pending.take().unwrap();
                let len_words =
                    u64::from(p.len_lo.unwrap()) | (u64::from(p.len_hi.unwrap_or(0)) << 32);
                out.push(StreamUnit::Library {
                    id: p.id,
                    load_addr: p.load_addr,
                    store_addr: p.store_addr,
                    len_words,
                    len64: p.len64,
                });
            }
        }
        Ok(out)
    }
}

/// Decodes a complete record stream back into packets, resolving
/// compressed slots against the given starting reference. Used by tests
/// to check compression losslessness.
pub fn decode_stream_to_packets(
    records: &[u64],
    mut reference: Option<(u32, u16)>,
) -> Result<Vec<DfiPacket>, DecodeError> {
    let mut decoder = StreamDecoder::new();
    let mut out = Vec::new();
    for &raw in records {
        for unit in decoder.push(raw)? {
            match unit {
                StreamUnit::Basic { kind, id, addr } => {
                    reference = Some((addr, id.0));
                    out.push(DfiPacket::Basic { kind, id, addr });
                }
                StreamUnit::Compressed(slot) => {
                    let (pa, pid) = reference.ok_or(DecodeError::OperandWithoutHeader)?;
                    let addr = (i64::from(pa) + slot.addr_delta.value()) as u32;
                    let id = (i32::from(pid) + i32::from(slot.id_delta)) as u16;
                    reference = Some((addr, id));
                    out.push(DfiPacket::Basic {
                        kind: slot.kind,
                        id: InstructionId(id),
                        addr,
                    });
                }
                StreamUnit::Library {
                    id,
                    load_addr,
                    store_addr,
                    len_words,
                    len64,
                } => out.push(DfiPacket::Library {
                    id,
                    load_addr,
                    store_addr,
                    len_words,
                    len64,
                }),
                StreamUnit::EndOfStream => {}
            }
        }
    }
    Ok(out)
}
