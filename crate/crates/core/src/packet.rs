//! Runtime packet types and the 8-bit floating-point delta codec used
//! for address compression.

use crate::instr::AccessKind;
use crate::mir::InstructionId;

/// A message from the collector to the checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DfiPacket {
    Basic {
        kind: AccessKind,
        id: InstructionId,
        addr: u32,
    },
    Library {
        id: InstructionId,
        load_addr: Option<u32>,
        store_addr: Option<u32>,
        /// Access length in words (bytes rounded up).
        len_words: u64,
        /// Whether the length needs a second 32-bit word on the wire.
        len64: bool,
    },
}

impl DfiPacket {
    pub fn basic(kind: AccessKind, id: u16, addr: u32) -> DfiPacket {
        DfiPacket::Basic {
            kind,
            id: InstructionId(id),
            addr,
        }
    }

    /// Bytes this packet costs on the wire without compression: one
    /// 64-bit record for a basic packet, one per library record.
    pub fn uncompressed_wire_bytes(&self) -> u64 {
        match self {
            DfiPacket::Basic { .. } => 8,
            DfiPacket::Library {
                load_addr,
                store_addr,
                len64,
                ..
            } => {
                8 * (2 + u64::from(load_addr.is_some())
                    + u64::from(store_addr.is_some())
                    + u64::from(*len64))
            }
        }
    }
}

/// Address delta in sign/significand/exponent form with base-16
/// exponent: value = (-1)^sign * significand * 16^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Float8Delta {
    pub sign: bool,
    pub significand: u8,
    pub exponent: u8,
}

impl Float8Delta {
    pub fn value(&self) -> i64 {
        let magnitude = i64::from(self.significand) * 16i64.pow(u32::from(self.exponent));
        if self.sign {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Bit layout: [7] sign, [6..3] significand, [2..0] exponent.
    pub fn to_bits(&self) -> u8 {
        (u8::from(self.sign) << 7) | ((self.significand & 0xF) << 3) | (self.exponent & 0x7)
    }

    pub fn from_bits(bits: u8) -> Float8Delta {
        Float8Delta {
            sign: bits >> 7 == 1,
            significand: (bits >> 3) & 0xF,
            exponent: bits & 0x7,
        }
    }
}

/// Encodes a delta when it has the form +-m*16^e with m <= 15, e <= 7;
/// picks the smallest exponent. Zero encodes as +0*16^0.
pub fn float8_encode(delta: i64) -> Option<Float8Delta> {
    let sign = delta < 0;
    let magnitude = delta.unsigned_abs();
    let mut scaled = magnitude;
    for exponent in 0..=7u8 {
        if scaled <= 15 {
            return Some(Float8Delta {
                sign: sign && magnitude != 0,
                significand: scaled as u8,
                exponent,
            });
        }
        if scaled % 16 != 0 {
            return None;
        }
        scaled /= 16;
    }
    None
}

/// Address-delta compression between two concrete addresses.
pub fn compress_delta(prev_addr: u32, cur_addr: u32) -> Option<Float8Delta> {
    float8_encode(i64::from(cur_addr) - i64::from(prev_addr))
}

/// A 15-bit compressed packet: instruction type, address delta and a
/// signed 6-bit identifier delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompressedSlot {
    pub kind: AccessKind,
    pub addr_delta: Float8Delta,
    pub id_delta: i8,
}

pub const ID_DELTA_MIN: i32 = -32;
pub const ID_DELTA_MAX: i32 = 31;

impl CompressedSlot {
    /// Layout within 15 bits: [14] type, [13..6] float8, [5..0] id delta.
    pub fn to_bits(&self) -> u16 {
        let delta6 = (self.id_delta as u16) & 0x3F;
        (u16::from(self.kind.bit() as u8) << 14)
            | (u16::from(self.addr_delta.to_bits()) << 6)
            | delta6
    }

    pub fn from_bits(bits: u16) -> CompressedSlot {
        let raw = (bits & 0x3F) as u8;
        // Sign-extend the 6-bit field.
        let id_delta = ((raw << 2) as i8) >> 2;
        CompressedSlot {
            kind: AccessKind::from_bit(u32::from(bits >> 14)),
            addr_delta: Float8Delta::from_bits(((bits >> 6) & 0xFF) as u8),
            id_delta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_of_0x400_encodes_with_exponent_two() {
        let f = float8_encode(0x400).unwrap();
        assert_eq!((f.sign, f.significand, f.exponent), (false, 4, 2));
        assert_eq!(f.value(), 0x400);
    }

    #[test]
    fn zero_delta_is_canonical() {
        let f = float8_encode(0).unwrap();
        assert_eq!((f.sign, f.significand, f.exponent), (false, 0, 0));
    }

    #[test]
    fn seventeen_is_not_representable() {
        assert_eq!(float8_encode(17), None);
        assert_eq!(compress_delta(0, 17), None);
    }

    #[test]
    fn range_limits() {
        assert_eq!(float8_encode(15 << 28).unwrap().value(), 15 << 28);
        assert_eq!(float8_encode(-(15i64 << 28)).unwrap().value(), -(15i64 << 28));
        assert_eq!(float8_encode(16 << 28), None);
    }

    #[test]
    fn all_codes_roundtrip_by_value() {
        for bits in 0..=255u8 {
            let f = Float8Delta::from_bits(bits);
            let v = f.value();
            let re = float8_encode(v).expect("every code value is representable");
            assert_eq!(re.value(), v);
            assert_eq!(Float8Delta::from_bits(f.to_bits()), f);
        }
    }

    #[test]
    fn slot_bits_roundtrip() {
        for id_delta in ID_DELTA_MIN..=ID_DELTA_MAX {
            let slot = CompressedSlot {
                kind: if id_delta % 2 == 0 {
                    AccessKind::Load
                } else {
                    AccessKind::Store
                },
                addr_delta: float8_encode(64).unwrap(),
                id_delta: id_delta as i8,
            };
            let bits = slot.to_bits();
            assert!(bits < (1 << 15));
            assert_eq!(CompressedSlot::from_bits(bits), slot);
        }
    }
}
