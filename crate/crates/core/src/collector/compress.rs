//! Packet-to-record emission with optional delta compression.
//!
//! A basic packet compresses to 15 bits when its address delta against
//! the running reference fits the float8 format and its identifier delta
//! fits 6 signed bits. Consecutive compressed packets pack two per
//! 32-bit word. The reference follows every basic packet, compressed or
//! not, and survives flush boundaries; library packets leave it alone.

use crate::packet::{compress_delta, CompressedSlot, DfiPacket, ID_DELTA_MAX, ID_DELTA_MIN};
use crate::record::{encode_record, library_records, Record};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WireStats {
    pub records: u64,
    /// Meaningful bytes on the wire: 8 per basic or library record,
    /// 4 per compressed pair word.
    pub wire_bytes: u64,
}

struct Emitter<'a> {
    out: &'a mut Vec<u64>,
    stats: WireStats,
    pending: Option<CompressedSlot>,
}

impl Emitter<'_> {
    fn push_record(&mut self, record: &Record, bytes: u64) {
        self.out.push(encode_record(record));
        self.stats.records += 1;
        self.stats.wire_bytes += bytes;
    }

    fn flush_pending(&mut self) {
        if let Some(slot0) = self.pending.take() {
            self.push_record(&Record::Pair { slot0, slot1: None }, 4);
        }
    }

    fn push_slot(&mut self, slot: CompressedSlot) {
        match self.pending.take() {
            Some(slot0) => self.push_record(
                &Record::Pair {
                    slot0,
                    slot1: Some(slot),
                },
                4,
            ),
            None => self.pending = Some(slot),
        }
    }
}

/// Converts an optimized packet run into FIFO records, updating the
/// decompression reference as the checker will.
pub fn emit_records(
    packets: &[DfiPacket],
    compression: bool,
    reference: &mut Option<(u32, u16)>,
    out: &mut Vec<u64>,
) -> WireStats {
    let mut e = Emitter {
        out,
        stats: WireStats::default(),
        pending: None,
    };
    for packet in packets {
        match packet {
            DfiPacket::Basic { kind, id, addr } => {
                let slot = if compression {
                    reference.and_then(|(pa, pid)| {
                        let id_delta = i32::from(id.0) - i32::from(pid);
                        if !(ID_DELTA_MIN..=ID_DELTA_MAX).contains(&id_delta) {
                            return None;
                        }
                        compress_delta(pa, *addr).map(|addr_delta| CompressedSlot {
                            kind: *kind,
                            addr_delta,
                            id_delta: id_delta as i8,
                        })
                    })
                } else {
                    None
                };
                match slot {
                    Some(slot) => e.push_slot(slot),
                    None => {
                        e.flush_pending();
                        e.push_record(
                            &Record::Basic {
                                kind: *kind,
                                id: *id,
                                addr: *addr,
                            },
                            8,
                        );
                    }
                }
                *reference = Some((*addr, id.0));
            }
            DfiPacket::Library {
                id,
                load_addr,
                store_addr,
                len_words,
                len64,
            } => {
                e.flush_pending();
                for record in library_records(*id, *load_addr, *store_addr, *len_words, *len64) {
                    e.push_record(&record, 8);
                }
            }
        }
    }
    e.flush_pending();
    e.stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instr::AccessKind;
    use crate::record::decode_stream_to_packets;

    fn stride_run(n: u16) -> Vec<DfiPacket> {
        (0..n)
            .map(|k| DfiPacket::basic(AccessKind::Store, 12, 0x8000 + 4 * u32::from(k)))
            .collect()
    }

    #[test]
    fn stride_run_compresses_everything_after_the_first() {
        let packets = stride_run(64);
        let mut reference = None;
        let mut out = Vec::new();
        let stats = emit_records(&packets, true, &mut reference, &mut out);
        // 1 basic + 63 slots in 32 pair records.
        assert_eq!(stats.records, 1 + 32);
        assert_eq!(stats.wire_bytes, 8 + 32 * 4);
        let decoded = decode_stream_to_packets(&out, None).unwrap();
        assert_eq!(decoded, packets);
    }

    #[test]
    fn single_packet_stays_basic() {
        let packets = stride_run(1);
        let mut reference = None;
        let mut out = Vec::new();
        let stats = emit_records(&packets, true, &mut reference, &mut out);
        assert_eq!(stats.records, 1);
        assert_eq!(stats.wire_bytes, 8);
    }

    #[test]
    fn reference_carries_across_calls() {
        let mut reference = None;
        let mut out = Vec::new();
        emit_records(&stride_run(4), true, &mut reference, &mut out);
        let first_len = out.len();
        // Continuing the stride in a second flush starts compressed.
        let next: Vec<DfiPacket> = (4..8)
            .map(|k| DfiPacket::basic(AccessKind::Store, 12, 0x8000 + 4 * k))
            .collect();
        let stats = emit_records(&next, true, &mut reference, &mut out);
        assert_eq!(stats.records, 2);
        assert_eq!(stats.wire_bytes, 8);
        let mut all: Vec<DfiPacket> = stride_run(4);
        all.extend(next);
        assert_eq!(decode_stream_to_packets(&out, None).unwrap(), all);
        assert!(out.len() > first_len);
    }

    #[test]
    fn incompressible_delta_falls_back_to_basic() {
        let packets = vec![
            DfiPacket::basic(AccessKind::Store, 5, 0x8000),
            DfiPacket::basic(AccessKind::Store, 5, 0x8011),
        ];
        let mut reference = None;
        let mut out = Vec::new();
        let stats = emit_records(&packets, true, &mut reference, &mut out);
        assert_eq!(stats.records, 2);
        assert_eq!(stats.wire_bytes, 16);
    }
}
