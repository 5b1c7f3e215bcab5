//! The memory-side checking program: consumes FIFO records, maintains
//! the Reaching Definition Table, and reports violations.
//!
//! The RDT holds one 16-bit identifier per memory word (half a byte of
//! table per byte of data). Entry 0 means "never written". A load packet
//! whose identifier exceeds the static id space is a return check: the
//! table entry must equal the identifier exactly.

use thiserror::Error;

use crate::fifo::FifoMemory;
use crate::instr::AccessKind;
use crate::packet::CompressedSlot;
use crate::rda::RdsMap;
use crate::record::{StreamDecoder, StreamUnit};
use crate::report::{ViolationKind, ViolationReport};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("packet address 0x{0:08x} outside configured memory")]
    AddressOutOfRange(u32),
    #[error("library range 0x{addr:08x}+{words} words outside configured memory")]
    RangeOutOfMemory { addr: u32, words: u64 },
}

/// Dense table of last-writer identifiers, one per memory word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rdt {
    entries: Vec<u16>,
}

impl Rdt {
    pub fn new(memory_bytes: u32) -> Rdt {
        Rdt {
            entries: vec![0; (memory_bytes / 4) as usize],
        }
    }

    pub fn entries(&self) -> &[u16] {
        &self.entries
    }

    pub fn byte_size(&self) -> usize {
        self.entries.len() * 2
    }

    fn get(&self, word: u32) -> Option<u16> {
        self.entries.get(word as usize).copied()
    }

    fn set(&mut self, word: u32, id: u16) -> bool {
        match self.entries.get_mut(word as usize) {
            Some(slot) => {
                *slot = id;
                true
            }
            None => false,
        }
    }
}

#[derive(Debug)]
pub struct Checker {
    rdt: Rdt,
    /// Packet ordinal that last wrote each word, for latency reporting.
    write_pos: Vec<u64>,
    rds: RdsMap,
    max_static_id: u16,
    /// Decompression reference: most recent fully processed basic or
    /// decompressed packet.
    prev: Option<(u32, u16)>,
    pub packets_processed: u64,
    violations: Vec<ViolationReport>,
    decoder: StreamDecoder,
    end_seen: bool,
}

impl Checker {
    pub fn new(rds: RdsMap, memory_bytes: u32) -> Checker {
        let words = (memory_bytes / 4) as usize;
        let max_static_id = rds.max_static_id;
        Checker {
            rdt: Rdt::new(memory_bytes),
            write_pos: vec![0; words],
            rds,
            max_static_id,
            prev: None,
            packets_processed: 0,
            violations: Vec::new(),
            decoder: StreamDecoder::new(),
            end_seen: false,
        }
    }

    pub fn rdt(&self) -> &Rdt {
        &self.rdt
    }

    pub fn violations(&self) -> &[ViolationReport] {
        &self.violations
    }

    pub fn take_violations(&mut self) -> Vec<ViolationReport> {
        std::mem::take(&mut self.violations)
    }

    pub fn end_seen(&self) -> bool {
        self.end_seen
    }

    fn report(&mut self, kind: ViolationKind, load_id: u16, found_id: u16, address: u32) {
        let latency = match kind {
            ViolationKind::DfiCheckFailure => {
                let word = (address >> 2) as usize;
                let written = self.write_pos.get(word).copied().unwrap_or(0);
                self.packets_processed.saturating_sub(written)
            }
            _ => 0,
        };
        self.violations.push(ViolationReport {
            kind,
            load_id,
            found_id,
            address,
            packet_index: latency,
        });
    }

    /// Handles one store/load packet: stores update the table, loads are
    /// checked against their legal writer set.
    pub fn process_basic(
        &mut self,
        kind: AccessKind,
        id: u16,
        addr: u32,
    ) -> Result<Option<ViolationReport>, CheckError> {
        self.packets_processed += 1;
        let word = addr >> 2;
        let before = self.violations.len();
        match kind {
            AccessKind::Store => {
                if !self.rdt.set(word, id) {
                    return Err(CheckError::AddressOutOfRange(addr));
                }
                self.write_pos[word as usize] = self.packets_processed;
            }
            AccessKind::Load => {
                let found = self
                    .rdt
                    .get(word)
                    .ok_or(CheckError::AddressOutOfRange(addr))?;
                if id > self.max_static_id {
                    // Return-address rule: the slot must hold exactly the
                    // composite identifier written at call time.
                    if found != id {
                        self.report(ViolationKind::DfiCheckFailure, id, found, addr);
                    }
                } else {
                    let legal = self
                        .rds
                        .rds(crate::mir::InstructionId(id))
                        .map(|set| set.contains(&crate::mir::InstructionId(found)))
                        .unwrap_or(false);
                    if !legal {
                        self.report(ViolationKind::DfiCheckFailure, id, found, addr);
                    }
                }
            }
        }
        self.prev = Some((addr, id));
        Ok(self.violations.get(before).cloned())
    }

    /// Decompresses a slot against the running reference, then behaves
    /// like `process_basic`.
    pub fn process_compressed(
        &mut self,
        slot: CompressedSlot,
    ) -> Result<Option<ViolationReport>, CheckError> {
        let Some((prev_addr, prev_id)) = self.prev else {
            self.packets_processed += 1;
            self.report(ViolationKind::MalformedSequence, 0, 0, 0);
            return Ok(self.violations.last().cloned());
        };
        let addr = (i64::from(prev_addr) + slot.addr_delta.value()) as u32;
        let id = (i32::from(prev_id) + i32::from(slot.id_delta)) as u16;
        self.process_basic(slot.kind, id, addr)
    }

    /// Library packet: check every word of the load range, then write
    /// the identifier over the store range.
    pub fn process_library(
        &mut self,
        id: u16,
        load_addr: Option<u32>,
        store_addr: Option<u32>,
        len_words: u64,
    ) -> Result<Vec<ViolationReport>, CheckError> {
        self.packets_processed += 1;
        let before = self.violations.len();
        let check_range = |addr: u32, words: u64, total: usize| -> Result<(), CheckError> {
            let start = u64::from(addr >> 2);
            if start + words > total as u64 {
                return Err(CheckError::RangeOutOfMemory { addr, words });
            }
            Ok(())
        };
        if let Some(addr) = load_addr {
            check_range(addr, len_words, self.rdt.entries.len())?;
            for k in 0..len_words {
                let word = (addr >> 2) + k as u32;
                let found = self.rdt.get(word).unwrap();
                let legal = self
                    .rds
                    .rds(crate::mir::InstructionId(id))
                    .map(|set| set.contains(&crate::mir::InstructionId(found)))
                    .unwrap_or(false);
                if !legal {
                    self.report(ViolationKind::DfiCheckFailure, id, found, word << 2);
                }
            }
        }
        if let Some(addr) = store_addr {
            check_range(addr, len_words, self.rdt.entries.len())?;
            for k in 0..len_words {
                let word = (addr >> 2) + k as u32;
                self.rdt.set(word, id);
                self.write_pos[word as usize] = self.packets_processed;
            }
        }
        Ok(self.violations[before..].to_vec())
    }

    fn process_unit(&mut self, unit: StreamUnit) -> Result<(), CheckError> {
        match unit {
            StreamUnit::Basic { kind, id, addr } => {
                self.process_basic(kind, id.0, addr)?;
            }
            StreamUnit::Compressed(slot) => {
                self.process_compressed(slot)?;
            }
            StreamUnit::Library {
                id,
                load_addr,
                store_addr,
                len_words,
                ..
            } => {
                self.process_library(id.0, load_addr, store_addr, len_words)?;
            }
            StreamUnit::EndOfStream => self.end_seen = true,
        }
        Ok(())
    }

    /// Pops and processes records until the FIFO runs empty or the
    /// end-of-stream control record arrives. Returns whether the stream
    /// has ended.
    pub fn consume_stream(&mut self, fifo: &FifoMemory) -> Result<bool, CheckError> {
        while !self.end_seen {
            let Some(raw) = fifo.pop() else { break };
            match self.decoder.push(raw) {
                Ok(units) => {
                    for unit in units {
                        self.process_unit(unit)?;
                    }
                }
                Err(_) => {
                    self.report(ViolationKind::MalformedSequence, 0, 0, 0);
                }
            }
        }
        Ok(self.end_seen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::InstructionId;
    use std::collections::{BTreeMap, BTreeSet};

    fn rds_of(pairs: &[(u16, &[u16])]) -> RdsMap {
        let mut entries = BTreeMap::new();
        let mut max = 0;
        for (load, stores) in pairs {
            max = max.max(*load);
            let set: BTreeSet<InstructionId> =
                stores.iter().map(|s| InstructionId(*s)).collect();
            for s in *stores {
                max = max.max(*s);
            }
            entries.insert(InstructionId(*load), set);
        }
        RdsMap {
            entries,
            max_static_id: max,
        }
    }

    #[test]
    fn matching_store_load_passes() {
        let mut c = Checker::new(rds_of(&[(13, &[12])]), 0x10000);
        c.process_basic(AccessKind::Store, 12, 0x8000).unwrap();
        let v = c.process_basic(AccessKind::Load, 13, 0x8000).unwrap();
        assert!(v.is_none());
    }

    #[test]
    fn wrong_writer_is_reported_with_found_id() {
        // Fig. 2 with the branch taken: line 5 never executes, the load
        // at line 6 sees line 1's store.
        let mut c = Checker::new(rds_of(&[(6, &[5])]), 0x10000);
        c.process_basic(AccessKind::Store, 1, 0x100).unwrap();
        let v = c
            .process_basic(AccessKind::Load, 6, 0x100)
            .unwrap()
            .expect("violation");
        assert_eq!(v.kind, ViolationKind::DfiCheckFailure);
        assert_eq!(v.load_id, 6);
        assert_eq!(v.found_id, 1);
        assert_eq!(v.packet_index, 1);
    }

    #[test]
    fn never_written_word_reads_reserved_id() {
        let mut c = Checker::new(rds_of(&[(6, &[5])]), 0x10000);
        let v = c
            .process_basic(AccessKind::Load, 6, 0x200)
            .unwrap()
            .expect("violation");
        assert_eq!(v.found_id, 0);
    }

    #[test]
    fn return_rule_requires_exact_identifier() {
        let rds = rds_of(&[(13, &[12])]); // max_static_id = 13
        let mut c = Checker::new(rds, 0x10000);
        let composite = 0x64u16;
        c.process_basic(AccessKind::Store, composite, 0x7000).unwrap();
        assert!(c
            .process_basic(AccessKind::Load, composite, 0x7000)
            .unwrap()
            .is_none());
        // Any other stored id fails the equality rule.
        c.process_basic(AccessKind::Store, 12, 0x7000).unwrap();
        let v = c
            .process_basic(AccessKind::Load, composite, 0x7000)
            .unwrap()
            .expect("violation");
        assert_eq!(v.found_id, 12);
    }

    #[test]
    fn compressed_before_reference_is_malformed() {
        let mut c = Checker::new(rds_of(&[]), 0x10000);
        let slot = CompressedSlot {
            kind: AccessKind::Store,
            addr_delta: crate::packet::float8_encode(4).unwrap(),
            id_delta: 0,
        };
        let v = c.process_compressed(slot).unwrap().expect("violation");
        assert_eq!(v.kind, ViolationKind::MalformedSequence);
    }

    #[test]
    fn compressed_packet_reconstructs_address_and_id() {
        let mut c = Checker::new(rds_of(&[(13, &[12])]), 0x10000);
        c.process_basic(AccessKind::Store, 12, 0x8000).unwrap();
        let slot = CompressedSlot {
            kind: AccessKind::Store,
            addr_delta: crate::packet::float8_encode(4).unwrap(),
            id_delta: 0,
        };
        c.process_compressed(slot).unwrap();
        assert_eq!(c.rdt().entries()[(0x8004 >> 2) as usize], 12);
    }

    #[test]
    fn library_checks_loads_before_stores() {
        let mut c = Checker::new(rds_of(&[(7, &[3])]), 0x10000);
        for k in 0..8u32 {
            c.process_basic(AccessKind::Store, 3, 0x5000 + 4 * k).unwrap();
        }
        // memcpy-like: all ten checked words must be written by id 3;
        // the two trailing words were never written.
        let vs = c
            .process_library(7, Some(0x5000), Some(0x6000), 10)
            .unwrap();
        assert_eq!(vs.len(), 2);
        assert!(vs.iter().all(|v| v.found_id == 0));
        // Store range updated afterwards.
        assert!(c.rdt().entries()[(0x6000 >> 2) as usize..][..10]
            .iter()
            .all(|&e| e == 7));
    }

    #[test]
    fn memmove_style_overlap_checks_then_writes() {
        let mut c = Checker::new(rds_of(&[(9, &[2])]), 0x10000);
        c.process_basic(AccessKind::Store, 2, 0x5000).unwrap();
        c.process_basic(AccessKind::Store, 2, 0x5004).unwrap();
        // Overlapping copy one word up: the load range is checked on the
        // pre-write table.
        let vs = c.process_library(9, Some(0x5000), Some(0x5004), 2).unwrap();
        assert!(vs.is_empty());
        assert_eq!(c.rdt().entries()[(0x5004 >> 2) as usize], 9);
    }

    #[test]
    fn out_of_range_is_an_error_not_a_violation() {
        let mut c = Checker::new(rds_of(&[]), 0x100);
        assert!(matches!(
            c.process_basic(AccessKind::Store, 1, 0x2000),
            Err(CheckError::AddressOutOfRange(_))
        ));
        assert!(matches!(
            c.process_library(1, Some(0xF0), None, 100),
            Err(CheckError::RangeOutOfMemory { .. })
        ));
    }

    #[test]
    fn stream_consumption_stops_at_end_record() {
        use crate::record::{encode_record, Record};
        let fifo = FifoMemory::new(0, 16);
        fifo.push(encode_record(&Record::Basic {
            kind: AccessKind::Store,
            id: InstructionId(12),
            addr: 0x8000,
        }))
        .unwrap();
        fifo.push(encode_record(&Record::EndOfStream)).unwrap();
        let mut c = Checker::new(rds_of(&[(13, &[12])]), 0x10000);
        assert!(c.consume_stream(&fifo).unwrap());
        assert_eq!(c.packets_processed, 1);
        assert!(c.violations().is_empty());
    }

    #[test]
    fn empty_stream_with_end_control_is_clean() {
        use crate::record::{encode_record, Record};
        let fifo = FifoMemory::new(0, 4);
        fifo.push(encode_record(&Record::EndOfStream)).unwrap();
        let mut c = Checker::new(rds_of(&[]), 0x1000);
        assert!(c.consume_stream(&fifo).unwrap());
        assert_eq!(c.packets_processed, 0);
        assert!(c.violations().is_empty());
    }
}
