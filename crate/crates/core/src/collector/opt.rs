//! Runtime packet pruning and reordering over the transmission buffer.
//!
//! All rules operate on the runs of basic packets between library
//! packets; a library packet is a barrier because its access range is
//! not comparable against single-word packets.

use crate::instr::AccessKind;
use crate::packet::DfiPacket;

fn basic(packet: &DfiPacket) -> Option<(AccessKind, u16, u32)> {
    match packet {
        DfiPacket::Basic { kind, id, addr } => Some((*kind, id.0, *addr)),
        DfiPacket::Library { .. } => None,
    }
}

fn is_store(packet: &DfiPacket) -> bool {
    matches!(basic(packet), Some((AccessKind::Store, _, _)))
}


fn addr_of(packet: &DfiPacket) -> Option<u32> {
    basic(packet).map(|(_, _, a)| a)
}

/// Applies `f` to each run of basic packets between library barriers.
fn map_segments<F>(packets: Vec<DfiPacket>, mut f: F) -> (Vec<DfiPacket>, u64)
where
    F: FnMut(Vec<DfiPacket>) -> (Vec<DfiPacket>, u64),
{
    let mut out = Vec::with_capacity(packets.len());
    let mut segment = Vec::new();
    let mut pruned = 0;
    for packet in packets {
        if matches!(packet, DfiPacket::Library { .. }) {
            let (kept, p) = f(std::mem::take(&mut segment));
            pruned += p;
            out.extend(kept);
            out.push(packet);
        } else {
            segment.push(packet);
        }
    }
    let (kept, p) = f(segment);
    pruned += p;
    out.extend(kept);
    (out, pruned)
}

/// A: a store is dead when the next packet touching its address is
/// another store (no load in between observes the value).
pub fn opt_a(packets: Vec<DfiPacket>) -> (Vec<DfiPacket>, u64) {
    map_segments(packets, |seg| {
        let mut keep = vec![true; seg.len()];
        for i in 0..seg.len() {
            if !is_store(&seg[i]) {
                continue;
            }
            let addr = addr_of(&seg[i]).unwrap();
            for j in i + 1..seg.len() {
                if addr_of(&seg[j]) == Some(addr) {
                    if is_store(&seg[j]) {
                        keep[i] = false;
                    }
                    break;
                }
            }
        }
        retain_kept(seg, &keep)
    })
}

/// B: a store repeating the identifier of the nearest surviving store to
/// the same address is redundant; the table entry would not change.
pub fn opt_b(packets: Vec<DfiPacket>) -> (Vec<DfiPacket>, u64) {
    map_segments(packets, |seg| {
        let mut last_store: std::collections::HashMap<u32, u16> = std::collections::HashMap::new();
        let mut keep = vec![true; seg.len()];
        for (i, p) in seg.iter().enumerate() {
            if let Some((AccessKind::Store, id, addr)) = basic(p) {
                if last_store.get(&addr) == Some(&id) {
                    keep[i] = false;
                } else {
                    last_store.insert(addr, id);
                }
            }
        }
        retain_kept(seg, &keep)
    })
}

/// C: duplicate loads (same address, same identifier, no intervening
/// store to that address) are pruned. Mirrors the processing-element
/// grid: each column prunes only its nearest eligible successor, and a
/// store to the address disables the column below it.
pub fn opt_c(packets: Vec<DfiPacket>) -> (Vec<DfiPacket>, u64) {
    map_segments(packets, |seg| {
        let mut redundant = vec![false; seg.len()];
        for i in 0..seg.len() {
            let Some((AccessKind::Load, id, addr)) = basic(&seg[i]) else {
                continue;
            };
            for j in i + 1..seg.len() {
                match basic(&seg[j]) {
                    Some((AccessKind::Load, jid, jaddr)) if jid == id && jaddr == addr => {
                        redundant[j] = true;
                        break;
                    }
                    Some((AccessKind::Store, _, jaddr)) if jaddr == addr => break,
                    _ => {}
                }
            }
        }
        let keep: Vec<bool> = redundant.iter().map(|r| !r).collect();
        retain_kept(seg, &keep)
    })
}

/// D: a store/load pair repeating an earlier pair's identifiers is
/// redundant. Gated (unless `paper_mode`) on no later packet in the
/// buffer touching the pruned address, which keeps within-flush verdicts
/// identical to the unpruned run.
pub fn opt_d(packets: Vec<DfiPacket>, paper_mode: bool) -> (Vec<DfiPacket>, u64) {
    // The gate looks beyond segment boundaries, so collect the global
    // index ranges of segments first.
    let n = packets.len();
    let mut keep = vec![true; n];
    let mut pruned = 0u64;
    let mut seg_start = 0usize;
    let mut seen_pairs: std::collections::HashMap<(u16, u16), usize> =
        std::collections::HashMap::new();

    let touches = |packet: &DfiPacket, addr: u32| -> bool {
        match packet {
            DfiPacket::Basic { addr: a, .. } => *a == addr,
            DfiPacket::Library {
                load_addr,
                store_addr,
                len_words,
                ..
            } => {
                let w = addr >> 2;
                let in_range = |base: &Option<u32>| {
                    base.map(|b| {
                        let start = b >> 2;
                        w >= start && u64::from(w - start) < *len_words
                    })
                    .unwrap_or(false)
                };
                in_range(load_addr) || in_range(store_addr)
            }
        }
    };

    for seg_end_excl in (0..=n).filter(|&i| i == n || matches!(packets[i], DfiPacket::Library { .. }))
    {
        // Pair scan within [seg_start, seg_end_excl).
        for j in seg_start..seg_end_excl {
            let Some((AccessKind::Load, beta, addr)) = basic(&packets[j]) else {
                continue;
            };
            // Nearest preceding store to the same address in this segment.
            let mut pair_store = None;
            for i in (seg_start..j).rev() {
                if let Some((AccessKind::Store, alpha, a)) = basic(&packets[i]) {
                    if a == addr {
                        pair_store = Some((i, alpha));
                        break;
                    }
                }
            }
            let Some((i, alpha)) = pair_store else { continue };
            match seen_pairs.get(&(alpha, beta)) {
                Some(&p2_idx) if p2_idx < i => {
                    let gate_ok = paper_mode
                        || !packets[j + 1..].iter().any(|p| touches(p, addr));
                    if gate_ok && keep[i] && keep[j] {
                        keep[i] = false;
                        keep[j] = false;
                        pruned += 2;
                    }
                }
                Some(_) => {}
                None => {
                    seen_pairs.insert((alpha, beta), j);
                }
            }
        }
        if seg_end_excl < n {
            seg_start = seg_end_excl + 1;
            seen_pairs.clear();
        }
    }

    let out = packets
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    (out, pruned)
}

/// E: stable sort of basic packets by target address to create adjacency
/// for the delta compressor. Segments around library packets sort
/// independently; equal addresses keep their relative order.
pub fn opt_e(packets: Vec<DfiPacket>) -> (Vec<DfiPacket>, u64) {
    map_segments(packets, |mut seg| {
        seg.sort_by_key(|p| addr_of(p).unwrap_or(0));
        (seg, 0)
    })
}

fn retain_kept(seg: Vec<DfiPacket>, keep: &[bool]) -> (Vec<DfiPacket>, u64) {
    let pruned = keep.iter().filter(|k| !**k).count() as u64;
    let out = seg
        .into_iter()
        .zip(keep.iter())
        .filter_map(|(p, k)| k.then_some(p))
        .collect();
    (out, pruned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::InstructionId;

    fn s(id: u16, addr: u32) -> DfiPacket {
        DfiPacket::basic(AccessKind::Store, id, addr)
    }
    fn l(id: u16, addr: u32) -> DfiPacket {
        DfiPacket::basic(AccessKind::Load, id, addr)
    }
    fn lib(id: u16) -> DfiPacket {
        DfiPacket::Library {
            id: InstructionId(id),
            load_addr: Some(0x1000),
            store_addr: None,
            len_words: 2,
            len64: false,
        }
    }

    #[test]
    fn a_prunes_overwritten_store() {
        let (out, pruned) = opt_a(vec![s(1, 8), s(2, 8)]);
        assert_eq!(out, vec![s(2, 8)]);
        assert_eq!(pruned, 1);
    }

    #[test]
    fn a_blocked_by_intervening_load() {
        let input = vec![s(1, 8), l(3, 8), s(2, 8)];
        let (out, pruned) = opt_a(input.clone());
        assert_eq!(out, input);
        assert_eq!(pruned, 0);
    }

    #[test]
    fn a_cascades_left_to_right() {
        let (out, _) = opt_a(vec![s(1, 8), s(2, 8), s(3, 8), l(9, 8)]);
        assert_eq!(out, vec![s(3, 8), l(9, 8)]);
    }

    #[test]
    fn b_prunes_repeated_identifier() {
        let (out, pruned) = opt_b(vec![s(5, 8), s(5, 8)]);
        assert_eq!(out, vec![s(5, 8)]);
        assert_eq!(pruned, 1);
    }

    #[test]
    fn b_keeps_different_identifier() {
        let input = vec![s(5, 8), s(6, 8)];
        let (out, _) = opt_b(input.clone());
        assert_eq!(out, input);
    }

    #[test]
    fn b_allows_loads_between() {
        let (out, _) = opt_b(vec![s(5, 8), l(9, 8), s(5, 8)]);
        assert_eq!(out, vec![s(5, 8), l(9, 8)]);
    }

    #[test]
    fn c_prunes_duplicate_load() {
        let (out, pruned) = opt_c(vec![l(9, 8), l(9, 8)]);
        assert_eq!(out, vec![l(9, 8)]);
        assert_eq!(pruned, 1);
    }

    #[test]
    fn c_disabled_by_intervening_store() {
        let input = vec![l(9, 8), s(5, 8), l(9, 8)];
        let (out, _) = opt_c(input.clone());
        assert_eq!(out, input);
    }

    #[test]
    fn c_prunes_through_pruned_columns() {
        // The pruned second load still acts as a comparator column, so
        // the fourth load is pruned even though the third differs.
        let (out, _) = opt_c(vec![l(9, 8), l(9, 8), l(8, 8), l(9, 8)]);
        assert_eq!(out, vec![l(9, 8), l(8, 8)]);
    }

    #[test]
    fn d_prunes_repeated_pair() {
        let (out, pruned) = opt_d(vec![s(3, 0x100), l(7, 0x100), s(3, 0x200), l(7, 0x200)], false);
        assert_eq!(out, vec![s(3, 0x100), l(7, 0x100)]);
        assert_eq!(pruned, 2);
    }

    #[test]
    fn d_keeps_pairs_with_different_load_id() {
        let input = vec![s(3, 0x100), l(7, 0x100), s(3, 0x200), l(8, 0x200)];
        let (out, _) = opt_d(input.clone(), false);
        assert_eq!(out, input);
    }

    #[test]
    fn d_gate_blocks_when_address_used_later() {
        let input = vec![
            s(3, 0x100),
            l(7, 0x100),
            s(3, 0x200),
            l(7, 0x200),
            l(9, 0x200),
        ];
        let (out, _) = opt_d(input.clone(), false);
        assert_eq!(out, input);
        // Paper mode prunes regardless.
        let (out, pruned) = opt_d(input, true);
        assert_eq!(pruned, 2);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn e_sorts_stably_between_library_barriers() {
        let input = vec![
            s(1, 0x30),
            s(2, 0x10),
            s(3, 0x30),
            lib(7),
            s(4, 0x20),
            s(5, 0x08),
        ];
        let (out, pruned) = opt_e(input);
        assert_eq!(pruned, 0);
        assert_eq!(
            out,
            vec![s(2, 0x10), s(1, 0x30), s(3, 0x30), lib(7), s(5, 0x08), s(4, 0x20)]
        );
    }

    #[test]
    fn e_is_idempotent() {
        let input = vec![s(2, 0x10), s(1, 0x30), s(3, 0x30)];
        let (once, _) = opt_e(input);
        let (twice, _) = opt_e(once.clone());
        assert_eq!(once, twice);
    }
}
