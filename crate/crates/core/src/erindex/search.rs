//! Pattern search over the factorized collection.
//!
//! Internal occurrences lie inside one factor's referential part and are
//! found through the reference FM-index plus the position tree. Every other
//! occurrence contains a mismatch symbol; anchoring on its first one splits
//! the pattern into a left side that ends a referential part (reverse tree)
//! and a right side that starts the next keyed factor (forward tree).
//! Candidates are then checked symbol by symbol against the factors.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;

use super::{Occurrence, SearchBackend, TreeKind};
use crate::ebtree::TreeHit;
use crate::error::{Error, Result};
use crate::fm::{FmIndex, RowRange};
use crate::rlz::Factor;
use crate::sequence::is_symbol;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchOptions {
    /// Verify the candidates of all split points on the rayon pool.
    pub parallel_splits: bool,
}

/// A possible occurrence: symbol `offset` of factor `factor` aligns with
/// `pattern[anchor]`, and `pattern[verified.0..verified.1]` is known to match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub slot: u32,
    pub factor: usize,
    pub offset: usize,
    pub anchor: usize,
    pub verified: (usize, usize),
}

fn check_pattern(pattern: &[u8]) -> Result<()> {
    if pattern.is_empty() {
        return Err(Error::InvalidArgument("empty pattern".into()));
    }
    if let Some(&b) = pattern.iter().find(|&&b| !is_symbol(b)) {
        return Err(Error::InvalidArgument(format!(
            "pattern symbol {:?} is not one of A, C, G, T, N",
            b as char
        )));
    }
    Ok(())
}

pub fn locate<B: SearchBackend + ?Sized>(b: &B, pattern: &[u8], opts: SearchOptions) -> Result<Vec<Occurrence>> {
    check_pattern(pattern)?;
    let mut found = internal_positions(b, pattern)?;
    found.extend(external_positions(b, pattern, opts)?);
    find_text_positions(b, pattern.len(), found)
}

pub fn locate_internal_occs<B: SearchBackend + ?Sized>(b: &B, pattern: &[u8]) -> Result<Vec<Occurrence>> {
    check_pattern(pattern)?;
    let found = internal_positions(b, pattern)?;
    find_text_positions(b, pattern.len(), found)
}

pub fn locate_external_occs<B: SearchBackend + ?Sized>(
    b: &B,
    pattern: &[u8],
    opts: SearchOptions,
) -> Result<Vec<Occurrence>> {
    check_pattern(pattern)?;
    let found = external_positions(b, pattern, opts)?;
    find_text_positions(b, pattern.len(), found)
}

fn usable<B: SearchBackend + ?Sized>(b: &B, h: &TreeHit) -> Result<bool> {
    if !b.readable(h.slot)? {
        return Ok(false);
    }
    if h.factor as usize >= b.factor_count(h.slot)? {
        log::warn!(
            "ignoring out-of-range factor {} for individual {}",
            h.factor,
            b.individual_id(h.slot)
        );
        return Ok(false);
    }
    Ok(true)
}

fn internal_positions<B: SearchBackend + ?Sized>(b: &B, pattern: &[u8]) -> Result<BTreeSet<(u32, u64)>> {
    let mut out = BTreeSet::new();
    let fm = &b.reference().fm;
    let m = pattern.len() as u64;
    let max_ref = b.l_max().saturating_sub(1) as u64;
    if m > max_ref {
        return Ok(out);
    }
    let Some(range) = fm.backward_search(pattern) else {
        return Ok(out);
    };
    for row in range.sp..=range.ep {
        let tp = fm.position(row) as u64;
        // a referential part [tpf, tpf + l) covers [tp, tp + m) iff tpf <= tp and tpf + l >= tp + m
        let lo = (tp + m).saturating_sub(max_ref);
        for h in b.tree_range(TreeKind::Position, lo, tp)? {
            if !usable(b, &h)? {
                continue;
            }
            let f = b.factor(h.slot, h.factor as usize)?;
            if h.key + (f.len as u64 - 1) >= tp + m {
                out.insert((h.slot, b.factor_start(h.slot, h.factor as usize)? + (tp - h.key)));
            }
        }
    }
    Ok(out)
}

/// Factors whose referential part ends with the longest suffix of `ls`
/// occurring in the reference, and that suffix's length.
pub fn find_left_side_factors<B: SearchBackend + ?Sized>(b: &B, ls: &[u8]) -> Result<(Vec<TreeHit>, usize)> {
    let fm = &b.reference().fm;
    let Some((&last, rest)) = ls.split_last() else {
        return Ok((Vec::new(), 0));
    };
    let Some(mut range) = fm.symbol_range(last) else {
        return Ok((Vec::new(), 0));
    };
    let mut len = 1;
    for &sym in rest.iter().rev() {
        match fm.extend(range, sym) {
            Some(r) => range = r,
            None => break,
        }
        len += 1;
    }
    let rev = b
        .reference()
        .fm_rev
        .search_pat_rev(&ls[ls.len() - len..])
        .expect("a substring of R occurs in reverse(R) reversed");
    Ok((b.tree_range(TreeKind::Reverse, rev.sp as u64, rev.ep as u64)?, len))
}

/// Length of the longest prefix of `rs` in the reference, cut at the first
/// boundary between `N` and other symbols (the factorizer never crosses one).
fn right_side_extent(fm_rev: &FmIndex, rs: &[u8]) -> usize {
    let Some(mut range) = fm_rev.symbol_range(rs[0]) else {
        return 0;
    };
    let mut len = 1;
    while len < rs.len() && (rs[len - 1] == b'N') == (rs[len] == b'N') {
        match fm_rev.extend(range, rs[len]) {
            Some(r) => range = r,
            None => break,
        }
        len += 1;
    }
    len
}

/// Factors whose referential part begins with the longest prefix of `rs`
/// occurring in the reference (cut at an `N` boundary), and that length.
pub fn find_right_side_factors<B: SearchBackend + ?Sized>(b: &B, rs: &[u8]) -> Result<(Vec<TreeHit>, usize)> {
    if rs.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let len = right_side_extent(&b.reference().fm_rev, rs);
    if len == 0 {
        return Ok((Vec::new(), 0));
    }
    let range = b
        .reference()
        .fm
        .backward_search(&rs[..len])
        .expect("a prefix found through the reverse index occurs in R");
    Ok((b.tree_range(TreeKind::Forward, range.sp as u64, range.ep as u64)?, len))
}

struct Collector<'p> {
    pattern: &'p [u8],
    seen: HashSet<Candidate>,
    list: Vec<Candidate>,
}

impl Collector<'_> {
    fn push(&mut self, c: Candidate) {
        if self.seen.insert(c) {
            self.list.push(c);
        }
    }

    /// Anchor on the mismatch symbol at `pattern[s]` of factors whose
    /// referential part ends with `pattern[..s]` (`rev` is its reverse-index range).
    fn left<B: SearchBackend + ?Sized>(&mut self, b: &B, s: usize, rev: RowRange) -> Result<()> {
        for h in b.tree_range(TreeKind::Reverse, rev.sp as u64, rev.ep as u64)? {
            if !usable(b, &h)? {
                continue;
            }
            let f = b.factor(h.slot, h.factor as usize)?;
            if f.len as usize > s && f.mc == self.pattern[s] {
                self.push(Candidate {
                    slot: h.slot,
                    factor: h.factor as usize,
                    offset: f.len as usize - 1,
                    anchor: s,
                    verified: (0, s + 1),
                });
            }
        }
        Ok(())
    }

    /// Anchor on the start of keyed factors that begin at `pattern[t]`.
    fn right<B: SearchBackend + ?Sized>(&mut self, b: &B, t: usize) -> Result<()> {
        let (hits, len) = find_right_side_factors(b, &self.pattern[t..])?;
        for h in hits {
            if !usable(b, &h)? {
                continue;
            }
            let f = b.factor(h.slot, h.factor as usize)?;
            if f.len as usize > len {
                self.push(Candidate {
                    slot: h.slot,
                    factor: h.factor as usize,
                    offset: 0,
                    anchor: t,
                    verified: (t, t + len),
                });
            }
        }
        Ok(())
    }
}

fn external_candidates<B: SearchBackend + ?Sized>(b: &B, pattern: &[u8]) -> Result<Vec<Candidate>> {
    let m = pattern.len();
    let fm = &b.reference().fm;
    let fm_rev = &b.reference().fm_rev;
    let mut c = Collector {
        pattern,
        seen: HashSet::new(),
        list: Vec::new(),
    };

    // left side longer: pattern[..s] must lie wholly in the factor ending at pattern[s]
    let mut rev: Option<RowRange> = None;
    for s in 1..m {
        rev = match (s, rev) {
            (1, _) => fm_rev.symbol_range(pattern[0]),
            (_, Some(r)) => fm_rev.extend(r, pattern[s - 1]),
            (_, None) => None,
        };
        let Some(r) = rev else { break };
        if 2 * s > m {
            c.left(b, s, r)?;
        }
    }

    // right side at least as long: the factors after the one ending at
    // pattern[s] start at pattern[s + 1]; literal factors for symbols absent
    // from R carry no keys, so anchor on the first keyed factor instead
    let mut scanned = false;
    for s in (0..m).take_while(|&s| 2 * s <= m) {
        let mut t = s + 1;
        while t < m && !fm.is_in_ref(pattern[t]) {
            t += 1;
        }
        if t < m {
            c.right(b, t)?;
        } else if s >= 1 {
            if let Some(r) = fm_rev.search_pat_rev(&pattern[..s]) {
                c.left(b, s, r)?;
            }
        } else if !scanned {
            scanned = true;
            scan_mismatch_symbol(b, &mut c)?;
        }
    }

    // the final symbol of a sequence is always a mismatch symbol, so an
    // occurrence ending there may have no keyed factor to anchor on
    for slot in 0..b.individual_count() as u32 {
        if !b.readable(slot)? {
            continue;
        }
        let n = b.source_length(slot)?;
        if n >= m as u64 {
            let p = n - m as u64;
            let j = b.factor_at(slot, p)?;
            c.push(Candidate {
                slot,
                factor: j,
                offset: (p - b.factor_start(slot, j)?) as usize,
                anchor: 0,
                verified: (0, 0),
            });
        }
    }
    Ok(c.list)
}

/// Every factor whose mismatch symbol is `pattern[0]`; used when nothing
/// after the first symbol can be keyed.
fn scan_mismatch_symbol<B: SearchBackend + ?Sized>(b: &B, c: &mut Collector<'_>) -> Result<()> {
    let first = c.pattern[0];
    for slot in 0..b.individual_count() as u32 {
        if !b.readable(slot)? {
            continue;
        }
        for j in 0..b.factor_count(slot)? {
            let f = b.factor(slot, j)?;
            if f.mc == first {
                c.push(Candidate {
                    slot,
                    factor: j,
                    offset: f.len as usize - 1,
                    anchor: 0,
                    verified: (0, 1),
                });
            }
        }
    }
    Ok(())
}

fn external_positions<B: SearchBackend + ?Sized>(
    b: &B,
    pattern: &[u8],
    opts: SearchOptions,
) -> Result<BTreeSet<(u32, u64)>> {
    let cands = external_candidates(b, pattern)?;
    let verify = |c: &Candidate| pat_rem_part(b, pattern, c).map(|p| p.map(|p| (c.slot, p)));
    let found: Vec<Option<(u32, u64)>> = if opts.parallel_splits {
        cands.par_iter().map(verify).collect::<Result<_>>()?
    } else {
        cands.iter().map(verify).collect::<Result<_>>()?
    };
    Ok(found.into_iter().flatten().collect())
}

/// Checks the unverified parts of a candidate against the factors and
/// returns the occurrence's text position when the whole pattern matches.
pub fn pat_rem_part<B: SearchBackend + ?Sized>(b: &B, pattern: &[u8], c: &Candidate) -> Result<Option<u64>> {
    let m = pattern.len();
    let (v0, v1) = c.verified;
    debug_assert!(v0 <= v1 && v1 <= m);
    let at = b.factor_start(c.slot, c.factor)? + c.offset as u64;
    let Some(p) = at.checked_sub(c.anchor as u64) else {
        return Ok(None);
    };
    if p + m as u64 > b.source_length(c.slot)? {
        return Ok(None);
    }
    if !text_matches(b, c.slot, p + v1 as u64, &pattern[v1..])? || !text_matches(b, c.slot, p, &pattern[..v0])? {
        return Ok(None);
    }
    Ok(Some(p))
}

fn text_matches<B: SearchBackend + ?Sized>(b: &B, slot: u32, mut pos: u64, mut expected: &[u8]) -> Result<bool> {
    if expected.is_empty() {
        return Ok(true);
    }
    let fm_rev = &b.reference().fm_rev;
    let mut j = b.factor_at(slot, pos)?;
    while !expected.is_empty() {
        let f = b.factor(slot, j)?;
        let from = (pos - b.factor_start(slot, j)?) as usize;
        let take = (f.len as usize - from).min(expected.len());
        if !factor_matches(&f, fm_rev, from, &expected[..take])? {
            return Ok(false);
        }
        expected = &expected[take..];
        pos += take as u64;
        j += 1;
    }
    Ok(true)
}

/// Compares symbols `from..from + expected.len()` of a factor, stopping at the first difference.
fn factor_matches(f: &Factor, fm_rev: &FmIndex, from: usize, expected: &[u8]) -> Result<bool> {
    let ref_len = f.len as usize - 1;
    let ref_end = (from + expected.len()).min(ref_len);
    if from < ref_end {
        let mut row = f.sai_rev_start as usize;
        if row >= fm_rev.rows() {
            return Err(Error::corrupt("factor start row out of range"));
        }
        for k in 0..ref_end {
            if k >= from {
                let sym = fm_rev
                    .bwt_symbol(row)
                    .ok_or_else(|| Error::corrupt("factor walk ran past the reverse reference"))?;
                if sym != expected[k - from] {
                    return Ok(false);
                }
            }
            row = fm_rev.lf(row);
        }
    }
    if from + expected.len() == f.len as usize {
        return Ok(*expected.last().unwrap() == f.mc);
    }
    Ok(true)
}

/// Turns `(individual slot, text position)` pairs into occurrences with
/// factor coordinates, sorted by individual then position.
pub fn find_text_positions<B: SearchBackend + ?Sized>(
    b: &B,
    pattern_len: usize,
    found: BTreeSet<(u32, u64)>,
) -> Result<Vec<Occurrence>> {
    found
        .into_iter()
        .map(|(slot, p)| {
            let end = p + pattern_len as u64 - 1;
            if end >= b.source_length(slot)? {
                return Err(Error::corrupt(format!("occurrence at {p} runs past the sequence end")));
            }
            let fi = b.factor_at(slot, p)?;
            let ei = b.factor_at(slot, end)?;
            Ok(Occurrence {
                individual_id: b.individual_id(slot).to_string(),
                fact_ind: fi,
                fact_off: (p - b.factor_start(slot, fi)?) as usize,
                ending_fact_ind: ei,
                ending_fact_off: (end - b.factor_start(slot, ei)?) as usize,
                text_position: p,
            })
        })
        .collect()
}
