//! FM-index over a single text, plus the forward/reverse row correspondence
//! used by the factorizer.
//!
//! Rows are numbered over the `n + 1` sorted suffixes of `text$`, where the
//! virtual terminator `$` sorts first; row 0 is therefore always the
//! terminator suffix. The stored BWT omits the terminator and `eof_pos`
//! records the row it was removed from, so every rank query over a row index
//! passes through [`FmIndex::eof_shift`] first.

mod rank;
mod reference;
mod sa;
mod tables;

pub use rank::RankBits;
pub use reference::ReferenceIndex;
pub use sa::build_suffix_array;
pub use tables::CorrespondenceTables;

#[cfg(test)]
pub(crate) use sa::naive_suffix_array;

use crate::coding::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 32;

/// Inclusive suffix-array row interval `[sp, ep]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RowRange {
    pub sp: usize,
    pub ep: usize,
}

impl RowRange {
    pub fn width(&self) -> usize {
        self.ep - self.sp + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FmIndex {
    text_len: usize,
    sample_rate: u32,
    /// byte -> dense code, 0 when the byte does not occur
    remap: [u8; 256],
    /// code -> byte; index 0 is the terminator
    symbols: Vec<u8>,
    bwt: Vec<u8>,
    eof_pos: usize,
    /// `c[code]`: symbols of the text with a smaller code; has `sigma + 2` entries
    c: Vec<usize>,
    occ: Vec<RankBits>,
    marked: RankBits,
    marked_pos: Vec<u32>,
}

impl FmIndex {
    pub fn build(text: &[u8], sample_rate: u32) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty text".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be at least 1".into()));
        }
        let sa = build_suffix_array(text);
        Ok(Self::from_suffix_array(text, &sa, sample_rate))
    }

    pub(crate) fn from_suffix_array(text: &[u8], sa: &[u32], sample_rate: u32) -> Self {
        let n = text.len();
        let mut present = [false; 256];
        for &b in text {
            present[b as usize] = true;
        }
        let mut remap = [0u8; 256];
        let mut symbols = vec![b'$'];
        for b in 0..256usize {
            if present[b] {
                remap[b] = symbols.len() as u8;
                symbols.push(b as u8);
            }
        }
        let sigma = symbols.len() - 1;

        let mut counts = vec![0usize; sigma + 1];
        for &b in text {
            counts[remap[b as usize] as usize] += 1;
        }
        let mut c = vec![0usize; sigma + 2];
        for code in 1..=sigma {
            c[code + 1] = c[code] + counts[code];
        }

        let mut bwt = Vec::with_capacity(n);
        let mut eof_pos = 0;
        for (row, &p) in sa.iter().enumerate() {
            if p == 0 {
                eof_pos = row;
            } else {
                bwt.push(remap[text[p as usize - 1] as usize]);
            }
        }
        let occ = (0..=sigma)
            .map(|code| {
                if code == 0 {
                    RankBits::from_fn(0, |_| false)
                } else {
                    RankBits::from_fn(n, |i| bwt[i] as usize == code)
                }
            })
            .collect();

        let rate = sample_rate as usize;
        let marked = RankBits::from_fn(n + 1, |row| (sa[row] as usize).is_multiple_of(rate));
        let marked_pos = sa.iter().copied().filter(|&p| (p as usize).is_multiple_of(rate)).collect();

        FmIndex {
            text_len: n,
            sample_rate,
            remap,
            symbols,
            bwt,
            eof_pos,
            c,
            occ,
            marked,
            marked_pos,
        }
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    /// Number of suffix-array rows, `text_len + 1`.
    pub fn rows(&self) -> usize {
        self.text_len + 1
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn eof_pos(&self) -> usize {
        self.eof_pos
    }

    /// Symbols occurring in the text, in lexical order.
    pub fn alphabet(&self) -> &[u8] {
        &self.symbols[1..]
    }

    pub fn remap(&self, sym: u8) -> Option<u8> {
        match self.remap[sym as usize] {
            0 => None,
            code => Some(code),
        }
    }

    pub fn is_in_ref(&self, sym: u8) -> bool {
        self.remap[sym as usize] != 0
    }

    /// Number of text symbols lexically smaller than `sym`.
    pub fn count_smaller(&self, sym: u8) -> usize {
        self.alphabet()
            .iter()
            .take_while(|&&b| b < sym)
            .map(|&b| {
                let code = self.remap[b as usize] as usize;
                self.c[code + 1] - self.c[code]
            })
            .sum()
    }

    /// Occurrences of `sym` in the first `k` entries of the stored BWT.
    pub fn occ(&self, sym: u8, k: usize) -> Result<usize> {
        if k > self.text_len {
            return Err(Error::Contract(format!("Occ prefix {k} exceeds text length {}", self.text_len)));
        }
        Ok(match self.remap(sym) {
            Some(code) => self.occ[code as usize].rank1(k),
            None => 0,
        })
    }

    /// Maps a row index to the number of stored BWT entries above it.
    pub fn eof_shift(&self, row: usize) -> Result<usize> {
        if row > self.rows() {
            return Err(Error::Contract(format!("row {row} out of range")));
        }
        Ok(self.shift(row))
    }

    #[inline]
    fn shift(&self, row: usize) -> usize {
        if row > self.eof_pos {
            row - 1
        } else {
            row
        }
    }

    /// Symbol preceding the suffix at `row`, `None` for the row of the whole text.
    pub fn bwt_symbol(&self, row: usize) -> Option<u8> {
        if row == self.eof_pos {
            None
        } else {
            Some(self.symbols[self.bwt[self.shift(row)] as usize])
        }
    }

    /// LF mapping. The row of the whole text wraps to row 0 (the terminator suffix).
    #[inline]
    pub(crate) fn lf(&self, row: usize) -> usize {
        if row == self.eof_pos {
            return 0;
        }
        let s = self.shift(row);
        let code = self.bwt[s] as usize;
        1 + self.c[code] + self.occ[code].rank1(s)
    }

    /// Moves from the suffix at position `p` to the one at `p - 1`;
    /// `None` when `row` already holds the whole text.
    pub fn backward_step(&self, row: usize) -> Option<usize> {
        if row >= self.rows() || row == self.eof_pos {
            None
        } else {
            Some(self.lf(row))
        }
    }

    /// Rows of the suffixes starting with `sym`.
    pub fn symbol_range(&self, sym: u8) -> Option<RowRange> {
        let code = self.remap(sym)? as usize;
        Some(RowRange {
            sp: 1 + self.c[code],
            ep: self.c[code + 1],
        })
    }

    /// One backward-search step: rows prefixed by `sym` followed by the prefix of `range`.
    #[inline]
    pub fn extend(&self, range: RowRange, sym: u8) -> Option<RowRange> {
        let code = self.remap(sym)? as usize;
        let base = 1 + self.c[code];
        let sp = base + self.occ[code].rank1(self.shift(range.sp));
        let ep = base + self.occ[code].rank1(self.shift(range.ep + 1));
        (sp < ep).then(|| RowRange { sp, ep: ep - 1 })
    }

    /// Rows of all suffixes prefixed by `pattern`.
    pub fn backward_search(&self, pattern: &[u8]) -> Option<RowRange> {
        let (&last, rest) = pattern.split_last()?;
        let mut range = self.symbol_range(last)?;
        for &sym in rest.iter().rev() {
            range = self.extend(range, sym)?;
        }
        Some(range)
    }

    /// Backward search fed with `pattern` in forward order: on the index of a
    /// reversed text this yields the rows prefixed by `reverse(pattern)`.
    pub fn search_pat_rev(&self, pattern: &[u8]) -> Option<RowRange> {
        let (&first, rest) = pattern.split_first()?;
        let mut range = self.symbol_range(first)?;
        for &sym in rest {
            range = self.extend(range, sym)?;
        }
        Some(range)
    }

    pub fn count(&self, pattern: &[u8]) -> usize {
        self.backward_search(pattern).map_or(0, |r| r.width())
    }

    /// Suffix-array value of `row`, by walking back to the nearest marked row.
    pub fn position(&self, row: usize) -> usize {
        self.position_with_steps(row).0
    }

    pub fn get_position_in_reference(&self, row: usize) -> Result<usize> {
        if row >= self.rows() {
            return Err(Error::Contract(format!("row {row} out of range")));
        }
        Ok(self.position(row))
    }

    /// Position plus the number of LF steps the lookup took.
    pub fn position_with_steps(&self, mut row: usize) -> (usize, usize) {
        if row == 0 {
            return (self.text_len, 0);
        }
        let mut steps = 0;
        while !self.marked.get(row) {
            row = self.lf(row);
            steps += 1;
        }
        (self.marked_pos[self.marked.rank1(row)] as usize + steps, steps)
    }

    /// Recovers the text by walking LF from the terminator row.
    pub fn extract_all(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.text_len];
        let mut row = 0;
        for p in (0..self.text_len).rev() {
            out[p] = self.bwt_symbol(row).expect("walk stays inside the text");
            row = self.lf(row);
        }
        out
    }

    /// The full BWT of `text$`, with `$` at `eof_pos`.
    pub fn bwt_string(&self) -> Vec<u8> {
        (0..self.rows()).map(|r| self.bwt_symbol(r).unwrap_or(b'$')).collect()
    }

    pub fn size_in_bytes(&self) -> usize {
        self.bwt.len()
            + self.occ.iter().map(RankBits::size_in_bytes).sum::<usize>()
            + self.marked.size_in_bytes()
            + self.marked_pos.len() * 4
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u64(self.text_len as u64).u32(self.sample_rate);
        w.u16(self.alphabet().len() as u16).bytes(self.alphabet());
        w.u64(self.eof_pos as u64);
        w.u64(self.bwt.len() as u64).bytes(&self.bwt);
        let c: Vec<u64> = self.c.iter().map(|&x| x as u64).collect();
        w.u64_slice(&c);
        for bits in &self.occ[1..] {
            bits.write(w);
        }
        self.marked.write(w);
        w.u32_slice(&self.marked_pos);
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let text_len = r.u64()? as usize;
        let sample_rate = r.u32()?;
        let sigma = r.u16()? as usize;
        let alphabet = r.take(sigma)?.to_vec();
        let mut remap = [0u8; 256];
        let mut symbols = vec![b'$'];
        for (i, &b) in alphabet.iter().enumerate() {
            if i > 0 && alphabet[i - 1] >= b {
                return Err(Error::corrupt("FM alphabet not strictly ascending"));
            }
            remap[b as usize] = (i + 1) as u8;
            symbols.push(b);
        }
        let eof_pos = r.u64()? as usize;
        let bwt_len = r.u64()? as usize;
        let bwt = r.take(bwt_len)?.to_vec();
        let c: Vec<usize> = r.u64_vec()?.into_iter().map(|x| x as usize).collect();
        let mut occ = vec![RankBits::from_fn(0, |_| false)];
        for _ in 0..sigma {
            occ.push(RankBits::read(r)?);
        }
        let marked = RankBits::read(r)?;
        let marked_pos = r.u32_vec()?;
        if bwt_len != text_len
            || c.len() != sigma + 2
            || eof_pos > text_len
            || marked.len() != text_len + 1
            || marked.count_ones() != marked_pos.len()
            || occ[1..].iter().any(|o| o.len() != text_len)
            || bwt.iter().any(|&code| code == 0 || code as usize > sigma)
            || sample_rate == 0
        {
            return Err(Error::corrupt("inconsistent FM-index sections"));
        }
        Ok(FmIndex {
            text_len,
            sample_rate,
            remap,
            symbols,
            bwt,
            eof_pos,
            c,
            occ,
            marked,
            marked_pos,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::random_sequence;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_count(text: &[u8], pat: &[u8]) -> usize {
        if pat.is_empty() || pat.len() > text.len() {
            return 0;
        }
        text.windows(pat.len()).filter(|w| *w == pat).count()
    }

    fn naive_bwt(text: &[u8]) -> Vec<u8> {
        naive_suffix_array(text)
            .iter()
            .map(|&p| if p == 0 { b'$' } else { text[p as usize - 1] })
            .collect()
    }

    #[test]
    fn banana() {
        let fm = FmIndex::build(b"BANANA", 2).unwrap();
        assert_eq!(fm.bwt_string(), naive_bwt(b"BANANA"));
        assert_eq!(fm.bwt_string(), b"ANNB$AA");
        assert_eq!(fm.count(b"AN"), 2);
        assert_eq!(fm.count(b"NAB"), 0);
        assert_eq!(fm.extract_all(), b"BANANA");
        let sa = naive_suffix_array(b"BANANA");
        for (row, &pos) in sa.iter().enumerate() {
            assert_eq!(fm.position(row), pos as usize);
        }
    }

    #[test]
    fn lf_walk_spells_text_backwards() {
        let fm = FmIndex::build(b"BANANA", 4).unwrap();
        let mut row = 0;
        let mut spelled = Vec::new();
        while let Some(sym) = fm.bwt_symbol(row) {
            spelled.push(sym);
            row = fm.backward_step(row).unwrap();
        }
        assert_eq!(spelled, b"ANANAB");
        assert_eq!(row, fm.eof_pos());
        assert_eq!(fm.backward_step(fm.eof_pos()), None);
    }

    #[test]
    fn backward_step_decrements_position() {
        let text = random_sequence("t", 500, 5);
        let fm = FmIndex::build(text.data(), 8).unwrap();
        for row in 0..fm.rows() {
            let p = fm.position(row);
            match fm.backward_step(row) {
                Some(prev) if p > 0 => assert_eq!(fm.position(prev), p - 1),
                Some(_) => unreachable!(),
                None => assert_eq!(p, 0),
            }
        }
    }

    #[test]
    fn primitives() {
        let fm = FmIndex::build(b"AC", 1).unwrap();
        assert_eq!(fm.count_smaller(b'A'), 0);
        assert_eq!(fm.count_smaller(b'C'), 1);
        assert_eq!(fm.count_smaller(b'T'), 2);
        let fm = FmIndex::build(b"ACGT", 1).unwrap();
        assert!(!fm.is_in_ref(b'N'));
        assert!(fm.is_in_ref(b'G'));
        assert_eq!(fm.remap(b'A'), Some(1));
        assert_eq!(fm.remap(b'N'), None);
        for &c in b"ACGTN" {
            assert_eq!(fm.occ(c, 0).unwrap(), 0);
        }
        assert!(fm.occ(b'A', 5).is_err());
        assert!(fm.eof_shift(99).is_err());
        assert!(fm.get_position_in_reference(5).is_err());
        assert_eq!(fm.get_position_in_reference(0).unwrap(), 4);
    }

    #[test]
    fn backward_search_examples() {
        let fm = FmIndex::build(b"GATTACA", 2).unwrap();
        let r = fm.backward_search(b"TA").unwrap();
        assert_eq!(r.width(), 1);
        assert_eq!(fm.position(r.sp), 3);
        assert_eq!(fm.backward_search(b"GATTACAGATTACA"), None);
        assert_eq!(fm.backward_search(b"GATTACA").unwrap().width(), 1);
        assert_eq!(fm.backward_search(b"GAN"), None);
        assert_eq!(fm.backward_search(b""), None);
    }

    #[test]
    fn search_pat_rev_unfolds() {
        let fm_rev = FmIndex::build(b"TGCA", 1).unwrap();
        assert_eq!(fm_rev.search_pat_rev(b"AC"), fm_rev.backward_search(b"CA"));
        assert_eq!(fm_rev.search_pat_rev(b"AC").unwrap().width(), 1);
        assert_eq!(fm_rev.search_pat_rev(b"AN"), None);
    }

    #[test]
    fn sample_rate_one_needs_no_walk() {
        let text = random_sequence("t", 300, 6);
        let fm = FmIndex::build(text.data(), 1).unwrap();
        for row in 0..fm.rows() {
            assert_eq!(fm.position_with_steps(row).1, 0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(FmIndex::build(b"", 4).is_err());
        assert!(FmIndex::build(b"ACGT", 0).is_err());
    }

    #[test]
    fn occ_invariants() {
        let text = random_sequence("t", 2000, 9);
        let fm = FmIndex::build(text.data(), 32).unwrap();
        let mut total = 0;
        for &c in fm.alphabet() {
            let mut prev = 0;
            for k in 0..=fm.text_len() {
                let o = fm.occ(c, k).unwrap();
                assert!(o >= prev);
                prev = o;
            }
            total += prev;
            let smaller = text.data().iter().filter(|&&b| b < c).count();
            assert_eq!(fm.count_smaller(c), smaller);
        }
        assert_eq!(total, fm.text_len());
    }

    #[test]
    fn randomized_counts_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..1000 {
            let len = rng.gen_range(1..=2000);
            let alpha: &[u8] = if case % 3 == 0 { b"AC" } else { b"ACGTN" };
            let text: Vec<u8> = (0..len).map(|_| alpha[rng.gen_range(0..alpha.len())]).collect();
            let fm = FmIndex::build(&text, 32).unwrap();
            for _ in 0..3 {
                let m = rng.gen_range(1..=12);
                let pat: Vec<u8> = if rng.gen_bool(0.5) && m <= len {
                    let s = rng.gen_range(0..=len - m);
                    text[s..s + m].to_vec()
                } else {
                    (0..m).map(|_| b"ACGTN"[rng.gen_range(0..5)]).collect()
                };
                assert_eq!(fm.count(&pat), naive_count(&text, &pat), "case {case}");
            }
        }
    }

    #[test]
    fn positions_match_suffix_array_for_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let len = rng.gen_range(1..=2000);
            let text: Vec<u8> = (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
            let sa = naive_suffix_array(&text);
            for rate in [1, 4, 32] {
                let fm = FmIndex::build(&text, rate).unwrap();
                for (row, &p) in sa.iter().enumerate() {
                    assert_eq!(fm.position(row), p as usize);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bwt_inverts(text in proptest::collection::vec(prop::sample::select(b"ACGTN".to_vec()), 1..500)) {
            let fm = FmIndex::build(&text, 16).unwrap();
            prop_assert_eq!(fm.extract_all(), text.clone());
            prop_assert_eq!(fm.bwt_string(), naive_bwt(&text));
            let mut w = ByteWriter::new();
            fm.write(&mut w);
            let bytes = w.into_inner();
            let back = FmIndex::read(&mut ByteReader::new(&bytes)).unwrap();
            prop_assert_eq!(back, fm);
        }
    }
}
