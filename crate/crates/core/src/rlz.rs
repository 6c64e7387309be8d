//! Relative Lempel-Ziv factorization of a sequence against the reference.
//!
//! Each factor is a referential part (a substring of `R`, possibly empty)
//! followed by one literal mismatch symbol. The referential part is not
//! stored as a position: it is recovered by walking the reverse reference
//! index forward in `R` from `sai_rev_start`. Three auxiliary search keys
//! per factor feed the encrypted trees.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fm::{FmIndex, ReferenceIndex};
use crate::sequence::Sequence;

/// Search keys of a factor with a non-empty referential part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FactorKeys {
    /// First reverse-index row prefixed by the reversed referential part.
    pub sai_rev: u32,
    /// Forward-index row of the referential part's occurrence at `tp`.
    pub sai: u32,
    /// Start of the referential part in `R`.
    pub tp: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Factor {
    /// Reverse-index row whose LF walk reads the referential part left to right.
    pub sai_rev_start: u32,
    /// Referential part plus the mismatch symbol.
    pub len: u32,
    pub mc: u8,
    pub keys: Option<FactorKeys>,
}

impl Factor {
    pub fn literal(mc: u8) -> Self {
        Factor {
            sai_rev_start: 0,
            len: 1,
            mc,
            keys: None,
        }
    }

    /// Length of the referential part.
    pub fn ref_len(&self) -> u32 {
        self.len - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Factorization {
    individual_id: String,
    factors: Vec<Factor>,
    block_size: usize,
    l_max: u32,
    /// `starts[j]`: text position of factor `j`; one trailing entry holds the source length
    starts: Vec<u64>,
}

impl Factorization {
    pub fn new(individual_id: impl Into<String>, factors: Vec<Factor>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidArgument("block size must be at least 1".into()));
        }
        if factors.iter().any(|f| f.len == 0) {
            return Err(Error::InvalidArgument("factor of length 0".into()));
        }
        let mut starts = Vec::with_capacity(factors.len() + 1);
        let mut acc = 0u64;
        for f in &factors {
            starts.push(acc);
            acc += f.len as u64;
        }
        starts.push(acc);
        let l_max = factors.iter().map(|f| f.len).max().unwrap_or(0);
        Ok(Factorization {
            individual_id: individual_id.into(),
            factors,
            block_size,
            l_max,
            starts,
        })
    }

    pub fn individual_id(&self) -> &str {
        &self.individual_id
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks(&self) -> std::slice::Chunks<'_, Factor> {
        self.factors.chunks(self.block_size)
    }

    pub fn l_max(&self) -> u32 {
        self.l_max
    }

    pub fn source_length(&self) -> u64 {
        *self.starts.last().unwrap()
    }

    /// Text position where factor `j` starts.
    pub fn factor_start(&self, j: usize) -> u64 {
        self.starts[j]
    }

    /// Index of the factor covering text position `pos`.
    pub fn factor_at(&self, pos: u64) -> Option<usize> {
        if pos >= self.source_length() {
            return None;
        }
        Some(self.starts.partition_point(|&s| s <= pos) - 1)
    }

    /// Decodes every factor; the inverse of [`factorize`].
    pub fn decode_all(&self, fm_rev: &FmIndex) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.source_length() as usize);
        for f in &self.factors {
            read_factor(f, fm_rev, 0, f.len as usize, &mut out)?;
        }
        Ok(out)
    }
}

/// Greedy factorization of `seq` against the reference.
///
/// The referential part grows one symbol at a time by backward search on
/// the reverse index and stops before the final symbol of the sequence, at
/// a symbol absent from `R`, when no longer occurring in `R`, or at a
/// boundary between `N` and non-`N` symbols. A symbol that cannot start a
/// referential part becomes a literal factor of length 1.
pub fn factorize(seq: &Sequence, reference: &ReferenceIndex, block_size: usize) -> Result<Factorization> {
    let s = seq.data();
    let n = s.len();
    if n == 0 {
        return Err(Error::Sequence {
            id: seq.id().to_string(),
            message: "cannot factorize an empty sequence".into(),
        });
    }
    let fm = &reference.fm;
    let fm_rev = &reference.fm_rev;
    let tables = &reference.tables;

    let mut factors = Vec::with_capacity(n / 64 + 1);
    let mut i = 0;
    while i < n {
        let first = s[i];
        let range = if i + 1 < n { fm_rev.symbol_range(first) } else { None };
        let Some(mut range) = range else {
            factors.push(Factor::literal(first));
            i += 1;
            continue;
        };
        let mut ref_len = 1usize;
        let mut last = first;
        while i + ref_len < n - 1 {
            let next = s[i + ref_len];
            if (last == b'N') != (next == b'N') {
                break;
            }
            match fm_rev.extend(range, next) {
                Some(r) => range = r,
                None => break,
            }
            ref_len += 1;
            last = next;
        }
        let mc = s[i + ref_len];

        let sai_rev = range.sp;
        // r2f lands on the occurrence's last symbol; step back to its first
        let mut sai = tables.r2f(sai_rev);
        for _ in 1..ref_len {
            sai = fm.lf(sai);
        }
        let tp = fm.position(sai);
        let sai_rev_start = tables.f2r(fm.lf(sai));
        factors.push(Factor {
            sai_rev_start: sai_rev_start as u32,
            len: ref_len as u32 + 1,
            mc,
            keys: Some(FactorKeys {
                sai_rev: sai_rev as u32,
                sai: sai as u32,
                tp: tp as u32,
            }),
        });
        i += ref_len + 1;
    }
    Factorization::new(seq.id(), factors, block_size)
}

/// Factorizes a collection on a dedicated pool of `workers` threads. The
/// output is identical to calling [`factorize`] on each sequence in order.
pub fn factorize_parallel(
    collection: &[Sequence],
    reference: &ReferenceIndex,
    block_size: usize,
    workers: usize,
) -> Result<Vec<Factorization>> {
    if workers == 0 {
        return Err(Error::InvalidArgument("at least one worker is required".into()));
    }
    if collection.is_empty() {
        return Ok(Vec::new());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        collection
            .par_iter()
            .map(|seq| {
                factorize(seq, reference, block_size).map_err(|e| match e {
                    e @ Error::Sequence { .. } => e,
                    other => Error::Sequence {
                        id: seq.id().to_string(),
                        message: other.to_string(),
                    },
                })
            })
            .collect()
    })
}

/// Appends symbols `[from, to)` of factor `f` to `out`.
pub(crate) fn read_factor(f: &Factor, fm_rev: &FmIndex, from: usize, to: usize, out: &mut Vec<u8>) -> Result<()> {
    let len = f.len as usize;
    debug_assert!(from <= to && to <= len);
    let ref_end = to.min(len - 1);
    if from < ref_end {
        let mut row = f.sai_rev_start as usize;
        if row >= fm_rev.rows() {
            return Err(Error::corrupt(format!("factor start row {row} out of range")));
        }
        for k in 0..ref_end {
            let sym = fm_rev
                .bwt_symbol(row)
                .ok_or_else(|| Error::corrupt("factor walk ran past the start of the reverse reference"))?;
            if k >= from {
                out.push(sym);
            }
            row = fm_rev.lf(row);
        }
    }
    if to == len && from < len {
        out.push(f.mc);
    }
    Ok(())
}

/// The `len` symbols encoded by a factor.
pub fn decode_factor(f: &Factor, fm_rev: &FmIndex) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(f.len as usize);
    read_factor(f, fm_rev, 0, f.len as usize, &mut out)?;
    Ok(out)
}

/// One symbol of a factor, reached with `offset` LF steps on the reverse index.
pub fn char_at_via_reverse_index(f: &Factor, fm_rev: &FmIndex, offset: usize) -> Result<u8> {
    if offset >= f.len as usize {
        return Err(Error::Contract(format!("offset {offset} beyond factor length {}", f.len)));
    }
    let mut out = Vec::with_capacity(1);
    read_factor(f, fm_rev, offset, offset + 1, &mut out)?;
    Ok(out[0])
}

/// `S[start .. start + length]` decoded from the covering factors only.
pub fn extract_text(fz: &Factorization, fm_rev: &FmIndex, start: u64, length: u64) -> Result<Vec<u8>> {
    let end = start
        .checked_add(length)
        .filter(|&e| e <= fz.source_length())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "range {start}+{length} outside sequence of length {}",
                fz.source_length()
            ))
        })?;
    let mut out = Vec::with_capacity(length as usize);
    if length == 0 {
        return Ok(out);
    }
    let mut j = fz.factor_at(start).expect("start is inside the sequence");
    let mut pos = start;
    while pos < end {
        let f = &fz.factors[j];
        let fstart = fz.starts[j];
        let from = (pos - fstart) as usize;
        let to = ((end - fstart) as usize).min(f.len as usize);
        read_factor(f, fm_rev, from, to, &mut out)?;
        pos = fstart + to as u64;
        j += 1;
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::fm::naive_suffix_array;
    use crate::sequence::{mutate_reference, random_sequence, MutationProfile};

    fn reference(text: &[u8]) -> ReferenceIndex {
        ReferenceIndex::build(&Sequence::new("R", "", text).unwrap(), 4).unwrap()
    }

    fn seq(text: &[u8]) -> Sequence {
        Sequence::new("S", "", text).unwrap()
    }

    fn shape(fz: &Factorization, fm_rev: &FmIndex) -> Vec<(Vec<u8>, u8, u32)> {
        fz.factors()
            .iter()
            .map(|f| {
                let d = decode_factor(f, fm_rev).unwrap();
                (d[..d.len() - 1].to_vec(), f.mc, f.len)
            })
            .collect()
    }

    #[test]
    fn single_factor_example() {
        let r = reference(b"ACGT");
        let fz = factorize(&seq(b"ACGA"), &r, 4).unwrap();
        assert_eq!(shape(&fz, &r.fm_rev), vec![(b"ACG".to_vec(), b'A', 4)]);
    }

    #[test]
    fn two_factor_example() {
        let r = reference(b"ACGTACGT");
        let fz = factorize(&seq(b"ACGTTACG"), &r, 4).unwrap();
        assert_eq!(
            shape(&fz, &r.fm_rev),
            vec![(b"ACGT".to_vec(), b'T', 5), (b"AC".to_vec(), b'G', 3)]
        );
        assert_eq!(fz.l_max(), 5);
        assert_eq!(extract_text(&fz, &r.fm_rev, 3, 3).unwrap(), b"TTA");
    }

    #[test]
    fn mismatch_only() {
        let r = reference(b"ACGT");
        let fz = factorize(&seq(b"N"), &r, 4).unwrap();
        assert_eq!(fz.factors(), &[Factor::literal(b'N')]);
        let fz = factorize(&seq(b"ANNC"), &r, 4).unwrap();
        assert_eq!(fz.factors().iter().map(|f| f.len).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert_eq!(fz.decode_all(&r.fm_rev).unwrap(), b"ANNC");
    }

    #[test]
    fn n_boundary_forces_break() {
        let r = reference(b"ACGTNNNNACGT");
        let fz = factorize(&seq(b"CGTNNNACGTA"), &r, 4).unwrap();
        let refs: Vec<Vec<u8>> = shape(&fz, &r.fm_rev).into_iter().map(|x| x.0).collect();
        assert_eq!(refs[0], b"CGT");
        assert_eq!(fz.decode_all(&r.fm_rev).unwrap(), b"CGTNNNACGTA");
        for f in fz.factors() {
            let d = decode_factor(f, &r.fm_rev).unwrap();
            let part = &d[..d.len() - 1];
            assert!(part.iter().all(|&b| b == b'N') || part.iter().all(|&b| b != b'N'));
        }
    }

    #[test]
    fn keys_match_brute_force() {
        let rtext = random_sequence("R", 3000, 11);
        let r = reference(rtext.data());
        let rev: Vec<u8> = rtext.data().iter().rev().copied().collect();
        let sa = naive_suffix_array(rtext.data());
        let sa_rev = naive_suffix_array(&rev);
        let s = mutate_reference(&rtext, &MutationProfile::new(0.02, 0.005, 0.005, 3).unwrap()).unwrap();
        let fz = factorize(&s, &r, 8).unwrap();

        let expected_lens = oracle::greedy_ref_lengths(s.data(), rtext.data());
        let lens: Vec<usize> = fz.factors().iter().map(|f| f.ref_len() as usize).collect();
        assert_eq!(lens, expected_lens);

        for (j, f) in fz.factors().iter().enumerate() {
            let start = fz.factor_start(j) as usize;
            let part = &s.data()[start..start + f.ref_len() as usize];
            let Some(k) = f.keys else {
                assert_eq!(f.len, 1);
                continue;
            };
            let tp = k.tp as usize;
            assert_eq!(&rtext.data()[tp..tp + part.len()], part);
            assert_eq!(sa[k.sai as usize] as usize, tp);
            let rpart: Vec<u8> = part.iter().rev().copied().collect();
            let first = sa_rev.iter().position(|&q| rev[q as usize..].starts_with(&rpart)).unwrap();
            assert_eq!(k.sai_rev as usize, first);
        }
        assert_eq!(fz.decode_all(&r.fm_rev).unwrap(), s.data());
        let total: u64 = fz.factors().iter().map(|f| f.len as u64).sum();
        assert_eq!(total, s.len() as u64);
    }

    #[test]
    fn char_at_agrees_with_decode() {
        let rtext = random_sequence("R", 4000, 12);
        let r = reference(rtext.data());
        let s = mutate_reference(&rtext, &MutationProfile::with_edit_rate(0.03, 5).unwrap()).unwrap();
        let fz = factorize(&s, &r, 16).unwrap();
        for f in fz.factors() {
            let d = decode_factor(f, &r.fm_rev).unwrap();
            assert_eq!(d.len(), f.len as usize);
            for (off, &sym) in d.iter().enumerate() {
                assert_eq!(char_at_via_reverse_index(f, &r.fm_rev, off).unwrap(), sym);
            }
            assert_eq!(char_at_via_reverse_index(f, &r.fm_rev, f.len as usize - 1).unwrap(), f.mc);
            if let Some(k) = f.keys {
                assert_eq!(d[0], rtext.data()[k.tp as usize]);
            }
            assert!(char_at_via_reverse_index(f, &r.fm_rev, f.len as usize).is_err());
        }
    }

    #[test]
    fn extraction() {
        let rtext = random_sequence("R", 5000, 13);
        let r = reference(rtext.data());
        let s = mutate_reference(&rtext, &MutationProfile::with_edit_rate(0.02, 9).unwrap()).unwrap();
        let fz = factorize(&s, &r, 16).unwrap();
        let n = s.len() as u64;
        assert_eq!(extract_text(&fz, &r.fm_rev, 0, n).unwrap(), s.data());
        assert!(extract_text(&fz, &r.fm_rev, 10, 0).unwrap().is_empty());
        assert!(extract_text(&fz, &r.fm_rev, n - 1, 2).is_err());
        for j in 1..fz.len().min(50) {
            let b = fz.factor_start(j);
            let (a, e) = (b.saturating_sub(3), (b + 4).min(n));
            assert_eq!(extract_text(&fz, &r.fm_rev, a, e - a).unwrap(), &s.data()[a as usize..e as usize]);
        }
    }

    #[test]
    fn block_layout() {
        let rtext = random_sequence("R", 3000, 14);
        let r = reference(rtext.data());
        let s = mutate_reference(&rtext, &MutationProfile::with_edit_rate(0.05, 1).unwrap()).unwrap();
        let fz = factorize(&s, &r, 7).unwrap();
        let blocks: Vec<usize> = fz.blocks().map(|b| b.len()).collect();
        assert!(blocks[..blocks.len() - 1].iter().all(|&b| b == 7));
        assert_eq!(fz.l_max(), fz.factors().iter().map(|f| f.len).max().unwrap());
    }

    #[test]
    fn last_symbol_is_always_a_mismatch() {
        let r = reference(b"ACGTACGT");
        let fz = factorize(&seq(b"ACGTACGT"), &r, 4).unwrap();
        let last = fz.factors().last().unwrap();
        assert_eq!(last.mc, b'T');
        assert_eq!(fz.decode_all(&r.fm_rev).unwrap(), b"ACGTACGT");
        let fz = factorize(&seq(b"A"), &r, 4).unwrap();
        assert_eq!(fz.factors(), &[Factor::literal(b'A')]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let rtext = random_sequence("R", 20_000, 15);
        let r = reference(rtext.data());
        let coll: Vec<Sequence> = (0..5)
            .map(|k| {
                mutate_reference(&rtext, &MutationProfile::with_edit_rate(0.01, k).unwrap())
                    .unwrap()
                    .with_id(format!("ind{k}"))
            })
            .collect();
        let seq_out: Vec<Factorization> = coll.iter().map(|s| factorize(s, &r, 32).unwrap()).collect();
        for workers in [1, 2, 8] {
            assert_eq!(factorize_parallel(&coll, &r, 32, workers).unwrap(), seq_out);
        }
        assert!(factorize_parallel(&[], &r, 32, 2).unwrap().is_empty());
        assert!(factorize_parallel(&coll, &r, 32, 0).is_err());
    }
}
