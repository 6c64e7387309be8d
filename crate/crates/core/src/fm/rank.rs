use crate::coding::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

/// Plain bitvector with a cumulative count per 64-bit word; `rank1` is a
/// lookup plus one popcount.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankBits {
    len: usize,
    words: Vec<u64>,
    before: Vec<u32>,
}

impl RankBits {
    pub fn from_fn(len: usize, mut bit: impl FnMut(usize) -> bool) -> Self {
        let mut words = vec![0u64; len.div_ceil(64)];
        for i in 0..len {
            if bit(i) {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self::from_words(len, words)
    }

    fn from_words(len: usize, words: Vec<u64>) -> Self {
        let mut before = Vec::with_capacity(words.len() + 1);
        let mut acc = 0u32;
        for w in &words {
            before.push(acc);
            acc += w.count_ones();
        }
        before.push(acc);
        RankBits { len, words, before }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Number of set bits in `[0, k)`, `k <= len`.
    #[inline]
    pub fn rank1(&self, k: usize) -> usize {
        debug_assert!(k <= self.len);
        let w = k / 64;
        let r = k % 64;
        let base = self.before[w] as usize;
        if r == 0 {
            base
        } else {
            base + (self.words[w] & ((1u64 << r) - 1)).count_ones() as usize
        }
    }

    pub fn count_ones(&self) -> usize {
        *self.before.last().unwrap() as usize
    }

    pub fn size_in_bytes(&self) -> usize {
        self.words.len() * 8 + self.before.len() * 4
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u64(self.len as u64);
        w.u64_slice(&self.words);
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let len = r.u64()? as usize;
        let words = r.u64_vec()?;
        if words.len() != len.div_ceil(64) {
            return Err(Error::corrupt("bitvector word count does not match its length"));
        }
        Ok(Self::from_words(len, words))
    }
}
