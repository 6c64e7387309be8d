//! Per-individual factorization sections: an encrypted header followed by
//! encrypted blocks of `bs` bit-packed factors.

use sha2::{Digest, Sha256};

use crate::coding::{bit_width, BitReader, BitWriter, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rlz::{Factor, Factorization};

/// Block `b` uses nonce `b + 1`; tree nonces start at this value.
pub const MAX_BLOCKS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct FzHeader {
    pub individual_id: String,
    pub source_length: u64,
    pub factor_count: u64,
    pub block_size: u32,
    pub l_max: u32,
    /// Distinct mismatch symbols; factors store an index into this list.
    pub mc_alphabet: Vec<u8>,
    /// Encrypted length of each block.
    pub block_bytes: Vec<u32>,
    /// Text position where each block starts; one trailing entry holds the source length.
    pub block_starts: Vec<u64>,
}

impl FzHeader {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.str(&self.individual_id)
            .varint(self.source_length)
            .varint(self.factor_count)
            .varint(self.block_size as u64)
            .varint(self.l_max as u64)
            .blob(&self.mc_alphabet)
            .varint(self.block_bytes.len() as u64);
        for (b, pair) in self.block_bytes.iter().zip(self.block_starts.windows(2)) {
            w.varint(*b as u64).varint(pair[1] - pair[0]);
        }
        let check: [u8; 32] = Sha256::digest(w.as_slice()).into();
        w.bytes(&check);
        w.into_inner()
    }

    /// Fails with a checksum error when decrypted under the wrong key.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Checksum("factorization header"));
        }
        let (body, check) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != check {
            return Err(Error::Checksum("factorization header"));
        }
        let mut r = ByteReader::new(body);
        let individual_id = r.str()?;
        let source_length = r.varint()?;
        let factor_count = r.varint()?;
        let block_size = r.varint()? as u32;
        let l_max = r.varint()? as u32;
        let mc_alphabet = r.blob()?.to_vec();
        let blocks = r.varint()? as usize;
        if blocks > body.len() {
            return Err(Error::corrupt("factorization block count"));
        }
        let mut block_bytes = Vec::with_capacity(blocks);
        let mut block_starts = Vec::with_capacity(blocks + 1);
        let mut at = 0u64;
        block_starts.push(0);
        for _ in 0..blocks {
            block_bytes.push(r.varint()? as u32);
            at += r.varint()?;
            block_starts.push(at);
        }
        r.expect_end("factorization header")?;
        if at != source_length || block_size == 0 || factor_count.div_ceil(block_size as u64) != blocks as u64 {
            return Err(Error::corrupt("factorization header totals"));
        }
        Ok(FzHeader {
            individual_id,
            source_length,
            factor_count,
            block_size,
            l_max,
            mc_alphabet,
            block_bytes,
            block_starts,
        })
    }

    pub fn block_count(&self) -> usize {
        self.block_bytes.len()
    }

    /// Factors held by block `b`.
    pub fn block_len(&self, b: usize) -> usize {
        let bs = self.block_size as usize;
        (self.factor_count as usize - b * bs).min(bs)
    }
}

/// Decoded block with the absolute text start of every factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Block {
    pub factors: Vec<Factor>,
    /// `starts[k]`: text position of the block's `k`-th factor, plus one end entry.
    pub starts: Vec<u64>,
}

pub(crate) fn mc_alphabet(fz: &Factorization) -> Vec<u8> {
    let mut seen = [false; 256];
    for f in fz.factors() {
        seen[f.mc as usize] = true;
    }
    (0..=255u8).filter(|&b| seen[b as usize]).collect()
}

pub(crate) fn encode_block(factors: &[Factor], alphabet: &[u8]) -> Vec<u8> {
    let ws = bit_width(factors.iter().map(|f| f.sai_rev_start as u64).max().unwrap_or(0));
    let wl = bit_width(factors.iter().map(|f| f.len as u64 - 1).max().unwrap_or(0));
    let wm = bit_width(alphabet.len().saturating_sub(1) as u64);
    let mut index = [0u8; 256];
    for (i, &a) in alphabet.iter().enumerate() {
        index[a as usize] = i as u8;
    }
    let mut bits = BitWriter::new();
    for f in factors {
        bits.write(f.sai_rev_start as u64, ws);
        bits.write(f.len as u64 - 1, wl);
        bits.write(index[f.mc as usize] as u64, wm);
    }
    let mut out = vec![ws as u8, wl as u8];
    out.extend_from_slice(&bits.finish());
    out
}

pub(crate) fn decode_block(bytes: &[u8], count: usize, alphabet: &[u8], start: u64) -> Result<Block> {
    if bytes.len() < 2 || bytes[0] > 32 || bytes[1] > 32 {
        return Err(Error::corrupt("factor block header"));
    }
    let (ws, wl) = (bytes[0] as u32, bytes[1] as u32);
    let wm = bit_width(alphabet.len().saturating_sub(1) as u64);
    let body = &bytes[2..];
    if body.len() != (count * (ws + wl + wm) as usize).div_ceil(8) {
        return Err(Error::corrupt("factor block length"));
    }
    let mut bits = BitReader::new(body);
    let mut factors = Vec::with_capacity(count);
    let mut starts = Vec::with_capacity(count + 1);
    let mut at = start;
    for _ in 0..count {
        let sai_rev_start = bits.read(ws)? as u32;
        let len = bits.read(wl)? as u32 + 1;
        let mc = *alphabet
            .get(bits.read(wm)? as usize)
            .ok_or_else(|| Error::corrupt("mismatch symbol index"))?;
        starts.push(at);
        at += len as u64;
        factors.push(Factor {
            sai_rev_start,
            len,
            mc,
            keys: None,
        });
    }
    starts.push(at);
    Ok(Block { factors, starts })
}
