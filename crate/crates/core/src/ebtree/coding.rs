use crate::coding::{bit_width, BitReader, BitWriter, ByteReader, ByteWriter};
use crate::error::{Error, Result};

/// Invariable coding: the first key as a fixed 64-bit word, the key count,
/// and every other key's difference from the first at the minimum width.
pub fn encode_node_invariable(keys: &[u64]) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    write_invariable(&mut w, keys)?;
    Ok(w.into_inner())
}

pub fn decode_node_invariable(payload: &[u8]) -> Result<Vec<u64>> {
    let mut r = ByteReader::new(payload);
    let keys = read_invariable(&mut r)?;
    r.expect_end("invariable-coded keys")?;
    Ok(keys)
}

pub(crate) fn write_invariable(w: &mut ByteWriter, keys: &[u64]) -> Result<()> {
    if keys.windows(2).any(|p| p[0] > p[1]) {
        return Err(Error::InvalidArgument("invariable coding needs sorted keys".into()));
    }
    let first = keys.first().copied().unwrap_or(0);
    let width = bit_width(keys.last().map_or(0, |&l| l - first));
    w.u64(first).varint(keys.len() as u64).u8(width as u8);
    let mut bits = BitWriter::new();
    for &k in keys.iter().skip(1) {
        bits.write(k - first, width);
    }
    w.bytes(&bits.finish());
    Ok(())
}

pub(crate) fn read_invariable(r: &mut ByteReader<'_>) -> Result<Vec<u64>> {
    let first = r.u64()?;
    let count = r.varint()? as usize;
    let width = r.u8()? as u32;
    if width > 64 {
        return Err(Error::corrupt("invariable width above 64"));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let body = r.take(((count - 1) * width as usize).div_ceil(8))?;
    let mut bits = BitReader::new(body);
    let mut keys = Vec::with_capacity(count);
    keys.push(first);
    for _ in 1..count {
        let d = bits.read(width)?;
        keys.push(first.checked_add(d).ok_or_else(|| Error::corrupt("key overflow"))?);
    }
    Ok(keys)
}

/// Leaf key section: per individual slot, its keys in order, all coded as
/// fixed-width differences from the leaf's smallest key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LeafKeys {
    pub slots: Vec<(u32, Vec<u64>)>,
}

impl LeafKeys {
    pub fn max_key(&self) -> Option<u64> {
        self.slots.iter().filter_map(|(_, k)| k.last().copied()).max()
    }

    pub fn encode(&self) -> Vec<u8> {
        let min = self.slots.iter().filter_map(|(_, k)| k.first().copied()).min().unwrap_or(0);
        let width = bit_width(self.max_key().map_or(0, |m| m - min));
        let count_width = bit_width(self.slots.iter().map(|(_, k)| k.len() as u64 - 1).max().unwrap_or(0));
        let mut w = ByteWriter::new();
        w.varint(min).u8(width as u8).u8(count_width as u8).varint(self.slots.len() as u64);
        let mut prev = 0u32;
        for (i, (slot, _)) in self.slots.iter().enumerate() {
            let gap = if i == 0 { *slot } else { slot - prev - 1 };
            w.varint(gap as u64);
            prev = *slot;
        }
        let mut bits = BitWriter::new();
        for (_, keys) in &self.slots {
            bits.write(keys.len() as u64 - 1, count_width);
        }
        for (_, keys) in &self.slots {
            for &k in keys {
                bits.write(k - min, width);
            }
        }
        w.bytes(&bits.finish());
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let min = r.varint()?;
        let width = r.u8()? as u32;
        let count_width = r.u8()? as u32;
        let n = r.varint()? as usize;
        if width > 64 || count_width > 32 || n > bytes.len() {
            return Err(Error::corrupt("leaf key section header"));
        }
        let mut slots = Vec::with_capacity(n);
        let mut prev: Option<u32> = None;
        for _ in 0..n {
            let gap = u32::try_from(r.varint()?).map_err(|_| Error::corrupt("slot gap"))?;
            let slot = match prev {
                None => gap,
                Some(p) => p
                    .checked_add(gap)
                    .and_then(|s| s.checked_add(1))
                    .ok_or_else(|| Error::corrupt("slot overflow"))?,
            };
            prev = Some(slot);
            slots.push((slot, Vec::new()));
        }
        let rest = r.take(r.remaining())?;
        let mut bits = BitReader::new(rest);
        let mut counts = Vec::with_capacity(n);
        for _ in 0..n {
            counts.push(bits.read(count_width)? as usize + 1);
        }
        for ((_, keys), &c) in slots.iter_mut().zip(&counts) {
            if c > rest.len() * 8 + 1 {
                return Err(Error::corrupt("leaf key count"));
            }
            keys.reserve(c);
            for _ in 0..c {
                keys.push(min + bits.read(width)?);
            }
        }
        if bits.bytes_consumed() != rest.len() {
            return Err(Error::corrupt("trailing bytes in leaf key section"));
        }
        Ok(LeafKeys { slots })
    }
}

/// Internal node key section: separators and child node numbers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct InternalKeys {
    pub keys: Vec<u64>,
    pub children: Vec<u32>,
}

impl InternalKeys {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        write_invariable(&mut w, &self.keys)?;
        let children: Vec<u64> = self.children.iter().map(|&c| c as u64).collect();
        write_invariable(&mut w, &children)?;
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let keys = read_invariable(&mut r)?;
        let children = read_invariable(&mut r)?
            .into_iter()
            .map(|c| u32::try_from(c).map_err(|_| Error::corrupt("child number")))
            .collect::<Result<Vec<u32>>>()?;
        r.expect_end("internal node")?;
        if children.len() != keys.len() + 1 {
            return Err(Error::corrupt("internal node child count"));
        }
        Ok(InternalKeys { keys, children })
    }
}

/// Factor numbers of one individual inside a leaf, frame-of-reference coded
/// against whichever of 0 or the minimum gives the shorter payload. The
/// first byte holds the width, with the top bit set when a base follows.
pub(crate) fn encode_partition(factors: &[u32]) -> Vec<u8> {
    let min = factors.iter().copied().min().unwrap_or(0) as u64;
    let max = factors.iter().copied().max().unwrap_or(0) as u64;
    let size = |base: u64| {
        let mut w = ByteWriter::new();
        if base > 0 {
            w.varint(base);
        }
        w.len() + (factors.len() * bit_width(max - base) as usize).div_ceil(8)
    };
    let base = if size(min) < size(0) { min } else { 0 };
    let width = bit_width(max - base);
    let mut w = ByteWriter::new();
    if base > 0 {
        w.u8(width as u8 | 0x80).varint(base);
    } else {
        w.u8(width as u8);
    }
    let mut bits = BitWriter::new();
    for &f in factors {
        bits.write(f as u64 - base, width);
    }
    w.bytes(&bits.finish());
    w.into_inner()
}

pub(crate) fn decode_partition(bytes: &[u8], count: usize) -> Result<Vec<u32>> {
    let mut r = ByteReader::new(bytes);
    let head = r.u8()?;
    let width = (head & 0x7f) as u32;
    let base = if head & 0x80 != 0 { r.varint()? } else { 0 };
    if width > 32 {
        return Err(Error::corrupt("partition width"));
    }
    let body = r.take(r.remaining())?;
    if body.len() != (count * width as usize).div_ceil(8) {
        return Err(Error::corrupt("partition length disagrees with its key count"));
    }
    let mut bits = BitReader::new(body);
    (0..count)
        .map(|_| {
            let f = base + bits.read(width)?;
            u32::try_from(f).map_err(|_| Error::corrupt("factor number overflow"))
        })
        .collect()
}
