//! On-disk layout:
//!
//! ```text
//! "ERIX" u16 version  u32 header_len  header            (system key, nonce 0)
//! per individual: u32 len  fz header                    (its key, nonce 0)
//!                 blocks                                (its key, nonce b + 1)
//! reverse tree, forward tree, position tree
//! sha256(header ciphertext || tree directory ciphertexts)
//! ```
//!
//! Section offsets in the header are relative to the end of the header.

use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use lru::LruCache;
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use super::blocks::{decode_block, encode_block, mc_alphabet, Block, FzHeader, MAX_BLOCKS};
use super::{search, ERIndex, Occurrence, SearchBackend, SearchOptions, TreeKind};
use crate::coding::{ByteReader, ByteWriter};
use crate::crypto::{xor_segment, KeyPortfolio, NonceLedger};
use crate::ebtree::{save_tree, SlotKeys, StoredTree, TreeHit, TreeStats, SYSTEM_KEY_ID};
use crate::error::{Error, Result};
use crate::fm::ReferenceIndex;
use crate::rlz::{self, Factor};
use crate::storage::{ByteSource, FileSource, MemorySource};

pub const MAGIC: &[u8; 4] = b"ERIX";
pub const FORMAT_VERSION: u16 = 1;
const PREAMBLE: u64 = 4 + 2 + 4;
const TRAILER: u64 = 32;
const BLOCK_CACHE: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq, Eq)]
struct IndividualEntry {
    id: String,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct IndexHeader {
    reference_id: String,
    reference_digest: [u8; 32],
    reference_len: u64,
    block_size: u32,
    l_max: u32,
    order: u32,
    individuals: Vec<IndividualEntry>,
    trees: [(u64, u64); 3],
}

impl IndexHeader {
    fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.str(&self.reference_id)
            .bytes(&self.reference_digest)
            .varint(self.reference_len)
            .varint(self.block_size as u64)
            .varint(self.l_max as u64)
            .varint(self.order as u64)
            .varint(self.individuals.len() as u64);
        for e in &self.individuals {
            w.str(&e.id).varint(e.offset).varint(e.len);
        }
        for (o, l) in self.trees {
            w.varint(o).varint(l);
        }
        let check: [u8; 32] = Sha256::digest(w.as_slice()).into();
        w.bytes(&check);
        w.into_inner()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Checksum("index header"));
        }
        let (body, check) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != check {
            return Err(Error::Checksum("index header"));
        }
        let mut r = ByteReader::new(body);
        let reference_id = r.str()?;
        let reference_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let reference_len = r.varint()?;
        let block_size = r.varint()? as u32;
        let l_max = r.varint()? as u32;
        let order = r.varint()? as u32;
        let n = r.varint()? as usize;
        if n > body.len() {
            return Err(Error::corrupt("individual count"));
        }
        let mut individuals = Vec::with_capacity(n);
        for _ in 0..n {
            individuals.push(IndividualEntry {
                id: r.str()?,
                offset: r.varint()?,
                len: r.varint()?,
            });
        }
        let mut trees = [(0, 0); 3];
        for t in &mut trees {
            *t = (r.varint()?, r.varint()?);
        }
        r.expect_end("index header")?;
        Ok(IndexHeader {
            reference_id,
            reference_digest,
            reference_len,
            block_size,
            l_max,
            order,
            individuals,
            trees,
        })
    }
}

/// Byte sizes of the sections of a saved index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexStats {
    pub header_bytes: u64,
    /// Factorization section size per individual.
    pub factorization_bytes: Vec<(String, u64)>,
    pub tree_bytes: [u64; 3],
    pub tree_stats: [TreeStats; 3],
    pub trailer_bytes: u64,
    pub total_bytes: u64,
}

impl IndexStats {
    pub fn factorization_total(&self) -> u64 {
        self.factorization_bytes.iter().map(|(_, b)| b).sum()
    }

    pub fn tree_total(&self) -> u64 {
        self.tree_bytes.iter().sum()
    }
}

fn slot_keys_for(ids: &[&str], portfolio: &KeyPortfolio) -> SlotKeys {
    SlotKeys::new(ids.iter().map(|id| portfolio.key_for(id).cloned()).collect())
}

impl ERIndex {
    /// Serializes and encrypts the index. `portfolio` must hold the key of
    /// every individual.
    pub fn to_bytes(&self, portfolio: &KeyPortfolio) -> Result<Vec<u8>> {
        self.to_bytes_with_ledger(portfolio, &mut NonceLedger::new())
    }

    /// Like [`ERIndex::to_bytes`], recording every `(key, nonce)` pair in `ledger`.
    pub fn to_bytes_with_ledger(&self, portfolio: &KeyPortfolio, ledger: &mut NonceLedger) -> Result<Vec<u8>> {
        let ids = self.individual_ids();
        let keys = slot_keys_for(&ids, portfolio);
        if let Some(missing) = ids.iter().find(|id| portfolio.key_for(id).is_none()) {
            return Err(Error::MissingKey(format!("individual {missing}")));
        }
        let system = portfolio.system_key();
        let mut body = Vec::new();
        let mut individuals = Vec::with_capacity(ids.len());

        for (slot, fz) in self.factorizations().iter().enumerate() {
            let key = keys.get(slot as u32).unwrap();
            let key_id = SlotKeys::key_id(slot as u32);
            let block_count = fz.blocks().len();
            if block_count >= MAX_BLOCKS {
                return Err(Error::NonceSpace(format!(
                    "individual {} needs {block_count} blocks, limit {MAX_BLOCKS}",
                    fz.individual_id()
                )));
            }
            let alphabet = mc_alphabet(fz);
            let mut blocks = Vec::with_capacity(block_count);
            let mut block_starts = vec![0u64];
            for (b, chunk) in fz.blocks().enumerate() {
                let nonce = b as u64 + 1;
                ledger.claim(&key_id, nonce)?;
                blocks.push(xor_segment(key, nonce, &encode_block(chunk, &alphabet)));
                let last = block_starts.last().unwrap();
                block_starts.push(last + chunk.iter().map(|f| f.len as u64).sum::<u64>());
            }
            let header = FzHeader {
                individual_id: fz.individual_id().to_string(),
                source_length: fz.source_length(),
                factor_count: fz.len() as u64,
                block_size: self.block_size() as u32,
                l_max: fz.l_max(),
                mc_alphabet: alphabet,
                block_bytes: blocks.iter().map(|b| b.len() as u32).collect(),
                block_starts,
            };
            ledger.claim(&key_id, 0)?;
            let enc = xor_segment(key, 0, &header.encode());
            let offset = body.len() as u64;
            body.extend_from_slice(&(enc.len() as u32).to_le_bytes());
            body.extend_from_slice(&enc);
            for b in blocks {
                body.extend_from_slice(&b);
            }
            individuals.push(IndividualEntry {
                id: fz.individual_id().to_string(),
                offset,
                len: body.len() as u64 - offset,
            });
        }

        let mut trees = [(0, 0); 3];
        let mut directories = Vec::new();
        for kind in TreeKind::ALL {
            let bytes = save_tree(self.tree(kind), kind.base_nonce(), system, &keys, ledger)?;
            let dir_len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
            directories.extend_from_slice(&bytes[4..4 + dir_len]);
            trees[kind.index()] = (body.len() as u64, bytes.len() as u64);
            body.extend_from_slice(&bytes);
        }

        let reference = self.reference_index();
        let header = IndexHeader {
            reference_id: reference.id.clone(),
            reference_digest: reference.digest,
            reference_len: reference.len() as u64,
            block_size: self.block_size() as u32,
            l_max: self.full_view().l_max(),
            order: self.tree(TreeKind::Reverse).order() as u32,
            individuals,
            trees,
        };
        ledger.claim(SYSTEM_KEY_ID, 0)?;
        let enc_header = xor_segment(system, 0, &header.encode());

        let mut out = Vec::with_capacity(PREAMBLE as usize + enc_header.len() + body.len() + TRAILER as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(enc_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&enc_header);
        out.extend_from_slice(&body);
        out.extend_from_slice(&trailer_digest(&enc_header, &directories));
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, portfolio: &KeyPortfolio) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes(portfolio)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn trailer_digest(enc_header: &[u8], directories: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(enc_header);
    h.update(directories);
    h.finalize().into()
}

/// A saved index opened for one reader. Opening reads the header and the
/// tree directories only; factorization headers, blocks and tree nodes are
/// decrypted when a query first needs them.
pub struct OpenedIndex {
    source: Arc<dyn ByteSource>,
    reference: Arc<ReferenceIndex>,
    header: IndexHeader,
    header_bytes: u64,
    body_start: u64,
    slot_keys: Arc<SlotKeys>,
    trees: [StoredTree; 3],
    /// `None` once a slot is known to be unreadable.
    fz_headers: Vec<OnceLock<Option<Arc<FzHeader>>>>,
    blocks: Mutex<LruCache<(u32, u32), Arc<Block>>>,
    block_loads: AtomicU64,
}

impl std::fmt::Debug for OpenedIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenedIndex")
            .field("reference", &self.header.reference_id)
            .field("individuals", &self.header.individuals.len())
            .finish_non_exhaustive()
    }
}

impl OpenedIndex {
    pub fn open(path: impl AsRef<Path>, reference: Arc<ReferenceIndex>, portfolio: &KeyPortfolio) -> Result<Self> {
        Self::from_source(Arc::new(FileSource::open(path)?), reference, portfolio)
    }

    pub fn from_bytes(bytes: Vec<u8>, reference: Arc<ReferenceIndex>, portfolio: &KeyPortfolio) -> Result<Self> {
        Self::from_source(Arc::new(MemorySource::new(bytes)), reference, portfolio)
    }

    pub fn from_source(
        source: Arc<dyn ByteSource>,
        reference: Arc<ReferenceIndex>,
        portfolio: &KeyPortfolio,
    ) -> Result<Self> {
        if source.len() < PREAMBLE + TRAILER {
            return Err(Error::corrupt("index file too short"));
        }
        let pre = source.read_vec(0, PREAMBLE as usize)?;
        if &pre[..4] != MAGIC {
            return Err(Error::corrupt("not an encrypted index file"));
        }
        let version = u16::from_le_bytes([pre[4], pre[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(pre[6..10].try_into().unwrap()) as u64;
        if PREAMBLE + header_len + TRAILER > source.len() {
            return Err(Error::corrupt("index header exceeds file"));
        }
        let enc_header = source.read_vec(PREAMBLE, header_len as usize)?;
        let header = IndexHeader::decode(&xor_segment(portfolio.system_key(), 0, &enc_header))?;
        if header.reference_digest != reference.digest || header.reference_len != reference.len() as u64 {
            return Err(Error::Stale(format!(
                "index was built against reference {} with a different digest",
                header.reference_id
            )));
        }
        let body_start = PREAMBLE + header_len;
        let body_len = source.len() - body_start - TRAILER;
        for e in &header.individuals {
            if e.offset.checked_add(e.len).is_none_or(|end| end > body_len) {
                return Err(Error::corrupt(format!("section of individual {} out of bounds", e.id)));
            }
        }
        let ids: Vec<&str> = header.individuals.iter().map(|e| e.id.as_str()).collect();
        let slot_keys = Arc::new(slot_keys_for(&ids, portfolio));
        let open_tree = |kind: TreeKind| {
            let (o, l) = header.trees[kind.index()];
            if o.checked_add(l).is_none_or(|end| end > body_len) {
                return Err(Error::corrupt(format!("{} tree section out of bounds", kind.name())));
            }
            StoredTree::open(
                source.clone(),
                body_start + o,
                l,
                kind.base_nonce(),
                portfolio.system_key().clone(),
                slot_keys.clone(),
            )
        };
        let trees = [
            open_tree(TreeKind::Reverse)?,
            open_tree(TreeKind::Forward)?,
            open_tree(TreeKind::Position)?,
        ];
        let directories: Vec<u8> = trees.iter().flat_map(|t| t.directory_ciphertext().to_vec()).collect();
        let trailer = source.read_vec(source.len() - TRAILER, TRAILER as usize)?;
        if trailer != trailer_digest(&enc_header, &directories) {
            return Err(Error::Checksum("index trailer"));
        }
        let fz_headers = (0..header.individuals.len()).map(|_| OnceLock::new()).collect();
        Ok(OpenedIndex {
            source,
            reference,
            header,
            header_bytes: PREAMBLE + header_len,
            body_start,
            slot_keys,
            trees,
            fz_headers,
            blocks: Mutex::new(LruCache::new(NonZeroUsize::new(BLOCK_CACHE).unwrap())),
            block_loads: AtomicU64::new(0),
        })
    }

    pub fn reference_id(&self) -> &str {
        &self.header.reference_id
    }

    pub fn block_size(&self) -> usize {
        self.header.block_size as usize
    }

    pub fn individual_ids(&self) -> Vec<&str> {
        self.header.individuals.iter().map(|e| e.id.as_str()).collect()
    }

    /// Individuals this reader holds a key for.
    pub fn authorized_ids(&self) -> Vec<&str> {
        (0..self.header.individuals.len() as u32)
            .filter(|&s| self.slot_keys.get(s).is_some())
            .map(|s| self.header.individuals[s as usize].id.as_str())
            .collect()
    }

    pub fn locate(&self, pattern: &[u8]) -> Result<Vec<Occurrence>> {
        search::locate(self, pattern, SearchOptions::default())
    }

    pub fn locate_with(&self, pattern: &[u8], opts: SearchOptions) -> Result<Vec<Occurrence>> {
        search::locate(self, pattern, opts)
    }

    /// `S[start .. start + length]` of one individual, decoded from the covering blocks.
    pub fn extract(&self, individual: &str, start: u64, length: u64) -> Result<Vec<u8>> {
        let slot = self
            .slot_of(individual)
            .ok_or_else(|| Error::Unknown(format!("individual {individual}")))?;
        if !self.readable(slot)? {
            return Err(Error::MissingKey(format!("individual {individual}")));
        }
        let n = self.source_length(slot)?;
        let end = start
            .checked_add(length)
            .filter(|&e| e <= n)
            .ok_or_else(|| Error::InvalidArgument(format!("range {start}+{length} outside sequence of length {n}")))?;
        let mut out = Vec::with_capacity(length as usize);
        if length == 0 {
            return Ok(out);
        }
        let mut j = self.factor_at(slot, start)?;
        let mut pos = start;
        while pos < end {
            let f = self.factor(slot, j)?;
            let fs = self.factor_start(slot, j)?;
            let from = (pos - fs) as usize;
            let to = ((end - fs) as usize).min(f.len as usize);
            rlz::read_factor(&f, &self.reference.fm_rev, from, to, &mut out)?;
            pos = fs + to as u64;
            j += 1;
        }
        Ok(out)
    }

    pub fn stats(&self) -> IndexStats {
        let tree_bytes = [0, 1, 2].map(|i| self.header.trees[i].1);
        IndexStats {
            header_bytes: self.header_bytes,
            factorization_bytes: self.header.individuals.iter().map(|e| (e.id.clone(), e.len)).collect(),
            tree_bytes,
            tree_stats: [0, 1, 2].map(|i| self.trees[i].stats()),
            trailer_bytes: TRAILER,
            total_bytes: self.source.len(),
        }
    }

    /// Blocks and tree nodes read from the source so far.
    pub fn loads(&self) -> (u64, u64) {
        (
            self.block_loads.load(Ordering::Relaxed),
            self.trees.iter().map(StoredTree::node_loads).sum(),
        )
    }

    fn fz_header(&self, slot: u32) -> Result<Option<Arc<FzHeader>>> {
        let cell = self
            .fz_headers
            .get(slot as usize)
            .ok_or_else(|| Error::Contract(format!("no individual slot {slot}")))?;
        if let Some(h) = cell.get() {
            return Ok(h.clone());
        }
        let loaded = self.load_fz_header(slot)?;
        Ok(cell.get_or_init(|| loaded).clone())
    }

    fn load_fz_header(&self, slot: u32) -> Result<Option<Arc<FzHeader>>> {
        let Some(key) = self.slot_keys.get(slot) else {
            return Ok(None);
        };
        let e = &self.header.individuals[slot as usize];
        if e.len < 4 {
            return Err(Error::corrupt(format!("section of individual {} too short", e.id)));
        }
        let at = self.body_start + e.offset;
        let hlen = u32::from_le_bytes(self.source.read_vec(at, 4)?.try_into().unwrap()) as u64;
        if 4 + hlen > e.len {
            return Err(Error::corrupt(format!("factorization header of {} exceeds its section", e.id)));
        }
        let plain = xor_segment(key, 0, &self.source.read_vec(at + 4, hlen as usize)?);
        let h = match FzHeader::decode(&plain) {
            Ok(h) => h,
            Err(Error::Checksum(_)) => {
                log::warn!("key for individual {} does not open its factorization; skipping it", e.id);
                return Ok(None);
            }
            Err(err) => return Err(err),
        };
        let blocks_len: u64 = h.block_bytes.iter().map(|&b| b as u64).sum();
        if h.individual_id != e.id || 4 + hlen + blocks_len != e.len || h.block_size != self.header.block_size {
            return Err(Error::corrupt(format!("factorization header of {} disagrees with the index", e.id)));
        }
        Ok(Some(Arc::new(h)))
    }

    fn header_for(&self, slot: u32) -> Result<Arc<FzHeader>> {
        self.fz_header(slot)?.ok_or_else(|| {
            Error::MissingKey(format!("individual {}", self.header.individuals[slot as usize].id))
        })
    }

    fn block(&self, slot: u32, b: usize) -> Result<Arc<Block>> {
        if let Some(blk) = self.blocks.lock().get(&(slot, b as u32)) {
            return Ok(blk.clone());
        }
        let h = self.header_for(slot)?;
        if b >= h.block_count() {
            return Err(Error::corrupt(format!("block {b} out of range")));
        }
        let e = &self.header.individuals[slot as usize];
        let at = self.body_start + e.offset;
        let hlen = u32::from_le_bytes(self.source.read_vec(at, 4)?.try_into().unwrap()) as u64;
        let skip: u64 = h.block_bytes[..b].iter().map(|&x| x as u64).sum();
        let enc = self
            .source
            .read_vec(at + 4 + hlen + skip, h.block_bytes[b] as usize)?;
        self.block_loads.fetch_add(1, Ordering::Relaxed);
        let key = self.slot_keys.get(slot).unwrap();
        let plain = xor_segment(key, b as u64 + 1, &enc);
        let blk = decode_block(&plain, h.block_len(b), &h.mc_alphabet, h.block_starts[b])?;
        if *blk.starts.last().unwrap() != h.block_starts[b + 1] {
            return Err(Error::corrupt(format!("block {b} of {} has wrong total length", e.id)));
        }
        let blk = Arc::new(blk);
        self.blocks.lock().put((slot, b as u32), blk.clone());
        Ok(blk)
    }
}

impl SearchBackend for OpenedIndex {
    fn reference(&self) -> &ReferenceIndex {
        &self.reference
    }

    fn individual_count(&self) -> usize {
        self.header.individuals.len()
    }

    fn individual_id(&self, slot: u32) -> &str {
        &self.header.individuals[slot as usize].id
    }

    fn l_max(&self) -> u32 {
        self.header.l_max
    }

    fn readable(&self, slot: u32) -> Result<bool> {
        Ok(self.fz_header(slot)?.is_some())
    }

    fn factor_count(&self, slot: u32) -> Result<usize> {
        Ok(self.header_for(slot)?.factor_count as usize)
    }

    fn source_length(&self, slot: u32) -> Result<u64> {
        Ok(self.header_for(slot)?.source_length)
    }

    fn factor(&self, slot: u32, j: usize) -> Result<Factor> {
        let bs = self.block_size();
        self.block(slot, j / bs)?
            .factors
            .get(j % bs)
            .copied()
            .ok_or_else(|| Error::corrupt(format!("factor {j} out of range")))
    }

    fn factor_start(&self, slot: u32, j: usize) -> Result<u64> {
        let h = self.header_for(slot)?;
        if j as u64 == h.factor_count {
            return Ok(h.source_length);
        }
        let bs = self.block_size();
        self.block(slot, j / bs)?
            .starts
            .get(j % bs)
            .copied()
            .ok_or_else(|| Error::corrupt(format!("factor {j} out of range")))
    }

    fn factor_at(&self, slot: u32, pos: u64) -> Result<usize> {
        let h = self.header_for(slot)?;
        if pos >= h.source_length {
            return Err(Error::corrupt(format!("position {pos} beyond sequence end")));
        }
        let b = h.block_starts.partition_point(|&s| s <= pos) - 1;
        let blk = self.block(slot, b)?;
        let k = blk.starts.partition_point(|&s| s <= pos) - 1;
        Ok(b * self.block_size() + k)
    }

    fn tree_range(&self, tree: TreeKind, l: u64, u: u64) -> Result<Vec<TreeHit>> {
        self.trees[tree.index()].get_factors_in_range(l, u)
    }
}
