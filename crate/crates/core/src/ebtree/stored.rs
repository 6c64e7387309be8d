use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use super::coding::{decode_partition, encode_partition, InternalKeys, LeafKeys};
use super::{EBPlusTree, Node, TreeHit, MAX_NODES};
use crate::coding::{ByteReader, ByteWriter};
use crate::crypto::{xor_segment, NonceLedger, SymmetricKey};
use crate::error::{Error, Result};
use crate::storage::ByteSource;

const NODE_CACHE: usize = 1 << 16;
const PARTITION_CACHE: usize = 1 << 18;

/// Per-slot individual keys; `None` marks individuals the reader may not see.
#[derive(Clone, Debug, Default)]
pub struct SlotKeys {
    keys: Vec<Option<SymmetricKey>>,
}

impl SlotKeys {
    pub fn new(keys: Vec<Option<SymmetricKey>>) -> Self {
        SlotKeys { keys }
    }

    pub fn all(keys: &[SymmetricKey]) -> Self {
        SlotKeys {
            keys: keys.iter().cloned().map(Some).collect(),
        }
    }

    pub fn get(&self, slot: u32) -> Option<&SymmetricKey> {
        self.keys.get(slot as usize).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Label under which the nonce ledger tracks this slot's key.
    pub fn key_id(slot: u32) -> String {
        format!("individual:{slot}")
    }
}

pub const SYSTEM_KEY_ID: &str = "system";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeStats {
    pub order: usize,
    pub node_count: usize,
    pub leaf_count: usize,
    pub depth: usize,
    pub value_count: usize,
}

/// Serializes the tree: encrypted directory, then every node with its key
/// section under the system key and its per-individual partitions under
/// the owners' keys, all with nonce `base_nonce + node_number + 1`.
pub fn save_tree(
    tree: &EBPlusTree,
    base_nonce: u64,
    system_key: &SymmetricKey,
    individual_keys: &SlotKeys,
    ledger: &mut NonceLedger,
) -> Result<Vec<u8>> {
    let (order, leaf_count) = if tree.is_empty() { (Vec::new(), 0) } else { tree.numbering() };
    if order.len() >= MAX_NODES {
        return Err(Error::NonceSpace(format!("tree has {} nodes, limit {}", order.len(), MAX_NODES)));
    }
    let mut number = vec![0u32; tree.nodes.len()];
    for (i, &id) in order.iter().enumerate() {
        number[id] = i as u32;
    }

    let mut nodes = Vec::with_capacity(order.len());
    for (i, &id) in order.iter().enumerate() {
        let nonce = base_nonce + i as u64 + 1;
        ledger.claim(SYSTEM_KEY_ID, nonce)?;
        let mut w = ByteWriter::new();
        match &tree.nodes[id] {
            Node::Internal { keys, children } => {
                let section = InternalKeys {
                    keys: keys.clone(),
                    children: children.iter().map(|&c| number[c]).collect(),
                }
                .encode()?;
                w.u32(section.len() as u32).bytes(&xor_segment(system_key, nonce, &section));
                w.varint(0);
            }
            Node::Leaf { keys, values, .. } => {
                let mut by_slot: BTreeMap<u32, (Vec<u64>, Vec<u32>)> = BTreeMap::new();
                for (&k, list) in keys.iter().zip(values) {
                    for v in list {
                        let e = by_slot.entry(v.slot).or_default();
                        e.0.push(k);
                        e.1.push(v.factor);
                    }
                }
                let mut parts = Vec::with_capacity(by_slot.len());
                for (&slot, (_, factors)) in &by_slot {
                    let key = individual_keys
                        .get(slot)
                        .ok_or_else(|| Error::MissingKey(format!("individual slot {slot}")))?;
                    ledger.claim(&SlotKeys::key_id(slot), nonce)?;
                    parts.push(xor_segment(key, nonce, &encode_partition(factors)));
                }
                let section = LeafKeys {
                    slots: by_slot.into_iter().map(|(s, (k, _))| (s, k)).collect(),
                }
                .encode();
                w.u32(section.len() as u32).bytes(&xor_segment(system_key, nonce, &section));
                w.varint(parts.len() as u64);
                for p in &parts {
                    w.varint(p.len() as u64);
                }
                for p in &parts {
                    w.bytes(p);
                }
            }
        }
        nodes.push(w.into_inner());
    }

    let mut dir = ByteWriter::new();
    dir.u32(tree.order as u32)
        .varint(order.len() as u64)
        .varint(leaf_count as u64)
        .varint(if order.is_empty() { 0 } else { tree.depth as u64 })
        .varint(tree.value_count as u64);
    for n in &nodes {
        dir.varint(n.len() as u64);
    }
    ledger.claim(SYSTEM_KEY_ID, base_nonce)?;
    let dir = xor_segment(system_key, base_nonce, dir.as_slice());

    let total: usize = 4 + dir.len() + nodes.iter().map(Vec::len).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&(dir.len() as u32).to_le_bytes());
    out.extend_from_slice(&dir);
    for n in nodes {
        out.extend_from_slice(&n);
    }
    Ok(out)
}

#[derive(Debug)]
enum StoredNode {
    Leaf {
        keys: LeafKeys,
        max_key: u64,
        /// Absolute offset and length of each slot's partition, in `keys.slots` order.
        parts: Vec<(u64, usize)>,
    },
    Internal(InternalKeys),
}

/// A saved tree opened over a byte source. Only the directory is read at
/// open; nodes and partitions are read and decrypted on first touch.
pub struct StoredTree {
    source: Arc<dyn ByteSource>,
    base_nonce: u64,
    system_key: SymmetricKey,
    slot_keys: Arc<SlotKeys>,
    stats: TreeStats,
    /// Absolute start of node `i`; one trailing entry marks the section end.
    offsets: Vec<u64>,
    directory: Vec<u8>,
    nodes: Mutex<LruCache<u32, Arc<StoredNode>>>,
    partitions: Mutex<LruCache<(u32, u32), Option<Partition>>>,
    node_loads: AtomicU64,
}

/// Decoded factor ids of one individual in one leaf.
type Partition = Arc<Vec<u32>>;

impl std::fmt::Debug for StoredTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoredTree")
            .field("base_nonce", &self.base_nonce)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl StoredTree {
    pub fn open(
        source: Arc<dyn ByteSource>,
        offset: u64,
        len: u64,
        base_nonce: u64,
        system_key: SymmetricKey,
        slot_keys: Arc<SlotKeys>,
    ) -> Result<Self> {
        let dir_len = u32::from_le_bytes(source.read_vec(offset, 4)?.try_into().unwrap()) as u64;
        if 4 + dir_len > len {
            return Err(Error::corrupt("tree directory exceeds its section"));
        }
        let enc_dir = source.read_vec(offset + 4, dir_len as usize)?;
        let dir = xor_segment(&system_key, base_nonce, &enc_dir);
        let mut r = ByteReader::new(&dir);
        let order = r.u32()? as usize;
        let node_count = r.varint()? as usize;
        let leaf_count = r.varint()? as usize;
        let depth = r.varint()? as usize;
        let value_count = r.varint()? as usize;
        if node_count >= MAX_NODES || leaf_count > node_count || node_count > dir.len() || depth > 64 {
            return Err(Error::corrupt("tree directory header"));
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut at = offset + 4 + dir_len;
        offsets.push(at);
        for _ in 0..node_count {
            at = at
                .checked_add(r.varint()?)
                .ok_or_else(|| Error::corrupt("tree directory offsets"))?;
            offsets.push(at);
        }
        r.expect_end("tree directory")?;
        if at != offset + len {
            return Err(Error::corrupt("tree directory disagrees with section length"));
        }
        Ok(StoredTree {
            source,
            base_nonce,
            system_key,
            slot_keys,
            stats: TreeStats {
                order,
                node_count,
                leaf_count,
                depth,
                value_count,
            },
            offsets,
            directory: enc_dir,
            nodes: Mutex::new(LruCache::new(NonZeroUsize::new(NODE_CACHE).unwrap())),
            partitions: Mutex::new(LruCache::new(NonZeroUsize::new(PARTITION_CACHE).unwrap())),
            node_loads: AtomicU64::new(0),
        })
    }

    pub fn stats(&self) -> TreeStats {
        self.stats
    }

    /// Encrypted directory bytes, as stored.
    pub fn directory_ciphertext(&self) -> &[u8] {
        &self.directory
    }

    /// Number of node reads from the source so far.
    pub fn node_loads(&self) -> u64 {
        self.node_loads.load(Ordering::Relaxed)
    }

    fn node(&self, number: u32) -> Result<Arc<StoredNode>> {
        if let Some(n) = self.nodes.lock().get(&number) {
            return Ok(n.clone());
        }
        let i = number as usize;
        if i >= self.stats.node_count {
            return Err(Error::corrupt(format!("node {number} out of range")));
        }
        self.node_loads.fetch_add(1, Ordering::Relaxed);
        let (start, end) = (self.offsets[i], self.offsets[i + 1]);
        let raw = self.source.read_vec(start, (end - start) as usize)?;
        let nonce = self.base_nonce + number as u64 + 1;
        let mut r = ByteReader::new(&raw);
        let klen = r.u32()? as usize;
        let section = xor_segment(&self.system_key, nonce, r.take(klen)?);
        let node = if i < self.stats.leaf_count {
            let keys = LeafKeys::decode(&section)?;
            let n = r.varint()? as usize;
            if n != keys.slots.len() {
                return Err(Error::corrupt("partition table disagrees with key section"));
            }
            let lens = (0..n).map(|_| r.varint().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
            let mut at = start + r.position() as u64;
            let mut parts = Vec::with_capacity(n);
            for l in lens {
                parts.push((at, l));
                at += l as u64;
            }
            if at != end {
                return Err(Error::corrupt("leaf partitions overrun their node"));
            }
            let max_key = keys.max_key().ok_or_else(|| Error::corrupt("empty leaf"))?;
            StoredNode::Leaf { keys, max_key, parts }
        } else {
            let keys = InternalKeys::decode(&section)?;
            if r.varint()? != 0 || r.remaining() != 0 {
                return Err(Error::corrupt("internal node carries partitions"));
            }
            if keys.children.iter().any(|&c| c >= number) {
                return Err(Error::corrupt("child numbered after its parent"));
            }
            StoredNode::Internal(keys)
        };
        let node = Arc::new(node);
        self.nodes.lock().put(number, node.clone());
        Ok(node)
    }

    /// Decrypted factor numbers of one slot in one leaf, or `None` when the
    /// reader lacks the key or the partition does not decode.
    fn partition(&self, leaf: u32, slot_index: usize, slot: u32, at: (u64, usize), count: usize) -> Result<Option<Arc<Vec<u32>>>> {
        if let Some(p) = self.partitions.lock().get(&(leaf, slot)) {
            return Ok(p.clone());
        }
        let Some(key) = self.slot_keys.get(slot) else {
            return Ok(None);
        };
        let raw = self.source.read_vec(at.0, at.1)?;
        let plain = xor_segment(key, self.base_nonce + leaf as u64 + 1, &raw);
        let decoded = match decode_partition(&plain, count) {
            Ok(f) => Some(Arc::new(f)),
            Err(e) => {
                log::warn!(
                    "skipping undecodable partition {slot_index} (individual slot {slot}) of leaf {leaf} at base nonce {}: {e}",
                    self.base_nonce
                );
                None
            }
        };
        self.partitions.lock().put((leaf, slot), decoded.clone());
        Ok(decoded)
    }

    /// Leaf number where `value` would reside.
    pub fn search_for_leaf(&self, value: u64) -> Result<Option<u32>> {
        if self.stats.node_count == 0 {
            return Ok(None);
        }
        let mut number = (self.stats.node_count - 1) as u32;
        for _ in 0..=self.stats.depth {
            match &*self.node(number)? {
                StoredNode::Leaf { .. } => return Ok(Some(number)),
                StoredNode::Internal(k) => number = k.children[k.keys.partition_point(|&s| s <= value)],
            }
        }
        Err(Error::corrupt("tree deeper than its directory claims"))
    }

    /// Couples under keys in `[l, u]` for the slots this reader holds keys
    /// for, ordered by slot, key, factor.
    pub fn get_factors_in_range(&self, l: u64, u: u64) -> Result<Vec<TreeHit>> {
        let mut hits = Vec::new();
        if l > u {
            return Ok(hits);
        }
        let Some(mut leaf) = self.search_for_leaf(l)? else {
            return Ok(hits);
        };
        loop {
            let node = self.node(leaf)?;
            let StoredNode::Leaf { keys, max_key, parts } = &*node else {
                return Err(Error::corrupt("leaf chain reached an internal node"));
            };
            for (i, ((slot, skeys), &at)) in keys.slots.iter().zip(parts).enumerate() {
                let lo = skeys.partition_point(|&k| k < l);
                let hi = skeys.partition_point(|&k| k <= u);
                if lo == hi {
                    continue;
                }
                let Some(factors) = self.partition(leaf, i, *slot, at, skeys.len())? else {
                    continue;
                };
                hits.extend((lo..hi).map(|j| TreeHit {
                    slot: *slot,
                    key: skeys[j],
                    factor: factors[j],
                }));
            }
            if *max_key > u || leaf as usize + 1 >= self.stats.leaf_count {
                break;
            }
            leaf += 1;
        }
        hits.sort_unstable();
        Ok(hits)
    }
}
