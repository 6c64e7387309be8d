//! Encrypted B+ trees mapping integer search keys to `(individual, factor)` couples.
//!
//! Build happens in memory through [`EBPlusTree::insert`]. [`save_tree`]
//! writes the encrypted, invariable-coded node stream and [`StoredTree`]
//! answers range queries over it, decrypting nodes on first touch.

mod coding;
mod stored;

pub use coding::{decode_node_invariable, encode_node_invariable};
pub use stored::{save_tree, SlotKeys, StoredTree, TreeStats, SYSTEM_KEY_ID};

use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 64;
/// Nodes per tree must stay below this so base nonces never overlap.
pub const MAX_NODES: usize = 10_000_000;

/// One couple stored under a key: individual slot and factor number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeValue {
    pub slot: u32,
    pub factor: u32,
}

/// A couple returned by a range query, with the key it was stored under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeHit {
    pub slot: u32,
    pub key: u64,
    pub factor: u32,
}

type NodeId = usize;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        keys: Vec<u64>,
        values: Vec<Vec<TreeValue>>,
        next: Option<NodeId>,
    },
    Internal {
        keys: Vec<u64>,
        children: Vec<NodeId>,
    },
}

/// In-memory B+ tree of order `N`: every non-root node holds `N..=2N` keys.
#[derive(Clone, Debug)]
pub struct EBPlusTree {
    order: usize,
    nodes: Vec<Node>,
    root: NodeId,
    depth: usize,
    value_count: usize,
}

impl Default for EBPlusTree {
    fn default() -> Self {
        Self::new(DEFAULT_ORDER).expect("default order is valid")
    }
}

impl EBPlusTree {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("tree order must be at least 1".into()));
        }
        Ok(EBPlusTree {
            order,
            nodes: vec![Node::Leaf {
                keys: Vec::new(),
                values: Vec::new(),
                next: None,
            }],
            root: 0,
            depth: 1,
            value_count: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value_count(&self) -> usize {
        self.value_count
    }

    pub fn is_empty(&self) -> bool {
        self.value_count == 0
    }

    pub fn root_is_leaf(&self) -> bool {
        matches!(self.nodes[self.root], Node::Leaf { .. })
    }

    pub fn root_key_count(&self) -> usize {
        match &self.nodes[self.root] {
            Node::Leaf { keys, .. } | Node::Internal { keys, .. } => keys.len(),
        }
    }

    pub fn insert(&mut self, key: u64, value: TreeValue) {
        let mut path: Vec<(NodeId, usize)> = Vec::with_capacity(self.depth);
        let mut node = self.root;
        while let Node::Internal { keys, children } = &self.nodes[node] {
            let idx = keys.partition_point(|&k| k <= key);
            path.push((node, idx));
            node = children[idx];
        }
        self.value_count += 1;

        let Node::Leaf { keys, values, .. } = &mut self.nodes[node] else {
            unreachable!()
        };
        let pos = keys.partition_point(|&k| k < key);
        if pos < keys.len() && keys[pos] == key {
            let list = &mut values[pos];
            let at = list.partition_point(|v| *v <= value);
            list.insert(at, value);
            return;
        }
        keys.insert(pos, key);
        values.insert(pos, vec![value]);
        if keys.len() <= 2 * self.order {
            return;
        }

        let (mut sep, mut right) = self.split_leaf(node);
        while let Some((parent, idx)) = path.pop() {
            let Node::Internal { keys, children } = &mut self.nodes[parent] else {
                unreachable!()
            };
            keys.insert(idx, sep);
            children.insert(idx + 1, right);
            if keys.len() <= 2 * self.order {
                return;
            }
            (sep, right) = self.split_internal(parent);
        }
        let old_root = self.root;
        self.nodes.push(Node::Internal {
            keys: vec![sep],
            children: vec![old_root, right],
        });
        self.root = self.nodes.len() - 1;
        self.depth += 1;
    }

    fn split_leaf(&mut self, node: NodeId) -> (u64, NodeId) {
        let new_id = self.nodes.len();
        let n = self.order;
        let Node::Leaf { keys, values, next } = &mut self.nodes[node] else {
            unreachable!()
        };
        let rkeys = keys.split_off(n);
        let rvalues = values.split_off(n);
        let rnext = next.replace(new_id);
        let sep = rkeys[0];
        self.nodes.push(Node::Leaf {
            keys: rkeys,
            values: rvalues,
            next: rnext,
        });
        (sep, new_id)
    }

    fn split_internal(&mut self, node: NodeId) -> (u64, NodeId) {
        let new_id = self.nodes.len();
        let n = self.order;
        let Node::Internal { keys, children } = &mut self.nodes[node] else {
            unreachable!()
        };
        let rkeys = keys.split_off(n + 1);
        let sep = keys.pop().unwrap();
        let rchildren = children.split_off(n + 1);
        self.nodes.push(Node::Internal {
            keys: rkeys,
            children: rchildren,
        });
        (sep, new_id)
    }

    fn leftmost_leaf(&self) -> NodeId {
        let mut node = self.root;
        while let Node::Internal { children, .. } = &self.nodes[node] {
            node = children[0];
        }
        node
    }

    /// Leaf where `value` would reside, as a position in the leaf chain.
    pub fn search_for_leaf(&self, value: u64) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let target = self.descend(value);
        self.leaf_chain().position(|id| id == target)
    }

    fn descend(&self, value: u64) -> NodeId {
        let mut node = self.root;
        while let Node::Internal { keys, children } = &self.nodes[node] {
            node = children[keys.partition_point(|&k| k <= value)];
        }
        node
    }

    fn leaf_chain(&self) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(self.leftmost_leaf()), move |&id| match &self.nodes[id] {
            Node::Leaf { next, .. } => *next,
            Node::Internal { .. } => None,
        })
    }

    /// All couples stored under keys in `[l, u]`, ordered by slot, key, factor.
    pub fn get_factors_in_range(&self, l: u64, u: u64, authorized: impl Fn(u32) -> bool) -> Vec<TreeHit> {
        let mut hits = Vec::new();
        if l > u || self.is_empty() {
            return hits;
        }
        let mut leaf = Some(self.descend(l));
        'scan: while let Some(id) = leaf {
            let Node::Leaf { keys, values, next } = &self.nodes[id] else {
                unreachable!()
            };
            let start = keys.partition_point(|&k| k < l);
            for (key, list) in keys[start..].iter().zip(&values[start..]) {
                if *key > u {
                    break 'scan;
                }
                hits.extend(list.iter().filter(|v| authorized(v.slot)).map(|v| TreeHit {
                    slot: v.slot,
                    key: *key,
                    factor: v.factor,
                }));
            }
            leaf = *next;
        }
        hits.sort_unstable();
        hits
    }

    /// In-order `(key, values)` pairs.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &[TreeValue])> + '_ {
        self.leaf_chain().flat_map(move |id| match &self.nodes[id] {
            Node::Leaf { keys, values, .. } => keys.iter().copied().zip(values.iter().map(Vec::as_slice)),
            Node::Internal { .. } => unreachable!(),
        })
    }

    /// Checks the B+ invariants: equal leaf depth, key-count bounds, key
    /// order, separator bounds and a leaf chain matching in-order traversal.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        let mut dfs_leaves = Vec::new();
        let mut stack = vec![(self.root, 1usize, None::<u64>, None::<u64>)];
        let mut values = 0;
        while let Some((id, level, lo, hi)) = stack.pop() {
            let keys = match &self.nodes[id] {
                Node::Leaf { keys, .. } | Node::Internal { keys, .. } => keys,
            };
            let is_root = id == self.root;
            let n = keys.len();
            if n > 2 * self.order {
                return fail(format!("node {id} holds {n} keys"));
            }
            if !is_root && n < self.order {
                return fail(format!("node {id} holds only {n} keys"));
            }
            if keys.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("node {id} keys not strictly increasing"));
            }
            if keys.first().zip(lo).is_some_and(|(&k, lo)| k < lo) || keys.last().zip(hi).is_some_and(|(&k, hi)| k >= hi) {
                return fail(format!("node {id} keys escape their separator bounds"));
            }
            match &self.nodes[id] {
                Node::Leaf { values: v, .. } => {
                    if level != self.depth {
                        return fail(format!("leaf {id} at level {level}, tree depth {}", self.depth));
                    }
                    if v.len() != n || v.iter().any(|l| l.is_empty() || l.windows(2).any(|w| w[0] > w[1])) {
                        return fail(format!("leaf {id} value lists malformed"));
                    }
                    values += v.iter().map(Vec::len).sum::<usize>();
                    dfs_leaves.push(id);
                }
                Node::Internal { children, .. } => {
                    if is_root && n == 0 {
                        return fail("internal root without keys".into());
                    }
                    if children.len() != n + 1 {
                        return fail(format!("node {id} has {} children for {n} keys", children.len()));
                    }
                    for (i, &c) in children.iter().enumerate().rev() {
                        let clo = if i == 0 { lo } else { Some(keys[i - 1]) };
                        let chi = if i == n { hi } else { Some(keys[i]) };
                        stack.push((c, level + 1, clo, chi));
                    }
                }
            }
        }
        if values != self.value_count {
            return fail(format!("value count {values} != {}", self.value_count));
        }
        if !self.leaf_chain().eq(dfs_leaves) {
            return fail("leaf chain disagrees with in-order traversal".into());
        }
        Ok(())
    }

    /// Node numbering used on disk: leaves left to right, then internal
    /// nodes in post-order, so the root is the last node.
    fn numbering(&self) -> (Vec<NodeId>, usize) {
        let leaves: Vec<NodeId> = self.leaf_chain().collect();
        let leaf_count = leaves.len();
        let mut order = leaves;
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if let Node::Internal { children, .. } = &self.nodes[id] {
                if expanded {
                    order.push(id);
                } else {
                    stack.push((id, true));
                    for &c in children.iter().rev() {
                        stack.push((c, false));
                    }
                }
            }
        }
        (order, leaf_count)
    }
}
