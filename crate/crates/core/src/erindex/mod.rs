//! The encrypted referential index: factorizations of a collection against
//! one reference plus three EB+ trees, persisted encrypted and searched
//! without decrypting more than the blocks and nodes a query touches.

mod blocks;
mod file;
mod search;

use std::collections::HashSet;
use std::sync::Arc;

pub use blocks::MAX_BLOCKS;
pub use file::{IndexStats, OpenedIndex, FORMAT_VERSION, MAGIC};
pub use search::{
    find_left_side_factors, find_right_side_factors, find_text_positions, locate, locate_external_occs,
    locate_internal_occs, pat_rem_part, Candidate, SearchOptions,
};

use crate::crypto::KeyPortfolio;
use crate::ebtree::{EBPlusTree, TreeHit, TreeValue, DEFAULT_ORDER};
use crate::error::{Error, Result};
use crate::fm::ReferenceIndex;
use crate::rlz::{self, Factor, Factorization};
use crate::sequence::Sequence;

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// The three search trees and the base nonce each one is saved under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TreeKind {
    Reverse,
    Forward,
    Position,
}

impl TreeKind {
    pub const ALL: [TreeKind; 3] = [TreeKind::Reverse, TreeKind::Forward, TreeKind::Position];

    pub fn base_nonce(self) -> u64 {
        match self {
            TreeKind::Reverse => 10_000_000,
            TreeKind::Forward => 20_000_000,
            TreeKind::Position => 30_000_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TreeKind::Reverse => "reverse",
            TreeKind::Forward => "forward",
            TreeKind::Position => "pos",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occurrence {
    pub individual_id: String,
    pub fact_ind: usize,
    pub fact_off: usize,
    pub ending_fact_ind: usize,
    pub ending_fact_off: usize,
    pub text_position: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BuildConfig {
    pub block_size: usize,
    pub order: usize,
    pub workers: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            block_size: DEFAULT_BLOCK_SIZE,
            order: DEFAULT_ORDER,
            workers: rayon::current_num_threads(),
        }
    }
}

/// Read access shared by the freshly built index and an opened index file,
/// so one search engine serves both.
pub trait SearchBackend: Sync {
    fn reference(&self) -> &ReferenceIndex;
    fn individual_count(&self) -> usize;
    fn individual_id(&self, slot: u32) -> &str;
    fn l_max(&self) -> u32;
    /// Whether this reader may see the individual's data; checks the key on first use.
    fn readable(&self, slot: u32) -> Result<bool>;
    fn factor_count(&self, slot: u32) -> Result<usize>;
    fn source_length(&self, slot: u32) -> Result<u64>;
    fn factor(&self, slot: u32, j: usize) -> Result<Factor>;
    fn factor_start(&self, slot: u32, j: usize) -> Result<u64>;
    /// Factor covering text position `pos`.
    fn factor_at(&self, slot: u32, pos: u64) -> Result<usize>;
    /// Couples under keys in `[l, u]`, restricted to readable individuals.
    fn tree_range(&self, tree: TreeKind, l: u64, u: u64) -> Result<Vec<TreeHit>>;

    fn slot_of(&self, individual: &str) -> Option<u32> {
        (0..self.individual_count() as u32).find(|&s| self.individual_id(s) == individual)
    }
}

/// An index built in memory; nothing is encrypted until [`ERIndex::save`].
#[derive(Clone, Debug)]
pub struct ERIndex {
    reference: Arc<ReferenceIndex>,
    factorizations: Vec<Factorization>,
    trees: [EBPlusTree; 3],
    block_size: usize,
    l_max: u32,
}

impl ERIndex {
    pub fn build(reference: Arc<ReferenceIndex>, collection: &[Sequence], config: BuildConfig) -> Result<Self> {
        if collection.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty collection".into()));
        }
        let mut seen = HashSet::new();
        for s in collection {
            if !seen.insert(s.id()) {
                return Err(Error::Duplicate(format!("individual {}", s.id())));
            }
        }
        let factorizations = rlz::factorize_parallel(collection, &reference, config.block_size, config.workers.max(1))?;
        Self::from_factorizations(reference, factorizations, config)
    }

    pub fn from_factorizations(
        reference: Arc<ReferenceIndex>,
        factorizations: Vec<Factorization>,
        config: BuildConfig,
    ) -> Result<Self> {
        if factorizations.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty collection".into()));
        }
        let mut trees = [
            EBPlusTree::new(config.order)?,
            EBPlusTree::new(config.order)?,
            EBPlusTree::new(config.order)?,
        ];
        for (slot, fz) in factorizations.iter().enumerate() {
            if fz.block_size() != config.block_size {
                return Err(Error::InvalidArgument("factorizations disagree on block size".into()));
            }
            if fz.factors().len() > u32::MAX as usize {
                return Err(Error::InvalidArgument(format!("individual {} has too many factors", fz.individual_id())));
            }
            for (j, f) in fz.factors().iter().enumerate() {
                if let Some(k) = f.keys {
                    let v = TreeValue {
                        slot: slot as u32,
                        factor: j as u32,
                    };
                    trees[TreeKind::Reverse.index()].insert(k.sai_rev as u64, v);
                    trees[TreeKind::Forward.index()].insert(k.sai as u64, v);
                    trees[TreeKind::Position.index()].insert(k.tp as u64, v);
                }
            }
        }
        let l_max = factorizations.iter().map(Factorization::l_max).max().unwrap_or(0);
        Ok(ERIndex {
            reference,
            factorizations,
            trees,
            block_size: config.block_size,
            l_max,
        })
    }

    pub fn reference_index(&self) -> &Arc<ReferenceIndex> {
        &self.reference
    }

    pub fn factorizations(&self) -> &[Factorization] {
        &self.factorizations
    }

    pub fn tree(&self, kind: TreeKind) -> &EBPlusTree {
        &self.trees[kind.index()]
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn individual_ids(&self) -> Vec<&str> {
        self.factorizations.iter().map(Factorization::individual_id).collect()
    }

    /// View restricted to the individuals whose keys `portfolio` holds.
    pub fn view(&self, portfolio: &KeyPortfolio) -> BuiltView<'_> {
        BuiltView {
            index: self,
            allowed: self
                .factorizations
                .iter()
                .map(|f| portfolio.key_for(f.individual_id()).is_some())
                .collect(),
        }
    }

    /// View over every individual.
    pub fn full_view(&self) -> BuiltView<'_> {
        BuiltView {
            index: self,
            allowed: vec![true; self.factorizations.len()],
        }
    }

    pub fn locate(&self, pattern: &[u8], portfolio: &KeyPortfolio) -> Result<Vec<Occurrence>> {
        locate(&self.view(portfolio), pattern, SearchOptions::default())
    }

    pub fn locate_all(&self, pattern: &[u8]) -> Result<Vec<Occurrence>> {
        locate(&self.full_view(), pattern, SearchOptions::default())
    }

    pub fn extract(&self, individual: &str, start: u64, length: u64) -> Result<Vec<u8>> {
        let fz = self
            .factorizations
            .iter()
            .find(|f| f.individual_id() == individual)
            .ok_or_else(|| Error::Unknown(format!("individual {individual}")))?;
        rlz::extract_text(fz, &self.reference.fm_rev, start, length)
    }
}

pub struct BuiltView<'a> {
    index: &'a ERIndex,
    allowed: Vec<bool>,
}

impl BuiltView<'_> {
    fn fz(&self, slot: u32) -> Result<&Factorization> {
        self.index
            .factorizations
            .get(slot as usize)
            .ok_or_else(|| Error::Contract(format!("no individual slot {slot}")))
    }
}

impl SearchBackend for BuiltView<'_> {
    fn reference(&self) -> &ReferenceIndex {
        &self.index.reference
    }

    fn individual_count(&self) -> usize {
        self.index.factorizations.len()
    }

    fn individual_id(&self, slot: u32) -> &str {
        self.index.factorizations[slot as usize].individual_id()
    }

    fn l_max(&self) -> u32 {
        self.index.l_max
    }

    fn readable(&self, slot: u32) -> Result<bool> {
        Ok(self.allowed.get(slot as usize).copied().unwrap_or(false))
    }

    fn factor_count(&self, slot: u32) -> Result<usize> {
        Ok(self.fz(slot)?.len())
    }

    fn source_length(&self, slot: u32) -> Result<u64> {
        Ok(self.fz(slot)?.source_length())
    }

    fn factor(&self, slot: u32, j: usize) -> Result<Factor> {
        self.fz(slot)?
            .factors()
            .get(j)
            .copied()
            .ok_or_else(|| Error::corrupt(format!("factor {j} out of range")))
    }

    fn factor_start(&self, slot: u32, j: usize) -> Result<u64> {
        let fz = self.fz(slot)?;
        if j > fz.len() {
            return Err(Error::corrupt(format!("factor {j} out of range")));
        }
        Ok(fz.factor_start(j))
    }

    fn factor_at(&self, slot: u32, pos: u64) -> Result<usize> {
        self.fz(slot)?
            .factor_at(pos)
            .ok_or_else(|| Error::corrupt(format!("position {pos} beyond sequence end")))
    }

    fn tree_range(&self, tree: TreeKind, l: u64, u: u64) -> Result<Vec<TreeHit>> {
        Ok(self.index.trees[tree.index()].get_factors_in_range(l, u, |s| self.allowed[s as usize]))
    }
}
