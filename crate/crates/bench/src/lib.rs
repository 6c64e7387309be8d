//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use erix_core::crypto::{KeyPortfolio, SymmetricKey};
use erix_core::sequence::{mutate_reference, random_sequence, MutationProfile};
use erix_core::{BuildConfig, ERIndex, ReferenceIndex, Sequence};

pub struct Fixture {
    pub reference: Arc<ReferenceIndex>,
    pub collection: Vec<Sequence>,
    pub index: ERIndex,
    pub portfolio: KeyPortfolio,
}

/// `count` individuals derived from one random reference of `len` bases at a 1% edit rate.
pub fn population(len: usize, count: usize, seed: u64) -> Fixture {
    let r = random_sequence("ref", len, seed);
    let reference = Arc::new(ReferenceIndex::build(&r, 32).expect("reference builds"));
    let collection: Vec<Sequence> = (0..count as u64)
        .map(|k| {
            mutate_reference(&r, &MutationProfile::with_edit_rate(0.01, seed + 1 + k).unwrap())
                .unwrap()
                .with_id(format!("ind{k}"))
        })
        .collect();
    let index = ERIndex::build(reference.clone(), &collection, BuildConfig::default()).expect("index builds");
    let mut portfolio = KeyPortfolio::new("bench", SymmetricKey::generate());
    for s in &collection {
        portfolio.insert(s.id(), SymmetricKey::generate());
    }
    Fixture {
        reference,
        collection,
        index,
        portfolio,
    }
}
