use std::collections::BTreeSet;
use std::sync::Arc;

use erix_core::crypto::{KeyPortfolio, SymmetricKey};
use erix_core::erindex::{locate, BuildConfig, ERIndex, OpenedIndex, SearchOptions};
use erix_core::fm::ReferenceIndex;
use erix_core::sequence::{mutate_reference, random_sequence, MutationProfile, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive(coll: &[Sequence], p: &[u8]) -> BTreeSet<(String, u64)> {
    let mut out = BTreeSet::new();
    for s in coll {
        let finder = memchr::memmem::Finder::new(p);
        let mut from = 0;
        while let Some(k) = finder.find(&s.data()[from..]) {
            out.insert((s.id().to_string(), (from + k) as u64));
            from += k + 1;
        }
    }
    out
}

fn found(occ: &[erix_core::erindex::Occurrence]) -> BTreeSet<(String, u64)> {
    occ.iter().map(|o| (o.individual_id.clone(), o.text_position)).collect()
}

/// Individuals with N runs and planted symbols absent from a reference over `ACG`.
fn awkward_collection(rng: &mut ChaCha8Rng, reference: &Sequence, count: usize) -> Vec<Sequence> {
    (0..count)
        .map(|k| {
            let mut s = mutate_reference(reference, &MutationProfile::with_edit_rate(0.03, k as u64).unwrap())
                .unwrap()
                .into_data();
            for _ in 0..6 {
                let at = rng.gen_range(0..s.len());
                let run = rng.gen_range(1..12);
                let sym = if rng.gen_bool(0.5) { b'N' } else { b'T' };
                for b in s.iter_mut().skip(at).take(run) {
                    *b = sym;
                }
            }
            Sequence::new(format!("ind{k}"), "", s).unwrap()
        })
        .collect()
}

#[test]
fn locate_matches_naive_scan_on_awkward_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for round in 0..6 {
        let data: Vec<u8> = (0..3000).map(|_| b"ACG"[rng.gen_range(0..3)]).collect();
        let mut data = data;
        if round % 2 == 1 {
            for b in data.iter_mut().skip(1000).take(20) {
                *b = b'N';
            }
        }
        let reference = Sequence::new("R", "", data).unwrap();
        let coll = awkward_collection(&mut rng, &reference, 4);
        let index = ERIndex::build(
            Arc::new(ReferenceIndex::build(&reference, 4).unwrap()),
            &coll,
            BuildConfig {
                block_size: 8,
                order: 4,
                workers: 2,
            },
        )
        .unwrap();
        let view = index.full_view();
        for _ in 0..300 {
            let p: Vec<u8> = if rng.gen_bool(0.8) {
                let s = coll[rng.gen_range(0..coll.len())].data();
                let m = rng.gen_range(1..40.min(s.len()));
                let at = rng.gen_range(0..=s.len() - m);
                s[at..at + m].to_vec()
            } else {
                (0..rng.gen_range(1..6)).map(|_| b"ACGTN"[rng.gen_range(0..5)]).collect()
            };
            let expected = naive(&coll, &p);
            let got = found(&locate(&view, &p, SearchOptions::default()).unwrap());
            assert_eq!(got, expected, "round {round} pattern {}", String::from_utf8_lossy(&p));
            let par = found(&locate(&view, &p, SearchOptions { parallel_splits: true }).unwrap());
            assert_eq!(par, expected);
        }
    }
}

#[test]
fn opened_index_agrees_with_built_index() {
    let r = random_sequence("R", 50_000, 3);
    let coll: Vec<Sequence> = (0..4)
        .map(|k| {
            mutate_reference(&r, &MutationProfile::with_edit_rate(0.01, 100 + k).unwrap())
                .unwrap()
                .with_id(format!("s{k}"))
        })
        .collect();
    let reference = Arc::new(ReferenceIndex::build(&r, 16).unwrap());
    let index = ERIndex::build(reference.clone(), &coll, BuildConfig::default()).unwrap();
    let mut portfolio = KeyPortfolio::new("admin", SymmetricKey::generate());
    for s in &coll {
        portfolio.insert(s.id(), SymmetricKey::generate());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chr.erix");
    index.save(&path, &portfolio).unwrap();
    let opened = OpenedIndex::open(&path, reference, &portfolio).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for m in [1usize, 3, 12, 20, 50, 200] {
        for _ in 0..20 {
            let s = coll[rng.gen_range(0..coll.len())].data();
            let at = rng.gen_range(0..=s.len() - m);
            let p = &s[at..at + m];
            let expected = naive(&coll, p);
            assert_eq!(found(&opened.locate(p).unwrap()), expected);
        }
    }
    for s in &coll {
        assert_eq!(opened.extract(s.id(), 0, s.len() as u64).unwrap(), s.data());
    }
}

#[test]
fn rejects_invalid_patterns() {
    let r = random_sequence("R", 500, 1);
    let index = ERIndex::build(
        Arc::new(ReferenceIndex::build(&r, 4).unwrap()),
        std::slice::from_ref(&r),
        BuildConfig::default(),
    )
    .unwrap();
    assert!(index.locate_all(b"ACXG").is_err());
    assert!(index.locate_all(b"").is_err());
}

