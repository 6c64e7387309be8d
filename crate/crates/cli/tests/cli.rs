use std::path::Path;
use std::process::{Command, Output};

use erix_core::sequence::{mutate_reference, random_sequence, save_fasta, MutationProfile};

fn erix(db: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erix"))
        .arg("--db")
        .arg(db)
        .args(args)
        .output()
        .expect("erix runs")
}

fn ok(db: &Path, args: &[&str]) -> String {
    let out = erix(db, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end_with_users_and_grants() {
    let work = tempfile::tempdir().unwrap();
    let db = work.path().join("db");
    let p = |name: &str| work.path().join(name).to_string_lossy().into_owned();

    let r = random_sequence("chr20", 30_000, 5);
    save_fasta(&r, p("ref.fa")).unwrap();
    let mut planted = Vec::new();
    for k in 0..3u64 {
        let mut s = mutate_reference(&r, &MutationProfile::with_edit_rate(0.01, k).unwrap())
            .unwrap()
            .into_data();
        let at = 1000 + 5000 * k as usize;
        s[at..at + 30].copy_from_slice(b"TTTTTTTTTTGGGGGGGGGGTTTTTTTTTT");
        planted.push(at);
        let seq = erix_core::Sequence::new(format!("p{k}"), "20", s).unwrap();
        save_fasta(&seq, p(&format!("p{k}.fa"))).unwrap();
    }

    ok(&db, &["init"]);
    ok(&db, &["add-ref", "20", &p("ref.fa")]);
    for k in 0..3 {
        ok(&db, &["enroll", &format!("p{k}"), "--chromosome", "20", "--fasta", &p(&format!("p{k}.fa"))]);
    }
    ok(&db, &["build", "20", "--block-size", "32"]);

    let all = ok(&db, &["locate", "20", "TTTTTTTTTTGGGGGGGGGGTTTTTTTTTT"]);
    let expected: String = (0..3).map(|k| format!("p{k}\t{}\n", planted[k])).collect();
    assert_eq!(all, expected);

    let absent = erix(&db, &["locate", "20", "ACGTACGTACGTACGTACGTACGTACGTAAAA"]);
    assert_eq!(absent.status.code(), Some(1));
    assert!(absent.stdout.is_empty());

    let bad = erix(&db, &["locate", "20", "ACXT"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("pattern"));

    ok(&db, &["keygen", "alice", "--out", &p("alice.pem"), "--bits", "1024"]);
    ok(&db, &["grant", "alice", "p1"]);
    let alice = ok(
        &db,
        &["--user", "alice", "--key", &p("alice.pem"), "locate", "20", "TTTTTTTTTTGGGGGGGGGGTTTTTTTTTT"],
    );
    assert_eq!(alice, format!("p1\t{}\n", planted[1]));

    let denied = erix(&db, &["--user", "alice", "--key", &p("alice.pem"), "extract", "20", "p0", "0", "10"]);
    assert_eq!(denied.status.code(), Some(2));
    let start = planted[1].to_string();
    let text = ok(&db, &["--user", "alice", "--key", &p("alice.pem"), "extract", "20", "p1", &start, "10"]);
    assert_eq!(text.trim(), "TTTTTTTTTT");

    let nokey = erix(&db, &["--user", "alice", "locate", "20", "ACGT"]);
    assert_eq!(nokey.status.code(), Some(2));

    let stats = ok(&db, &["stats", "20"]);
    assert!(stats.contains("tree:reverse") && stats.contains("total"));
}

#[test]
fn bench_and_gen_population() {
    let work = tempfile::tempdir().unwrap();
    let db = work.path().join("db");
    let pop = work.path().join("pop");
    let pop_s = pop.to_string_lossy().into_owned();
    ok(&db, &["gen-population", "--length", "20000", "--count", "3", "--out", &pop_s]);
    ok(&db, &["init"]);
    ok(&db, &["add-ref", "1", &format!("{pop_s}/reference.fa")]);
    for k in 0..3 {
        ok(&db, &["enroll", &format!("ind{k}"), "--chromosome", "1", "--fasta", &format!("{pop_s}/ind{k}.fa")]);
    }
    let out = work.path().join("bench");
    let table = ok(
        &db,
        &[
            "bench",
            "1",
            "--patterns",
            "10",
            "--repeat",
            "1",
            "--concurrent",
            "--out",
            &out.to_string_lossy(),
        ],
    );
    assert!(table.contains("ratio="));
    let raw: Vec<erix_cli::bench::RawRow> = erix_cli::bench::read_rows(&out.join("raw.csv")).unwrap();
    assert_eq!(raw.len(), 2 * 5 * 10);
    assert!(raw.iter().all(|r| r.occurrences >= 1));
}
