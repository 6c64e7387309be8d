//! Search and build benchmarks over a database index.
//!
//! Raw CSV, one row per timed query:
//! `mode,length,pattern,individual,position,occurrences,time_ms,time_per_occ_ms`
//!
//! Aggregate CSV, one row per mode and pattern length:
//! `mode,length,patterns,total_occurrences,mean_ms,median_ms,mean_per_occ_ms,median_per_occ_ms`
//!
//! Summary CSV, one row:
//! `chromosome,individuals,repeats,build_time_s,input_bytes,index_bytes,compression_ratio,
//! header_bytes,factorization_bytes,reverse_tree_bytes,forward_tree_bytes,pos_tree_bytes,trailer_bytes`

use std::path::Path;
use std::time::Instant;

use erix_core::sequence::load_fasta;
use erix_core::{BuildConfig, ErDb, Error, KeyPortfolio, OpenedIndex, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_LENGTHS: [usize; 5] = [20, 50, 100, 200, 500];
pub const DEFAULT_PATTERNS: usize = 500;
pub const DEFAULT_REPEAT: usize = 3;

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub patterns_per_length: usize,
    pub seed: u64,
    /// Index builds to average; 0 times the existing index without rebuilding.
    pub repeat: usize,
    pub concurrent: bool,
    pub build: BuildConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: DEFAULT_LENGTHS.to_vec(),
            patterns_per_length: DEFAULT_PATTERNS,
            seed: 1,
            repeat: DEFAULT_REPEAT,
            concurrent: false,
            build: BuildConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub mode: String,
    pub length: usize,
    pub pattern: usize,
    pub individual: String,
    pub position: u64,
    pub occurrences: usize,
    pub time_ms: f64,
    pub time_per_occ_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: String,
    pub length: usize,
    pub patterns: usize,
    pub total_occurrences: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub mean_per_occ_ms: f64,
    pub median_per_occ_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub chromosome: String,
    pub individuals: usize,
    pub repeats: usize,
    pub build_time_s: f64,
    pub input_bytes: u64,
    pub index_bytes: u64,
    pub compression_ratio: f64,
    pub header_bytes: u64,
    pub factorization_bytes: u64,
    pub reverse_tree_bytes: u64,
    pub forward_tree_bytes: u64,
    pub pos_tree_bytes: u64,
    pub trailer_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub summary: SummaryRow,
    pub raw: Vec<RawRow>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Per mode and length statistics recomputed from raw rows.
pub fn aggregate(raw: &[RawRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, usize)> = raw.iter().map(|r| (r.mode.clone(), r.length)).collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(mode, length)| {
            let rows: Vec<&RawRow> = raw.iter().filter(|r| r.mode == mode && r.length == length).collect();
            let times: Vec<f64> = rows.iter().map(|r| r.time_ms).collect();
            let per: Vec<f64> = rows.iter().map(|r| r.time_per_occ_ms).collect();
            AggregateRow {
                mode,
                length,
                patterns: rows.len(),
                total_occurrences: rows.iter().map(|r| r.occurrences).sum(),
                mean_ms: mean(&times),
                median_ms: median(&times),
                mean_per_occ_ms: mean(&per),
                median_per_occ_ms: median(&per),
            }
        })
        .collect()
}

/// A pattern drawn uniformly from the indexed sequences, with its source.
#[derive(Clone, Debug)]
pub struct Sample {
    pub length: usize,
    pub individual: String,
    pub position: u64,
    pub pattern: Vec<u8>,
}

/// Same seed, same samples.
pub fn sample_patterns(
    sequences: &[(String, Vec<u8>)],
    lengths: &[usize],
    per_length: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(lengths.len() * per_length);
    for &m in lengths {
        let eligible: Vec<&(String, Vec<u8>)> = sequences.iter().filter(|(_, s)| s.len() >= m && m > 0).collect();
        if eligible.is_empty() {
            return Err(Error::InvalidArgument(format!("no indexed sequence is {m} symbols long")));
        }
        for _ in 0..per_length {
            let (id, s) = eligible[rng.gen_range(0..eligible.len())];
            let at = rng.gen_range(0..=s.len() - m);
            out.push(Sample {
                length: m,
                individual: id.clone(),
                position: at as u64,
                pattern: s[at..at + m].to_vec(),
            });
        }
    }
    Ok(out)
}

fn timed(index: &OpenedIndex, s: &Sample, mode: &str, k: usize) -> Result<RawRow> {
    let t = Instant::now();
    let occ = index.locate(&s.pattern)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    if occ.is_empty() {
        return Err(Error::Contract(format!(
            "sampled pattern from {} at {} was not found",
            s.individual, s.position
        )));
    }
    Ok(RawRow {
        mode: mode.to_string(),
        length: s.length,
        pattern: k,
        individual: s.individual.clone(),
        position: s.position,
        occurrences: occ.len(),
        time_ms: ms,
        time_per_occ_ms: ms / occ.len() as f64,
    })
}

/// Times every sample against `index`, sequentially and, if asked, concurrently.
pub fn time_queries(index: &OpenedIndex, samples: &[Sample], concurrent: bool) -> Result<Vec<RawRow>> {
    let mut raw: Vec<RawRow> = samples
        .iter()
        .enumerate()
        .map(|(k, s)| timed(index, s, "sequential", k))
        .collect::<Result<_>>()?;
    if concurrent {
        let par: Vec<RawRow> = samples
            .par_iter()
            .enumerate()
            .map(|(k, s)| timed(index, s, "concurrent", k))
            .collect::<Result<_>>()?;
        for (a, b) in raw.iter().zip(&par) {
            if a.occurrences != b.occurrences {
                return Err(Error::Contract(format!("concurrent run disagrees on pattern {}", a.pattern)));
            }
        }
        raw.extend(par);
    }
    Ok(raw)
}

/// Rebuilds the index `repeat` times, then samples and times queries on a
/// freshly opened copy.
pub fn run(db: &mut ErDb, chromosome: &str, portfolio: &KeyPortfolio, config: &BenchConfig) -> Result<BenchReport> {
    let mut build_times = Vec::with_capacity(config.repeat);
    for _ in 0..config.repeat {
        let t = Instant::now();
        db.build_population_index(chromosome, None, config.build)?;
        build_times.push(t.elapsed().as_secs_f64());
    }

    // header and tree directories only; blocks and nodes load during the timed queries
    let index = db.open_index(chromosome, portfolio)?;
    let mut sequences = Vec::new();
    for id in index.authorized_ids() {
        let entry = db.catalog().individual(id).expect("indexed individuals are catalogued");
        let seq = entry
            .sequences
            .iter()
            .find(|s| s.chromosome == chromosome)
            .ok_or_else(|| Error::Unknown(format!("sequence of {id} for {chromosome}")))?;
        sequences.push((id.to_string(), load_fasta(&seq.fasta)?.sequence.into_data()));
    }
    let samples = sample_patterns(&sequences, &config.lengths, config.patterns_per_length, config.seed)?;
    let raw = time_queries(&index, &samples, config.concurrent)?;

    let stats = index.stats();
    let input_bytes: u64 = sequences.iter().map(|(_, s)| s.len() as u64).sum();
    let summary = SummaryRow {
        chromosome: chromosome.to_string(),
        individuals: sequences.len(),
        repeats: build_times.len(),
        build_time_s: mean(&build_times),
        input_bytes,
        index_bytes: stats.total_bytes,
        compression_ratio: stats.total_bytes as f64 / input_bytes as f64,
        header_bytes: stats.header_bytes,
        factorization_bytes: stats.factorization_total(),
        reverse_tree_bytes: stats.tree_bytes[0],
        forward_tree_bytes: stats.tree_bytes[1],
        pos_tree_bytes: stats.tree_bytes[2],
        trailer_bytes: stats.trailer_bytes,
    };
    Ok(BenchReport {
        summary,
        aggregate: aggregate(&raw),
        raw,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(Error::Stream)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("reading {}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

impl BenchReport {
    /// Writes `raw.csv`, `aggregate.csv` and `summary.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::Stream)?;
        write_rows(&dir.join("raw.csv"), &self.raw)?;
        write_rows(&dir.join("aggregate.csv"), &self.aggregate)?;
        write_rows(&dir.join("summary.csv"), std::slice::from_ref(&self.summary))
    }

    pub fn table(&self) -> String {
        let s = &self.summary;
        let mut out = format!(
            "{} individuals={} build={:.3}s (mean of {}) input={}B index={}B ratio={:.4}\n",
            s.chromosome, s.individuals, s.build_time_s, s.repeats, s.input_bytes, s.index_bytes, s.compression_ratio
        );
        out += &format!(
            "sections: header={} factorizations={} reverse={} forward={} pos={} trailer={}\n",
            s.header_bytes,
            s.factorization_bytes,
            s.reverse_tree_bytes,
            s.forward_tree_bytes,
            s.pos_tree_bytes,
            s.trailer_bytes
        );
        out += &format!(
            "{:<11} {:>6} {:>8} {:>10} {:>11} {:>11} {:>13} {:>15}\n",
            "mode", "length", "patterns", "occs", "mean_ms", "median_ms", "mean/occ_ms", "median/occ_ms"
        );
        for a in &self.aggregate {
            out += &format!(
                "{:<11} {:>6} {:>8} {:>10} {:>11.4} {:>11.4} {:>13.5} {:>15.5}\n",
                a.mode,
                a.length,
                a.patterns,
                a.total_occurrences,
                a.mean_ms,
                a.median_ms,
                a.mean_per_occ_ms,
                a.median_per_occ_ms
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(length: usize, occ: usize, ms: f64) -> RawRow {
        RawRow {
            mode: "sequential".into(),
            length,
            pattern: 0,
            individual: "a".into(),
            position: 0,
            occurrences: occ,
            time_ms: ms,
            time_per_occ_ms: ms / occ as f64,
        }
    }

    #[test]
    fn aggregates_by_length() {
        let raw = vec![row(20, 2, 4.0), row(20, 1, 1.0), row(50, 4, 2.0), row(20, 4, 2.0)];
        let agg = aggregate(&raw);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].length, 20);
        assert_eq!(agg[0].patterns, 3);
        assert_eq!(agg[0].total_occurrences, 7);
        assert!((agg[0].mean_ms - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(agg[0].median_ms, 2.0);
        assert_eq!(agg[0].median_per_occ_ms, 1.0);
        assert_eq!(agg[1].median_ms, 2.0);
    }

    #[test]
    fn sampling_is_seeded() {
        let seqs = vec![("a".to_string(), b"ACGTACGTTT".to_vec()), ("b".to_string(), b"ACG".to_vec())];
        let x = sample_patterns(&seqs, &[2, 5], 10, 7).unwrap();
        let y = sample_patterns(&seqs, &[2, 5], 10, 7).unwrap();
        assert_eq!(
            x.iter().map(|s| &s.pattern).collect::<Vec<_>>(),
            y.iter().map(|s| &s.pattern).collect::<Vec<_>>()
        );
        assert!(x.iter().filter(|s| s.length == 5).all(|s| s.individual == "a"));
        assert!(sample_patterns(&seqs, &[11], 1, 0).is_err());
    }
}
