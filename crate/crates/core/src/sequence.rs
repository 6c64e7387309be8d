//! Genomic sequences, FASTA ingestion and synthetic population generation.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The symbols a normalized sequence may contain.
pub const ALPHABET: [u8; 5] = *b"ACGTN";

const BASES: [u8; 4] = *b"ACGT";

/// Name of the generator behind [`mutate_reference`], reported by benchmark runs.
pub const MUTATION_RNG: &str = "ChaCha8 (rand_chacha, seed_from_u64)";

pub fn is_symbol(b: u8) -> bool {
    matches!(b, b'A' | b'C' | b'G' | b'T' | b'N')
}

/// An immutable, validated symbol string over `{A,C,G,T,N}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    id: String,
    chromosome: String,
    data: Vec<u8>,
}

impl Sequence {
    /// Builds a sequence from raw symbols. Lowercase symbols are uppercased;
    /// anything else outside the alphabet is rejected.
    pub fn new(id: impl Into<String>, chromosome: impl Into<String>, data: impl Into<Vec<u8>>) -> Result<Self> {
        let id = id.into();
        let mut data = data.into();
        data.make_ascii_uppercase();
        if data.is_empty() {
            return Err(Error::Sequence {
                id,
                message: "empty sequence".into(),
            });
        }
        if let Some(pos) = data.iter().position(|&b| !is_symbol(b)) {
            return Err(Error::Sequence {
                id,
                message: format!("invalid symbol {:?} at {pos}", data[pos] as char),
            });
        }
        Ok(Sequence {
            id,
            chromosome: chromosome.into(),
            data,
        })
    }

    /// Like [`Sequence::new`] but maps unknown symbols (IUPAC ambiguity codes
    /// and the like) to `N`. Returns the sequence and the number of replacements.
    pub fn normalized(
        id: impl Into<String>,
        chromosome: impl Into<String>,
        data: impl Into<Vec<u8>>,
    ) -> Result<(Self, usize)> {
        let mut data = data.into();
        let replaced = normalize_symbols(&mut data);
        Ok((Sequence::new(id, chromosome, data)?, replaced))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn chromosome(&self) -> &str {
        &self.chromosome
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_chromosome(mut self, chromosome: impl Into<String>) -> Self {
        self.chromosome = chromosome.into();
        self
    }

    pub fn reversed(&self) -> Sequence {
        let mut data = self.data.clone();
        data.reverse();
        Sequence {
            id: self.id.clone(),
            chromosome: self.chromosome.clone(),
            data,
        }
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Uppercases in place and maps every non-alphabet byte to `N`.
fn normalize_symbols(data: &mut [u8]) -> usize {
    let mut replaced = 0;
    for b in data.iter_mut() {
        b.make_ascii_uppercase();
        if !is_symbol(*b) {
            *b = b'N';
            replaced += 1;
        }
    }
    replaced
}

/// Result of reading a FASTA file.
#[derive(Clone, Debug)]
pub struct FastaRead {
    pub sequence: Sequence,
    /// Symbols outside the alphabet that were mapped to `N`.
    pub replaced: usize,
    pub records: usize,
}

/// Reads FASTA text. Multiple records are concatenated in order; the
/// sequence id is the first word of the first header.
pub fn parse_fasta<R: BufRead>(reader: R) -> Result<FastaRead> {
    let mut id = None;
    let mut records = 0;
    let mut data = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end();
        if let Some(header) = line.strip_prefix('>') {
            records += 1;
            if id.is_none() {
                id = Some(header.split_whitespace().next().unwrap_or("").to_string());
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if id.is_none() {
            return Err(Error::Fasta("sequence data before the first '>' header".into()));
        }
        data.extend(line.bytes().filter(|b| !b.is_ascii_whitespace()));
    }
    let id = id.ok_or_else(|| Error::Fasta("no '>' header line".into()))?;
    if data.is_empty() {
        return Err(Error::Fasta(format!("record {id:?} has an empty sequence body")));
    }
    let (sequence, replaced) = Sequence::normalized(id, "", data)?;
    if replaced > 0 {
        log::warn!("{replaced} symbols outside ACGTN mapped to N in {:?}", sequence.id());
    }
    Ok(FastaRead {
        sequence,
        replaced,
        records,
    })
}

pub fn load_fasta(path: impl AsRef<Path>) -> Result<FastaRead> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fasta(BufReader::new(file))
}

/// Writes a single-record FASTA with lines wrapped at `width` symbols.
pub fn write_fasta<W: Write>(seq: &Sequence, mut out: W, width: usize) -> Result<()> {
    let width = width.max(1);
    if seq.chromosome.is_empty() {
        writeln!(out, ">{}", seq.id)?;
    } else {
        writeln!(out, ">{} {}", seq.id, seq.chromosome)?;
    }
    for chunk in seq.data.chunks(width) {
        out.write_all(chunk)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_fasta(seq: &Sequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_fasta(seq, &mut out, 60)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Per-base edit probabilities used to derive synthetic individuals from a reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MutationProfile {
    pub substitution_rate: f64,
    pub insertion_rate: f64,
    pub deletion_rate: f64,
    pub seed: u64,
}

impl MutationProfile {
    pub fn new(substitution_rate: f64, insertion_rate: f64, deletion_rate: f64, seed: u64) -> Result<Self> {
        let p = MutationProfile {
            substitution_rate,
            insertion_rate,
            deletion_rate,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Splits a combined edit rate 80/10/10 between substitutions, insertions
    /// and deletions.
    pub fn with_edit_rate(rate: f64, seed: u64) -> Result<Self> {
        Self::new(rate * 0.8, rate * 0.1, rate * 0.1, seed)
    }

    pub fn total_rate(&self) -> f64 {
        self.substitution_rate + self.insertion_rate + self.deletion_rate
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("substitution", self.substitution_rate),
            ("insertion", self.insertion_rate),
            ("deletion", self.deletion_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("{name} rate {r} outside [0, 1]")));
            }
        }
        if self.total_rate() > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "summed rates {} exceed 1",
                self.total_rate()
            )));
        }
        Ok(())
    }
}

/// Derives a synthetic individual from `reference`.
///
/// Each reference base independently becomes a substitution (uniform over
/// the other three bases), is followed by an inserted uniform base, is
/// deleted, or is copied unchanged. The output is a pure function of the
/// reference and the profile.
pub fn mutate_reference(reference: &Sequence, profile: &MutationProfile) -> Result<Sequence> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let sub = profile.substitution_rate;
    let ins = sub + profile.insertion_rate;
    let del = ins + profile.deletion_rate;
    let mut out = Vec::with_capacity(reference.len() + reference.len() / 64);
    for &base in reference.data() {
        let u: f64 = rng.gen();
        if u < sub {
            out.push(substitute(base, &mut rng));
        } else if u < ins {
            out.push(base);
            out.push(BASES[rng.gen_range(0..4)]);
        } else if u < del {
            // deleted
        } else {
            out.push(base);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("mutation deleted every base".into()));
    }
    Sequence::new(reference.id().to_string(), reference.chromosome().to_string(), out)
}

fn substitute(base: u8, rng: &mut impl Rng) -> u8 {
    match BASES.iter().position(|&b| b == base) {
        Some(idx) => BASES[(idx + rng.gen_range(1..4)) % 4],
        None => BASES[rng.gen_range(0..4)],
    }
}

/// Uniform random sequence over `ACGT`, for tests and desk-scale experiments.
pub fn random_sequence(id: &str, len: usize, seed: u64) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u8> = (0..len.max(1)).map(|_| BASES[rng.gen_range(0..4)]).collect();
    Sequence::new(id, "", data).expect("generated symbols are valid")
}
