use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use erix_core::crypto::{generate_user_keypair_with_bits, RSA_BITS};
use erix_core::erindex::DEFAULT_BLOCK_SIZE;
use erix_core::sequence::{load_fasta, mutate_reference, random_sequence, save_fasta, MutationProfile};
use erix_core::{BuildConfig, ErDb, Error, KeyPortfolio, Result, UserPrivateKey};

use crate::bench::{self, BenchConfig};

#[derive(Debug, Parser)]
#[command(name = "erix", version, about = "Encrypted referential index over genomic sequence collections")]
pub struct Cli {
    /// Database root directory.
    #[arg(long, global = true, default_value = ".")]
    pub db: PathBuf,
    /// Query as this user; without it the operator keys in the database are used.
    #[arg(long, global = true)]
    pub user: Option<String>,
    /// The user's private key (PEM).
    #[arg(long, global = true)]
    pub key: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty database.
    Init,
    /// Create a user key pair and register the user.
    Keygen {
        id: String,
        /// Where to write the private key; defaults to `<id>.key.pem`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = RSA_BITS)]
        bits: usize,
    },
    /// Give a user access to an individual.
    Grant { user: String, individual: String },
    /// Register a reference sequence and build its FM-indexes.
    AddRef { chromosome: String, fasta: PathBuf },
    /// Register an individual's sequence for a chromosome.
    Enroll {
        individual: String,
        #[arg(long)]
        chromosome: String,
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long, default_value = "")]
        label: String,
    },
    /// Build the population index of a chromosome.
    Build {
        chromosome: String,
        /// Comma-separated individuals; all enrolled ones by default.
        #[arg(long, value_delimiter = ',')]
        individuals: Option<Vec<String>>,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Print `individual<TAB>position` for every occurrence.
    Locate { chromosome: String, pattern: String },
    /// Print a substring of an individual's sequence.
    Extract {
        chromosome: String,
        individual: String,
        start: u64,
        length: u64,
    },
    /// Print the section sizes of an index.
    Stats { chromosome: String },
    /// Time index builds and pattern searches.
    Bench {
        chromosome: String,
        #[arg(long, value_delimiter = ',', default_values_t = bench::DEFAULT_LENGTHS)]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = bench::DEFAULT_PATTERNS)]
        patterns: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Index builds to average.
        #[arg(long, default_value_t = bench::DEFAULT_REPEAT)]
        repeat: usize,
        /// Also run the queries concurrently.
        #[arg(long)]
        concurrent: bool,
        /// Directory for raw.csv, aggregate.csv and summary.csv.
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Write synthetic individuals derived from a reference.
    GenPopulation {
        /// Reference FASTA; a random one of `--length` bases is written when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 1_000_000)]
        length: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0.01)]
        edit_rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Args)]
pub struct BuildArgs {
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, default_value_t = erix_core::ebtree::DEFAULT_ORDER)]
    pub order: usize,
    /// Factorization threads; all cores by default.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl From<BuildArgs> for BuildConfig {
    fn from(a: BuildArgs) -> Self {
        let d = BuildConfig::default();
        BuildConfig {
            block_size: a.block_size,
            order: a.order,
            workers: a.workers.unwrap_or(d.workers),
        }
    }
}

fn portfolio(cli: &Cli, db: &ErDb) -> Result<KeyPortfolio> {
    match (&cli.user, &cli.key) {
        (Some(user), Some(key)) => db.open_portfolio(user, &UserPrivateKey::load(key)?),
        (Some(user), None) => Err(Error::MissingKey(format!("private key of {user} (pass --key)"))),
        (None, _) => db.admin_portfolio(),
    }
}

fn check_pattern(p: &str) -> Result<Vec<u8>> {
    let bytes = p.as_bytes().to_ascii_uppercase();
    if bytes.is_empty() || !bytes.iter().all(|&b| erix_core::sequence::is_symbol(b)) {
        return Err(Error::InvalidArgument(format!(
            "pattern {p:?} must be a non-empty string over A, C, G, T, N"
        )));
    }
    Ok(bytes)
}

/// Runs one command and returns the process exit code: 0 on success (for
/// `locate`, at least one occurrence), 1 when `locate` finds nothing, 2 on errors.
pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("erix: {e}");
            2
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Init => {
            ErDb::init(&cli.db)?;
            writeln!(out, "initialized {}", cli.db.display())?;
        }
        Command::Keygen { id, out: path, bits } => {
            let mut db = ErDb::open(&cli.db)?;
            let (public, private) = generate_user_keypair_with_bits(*bits)?;
            let path = path.clone().unwrap_or_else(|| PathBuf::from(format!("{id}.key.pem")));
            private.save(&path)?;
            db.add_user(id, &public)?;
            writeln!(out, "user {id}: private key written to {}", path.display())?;
        }
        Command::Grant { user, individual } => {
            ErDb::open(&cli.db)?.grant(user, individual)?;
        }
        Command::AddRef { chromosome, fasta } => {
            let mut db = ErDb::open(&cli.db)?;
            db.add_reference(chromosome, fasta)?;
            let path = db.build_reference(chromosome)?;
            writeln!(out, "reference {chromosome}: {}", path.display())?;
        }
        Command::Enroll {
            individual,
            chromosome,
            fasta,
            label,
        } => {
            let mut db = ErDb::open(&cli.db)?;
            if db.catalog().individual(individual).is_none() {
                db.add_individual(individual, label)?;
            }
            db.add_sequence(individual, chromosome, fasta)?;
        }
        Command::Build {
            chromosome,
            individuals,
            build,
        } => {
            let mut db = ErDb::open(&cli.db)?;
            let path = db.build_population_index(chromosome, individuals.as_deref(), (*build).into())?;
            writeln!(out, "index {chromosome}: {}", path.display())?;
        }
        Command::Locate { chromosome, pattern } => {
            let pattern = check_pattern(pattern)?;
            let db = ErDb::open(&cli.db)?;
            let index = db.open_index(chromosome, &portfolio(cli, &db)?)?;
            let occ = index.locate(&pattern)?;
            for o in &occ {
                writeln!(out, "{}\t{}", o.individual_id, o.text_position)?;
            }
            return Ok(if occ.is_empty() { 1 } else { 0 });
        }
        Command::Extract {
            chromosome,
            individual,
            start,
            length,
        } => {
            let db = ErDb::open(&cli.db)?;
            let index = db.open_index(chromosome, &portfolio(cli, &db)?)?;
            out.write_all(&index.extract(individual, *start, *length)?)?;
            writeln!(out)?;
        }
        Command::Stats { chromosome } => {
            let db = ErDb::open(&cli.db)?;
            let index = db.open_index(chromosome, &portfolio(cli, &db)?)?;
            let s = index.stats();
            writeln!(out, "header\t{}", s.header_bytes)?;
            for (id, b) in &s.factorization_bytes {
                writeln!(out, "factorization:{id}\t{b}")?;
            }
            for (name, (b, t)) in ["reverse", "forward", "pos"].iter().zip(s.tree_bytes.iter().zip(&s.tree_stats)) {
                writeln!(
                    out,
                    "tree:{name}\t{b}\tnodes={} leaves={} depth={} values={}",
                    t.node_count, t.leaf_count, t.depth, t.value_count
                )?;
            }
            writeln!(out, "trailer\t{}", s.trailer_bytes)?;
            writeln!(out, "total\t{}", s.total_bytes)?;
        }
        Command::Bench {
            chromosome,
            lengths,
            patterns,
            seed,
            repeat,
            concurrent,
            out: dir,
            build,
        } => {
            let mut db = ErDb::open(&cli.db)?;
            let p = portfolio(cli, &db)?;
            let config = BenchConfig {
                lengths: lengths.clone(),
                patterns_per_length: *patterns,
                seed: *seed,
                repeat: *repeat,
                concurrent: *concurrent,
                build: (*build).into(),
            };
            let report = bench::run(&mut db, chromosome, &p, &config)?;
            report.write_csv(dir)?;
            write!(out, "{}", report.table())?;
        }
        Command::GenPopulation {
            reference,
            length,
            count,
            edit_rate,
            seed,
            out: dir,
        } => {
            std::fs::create_dir_all(dir)?;
            let r = match reference {
                Some(path) => load_fasta(path)?.sequence,
                None => {
                    let r = random_sequence("reference", *length, *seed);
                    save_fasta(&r, dir.join("reference.fa"))?;
                    r
                }
            };
            for k in 0..*count {
                let profile = MutationProfile::with_edit_rate(*edit_rate, seed.wrapping_add(1 + k as u64))?;
                let s = mutate_reference(&r, &profile)?.with_id(format!("ind{k}"));
                let path = dir.join(format!("ind{k}.fa"));
                save_fasta(&s, &path)?;
                writeln!(out, "{}", path.display())?;
            }
        }
    }
    Ok(0)
}
