//! The ER-database: a directory holding the catalog, reference indexes,
//! population indexes and key material.
//!
//! ```text
//! <root>/catalog.xml
//! <root>/references/<chromosome>.erfm
//! <root>/indexes/<chromosome>.erix
//! <root>/security/system.key
//! <root>/security/individuals/<individual>.key
//! <root>/security/users/<user>.pub.pem
//! <root>/security/users/<user>.portfolio
//! ```
//!
//! Catalog schema:
//!
//! ```xml
//! <catalog version="1">
//!   <individuals>
//!     <individual id="HG00096" label="...">
//!       <sequence chromosome="20" fasta="/data/HG00096.20.fa"/>
//!     </individual>
//!   </individuals>
//!   <users><user id="alice" public-key="security/users/alice.pub.pem"/></users>
//!   <references>
//!     <reference chromosome="20" fasta="/data/chr20.fa" sha256="..." sample-rate="32"
//!                reference-index="references/20.erfm" index="indexes/20.erix"/>
//!   </references>
//!   <grants><grant user="alice" individual="HG00096"/></grants>
//! </catalog>
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crypto::{open_portfolio, seal_portfolio, KeyPortfolio, SymmetricKey, UserPrivateKey, UserPublicKey};
use crate::erindex::{BuildConfig, ERIndex, OpenedIndex};
use crate::error::{Error, Result};
use crate::fm::{ReferenceIndex, DEFAULT_SAMPLE_RATE};
use crate::sequence::{load_fasta, Sequence};

pub const CATALOG_FILE: &str = "catalog.xml";
const CATALOG_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename = "catalog")]
pub struct Catalog {
    #[serde(rename = "@version")]
    pub version: u32,
    #[serde(default)]
    pub individuals: Individuals,
    #[serde(default)]
    pub users: Users,
    #[serde(default)]
    pub references: References,
    #[serde(default)]
    pub grants: Grants,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Individuals {
    #[serde(rename = "individual", default)]
    pub items: Vec<IndividualEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Users {
    #[serde(rename = "user", default)]
    pub items: Vec<UserEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct References {
    #[serde(rename = "reference", default)]
    pub items: Vec<ReferenceEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grants {
    #[serde(rename = "grant", default)]
    pub items: Vec<GrantEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualEntry {
    #[serde(rename = "@id")]
    pub id: String,
    #[serde(rename = "@label", default)]
    pub label: String,
    #[serde(rename = "sequence", default)]
    pub sequences: Vec<SequenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    #[serde(rename = "@chromosome")]
    pub chromosome: String,
    #[serde(rename = "@fasta")]
    pub fasta: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    #[serde(rename = "@id")]
    pub id: String,
    #[serde(rename = "@public-key")]
    pub public_key: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    #[serde(rename = "@chromosome")]
    pub chromosome: String,
    #[serde(rename = "@fasta")]
    pub fasta: String,
    /// SHA-256 of the normalized reference symbols, hex.
    #[serde(rename = "@sha256")]
    pub sha256: String,
    #[serde(rename = "@sample-rate")]
    pub sample_rate: u32,
    #[serde(rename = "@reference-index", default, skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<String>,
    #[serde(rename = "@index", default, skip_serializing_if = "Option::is_none")]
    pub index: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantEntry {
    #[serde(rename = "@user")]
    pub user: String,
    #[serde(rename = "@individual")]
    pub individual: String,
}

impl Catalog {
    pub fn to_xml(&self) -> Result<String> {
        let mut body = String::new();
        let mut ser = quick_xml::se::Serializer::new(&mut body);
        ser.indent(' ', 2);
        self.serialize(ser).map_err(|e| Error::Catalog(e.to_string()))?;
        Ok(format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n{body}\n"))
    }

    pub fn from_xml(text: &str) -> Result<Self> {
        let c: Catalog = quick_xml::de::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        if c.version != CATALOG_VERSION {
            return Err(Error::Catalog(format!("unsupported catalog version {}", c.version)));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn individual(&self, id: &str) -> Option<&IndividualEntry> {
        self.individuals.items.iter().find(|i| i.id == id)
    }

    pub fn user(&self, id: &str) -> Option<&UserEntry> {
        self.users.items.iter().find(|u| u.id == id)
    }

    pub fn reference(&self, chromosome: &str) -> Option<&ReferenceEntry> {
        self.references.items.iter().find(|r| r.chromosome == chromosome)
    }

    /// Individuals granted to `user`, in grant order.
    pub fn granted(&self, user: &str) -> Vec<&str> {
        self.grants
            .items
            .iter()
            .filter(|g| g.user == user)
            .map(|g| g.individual.as_str())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.references.items {
            if !seen.insert(&r.chromosome) {
                return Err(Error::Catalog(format!("reference {} listed twice", r.chromosome)));
            }
        }
        for g in &self.grants.items {
            if self.user(&g.user).is_none() || self.individual(&g.individual).is_none() {
                return Err(Error::Catalog(format!("grant {} -> {} names an unknown id", g.user, g.individual)));
            }
        }
        Ok(())
    }
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{kind} id {id:?} may only use letters, digits, '.', '_' and '-'"
        )))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn absolute(path: &Path) -> Result<String> {
    let p = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
    Ok(p.to_string_lossy().into_owned())
}

#[derive(Debug)]
pub struct ErDb {
    root: PathBuf,
    catalog: Catalog,
}

impl ErDb {
    /// Creates the directory skeleton, an empty catalog and the system key.
    pub fn init(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if root.join(CATALOG_FILE).exists() {
            return Err(Error::Duplicate(format!("database already exists at {}", root.display())));
        }
        for d in ["references", "indexes", "security/individuals", "security/users"] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        SymmetricKey::generate().save(root.join("security/system.key"))?;
        let db = ErDb {
            root,
            catalog: Catalog {
                version: CATALOG_VERSION,
                ..Catalog::default()
            },
        };
        db.write_catalog()?;
        Ok(db)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(CATALOG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(ErDb {
            catalog: Catalog::from_xml(&text)?,
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn write_catalog(&self) -> Result<()> {
        let path = self.root.join(CATALOG_FILE);
        let tmp = self.root.join("catalog.xml.tmp");
        fs::write(&tmp, self.catalog.to_xml()?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn resolve(&self, stored: &str) -> PathBuf {
        let p = Path::new(stored);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn system_key(&self) -> Result<SymmetricKey> {
        SymmetricKey::load(self.root.join("security/system.key"))
    }

    fn individual_key_path(&self, id: &str) -> PathBuf {
        self.root.join("security/individuals").join(format!("{id}.key"))
    }

    pub fn portfolio_path(&self, user: &str) -> PathBuf {
        self.root.join("security/users").join(format!("{user}.portfolio"))
    }

    /// Registers an individual and generates its symmetric key.
    pub fn add_individual(&mut self, id: &str, label: &str) -> Result<()> {
        check_id("individual", id)?;
        if self.catalog.individual(id).is_some() {
            return Err(Error::Duplicate(format!("individual {id}")));
        }
        SymmetricKey::generate().save(self.individual_key_path(id))?;
        self.catalog.individuals.items.push(IndividualEntry {
            id: id.to_string(),
            label: label.to_string(),
            sequences: Vec::new(),
        });
        self.write_catalog()
    }

    /// Attaches the individual's FASTA for one chromosome.
    pub fn add_sequence(&mut self, individual: &str, chromosome: &str, fasta: impl AsRef<Path>) -> Result<()> {
        check_id("chromosome", chromosome)?;
        let fasta = absolute(fasta.as_ref())?;
        let entry = self
            .catalog
            .individuals
            .items
            .iter_mut()
            .find(|i| i.id == individual)
            .ok_or_else(|| Error::Unknown(format!("individual {individual}")))?;
        if entry.sequences.iter().any(|s| s.chromosome == chromosome) {
            return Err(Error::Duplicate(format!("chromosome {chromosome} of individual {individual}")));
        }
        entry.sequences.push(SequenceEntry {
            chromosome: chromosome.to_string(),
            fasta,
        });
        self.write_catalog()
    }

    /// Registers a user and seals a portfolio holding only the system key.
    pub fn add_user(&mut self, id: &str, public: &UserPublicKey) -> Result<()> {
        check_id("user", id)?;
        if self.catalog.user(id).is_some() {
            return Err(Error::Duplicate(format!("user {id}")));
        }
        let rel = format!("security/users/{id}.pub.pem");
        public.save(self.root.join(&rel))?;
        self.catalog.users.items.push(UserEntry {
            id: id.to_string(),
            public_key: rel,
        });
        self.reseal(id)?;
        self.write_catalog()
    }

    pub fn add_reference(&mut self, chromosome: &str, fasta: impl AsRef<Path>) -> Result<()> {
        check_id("chromosome", chromosome)?;
        if self.catalog.reference(chromosome).is_some() {
            return Err(Error::Duplicate(format!("reference {chromosome}")));
        }
        let read = load_fasta(fasta.as_ref())?;
        self.catalog.references.items.push(ReferenceEntry {
            chromosome: chromosome.to_string(),
            fasta: absolute(fasta.as_ref())?,
            sha256: hex(&Sha256::digest(read.sequence.data())),
            sample_rate: DEFAULT_SAMPLE_RATE,
            reference_index: None,
            index: None,
        });
        self.write_catalog()
    }

    /// Gives `user` the key of `individual` by resealing their portfolio.
    pub fn grant(&mut self, user: &str, individual: &str) -> Result<()> {
        if self.catalog.user(user).is_none() {
            return Err(Error::Unknown(format!("user {user}")));
        }
        if self.catalog.individual(individual).is_none() {
            return Err(Error::Unknown(format!("individual {individual}")));
        }
        if self.catalog.granted(user).contains(&individual) {
            return Err(Error::Duplicate(format!("grant {user} -> {individual}")));
        }
        self.catalog.grants.items.push(GrantEntry {
            user: user.to_string(),
            individual: individual.to_string(),
        });
        self.reseal(user)?;
        self.write_catalog()
    }

    /// Grants are append-only.
    pub fn ungrant(&mut self, user: &str, individual: &str) -> Result<()> {
        Err(Error::Unsupported(format!(
            "revoking {user} -> {individual}: grants cannot be withdrawn"
        )))
    }

    fn reseal(&self, user: &str) -> Result<()> {
        let entry = self
            .catalog
            .user(user)
            .ok_or_else(|| Error::Unknown(format!("user {user}")))?;
        let public_path = self.resolve(&entry.public_key);
        if !public_path.exists() {
            return Err(Error::MissingKey(format!("public key of user {user}")));
        }
        let public = UserPublicKey::load(&public_path)?;
        let mut p = KeyPortfolio::new(user, self.system_key()?);
        for id in self.catalog.granted(user) {
            p.insert(id, SymmetricKey::load(self.individual_key_path(id))?);
        }
        let path = self.portfolio_path(user);
        fs::write(&path, seal_portfolio(&p, &public)?).map_err(|e| Error::io(&path, e))
    }

    /// Opens `user`'s sealed portfolio with their private key.
    pub fn open_portfolio(&self, user: &str, private: &UserPrivateKey) -> Result<KeyPortfolio> {
        if self.catalog.user(user).is_none() {
            return Err(Error::Unknown(format!("user {user}")));
        }
        let path = self.portfolio_path(user);
        let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let p = open_portfolio(&blob, private)?;
        if p.user_id() != user {
            return Err(Error::Crypto(format!("portfolio belongs to {}, not {user}", p.user_id())));
        }
        Ok(p)
    }

    /// Every key in the database, for building and saving indexes.
    pub fn admin_portfolio(&self) -> Result<KeyPortfolio> {
        let mut p = KeyPortfolio::new("admin", self.system_key()?);
        for i in &self.catalog.individuals.items {
            p.insert(&i.id, SymmetricKey::load(self.individual_key_path(&i.id))?);
        }
        Ok(p)
    }

    fn reference_entry(&self, chromosome: &str) -> Result<&ReferenceEntry> {
        self.catalog
            .reference(chromosome)
            .ok_or_else(|| Error::Unknown(format!("reference {chromosome}")))
    }

    fn load_reference_sequence(&self, chromosome: &str) -> Result<Sequence> {
        let entry = self.reference_entry(chromosome)?;
        let seq = load_fasta(self.resolve(&entry.fasta))?.sequence.with_id(chromosome);
        if hex(&Sha256::digest(seq.data())) != entry.sha256 {
            return Err(Error::Stale(format!(
                "reference FASTA of {chromosome} changed since it was registered; re-register and rebuild"
            )));
        }
        Ok(seq)
    }

    /// Builds and stores the FM-indexes of the reference.
    pub fn build_reference(&mut self, chromosome: &str) -> Result<PathBuf> {
        let seq = self.load_reference_sequence(chromosome)?;
        let rate = self.reference_entry(chromosome)?.sample_rate;
        let index = ReferenceIndex::build(&seq, rate)?;
        let rel = format!("references/{chromosome}.erfm");
        let path = self.root.join(&rel);
        index.save(&path)?;
        let entry = self
            .catalog
            .references
            .items
            .iter_mut()
            .find(|r| r.chromosome == chromosome)
            .unwrap();
        entry.reference_index = Some(rel);
        self.write_catalog()?;
        Ok(path)
    }

    pub fn load_reference(&self, chromosome: &str) -> Result<Arc<ReferenceIndex>> {
        let entry = self.reference_entry(chromosome)?;
        let rel = entry
            .reference_index
            .as_ref()
            .ok_or_else(|| Error::Unknown(format!("reference index of {chromosome} (run build-reference first)")))?;
        let index = ReferenceIndex::load(self.resolve(rel))?;
        if hex(&index.digest) != entry.sha256 {
            return Err(Error::Stale(format!(
                "reference index of {chromosome} does not match the registered FASTA; rebuild it"
            )));
        }
        Ok(Arc::new(index))
    }

    /// Builds the population index of `chromosome` over `individuals`, or
    /// over every individual with a sequence for it when `None`.
    pub fn build_population_index(
        &mut self,
        chromosome: &str,
        individuals: Option<&[String]>,
        config: BuildConfig,
    ) -> Result<PathBuf> {
        self.load_reference_sequence(chromosome)?;
        let reference = self.load_reference(chromosome)?;
        let ids: Vec<String> = match individuals {
            Some(list) => list.to_vec(),
            None => self
                .catalog
                .individuals
                .items
                .iter()
                .filter(|i| i.sequences.iter().any(|s| s.chromosome == chromosome))
                .map(|i| i.id.clone())
                .collect(),
        };
        if ids.is_empty() {
            return Err(Error::InvalidArgument(format!("no individuals have a {chromosome} sequence")));
        }
        let mut collection = Vec::with_capacity(ids.len());
        for id in &ids {
            let entry = self
                .catalog
                .individual(id)
                .ok_or_else(|| Error::Unknown(format!("individual {id} is not registered")))?;
            let seq = entry
                .sequences
                .iter()
                .find(|s| s.chromosome == chromosome)
                .ok_or_else(|| Error::Unknown(format!("individual {id} has no {chromosome} sequence")))?;
            collection.push(
                load_fasta(self.resolve(&seq.fasta))?
                    .sequence
                    .with_id(id.as_str())
                    .with_chromosome(chromosome),
            );
        }
        let index = ERIndex::build(reference, &collection, config)?;
        let rel = format!("indexes/{chromosome}.erix");
        let path = self.root.join(&rel);
        index.save(&path, &self.admin_portfolio()?)?;
        let entry = self
            .catalog
            .references
            .items
            .iter_mut()
            .find(|r| r.chromosome == chromosome)
            .unwrap();
        entry.index = Some(rel);
        self.write_catalog()?;
        Ok(path)
    }

    pub fn index_path(&self, chromosome: &str) -> Result<PathBuf> {
        let entry = self.reference_entry(chromosome)?;
        let rel = entry
            .index
            .as_ref()
            .ok_or_else(|| Error::Unknown(format!("population index of {chromosome} (run build first)")))?;
        Ok(self.resolve(rel))
    }

    pub fn open_index(&self, chromosome: &str, portfolio: &KeyPortfolio) -> Result<OpenedIndex> {
        OpenedIndex::open(self.index_path(chromosome)?, self.load_reference(chromosome)?, portfolio)
    }
}
