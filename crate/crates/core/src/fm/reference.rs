use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CorrespondenceTables, FmIndex};
use crate::coding::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::sequence::Sequence;

const MAGIC: &[u8; 4] = b"ERFM";
const VERSION: u16 = 1;

/// Everything the factorizer and the searcher need about the reference:
/// the FM-indexes of `R` and `reverse(R)` and their row correspondence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceIndex {
    pub id: String,
    /// SHA-256 of the reference symbols.
    pub digest: [u8; 32],
    pub fm: FmIndex,
    pub fm_rev: FmIndex,
    pub tables: CorrespondenceTables,
}

impl ReferenceIndex {
    pub fn build(reference: &Sequence, sample_rate: u32) -> Result<Self> {
        let text = reference.data();
        let rev: Vec<u8> = text.iter().rev().copied().collect();
        let (fm, fm_rev) = rayon::join(|| FmIndex::build(text, sample_rate), || FmIndex::build(&rev, sample_rate));
        let (fm, fm_rev) = (fm?, fm_rev?);
        let tables = CorrespondenceTables::build(&fm, &fm_rev)?;
        Ok(ReferenceIndex {
            id: reference.id().to_string(),
            digest: Sha256::digest(text).into(),
            fm,
            fm_rev,
            tables,
        })
    }

    pub fn len(&self) -> usize {
        self.fm.text_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(self.fm.size_in_bytes() * 3);
        w.bytes(MAGIC).u16(VERSION);
        w.u64(self.fm.text_len() as u64).u32(self.fm.sample_rate());
        w.u16(self.fm.alphabet().len() as u16).bytes(self.fm.alphabet());
        w.str(&self.id).bytes(&self.digest);
        self.fm.write(&mut w);
        self.fm_rev.write(&mut w);
        w.u32_slice(self.tables.r2f_table());
        w.u32_slice(self.tables.f2r_table());
        let check: [u8; 32] = Sha256::digest(w.as_slice()).into();
        w.bytes(&check);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::corrupt("reference index too short"));
        }
        let (body, check) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != check {
            return Err(Error::Checksum("reference index"));
        }
        let mut r = ByteReader::new(body);
        if r.take(4)? != MAGIC {
            return Err(Error::corrupt("not a reference index (bad magic)"));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let text_len = r.u64()? as usize;
        let sample_rate = r.u32()?;
        let sigma = r.u16()? as usize;
        let alphabet = r.take(sigma)?.to_vec();
        let id = r.str()?;
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let fm = FmIndex::read(&mut r)?;
        let fm_rev = FmIndex::read(&mut r)?;
        let tables = CorrespondenceTables::from_parts(r.u32_vec()?, r.u32_vec()?)?;
        r.expect_end("reference index")?;
        if fm.text_len() != text_len
            || fm_rev.text_len() != text_len
            || fm.sample_rate() != sample_rate
            || fm.alphabet() != alphabet.as_slice()
            || fm_rev.alphabet() != alphabet.as_slice()
            || tables.len() != text_len + 1
        {
            return Err(Error::corrupt("reference index header disagrees with its sections"));
        }
        Ok(ReferenceIndex {
            id,
            digest,
            fm,
            fm_rev,
            tables,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
