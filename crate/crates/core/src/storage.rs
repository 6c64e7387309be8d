//! Random-access byte sources behind lazily opened indexes.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};

pub trait ByteSource: Send + Sync {
    fn len(&self) -> u64;

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read_vec(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.read_at(offset, &mut buf)?;
        Ok(buf)
    }
}

#[derive(Clone, Debug)]
pub struct MemorySource(Arc<[u8]>);

impl MemorySource {
    pub fn new(bytes: impl Into<Arc<[u8]>>) -> Self {
        MemorySource(bytes.into())
    }
}

impl ByteSource for MemorySource {
    fn len(&self) -> u64 {
        self.0.len() as u64
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        let start = usize::try_from(offset).map_err(|_| Error::corrupt("offset overflow"))?;
        let src = start
            .checked_add(buf.len())
            .and_then(|end| self.0.get(start..end))
            .ok_or_else(|| Error::corrupt(format!("read of {} bytes at {offset} past end of data", buf.len())))?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

/// Positional reads on an open file; concurrent readers do not share a cursor.
#[derive(Debug)]
pub struct FileSource {
    path: PathBuf,
    len: u64,
    #[cfg(unix)]
    file: File,
    #[cfg(not(unix))]
    file: parking_lot::Mutex<File>,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        Ok(FileSource {
            #[cfg(unix)]
            file,
            #[cfg(not(unix))]
            file: parking_lot::Mutex::new(file),
            path,
            len,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ByteSource for FileSource {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        if offset.checked_add(buf.len() as u64).is_none_or(|end| end > self.len) {
            return Err(Error::corrupt(format!(
                "read of {} bytes at {offset} past end of {}",
                buf.len(),
                self.path.display()
            )));
        }
        #[cfg(unix)]
        {
            use std::os::unix::fs::FileExt;
            self.file.read_exact_at(buf, offset).map_err(|e| Error::io(&self.path, e))
        }
        #[cfg(not(unix))]
        {
            use std::io::{Read, Seek, SeekFrom};
            let mut f = self.file.lock();
            f.seek(SeekFrom::Start(offset)).map_err(|e| Error::io(&self.path, e))?;
            f.read_exact(buf).map_err(|e| Error::io(&self.path, e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_and_file_agree() {
        let data: Vec<u8> = (0..=255u8).cycle().take(5000).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blob");
        std::fs::write(&path, &data).unwrap();
        let mem = MemorySource::new(data.clone());
        let file = FileSource::open(&path).unwrap();
        assert_eq!(file.len(), 5000);
        for (off, len) in [(0, 10), (4990, 10), (1234, 777)] {
            assert_eq!(mem.read_vec(off, len).unwrap(), &data[off as usize..off as usize + len]);
            assert_eq!(file.read_vec(off, len).unwrap(), &data[off as usize..off as usize + len]);
        }
        assert!(mem.read_vec(4995, 10).is_err());
        assert!(file.read_vec(4995, 10).is_err());
    }
}
