//! Uplift tables keyed by a hash of everything that determines them.
//!
//! Readers open finished files only; a writer fills a temporary file in the
//! cache directory and renames it into place, so a key is never observed half
//! written. Two writers racing on one key produce identical bytes.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::uplift::UpliftTable;

pub const CACHE_ENV: &str = "UBALAB_CACHE";

#[derive(Debug, Clone)]
pub struct UpliftCache {
    dir: PathBuf,
}

impl UpliftCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        UpliftCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.ut"))
    }

    pub fn get(&self, key: &str) -> Result<Option<UpliftTable>> {
        let path = self.path_for(key);
        match std::fs::File::open(&path) {
            Ok(f) => Ok(Some(UpliftTable::read(BufReader::new(f))?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, key: &str, table: &UpliftTable) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut bytes = Vec::new();
        table.write(&mut bytes)?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        let path = self.path_for(key);
        tmp.persist(&path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = UpliftCache::new(dir.path().join("c"));
        assert!(cache.get("k").unwrap().is_none());
        let t = UpliftTable::manual(vec![0, 3], vec![vec![0.0, 0.5], vec![0.25, 1.0]]).unwrap();
        cache.put("k", &t).unwrap();
        assert_eq!(cache.get("k").unwrap().unwrap(), t);
        cache.put("k", &t).unwrap();
        let names: Vec<_> = std::fs::read_dir(cache.dir()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }
}
