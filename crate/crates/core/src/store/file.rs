//! Flat-file image of a store.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "VLMB" | u32 version = 1 | u64 page_size | u64 num_pages
//! page bytes, num_pages * page_size
//! dirty bits, ceil(num_pages / 64) u64 words, bit p%64 of word p/64 = page p
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{PagedStore, StoreConfig};
use crate::error::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"VLMB";
pub const STORE_VERSION: u32 = 1;

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl PagedStore {
    pub fn write_image(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.page_size as u64).to_le_bytes())?;
        w.write_all(&(self.config.num_pages as u64).to_le_bytes())?;
        for page in self.pages.iter() {
            w.write_all(&page.read())?;
        }
        for word in self.dirty.load_words() {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads an image. Page geometry comes from the header; `cache_line` and
    /// `batch_size` from `base` (the batch is capped at the page count).
    pub fn read_image(r: &mut impl Read, base: StoreConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != STORE_MAGIC {
            return Err(Error::Format(format!("bad store magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let page_size = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("page_size".into()))?;
        let num_pages = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("num_pages".into()))?;
        let config = StoreConfig {
            page_size,
            num_pages,
            batch_size: base.batch_size.min(num_pages.max(1)),
            cache_line: base.cache_line,
        };
        let store = PagedStore::new(config)?;
        for page in store.pages.iter() {
            r.read_exact(&mut page.write())?;
        }
        let words = (0..num_pages.div_ceil(64)).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
        store.dirty.store_words(&words);
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_image(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, base: StoreConfig) -> Result<Self> {
        Self::read_image(&mut BufReader::new(File::open(path)?), base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let store = PagedStore::new(StoreConfig {
            page_size: 128,
            cache_line: 64,
            num_pages: 3,
            batch_size: 2,
        })
        .unwrap();
        store.write(2, 64, &[0xAB; 64]).unwrap();
        let mut buf = Vec::new();
        store.write_image(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"VLMB");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &128u64.to_le_bytes());
        assert_eq!(&buf[16..24], &3u64.to_le_bytes());
        assert_eq!(buf.len(), 24 + 3 * 128 + 8);
        assert_eq!(&buf[buf.len() - 8..], &0b100u64.to_le_bytes());

        let back = PagedStore::read_image(&mut buf.as_slice(), *store.config()).unwrap();
        assert_eq!(back.config(), store.config());
        assert_eq!(back.read_page(2).unwrap(), store.read_page(2).unwrap());
        assert_eq!(back.dirty_pages(), vec![2]);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = b"XXXX".to_vec();
        buf.extend_from_slice(&[0; 20]);
        assert!(matches!(
            PagedStore::read_image(&mut buf.as_slice(), StoreConfig::default()),
            Err(Error::Format(_))
        ));
        let mut buf = b"VLMB".to_vec();
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&[0; 16]);
        assert!(matches!(
            PagedStore::read_image(&mut buf.as_slice(), StoreConfig::default()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn truncated_image_is_an_io_error() {
        let store = PagedStore::new(StoreConfig::with_pages(2)).unwrap();
        let mut buf = Vec::new();
        store.write_image(&mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(
            PagedStore::read_image(&mut buf.as_slice(), StoreConfig::default()),
            Err(Error::Io(_))
        ));
    }
}
