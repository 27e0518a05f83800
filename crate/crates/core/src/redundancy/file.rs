//! Redundancy region file.
//!
//! ```text
//! "VLRR" | u32 version = 1 | u64 num_pages | u32 pages_per_stripe
//! u32 checksum x num_pages
//! parity pages, num_stripes * page_size bytes
//! u32 meta-checksum
//! ```
//!
//! All integers little-endian. The page size is not stored; it comes from
//! the matching store image.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::Ordering;

use super::{RedundancyRegion, StripeConfig};
use crate::error::{Error, Result};
use crate::store::file::{read_u32, read_u64};

pub const REGION_MAGIC: [u8; 4] = *b"VLRR";
pub const REGION_VERSION: u32 = 1;

impl RedundancyRegion {
    pub fn write_image(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&REGION_MAGIC)?;
        w.write_all(&REGION_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_pages as u64).to_le_bytes())?;
        w.write_all(&(self.stripes.pages_per_stripe() as u32).to_le_bytes())?;
        w.write_all(&self.checksum_bytes())?;
        for p in self.parity.iter() {
            w.write_all(&p.read())?;
        }
        w.write_all(&self.meta_checksum().to_le_bytes())?;
        Ok(())
    }

    pub fn read_image(r: &mut impl Read, page_size: usize) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != REGION_MAGIC {
            return Err(Error::Format(format!("bad region magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != REGION_VERSION {
            return Err(Error::Format(format!("unsupported region version {version}")));
        }
        let num_pages = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("num_pages".into()))?;
        let pages_per_stripe = read_u32(r)? as usize;
        if pages_per_stripe < 2 {
            return Err(Error::Format(format!("pages_per_stripe {pages_per_stripe} < 2")));
        }
        let region = Self::empty(page_size, num_pages, StripeConfig::new(pages_per_stripe - 1))?;
        for page in 0..num_pages {
            let crc = read_u32(r)?;
            region.checksums[page].store(crc as u64, Ordering::SeqCst);
        }
        for p in region.parity.iter() {
            r.read_exact(&mut p.write())?;
        }
        region.meta.store(read_u32(r)?, Ordering::SeqCst);
        Ok(region)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_image(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, page_size: usize) -> Result<Self> {
        Self::read_image(&mut BufReader::new(File::open(path)?), page_size)
    }
}
