use std::io;

/// Errors raised by the store, the redundancy region and the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("page {page} out of range (store has {num_pages} pages)")]
    PageOutOfRange { page: usize, num_pages: usize },

    #[error("access at offset {offset} with length {len} exceeds page size {page_size}")]
    OutOfBounds {
        offset: usize,
        len: usize,
        page_size: usize,
    },

    #[error("offset {offset} and length {len} must be multiples of the {cache_line}-byte cache line")]
    Misaligned {
        offset: usize,
        len: usize,
        cache_line: usize,
    },

    #[error("invalid page range [{start}, {end}) for a store of {num_pages} pages and batch size {batch_size}")]
    InvalidRange {
        start: usize,
        end: usize,
        num_pages: usize,
        batch_size: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("simulated device write failure while writing {0}")]
    DeviceWrite(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
