// SPDX-License-Identifier: Apache-2.0

//! LZ4 payload compression. Levels 1–12 select the high-compression encoder,
//! 0 the default fast encoder and negative values the accelerated encoder.

use lz4::block::{self, CompressionMode};
use thiserror::Error;

pub const MIN_LEVEL: i32 = -100;
pub const MAX_LEVEL: i32 = 12;
pub const DEFAULT_LEVEL: i32 = 10;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("compression level {0} outside {MIN_LEVEL}..={MAX_LEVEL}")]
    InvalidLevel(i32),
    #[error("payload too large for the codec")]
    TooLarge,
    #[error("codec failure: {0}")]
    Codec(#[from] std::io::Error),
}

fn mode(level: i32) -> Result<CompressionMode, CompressError> {
    match level {
        1..=MAX_LEVEL => Ok(CompressionMode::HIGHCOMPRESSION(level)),
        0 => Ok(CompressionMode::DEFAULT),
        MIN_LEVEL..=-1 => Ok(CompressionMode::FAST(-level)),
        _ => Err(CompressError::InvalidLevel(level)),
    }
}

/// Returns the compressed block (with a 4-byte size prefix) and the original
/// length.
pub fn compress(payload: &[u8], level: i32) -> Result<(Vec<u8>, usize), CompressError> {
    let mode = mode(level)?;
    if i32::try_from(payload.len()).is_err() {
        return Err(CompressError::TooLarge);
    }
    if payload.is_empty() {
        // the C codec mishandles zero-length buffers; emit the bare size prefix
        return Ok((vec![0; 4], 0));
    }
    let out = block::compress(payload, Some(mode), true)?;
    Ok((out, payload.len()))
}

pub fn decompress(data: &[u8]) -> Result<Vec<u8>, CompressError> {
    if data.len() >= 4 && data[..4] == [0; 4] {
        return Ok(Vec::new());
    }
    Ok(block::decompress(data, None)?)
}
