use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

/// Block compression codec. The discriminant is the on-disk code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Compression {
    None = 0,
    #[default]
    Deflate = 1,
    Zstd = 2,
}

impl Compression {
    pub const ALL: [Compression; 3] = [Compression::None, Compression::Deflate, Compression::Zstd];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Compression::None),
            1 => Some(Compression::Deflate),
            2 => Some(Compression::Zstd),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "none" => Some(Compression::None),
            "deflate" => Some(Compression::Deflate),
            "zstd" => Some(Compression::Zstd),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Compression::None => "none",
            Compression::Deflate => "deflate",
            Compression::Zstd => "zstd",
        }
    }

    pub(crate) fn compress(self, raw: &[u8]) -> std::io::Result<Vec<u8>> {
        match self {
            Compression::None => Ok(raw.to_vec()),
            Compression::Deflate => {
                let mut enc = flate2::write::DeflateEncoder::new(
                    Vec::with_capacity(raw.len() / 8),
                    flate2::Compression::default(),
                );
                enc.write_all(raw)?;
                enc.finish()
            }
            Compression::Zstd => zstd::bulk::compress(raw, 3),
        }
    }

    /// Decompresses into a buffer of exactly `raw_len` bytes.
    pub(crate) fn decompress(self, data: &[u8], raw_len: usize) -> std::io::Result<Vec<u8>> {
        let out = match self {
            Compression::None => data.to_vec(),
            Compression::Deflate => {
                let mut out = Vec::with_capacity(raw_len);
                flate2::read::DeflateDecoder::new(data)
                    .take(raw_len as u64 + 1)
                    .read_to_end(&mut out)?;
                out
            }
            Compression::Zstd => zstd::bulk::decompress(data, raw_len)?,
        };
        if out.len() != raw_len {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("decompressed {} bytes, expected {raw_len}", out.len()),
            ));
        }
        Ok(out)
    }
}

impl std::fmt::Display for Compression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
