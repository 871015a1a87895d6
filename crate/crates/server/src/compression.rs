//! Content-Encoding handling for bodies that get rewritten.

use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coding {
    Identity,
    Gzip,
    Deflate,
    Brotli,
}

impl Coding {
    /// The single coding named by a Content-Encoding value. Stacked or
    /// unknown codings yield `None` and the body is left alone.
    pub fn from_header(value: Option<&str>) -> Option<Coding> {
        let Some(value) = value else {
            return Some(Coding::Identity);
        };
        let parts: Vec<&str> = value.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
        match parts.as_slice() {
            [] => Some(Coding::Identity),
            [one] => match one.to_ascii_lowercase().as_str() {
                "identity" => Some(Coding::Identity),
                "gzip" | "x-gzip" => Some(Coding::Gzip),
                "deflate" => Some(Coding::Deflate),
                "br" => Some(Coding::Brotli),
                _ => None,
            },
            _ => None,
        }
    }
}

pub fn decode(coding: Coding, data: &[u8], limit: usize) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    let cap = limit as u64 + 1;
    match coding {
        Coding::Identity => out.extend_from_slice(data),
        Coding::Gzip => {
            flate2::read::MultiGzDecoder::new(data).take(cap).read_to_end(&mut out)?;
        }
        Coding::Deflate => {
            // Servers send both zlib-wrapped and raw deflate under this name.
            if flate2::read::ZlibDecoder::new(data).take(cap).read_to_end(&mut out).is_err() {
                out.clear();
                flate2::read::DeflateDecoder::new(data).take(cap).read_to_end(&mut out)?;
            }
        }
        Coding::Brotli => {
            brotli::Decompressor::new(data, 4096).take(cap).read_to_end(&mut out)?;
        }
    }
    if out.len() > limit {
        return Err(std::io::Error::other("decoded body exceeds limit"));
    }
    Ok(out)
}

pub fn encode(coding: Coding, data: &[u8]) -> std::io::Result<Vec<u8>> {
    match coding {
        Coding::Identity => Ok(data.to_vec()),
        Coding::Gzip => {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(data)?;
            enc.finish()
        }
        Coding::Deflate => {
            let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(data)?;
            enc.finish()
        }
        Coding::Brotli => {
            let mut out = Vec::new();
            {
                let mut enc = brotli::CompressorWriter::new(&mut out, 4096, 5, 22);
                enc.write_all(data)?;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_parsing() {
        assert_eq!(Coding::from_header(None), Some(Coding::Identity));
        assert_eq!(Coding::from_header(Some("GZIP")), Some(Coding::Gzip));
        assert_eq!(Coding::from_header(Some("br")), Some(Coding::Brotli));
        assert_eq!(Coding::from_header(Some("gzip, br")), None);
        assert_eq!(Coding::from_header(Some("zstd")), None);
    }

    #[test]
    fn raw_deflate_is_accepted() {
        let mut enc = flate2::write::DeflateEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(b"hello hello").unwrap();
        let raw = enc.finish().unwrap();
        assert_eq!(decode(Coding::Deflate, &raw, 100).unwrap(), b"hello hello");
    }

    #[test]
    fn limit_is_enforced() {
        let big = encode(Coding::Gzip, &[b'a'; 1000]).unwrap();
        assert!(decode(Coding::Gzip, &big, 999).is_err());
        assert_eq!(decode(Coding::Gzip, &big, 1000).unwrap().len(), 1000);
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(any::<u8>(), 0..4096)) {
            for c in [Coding::Identity, Coding::Gzip, Coding::Deflate, Coding::Brotli] {
                let enc = encode(c, &data).unwrap();
                prop_assert_eq!(decode(c, &enc, data.len()).unwrap(), data.clone());
            }
        }
    }
}
