use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingBank;
use crate::{Error, Result};

pub const EBANK_MAGIC: &[u8; 4] = b"EBNK";
pub const EBANK_VERSION: u8 = 0x01;

const PREAMBLE_LEN: usize = 9;

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    n: usize,
    dim: usize,
    ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

/// Serializes a bank. The output is a pure function of the bank, so encoding a
/// decoded file reproduces it byte for byte.
pub fn encode_ebank(bank: &EmbeddingBank) -> Vec<u8> {
    let header = Header {
        name: bank.name().to_string(),
        n: bank.len(),
        dim: bank.dim(),
        ids: bank.ids().to_vec(),
        labels: bank.labels().map(<[u8]>::to_vec),
    };
    let json = serde_json::to_vec(&header).expect("header serialization is infallible");
    let mut out = Vec::with_capacity(PREAMBLE_LEN + json.len() + bank.vectors().len() * 4);
    out.extend_from_slice(EBANK_MAGIC);
    out.push(EBANK_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in bank.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_ebank<W: Write>(bank: &EmbeddingBank, mut destination: W) -> Result<()> {
    destination.write_all(&encode_ebank(bank))?;
    Ok(())
}

pub fn write_ebank_file(bank: &EmbeddingBank, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_ebank(bank))
}

/// Parses and validates an EBANK byte buffer. Errors carry the byte offset of the problem.
pub fn decode_ebank(bytes: &[u8]) -> Result<EmbeddingBank> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            what: "magic",
        });
    }
    if &bytes[..4] != EBANK_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Truncated {
            offset: bytes.len(),
            what: "version and header length",
        });
    }
    if bytes[4] != EBANK_VERSION {
        return Err(Error::UnsupportedVersion { version: bytes[4] });
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let header_end = PREAMBLE_LEN
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or(Error::Truncated {
            offset: bytes.len(),
            what: "header",
        })?;
    let header: Header =
        serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end]).map_err(|e| Error::Header {
            offset: PREAMBLE_LEN
                + if e.line() <= 1 {
                    e.column().saturating_sub(1)
                } else {
                    0
                },
            message: e.to_string(),
        })?;
    if header.ids.len() != header.n {
        return Err(Error::Header {
            offset: PREAMBLE_LEN,
            message: format!("n = {} but {} ids listed", header.n, header.ids.len()),
        });
    }
    let payload = &bytes[header_end..];
    let expected = header
        .n
        .checked_mul(header.dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Header {
            offset: PREAMBLE_LEN,
            message: "n * dim overflows".into(),
        })?;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            offset: header_end,
            expected,
            found: payload.len(),
        });
    }
    let mut vectors = Vec::with_capacity(header.n * header.dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFinitePayload {
                offset: header_end + 4 * i,
            });
        }
        vectors.push(v);
    }
    EmbeddingBank::new(header.name, header.dim, header.ids, vectors, header.labels).map_err(|e| {
        match e {
            Error::DuplicateId(_) | Error::InvalidBank(_) => Error::Header {
                offset: PREAMBLE_LEN,
                message: e.to_string(),
            },
            other => other,
        }
    })
}

pub fn read_ebank<R: Read>(mut source: R) -> Result<EmbeddingBank> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_ebank(&bytes)
}

pub fn read_ebank_file(path: &Path) -> Result<EmbeddingBank> {
    let bytes = std::fs::read(path).map_err(crate::Error::io_at(path))?;
    decode_ebank(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(n: usize, dim: usize) -> EmbeddingBank {
        let ids = (0..n).map(|i| format!("s{i}")).collect();
        let vectors = (0..n * dim).map(|i| i as f32 * 0.25 - 1.0).collect();
        EmbeddingBank::new("test", dim, ids, vectors, None).unwrap()
    }

    #[test]
    fn layout_is_header_plus_payload() {
        let b = bank(2, 3);
        let bytes = encode_ebank(&b);
        assert_eq!(&bytes[..5], b"EBNK\x01");
        let h = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        assert_eq!(
            std::str::from_utf8(&bytes[9..9 + h]).unwrap(),
            r#"{"name":"test","n":2,"dim":3,"ids":["s0","s1"]}"#
        );
        assert_eq!(bytes.len() - 9 - h, 24);
        assert_eq!(decode_ebank(&bytes).unwrap(), b);
    }

    #[test]
    fn empty_bank_round_trips() {
        let b = bank(0, 4);
        let bytes = encode_ebank(&b);
        let back = decode_ebank(&bytes).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 4);
        assert_eq!(encode_ebank(&back), bytes);
    }

    #[test]
    fn labels_are_written_when_present() {
        let b = bank(2, 1).with_labels(Some(vec![0, 1])).unwrap();
        let bytes = encode_ebank(&b);
        assert!(String::from_utf8_lossy(&bytes).contains(r#""labels":[0,1]"#));
        assert_eq!(decode_ebank(&bytes).unwrap().labels(), Some(&[0u8, 1][..]));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_ebank(&bank(1, 1));
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_ebank(&bytes).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_ebank(&bank(1, 1));
        bytes[4] = 2;
        assert!(matches!(
            decode_ebank(&bytes).unwrap_err(),
            Error::UnsupportedVersion { version: 2 }
        ));
    }

    #[test]
    fn short_payload_reports_expected_length() {
        let mut bytes = encode_ebank(&bank(3, 2));
        bytes.truncate(bytes.len() - 4);
        let err = decode_ebank(&bytes).unwrap_err();
        match &err {
            Error::PayloadLength {
                expected, found, ..
            } => {
                assert_eq!((*expected, *found), (24, 20));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("payload length mismatch"));
    }

    #[test]
    fn nan_payload_is_rejected_with_offset() {
        let b = bank(1, 2);
        let mut bytes = encode_ebank(&b);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_ebank(&bytes).unwrap_err() {
            Error::NonFinitePayload { offset } => assert_eq!(offset, n - 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_inconsistencies_are_rejected() {
        let json = br#"{"name":"x","n":2,"dim":1,"ids":["a","a"]}"#;
        let mut bytes = b"EBNK\x01".to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(json);
        bytes.extend_from_slice(&[0u8; 8]);
        let err = decode_ebank(&bytes).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");

        let mut truncated = b"EBNK\x01".to_vec();
        truncated.extend_from_slice(&100u32.to_le_bytes());
        truncated.extend_from_slice(b"{}");
        assert!(matches!(
            decode_ebank(&truncated).unwrap_err(),
            Error::Truncated { .. }
        ));
    }
}
