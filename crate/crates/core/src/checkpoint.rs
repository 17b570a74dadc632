//! Binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"SDPCCKPT"                    8-byte magic
//! u64 little-endian              length of the JSON header in bytes
//! JSON header                    {"version":1,"networks":[{"name":..,"widths":[..]}..],"metadata":{..}}
//! f64 little-endian arrays       one flat parameter array per network, in header order
//! ```
//!
//! Every network's parameter count is implied by its widths, so the file
//! length is fully determined by the header. Round trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{param_count, Mlp};

const MAGIC: &[u8; 8] = b"SDPCCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct NetworkEntry {
    name: String,
    widths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    networks: Vec<NetworkEntry>,
    metadata: serde_json::Value,
}

/// Named networks plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    networks: Vec<(String, Mlp)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            networks: Vec::new(),
        }
    }

    pub fn push_network(&mut self, name: &str, net: &Mlp) {
        self.networks.push((name.to_owned(), net.clone()));
    }

    pub fn network(&self, name: &str) -> Result<Mlp> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint has no network `{name}`")))
    }

    pub fn network_names(&self) -> impl Iterator<Item = &str> {
        self.networks.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: VERSION,
            networks: self
                .networks
                .iter()
                .map(|(name, net)| NetworkEntry {
                    name: name.clone(),
                    widths: net.widths().to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_floats: usize = self.networks.iter().map(|(_, n)| n.param_count()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n_floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, net) in &self.networks {
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing checkpoint magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }
        let mut counts = Vec::with_capacity(header.networks.len());
        for entry in &header.networks {
            if entry.widths.len() < 2 || entry.widths.contains(&0) {
                return Err(Error::Format(format!(
                    "network `{}` has invalid widths {:?}",
                    entry.name, entry.widths
                )));
            }
            counts.push(param_count(&entry.widths));
        }
        let expected = counts.iter().sum::<usize>() * 8;
        let body = &bytes[body_start..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} parameter bytes, found {}",
                body.len()
            )));
        }
        let mut floats = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut networks = Vec::with_capacity(header.networks.len());
        for (entry, count) in header.networks.into_iter().zip(counts) {
            let params: Vec<f64> = floats.by_ref().take(count).collect();
            let net = Mlp::from_params(&entry.widths, params)?;
            networks.push((entry.name, net));
        }
        Ok(Self {
            metadata: header.metadata,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truncated_body_is_format_error() {
        let mut ck = Checkpoint::new(serde_json::json!({"k": 1}));
        ck.push_network("a", &Mlp::zeros(&[2, 3, 1]).unwrap());
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn bad_magic_is_format_error() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0\0\0\0\0"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn missing_network_is_reported() {
        let ck = Checkpoint::new(serde_json::Value::Null);
        assert!(ck.network("actor").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..12, special in any::<f64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = Mlp::new(&[3, hidden, 2], &mut rng).unwrap();
            a.params_mut()[0] = special;
            let b = Mlp::new(&[5, 1], &mut rng).unwrap();
            let mut ck = Checkpoint::new(serde_json::json!({"seed": seed}));
            ck.push_network("a", &a);
            ck.push_network("b", &b);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            let a2 = back.network("a").unwrap();
            prop_assert_eq!(a2.widths(), a.widths());
            for (x, y) in a2.params().iter().zip(a.params()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back.network("b").unwrap(), b);
            prop_assert_eq!(back.metadata, ck.metadata);
        }
    }
}
