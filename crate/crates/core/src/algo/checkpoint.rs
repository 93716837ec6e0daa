//! Binary checkpoints, little-endian:
//!
//! ```text
//! "KTCK" u16 version u16 reserved u64 iteration
//! u32 n, n bytes run config (JSON)
//! [u8; 32] SHA-256 of the config bytes
//! u64 p, p × f64 parameters
//! u32 CRC32 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AlgoError, Algorithm, RecurrentNet, RunConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"KTCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub run: RunConfig,
    pub params: Vec<f64>,
}

fn corrupt(msg: &str) -> AlgoError {
    AlgoError::Checkpoint(msg.to_string())
}

impl Checkpoint {
    pub fn algorithm(&self) -> Algorithm {
        self.run.train.algorithm
    }

    /// Hex SHA-256 of the serialized run config.
    pub fn config_digest(&self) -> String {
        hex(&Sha256::digest(self.config_bytes()))
    }

    fn config_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.run).expect("run config serializes")
    }

    pub fn model(&self) -> Result<RecurrentNet, AlgoError> {
        RecurrentNet::from_params(self.run.model.clone(), self.params.clone())
    }

    pub fn encode(&self) -> Vec<u8> {
        let cfg = self.config_bytes();
        let mut out = Vec::with_capacity(64 + cfg.len() + 8 * self.params.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&Sha256::digest(&cfg));
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, AlgoError> {
        if buf.len() < 24 || buf[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing KTCK magic"));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let iteration = u64::from_le_bytes(body[8..16].try_into().unwrap());
        let n = u32::from_le_bytes(body[16..20].try_into().unwrap()) as usize;
        let rest = &body[20..];
        if rest.len() < n + 40 {
            return Err(corrupt("truncated"));
        }
        let (cfg, rest) = rest.split_at(n);
        let (digest, rest) = rest.split_at(32);
        if Sha256::digest(cfg).as_slice() != digest {
            return Err(corrupt("config digest mismatch"));
        }
        let run: RunConfig = serde_json::from_slice(cfg).map_err(|e| corrupt(&e.to_string()))?;
        let p = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let data = &rest[8..];
        if data.len() != p * 8 {
            return Err(corrupt("parameter count does not match payload"));
        }
        let params = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint { iteration, run, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), AlgoError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AlgoError> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{ModelConfig, ModelContract};

    #[test]
    fn round_trip_and_corruption() {
        let mut run = RunConfig::for_algorithm(Algorithm::Cql);
        run.model = ModelConfig::desk(Algorithm::Cql, 200, 8);
        let net = RecurrentNet::new(run.model.clone(), 0).unwrap();
        let ck = Checkpoint {
            iteration: 42,
            run,
            params: net.params().to_vec(),
        };
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config_digest(), ck.config_digest());
        assert_eq!(back.model().unwrap().params(), net.params());
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(Checkpoint::decode(&bad).is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 9]).is_err());
    }
}
