//! Bit-exact model persistence.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   7 bytes  "CBLND1\0"
//! version u32      currently 1
//! dims    4 x u64  input, hidden, embed, time
//! vocab   u64 count, then per id: u64 byte length + UTF-8 bytes
//! table   tensor   embedding rows (tensor wire format)
//! net     u64 count (32), then each parameter tensor in canonical order
//! adam    u64 step, then per parameter (table first): m tensor, v tensor
//! config  u64 byte length + TrainConfig as JSON
//! crc32   u32      IEEE CRC-32 of everything above
//! ```

use std::path::Path;
use std::sync::Arc;

use crate::denoiser::{param_shapes, BlockConditionalDenoiser, NetDims};
use crate::embedding::{ConceptVocab, EmbeddingTable, NULL_CONCEPT};
use crate::error::{Error, Result};
use crate::tensor::{tensor_from_bytes, tensor_to_bytes, Tensor};
use crate::train::{AdamState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"CBLND1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    // IEEE polynomial, bit-reflected.
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ u32::from(b)) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

/// A complete persisted training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dims: NetDims,
    pub table: EmbeddingTable,
    pub net_params: Vec<Arc<Tensor>>,
    pub adam: AdamState,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(
        net: &BlockConditionalDenoiser,
        table: &EmbeddingTable,
        adam: &AdamState,
        config: &TrainConfig,
    ) -> Checkpoint {
        Checkpoint {
            dims: *net.dims(),
            table: table.clone(),
            net_params: net.params().to_vec(),
            adam: adam.clone(),
            config: config.clone(),
        }
    }

    /// Reassembles the usable model.
    pub fn into_model(self) -> Result<(BlockConditionalDenoiser, EmbeddingTable)> {
        let net = BlockConditionalDenoiser::from_params(self.dims, self.net_params)?;
        Ok((net, self.table))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [self.dims.input, self.dims.hidden, self.dims.embed, self.dims.time] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let ids = self.table.vocab().ids();
        out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
        for id in ids {
            out.extend_from_slice(&(id.len() as u64).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out.extend_from_slice(&tensor_to_bytes(self.table.rows()));
        out.extend_from_slice(&(self.net_params.len() as u64).to_le_bytes());
        for p in &self.net_params {
            out.extend_from_slice(&tensor_to_bytes(p));
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            out.extend_from_slice(&tensor_to_bytes(m));
            out.extend_from_slice(&tensor_to_bytes(v));
        }
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(&config);
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
            return Err(Error::Format(format!(
                "checkpoint truncated at offset 0: {} bytes total",
                bytes.len()
            )));
        }
        if &bytes[..7] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let body_len = bytes.len() - 4;
        let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let actual_crc = crc32(&bytes[..body_len]);
        if stored_crc != actual_crc {
            return Err(Error::Format(format!(
                "checkpoint CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }

        let mut offset = 7usize;
        let body = &bytes[..body_len];
        let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
            if *offset + n > body.len() {
                return Err(Error::Format(format!(
                    "checkpoint truncated: needed {n} bytes at offset {}",
                    *offset
                )));
            }
            let s = &body[*offset..*offset + n];
            *offset += n;
            Ok(s)
        };
        let read_u64 = |offset: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(offset, 8)?.try_into().unwrap()))
        };
        let read_tensor = |offset: &mut usize| -> Result<Tensor> {
            let (t, used) = tensor_from_bytes(&body[*offset..]).map_err(|e| match e {
                Error::Format(msg) => Error::Format(format!("{msg} (at checkpoint offset {})", *offset)),
                other => other,
            })?;
            *offset += used;
            Ok(t)
        };

        let version = u32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let dims = NetDims {
            input: read_u64(&mut offset)? as usize,
            hidden: read_u64(&mut offset)? as usize,
            embed: read_u64(&mut offset)? as usize,
            time: read_u64(&mut offset)? as usize,
        };
        let vocab_len = read_u64(&mut offset)? as usize;
        let mut ids = Vec::with_capacity(vocab_len);
        for _ in 0..vocab_len {
            let len = read_u64(&mut offset)? as usize;
            let raw = take(&mut offset, len)?;
            ids.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::Format("vocab id is not valid UTF-8".into()))?,
            );
        }
        if ids.first().map(String::as_str) != Some(NULL_CONCEPT) {
            return Err(Error::Format("vocab must start with the null concept row".into()));
        }
        let vocab = ConceptVocab::new(&ids[1..])?;
        let rows = read_tensor(&mut offset)?;
        let table = EmbeddingTable::from_rows(vocab, rows)?;
        if table.dim() != dims.embed {
            return Err(Error::Format(format!(
                "table dim {} disagrees with header embed {}",
                table.dim(),
                dims.embed
            )));
        }

        let n_params = read_u64(&mut offset)? as usize;
        let expected_shapes = param_shapes(&dims);
        if n_params != expected_shapes.len() {
            return Err(Error::Format(format!(
                "expected {} network tensors, header says {n_params}",
                expected_shapes.len()
            )));
        }
        let mut net_params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            net_params.push(Arc::new(read_tensor(&mut offset)?));
        }

        let step = read_u64(&mut offset)?;
        let mut m = Vec::with_capacity(n_params + 1);
        let mut v = Vec::with_capacity(n_params + 1);
        for _ in 0..n_params + 1 {
            m.push(read_tensor(&mut offset)?);
            v.push(read_tensor(&mut offset)?);
        }
        let adam = AdamState { step, m, v };

        let cfg_len = read_u64(&mut offset)? as usize;
        let cfg_raw = take(&mut offset, cfg_len)?;
        let config: TrainConfig = serde_json::from_slice(cfg_raw)
            .map_err(|e| Error::Format(format!("config echo does not parse: {e}")))?;
        if offset != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                body.len() - offset
            )));
        }

        // Validate network shapes eagerly so a corrupted-but-CRC-valid file
        // cannot produce a half-usable model.
        BlockConditionalDenoiser::from_params(dims, net_params.clone())?;
        Ok(Checkpoint { dims, table, net_params, adam, config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_params;
    use crate::rng::derive_stream;

    fn sample_checkpoint() -> Checkpoint {
        let vocab = ConceptVocab::new(&["A", "B", "C"]).unwrap();
        let mut s = derive_stream(9, "ckpt").unwrap();
        let table = EmbeddingTable::init(vocab, 8, &mut s).unwrap();
        let net = init_params(NetDims { input: 2, hidden: 16, embed: 8, time: 4 }, &mut s).unwrap();
        let adam = AdamState::new(&table, &net);
        Checkpoint::new(&net, &table, &adam, &TrainConfig::gmm_default())
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample_checkpoint();
        let bytes = ck.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        assert_eq!(loaded.config, ck.config);
        assert_eq!(loaded.table.rows(), ck.table.rows());
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut bytes = sample_checkpoint().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC"), "{err}");
    }

    #[test]
    fn future_version_rejected() {
        let ck = sample_checkpoint();
        let mut bytes = ck.to_bytes();
        // bump the version field and repair the trailing CRC
        bytes[7] = CHECKPOINT_VERSION as u8 + 1;
        let body_len = bytes.len() - 4;
        let crc = crc32(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&crc.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_reported() {
        let bytes = sample_checkpoint().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn roundtrip_through_file_and_model(){
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let (net, table) = loaded.into_model().unwrap();
        assert_eq!(net.dims(), &ck.dims);
        assert_eq!(table.vocab().concepts().len(), 3);
        let crc_known = crc32(b"123456789");
        assert_eq!(crc_known, 0xCBF43926, "CRC-32 check vector");
    }
}
