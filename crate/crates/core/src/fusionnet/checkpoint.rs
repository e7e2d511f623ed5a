//! Binary checkpoint: JSON header for everything human-auditable, raw
//! little-endian f64 blobs for parameters so round trips are bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FusionModel, ModalitySet, ModelConfig};
use crate::datahub::{Featurizer, TargetScaler, Vocab};
use crate::diffcore::{ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EPCF";
const VERSION: u32 = 1;

/// Everything needed to reload a trained pipeline: the model plus the
/// preprocessing state fitted on the training split.
pub struct CheckpointBundle {
    pub seed: u64,
    pub vocab: Vocab,
    pub scaler: TargetScaler,
    pub featurizer: Featurizer,
    pub model: FusionModel,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    config: ModelConfig,
    modalities: ModalitySet,
    vocab: Vocab,
    scaler: TargetScaler,
    featurizer: Featurizer,
}

fn write_all(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes)?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, bundle: &CheckpointBundle) -> Result<()> {
    let header = Header {
        seed: bundle.seed,
        config: bundle.model.config().clone(),
        modalities: bundle.model.modalities(),
        vocab: bundle.vocab.clone(),
        scaler: bundle.scaler,
        featurizer: bundle.featurizer.clone(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_all(&mut w, MAGIC)?;
    write_all(&mut w, &VERSION.to_le_bytes())?;
    write_all(&mut w, &(header_json.len() as u64).to_le_bytes())?;
    write_all(&mut w, &header_json)?;
    write_all(&mut w, &(bundle.model.store.len() as u32).to_le_bytes())?;
    for (_, p) in bundle.model.store.iter() {
        let name = p.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("parameter name too long: {}", p.name)));
        }
        write_all(&mut w, &(name.len() as u16).to_le_bytes())?;
        write_all(&mut w, name)?;
        let group = match p.group {
            ParamGroup::Main => 0u8,
            ParamGroup::Projection => 1u8,
        };
        write_all(&mut w, &[group])?;
        let shape = p.value.shape();
        if shape.len() > u8::MAX as usize {
            return Err(Error::Checkpoint("parameter rank too large".into()));
        }
        write_all(&mut w, &[shape.len() as u8])?;
        for &d in shape {
            write_all(&mut w, &(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            write_all(&mut w, &v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut u64buf = [0u8; 8];
    read_exact(&mut r, &mut u64buf, "header length")?;
    let header_len = u64::from_le_bytes(u64buf) as usize;
    let mut header_json = vec![0u8; header_len];
    read_exact(&mut r, &mut header_json, "header")?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    read_exact(&mut r, &mut u32buf, "parameter count")?;
    let n_params = u32::from_le_bytes(u32buf) as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let mut u16buf = [0u8; 2];
        read_exact(&mut r, &mut u16buf, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(u16buf) as usize];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let mut byte = [0u8; 1];
        read_exact(&mut r, &mut byte, "group")?;
        let group = match byte[0] {
            0 => ParamGroup::Main,
            1 => ParamGroup::Projection,
            g => return Err(Error::Checkpoint(format!("unknown parameter group {g}"))),
        };
        read_exact(&mut r, &mut byte, "rank")?;
        let mut shape = Vec::with_capacity(byte[0] as usize);
        for _ in 0..byte[0] {
            read_exact(&mut r, &mut u32buf, "dim")?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        for v in data.iter_mut() {
            read_exact(&mut r, &mut u64buf, "parameter data")?;
            *v = f64::from_le_bytes(u64buf);
        }
        store.add(name, group, Tensor::new(shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }

    let vocab_sizes = header.vocab.sizes();
    let model =
        FusionModel::from_parts(&header.config, header.modalities, vocab_sizes, store)?;
    Ok(CheckpointBundle {
        seed: header.seed,
        vocab: header.vocab,
        scaler: header.scaler,
        featurizer: header.featurizer,
        model,
    })
}

/// Hex SHA-256 of a file, streamed.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)?;
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusionnet::Modality;

    fn tiny_bundle(seed: u64) -> CheckpointBundle {
        let config = ModelConfig {
            latent_dim: 6,
            cat_embed_dim: 3,
            text_dim: 5,
            boundary_len: 8,
            numeric_mlp: [7, 4],
            spatial_numeric_mlp: [5, 3],
            gate_hidden: 6,
            fusion_mlp: [10, 6],
            dropout: 0.1,
            n_bands: 7,
        };
        let vocab = Vocab::from_values(std::array::from_fn(|f| {
            vec![format!("v{f}a"), format!("v{f}b")]
        }))
        .unwrap();
        let model = FusionModel::new(&config, ModalitySet::full(), vocab.sizes(), seed).unwrap();
        CheckpointBundle {
            seed,
            vocab,
            scaler: TargetScaler {
                mean: [55.25, 61.5],
                std: [12.125, 9.75],
            },
            featurizer: Featurizer {
                medians: [80.5, 5.0, 4.0, 0.0],
                num_mean: [81.0, 5.1, 4.2, 0.3],
                num_std: [10.0, 1.5, 1.25, 0.5],
                spat_mean: [95.0, 6.5, 1.2],
                spat_std: [30.0, 2.0, 0.8],
            },
            model,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let bundle = tiny_bundle(31);
        write_checkpoint(&path, &bundle).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.seed, 31);
        assert_eq!(back.vocab, bundle.vocab);
        assert_eq!(back.scaler, bundle.scaler);
        assert_eq!(back.featurizer, bundle.featurizer);
        assert_eq!(back.model.config(), bundle.model.config());
        assert_eq!(back.model.modalities(), bundle.model.modalities());
        for ((_, a), (_, b)) in bundle.model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.group, b.group);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rewrites_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        write_checkpoint(&a, &tiny_bundle(7)).unwrap();
        write_checkpoint(&b, &tiny_bundle(7)).unwrap();
        assert_eq!(sha256_file(&a).unwrap(), sha256_file(&b).unwrap());
        let c = dir.path().join("c.ckpt");
        write_checkpoint(&c, &tiny_bundle(8)).unwrap();
        assert_ne!(sha256_file(&a).unwrap(), sha256_file(&c).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPEnope").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn single_modality_checkpoints_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("text.ckpt");
        let mut bundle = tiny_bundle(3);
        let config = bundle.model.config().clone();
        bundle.model = FusionModel::new(
            &config,
            ModalitySet::single(Modality::Text),
            bundle.vocab.sizes(),
            3,
        )
        .unwrap();
        write_checkpoint(&path, &bundle).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.model.modalities(), ModalitySet::single(Modality::Text));
        assert_eq!(back.model.store.len(), bundle.model.store.len());
    }
}
