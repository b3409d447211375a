//! Checkpoint container: magic `SSMC`, version byte, length-prefixed JSON
//! header with the run config and a named tensor manifest, then raw
//! little-endian f64 blobs in manifest order. Storing full doubles keeps the
//! save→load→forward round trip bit-exact.

use super::model::SsmModel;
use super::RunConfig;
use crate::error::{FormatError, Result, SsmError};
use crate::numerics::{ParamStore, Tensor};
use crate::objective::{AdamConfig, OptimState};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SSMC";
pub const VERSION: u8 = 0x01;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    rows: usize,
    cols: usize,
    dtype: String,
}

#[derive(Serialize, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    AdamFirst,
    AdamSecond,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    step: u64,
    adam: AdamHeader,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    warmup_steps: u64,
}

pub fn to_bytes(model: &SsmModel, optim: &OptimState<f64>) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut blobs: Vec<&Tensor<f64>> = Vec::new();
    for (name, tensor) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            kind: TensorKind::Param,
            rows: tensor.shape()[0],
            cols: tensor.shape()[1],
            dtype: "f64".into(),
        });
        blobs.push(tensor);
    }
    for (name, first, second) in optim.moments() {
        for (kind, tensor) in [(TensorKind::AdamFirst, first), (TensorKind::AdamSecond, second)] {
            tensors.push(TensorEntry {
                name: name.clone(),
                kind,
                rows: tensor.shape()[0],
                cols: tensor.shape()[1],
                dtype: "f64".into(),
            });
            blobs.push(tensor);
        }
    }
    let header = Header {
        config: model.config.clone(),
        step: optim.step,
        adam: AdamHeader {
            learning_rate: optim.config.learning_rate,
            beta1: optim.config.beta1,
            beta2: optim.config.beta2,
            epsilon: optim.config.epsilon,
            warmup_steps: optim.config.warmup_steps,
        },
        tensors,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| SsmError::Config(format!("checkpoint header: {e}")))?;

    let payload: usize = blobs.iter().map(|t| t.numel() * 8).sum();
    let mut out = Vec::with_capacity(9 + header_json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for tensor in blobs {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(SsmModel, OptimState<f64>)> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            expected: 4,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(FormatError::BadMagic {
            expected: "SSMC",
            found,
        }
        .into());
    }
    if bytes.len() < 9 {
        return Err(FormatError::Truncated {
            expected: 9,
            found: bytes.len(),
        }
        .into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]).into());
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 9 + header_len {
        return Err(FormatError::Truncated {
            expected: 9 + header_len,
            found: bytes.len(),
        }
        .into());
    }
    let header: Header = serde_json::from_slice(&bytes[9..9 + header_len])
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;

    let payload: usize = header.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    let expected = 9 + header_len + payload;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > expected {
        return Err(FormatError::HeaderMismatch(format!(
            "{} trailing bytes beyond declared payload",
            bytes.len() - expected
        ))
        .into());
    }

    let mut offset = 9 + header_len;
    let mut params = ParamStore::new();
    let mut optim = OptimState::new(AdamConfig {
        learning_rate: header.adam.learning_rate,
        beta1: header.adam.beta1,
        beta2: header.adam.beta2,
        epsilon: header.adam.epsilon,
        warmup_steps: header.adam.warmup_steps,
    });
    optim.step = header.step;

    let mut pending_first: Option<(String, Tensor<f64>)> = None;
    for entry in &header.tensors {
        if entry.dtype != "f64" {
            return Err(FormatError::InvalidHeader(format!(
                "unsupported dtype {:?}",
                entry.dtype
            ))
            .into());
        }
        let n = entry.rows * entry.cols;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(
                bytes[offset..offset + 8].try_into().expect("8 bytes"),
            ));
            offset += 8;
        }
        let tensor = Tensor::new(vec![entry.rows, entry.cols], data)
            .map_err(|e| FormatError::HeaderMismatch(format!("tensor {}: {e}", entry.name)))?;
        match entry.kind {
            TensorKind::Param => params.insert(&entry.name, tensor)?,
            TensorKind::AdamFirst => {
                if pending_first.is_some() {
                    return Err(FormatError::HeaderMismatch(
                        "dangling first moment in manifest".into(),
                    )
                    .into());
                }
                pending_first = Some((entry.name.clone(), tensor));
            }
            TensorKind::AdamSecond => {
                let (name, first) = pending_first.take().ok_or_else(|| {
                    FormatError::HeaderMismatch("second moment without first".into())
                })?;
                if name != entry.name {
                    return Err(FormatError::HeaderMismatch(format!(
                        "moment pair mismatch: {name} vs {}",
                        entry.name
                    ))
                    .into());
                }
                optim.restore_moments(&name, first, tensor)?;
            }
        }
    }
    if pending_first.is_some() {
        return Err(FormatError::HeaderMismatch("unpaired first moment".into()).into());
    }

    let model = SsmModel::from_parts(header.config, params)?;
    Ok((model, optim))
}

pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    model: &SsmModel,
    optim: &OptimState<f64>,
) -> Result<()> {
    fs::write(path, to_bytes(model, optim)?)?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(SsmModel, OptimState<f64>)> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::model::window_at;
    use crate::harness::train::train;
    use crate::harness::RunConfig;
    use crate::synthdata::{generate_episode, WorldSpec};

    fn trained_pair() -> (SsmModel, OptimState<f64>, Vec<Vec<f64>>) {
        let world = WorldSpec {
            classes: 2,
            transition: vec![
                vec![0.8, 0.1, 0.1],
                vec![0.1, 0.8, 0.1],
                vec![0.1, 0.1, 0.8],
            ],
            centroids: vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 1.0, 0.0],
                vec![0.0, 1.0, 0.0, 1.0],
            ],
            noise_sigma: 0.3,
            fps: 4.0,
        };
        let ep = generate_episode(&world, 40, 4, 2).unwrap();
        let cfg = RunConfig {
            memory_len: 8,
            clusters: 2,
            feature_dim: 4,
            num_classes: 2,
            d_model: 8,
            d_edge: 4,
            heads: 2,
            gcn_layers: 1,
            steps: 3,
            batch_size: 1,
            eval_every: 0,
            ..RunConfig::default()
        };
        let out = train(&cfg, std::slice::from_ref(&ep)).unwrap();
        (out.model, out.optim, ep.features)
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bit_exactly() {
        let (model, optim, features) = trained_pair();
        let bytes = to_bytes(&model, &optim).unwrap();
        let (restored, restored_optim) = from_bytes(&bytes).unwrap();

        assert_eq!(restored.config, model.config);
        assert_eq!(restored_optim.step, optim.step);
        let window = window_at(&features, 20, model.config.memory_len).unwrap();
        let a = model.forward_window(&window, 3, None, None).unwrap().2;
        let b = restored.forward_window(&window, 3, None, None).unwrap().2;
        for (x, y) in a.p_d.value().data().iter().zip(b.p_d.value().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in a.p_a.value().data().iter().zip(b.p_a.value().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn corrupt_checkpoints_yield_distinct_errors() {
        let (model, optim, _) = trained_pair();
        let bytes = to_bytes(&model, &optim).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[..4].copy_from_slice(b"NOPE");
        assert!(matches!(
            from_bytes(&bad_magic),
            Err(SsmError::Parse(FormatError::BadMagic { .. }))
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            from_bytes(truncated),
            Err(SsmError::Parse(FormatError::Truncated { .. }))
        ));

        let mut padded = bytes.clone();
        padded.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(
            from_bytes(&padded),
            Err(SsmError::Parse(FormatError::HeaderMismatch(_)))
        ));

        let mut bad_version = bytes;
        bad_version[4] = 9;
        assert!(matches!(
            from_bytes(&bad_version),
            Err(SsmError::Parse(FormatError::UnsupportedVersion(9)))
        ));
    }

    #[test]
    fn file_round_trip_and_resumed_training_state() {
        let (model, optim, _) = trained_pair();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ssmc");
        save_checkpoint(&path, &model, &optim).unwrap();
        let (restored, restored_optim) = load_checkpoint(&path).unwrap();
        assert_eq!(restored_optim.step, optim.step);
        for (name, t) in model.params.iter() {
            assert_eq!(restored.params.get(name).unwrap().data(), t.data());
        }
        for (name, m1, v1) in optim.moments() {
            let mut found = false;
            for (n2, m2, v2) in restored_optim.moments() {
                if n2 == name {
                    assert_eq!(m1.data(), m2.data());
                    assert_eq!(v1.data(), v2.data());
                    found = true;
                }
            }
            assert!(found, "moments for {name} missing after reload");
        }
    }
}
