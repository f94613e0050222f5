//! Encoder checkpoints: a JSON container and a compact little-endian binary one.
//!
//! Both store every layer as `(role, activation, in_dim, out_dim, weights, bias)`
//! with weights row-major `out × in`, as `f64`.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Dense, EncoderParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT_NAME: &str = "gcclust-encoder";
const VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"GCCE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Json,
    Binary,
}

impl CheckpointFormat {
    /// `.json` selects JSON, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CheckpointFormat::Json,
            _ => CheckpointFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Trunk,
    RepHead,
    AssignHead,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    role: Role,
    activation: Activation,
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    layers: Vec<LayerRecord>,
}

fn records<T: Scalar>(params: &EncoderParams<T>) -> Vec<LayerRecord> {
    let n_trunk = params.trunk.len();
    params
        .layers()
        .enumerate()
        .map(|(i, l)| LayerRecord {
            role: match i.cmp(&n_trunk) {
                std::cmp::Ordering::Less => Role::Trunk,
                std::cmp::Ordering::Equal => Role::RepHead,
                std::cmp::Ordering::Greater => Role::AssignHead,
            },
            activation: l.activation,
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weights: l.weights.iter().map(|v| v.as_f64()).collect(),
            bias: l.bias.iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

fn from_records<T: Scalar>(records: Vec<LayerRecord>) -> Result<EncoderParams<T>> {
    let mut trunk = Vec::new();
    let mut rep = None;
    let mut assign = None;
    for r in records {
        if r.weights.len() != r.in_dim * r.out_dim || r.bias.len() != r.out_dim {
            return Err(Error::shape(format!(
                "checkpoint layer {}x{} has {} weights and {} biases",
                r.out_dim,
                r.in_dim,
                r.weights.len(),
                r.bias.len()
            )));
        }
        let dense = Dense {
            in_dim: r.in_dim,
            out_dim: r.out_dim,
            weights: r.weights.into_iter().map(T::lit).collect(),
            bias: r.bias.into_iter().map(T::lit).collect(),
            activation: r.activation,
        };
        match (r.role, rep.is_some() || assign.is_some()) {
            (Role::Trunk, false) => trunk.push(dense),
            (Role::RepHead, _) if rep.is_none() => rep = Some(dense),
            (Role::AssignHead, _) if assign.is_none() => assign = Some(dense),
            (role, _) => {
                return Err(Error::InvalidSpec(format!(
                    "unexpected {role:?} layer in checkpoint"
                )))
            }
        }
    }
    match (rep, assign) {
        (Some(rep), Some(assign)) => EncoderParams::new(trunk, rep, assign),
        _ => Err(Error::InvalidSpec("checkpoint is missing a head".into())),
    }
}

/// Serialized checkpoint bytes in the chosen format.
pub fn checkpoint_bytes<T: Scalar>(params: &EncoderParams<T>, format: CheckpointFormat) -> Vec<u8> {
    match format {
        CheckpointFormat::Json => {
            let file = CheckpointFile {
                format: FORMAT_NAME.to_string(),
                version: VERSION,
                layers: records(params),
            };
            let mut s =
                serde_json::to_string_pretty(&file).expect("checkpoint records always serialize");
            s.push('\n');
            s.into_bytes()
        }
        CheckpointFormat::Binary => encode_binary(params),
    }
}

pub fn save_checkpoint<T: Scalar>(
    params: &EncoderParams<T>,
    path: &Path,
    format: CheckpointFormat,
) -> Result<()> {
    fs::write(path, checkpoint_bytes(params, format)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    format: CheckpointFormat,
) -> Result<EncoderParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CheckpointFormat::Json => {
            let file: CheckpointFile =
                serde_json::from_slice(&bytes).map_err(|source| Error::Json {
                    path: path.to_path_buf(),
                    source,
                })?;
            if file.format != FORMAT_NAME || file.version != VERSION {
                return Err(Error::InvalidSpec(format!(
                    "unsupported checkpoint {} v{}",
                    file.format, file.version
                )));
            }
            from_records(file.layers)
        }
        CheckpointFormat::Binary => decode_binary(&bytes),
    }
}

fn encode_binary<T: Scalar>(params: &EncoderParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let recs = records(params);
    out.extend_from_slice(&(recs.len() as u32).to_le_bytes());
    for r in recs {
        out.push(match r.role {
            Role::Trunk => 0,
            Role::RepHead => 1,
            Role::AssignHead => 2,
        });
        out.push(match r.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
        out.extend_from_slice(&(r.in_dim as u64).to_le_bytes());
        out.extend_from_slice(&(r.out_dim as u64).to_le_bytes());
        for v in r.weights.iter().chain(&r.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_binary<T: Scalar>(mut bytes: &[u8]) -> Result<EncoderParams<T>> {
    let truncated = || Error::InvalidSpec("truncated binary checkpoint".into());
    let take = |n: usize, bytes: &mut &[u8]| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        bytes.read_exact(&mut buf).map_err(|_| truncated())?;
        Ok(buf)
    };
    let magic = take(4, &mut bytes)?;
    if magic != MAGIC {
        return Err(Error::InvalidSpec("not a binary encoder checkpoint".into()));
    }
    let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().unwrap());
    let u64_at = |b: Vec<u8>| u64::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4, &mut bytes)?);
    if version != VERSION {
        return Err(Error::InvalidSpec(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u32_at(take(4, &mut bytes)?) as usize;
    let mut recs = Vec::with_capacity(count);
    for _ in 0..count {
        let tags = take(2, &mut bytes)?;
        let role = match tags[0] {
            0 => Role::Trunk,
            1 => Role::RepHead,
            2 => Role::AssignHead,
            t => return Err(Error::InvalidSpec(format!("unknown layer role tag {t}"))),
        };
        let activation = match tags[1] {
            0 => Activation::Relu,
            1 => Activation::Identity,
            t => return Err(Error::InvalidSpec(format!("unknown activation tag {t}"))),
        };
        let in_dim = u64_at(take(8, &mut bytes)?) as usize;
        let out_dim = u64_at(take(8, &mut bytes)?) as usize;
        let len = in_dim.checked_mul(out_dim).ok_or_else(truncated)?;
        if bytes.len() < (len + out_dim) * 8 {
            return Err(truncated());
        }
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| Ok(f64::from_le_bytes(take(8, &mut bytes)?.try_into().unwrap())))
                .collect()
        };
        let weights = read_f64s(len)?;
        let bias = read_f64s(out_dim)?;
        recs.push(LayerRecord {
            role,
            activation,
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    if !bytes.is_empty() {
        return Err(Error::InvalidSpec("trailing bytes after checkpoint".into()));
    }
    from_records(recs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, LayerSpec};

    fn params() -> EncoderParams<f64> {
        let spec = LayerSpec {
            input_dim: 3,
            hidden: vec![7, 4],
            rep_dim: 5,
            clusters: 3,
        };
        let mut p: EncoderParams<f64> = init_params(&spec, 77).unwrap();
        // Awkward values that need all 17 digits.
        p.trunk[0].bias[2] = 0.1 + 0.2;
        p.assign_head.bias[1] = -1.0 / 3.0;
        p
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let p = params();
        save_checkpoint(&p, &path, CheckpointFormat::Json).unwrap();
        let back: EncoderParams<f64> = load_checkpoint(&path, CheckpointFormat::Json).unwrap();
        for (a, b) in p.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let p = params();
        save_checkpoint(&p, &path, CheckpointFormat::Binary).unwrap();
        let back: EncoderParams<f64> = load_checkpoint(&path, CheckpointFormat::Binary).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn truncated_binary_rejected() {
        let bytes = encode_binary(&params());
        assert!(decode_binary::<f64>(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_binary::<f64>(b"NOPE").is_err());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(
            CheckpointFormat::from_path(Path::new("a/b.json")),
            CheckpointFormat::Json
        );
        assert_eq!(
            CheckpointFormat::from_path(Path::new("a/b.bin")),
            CheckpointFormat::Binary
        );
    }
}
