//! `GAPM` container: a model count, then per model its layers (shapes,
//! activation, norm flag and f64 parameters), then a length-prefixed UTF-8
//! metadata blob.

use ndarray::{Array1, Array2};

use super::mlp::{Activation, BatchNorm, Dense, Mlp};
use crate::codec::{Reader, Writer};
use crate::error::{GapError, Result};

const MAGIC: [u8; 4] = *b"GAPM";
const VERSION: u16 = 1;

pub fn encode_mlps(models: &[&Mlp], metadata: &str) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(models.len() as u32);
    for m in models {
        w.u32(m.layers().len() as u32);
        for l in m.layers() {
            w.u32(l.in_dim() as u32);
            w.u32(l.out_dim() as u32);
            w.u8(match l.activation {
                Activation::None => 0,
                Activation::Selu => 1,
            });
            w.u8(l.batch_norm.is_some() as u8);
            w.f64s(l.weight.iter().copied());
            w.f64s(l.bias.iter().copied());
            if let Some(bn) = &l.batch_norm {
                for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    w.f64s(v.iter().copied());
                }
            }
        }
    }
    w.u64(metadata.len() as u64);
    let mut out = w.finish();
    out.extend_from_slice(metadata.as_bytes());
    out
}

pub fn decode_mlps(bytes: &[u8]) -> Result<(Vec<Mlp>, String)> {
    let mut r = Reader::open(bytes, MAGIC, VERSION)?;
    let n_models = r.u32("model count")?;
    let mut models = Vec::new();
    for _ in 0..n_models {
        let n_layers = r.u32("layer count")?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let din = r.u32("layer shape")? as usize;
            let dout = r.u32("layer shape")? as usize;
            let activation = match r.u8("activation")? {
                0 => Activation::None,
                1 => Activation::Selu,
                other => {
                    return Err(GapError::InvalidParameter(format!("unknown activation tag {other}")));
                }
            };
            let has_bn = r.u8("norm flag")? != 0;
            let weight = Array2::from_shape_vec((din, dout), r.f64s(din * dout, "weights")?)
                .map_err(|e| GapError::DimensionMismatch(e.to_string()))?;
            let bias = Array1::from(r.f64s(dout, "biases")?);
            let batch_norm = if has_bn {
                let mut v = || r.f64s(dout, "norm parameters").map(Array1::from);
                Some(BatchNorm {
                    gamma: v()?,
                    beta: v()?,
                    running_mean: v()?,
                    running_var: v()?,
                })
            } else {
                None
            };
            layers.push(Dense {
                weight,
                bias,
                activation,
                batch_norm,
            });
        }
        models.push(Mlp::from_layers(layers)?);
    }
    let len = r.count(1, "metadata")?;
    let meta = std::str::from_utf8(r.take(len, "metadata")?)
        .map_err(|e| GapError::InvalidParameter(format!("metadata is not UTF-8: {e}")))?
        .to_string();
    Ok((models, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::MlpSpec;
    use crate::rng::rng_from;

    #[test]
    fn round_trip_preserves_everything() {
        let a = Mlp::new(
            &MlpSpec {
                dims: vec![3, 4, 2],
                activation: Activation::Selu,
                plain_last: true,
                batch_norm: true,
            },
            &mut rng_from(1),
        )
        .unwrap();
        let b = Mlp::new(
            &MlpSpec {
                dims: vec![2, 5],
                activation: Activation::Selu,
                plain_last: false,
                batch_norm: false,
            },
            &mut rng_from(2),
        )
        .unwrap();
        let bytes = encode_mlps(&[&a, &b], "{\"k\":1}");
        assert_eq!(&bytes[..4], b"GAPM");
        let (models, meta) = decode_mlps(&bytes).unwrap();
        assert_eq!(models, vec![a, b]);
        assert_eq!(meta, "{\"k\":1}");
    }

    #[test]
    fn corrupt_payloads_are_rejected() {
        let m = Mlp::new(
            &MlpSpec {
                dims: vec![2, 2],
                activation: Activation::None,
                plain_last: true,
                batch_norm: false,
            },
            &mut rng_from(0),
        )
        .unwrap();
        let bytes = encode_mlps(&[&m], "");
        assert!(matches!(decode_mlps(&bytes[..bytes.len() - 9]), Err(GapError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_mlps(&bad), Err(GapError::BadMagic { .. })));
    }
}
