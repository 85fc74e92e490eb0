//! Binary network format.
//!
//! All values little-endian.
//!
//! ```text
//! magic "RAKINET\0"            8 bytes
//! u32 version (1)
//! u32 num_layers, filter_size, num_filters, penultimate_filters
//! u8  batch_norm, u8 dropout
//! u32 in_channels, out_channels
//! f64 input scale
//! per layer, in order:
//!   u32 out, in, kernel
//!   f64 × out·in·k²         weights, [out][in][ky][kx]
//!   u8  has_batch_norm
//!   if set: f64 momentum, f64 epsilon,
//!           f64 × out each for gamma, beta, running mean, running variance
//!   u8  relu, u8 has_dropout, then f64 rate if set
//! ```

use super::{Layer, NetworkConfig, RakiNetwork};
use crate::codec::{put_f64, put_f64s, put_u32, Cursor};
use crate::error::{Error, Result};
use crate::num::{BatchNormState, ConvWeights};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"RAKINET\0";
pub const VERSION: u32 = 1;

pub fn encode_network(net: &RakiNetwork) -> Result<Vec<u8>> {
    let c = &net.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.num_layers, c.filter_size, c.num_filters, c.penultimate_filters] {
        put_u32(&mut out, v)?;
    }
    out.push(c.batch_norm as u8);
    out.push(c.dropout as u8);
    put_u32(&mut out, c.in_channels)?;
    put_u32(&mut out, c.out_channels)?;
    put_f64(&mut out, net.scale);
    for layer in &net.layers {
        let w = &layer.weights;
        put_u32(&mut out, w.out_channels)?;
        put_u32(&mut out, w.in_channels)?;
        put_u32(&mut out, w.kernel)?;
        put_f64s(&mut out, &w.data);
        match &layer.batch_norm {
            Some(bn) => {
                out.push(1);
                put_f64(&mut out, bn.momentum);
                put_f64(&mut out, bn.epsilon);
                for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                    put_f64s(&mut out, v);
                }
            }
            None => out.push(0),
        }
        out.push(layer.relu as u8);
        match layer.dropout {
            Some(rate) => {
                out.push(1);
                put_f64(&mut out, rate);
            }
            None => out.push(0),
        }
    }
    Ok(out)
}

fn flag(cur: &mut Cursor) -> Result<bool> {
    match cur.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::Format(format!("bad flag byte {v}"))),
    }
}

pub fn decode_network(buf: &[u8]) -> Result<RakiNetwork> {
    let mut cur = Cursor::new(buf);
    if cur.take(8)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let config = NetworkConfig {
        num_layers: cur.u32()?,
        filter_size: cur.u32()?,
        num_filters: cur.u32()?,
        penultimate_filters: cur.u32()?,
        batch_norm: flag(&mut cur)?,
        dropout: flag(&mut cur)?,
        in_channels: cur.u32()?,
        out_channels: cur.u32()?,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let scale = cur.f64()?;
    let shapes = config.layer_shapes();
    let mut layers = Vec::with_capacity(shapes.len());
    for (l, &(o, i, k)) in shapes.iter().enumerate() {
        let stored = (cur.u32()?, cur.u32()?, cur.u32()?);
        if stored != (o, i, k) {
            return Err(Error::Format(format!("layer {l} is {stored:?}, config implies {:?}", (o, i, k))));
        }
        let mut weights = ConvWeights::zeros(o, i, k)?;
        weights.data = cur.f64s(o * i * k * k)?;
        let batch_norm = if flag(&mut cur)? {
            let mut bn = BatchNormState::new(o);
            bn.momentum = cur.f64()?;
            bn.epsilon = cur.f64()?;
            bn.gamma = cur.f64s(o)?;
            bn.beta = cur.f64s(o)?;
            bn.running_mean = cur.f64s(o)?;
            bn.running_var = cur.f64s(o)?;
            Some(bn)
        } else {
            None
        };
        let relu = flag(&mut cur)?;
        let dropout = if flag(&mut cur)? { Some(cur.f64()?) } else { None };
        layers.push(Layer { weights, batch_norm, relu, dropout });
    }
    if cur.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", cur.remaining())));
    }
    Ok(RakiNetwork { config, layers, scale })
}

pub fn write_network(path: impl AsRef<Path>, net: &RakiNetwork) -> Result<()> {
    std::fs::write(path, encode_network(net)?)?;
    Ok(())
}

pub fn read_network(path: impl AsRef<Path>) -> Result<RakiNetwork> {
    decode_network(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_network, tests::cfg};
    use crate::num::conv::tests::random_tensor;
    use crate::rng::Rng;

    fn sample_net() -> RakiNetwork {
        let mut c = cfg(4, 3, 4, 6, 2);
        c.batch_norm = true;
        c.dropout = true;
        let mut net = build_network(&c, &mut Rng::new(8)).unwrap();
        net.scale = 12.5;
        if let Some(bn) = net.layers[0].batch_norm.as_mut() {
            bn.running_mean[1] = 0.25;
            bn.running_var[2] = 3.0;
        }
        net
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net();
        let bytes = encode_network(&net).unwrap();
        let back = decode_network(&bytes).unwrap();
        assert_eq!(back, net);
        let x = random_tensor(&mut Rng::new(1), 4, 8, 8);
        assert_eq!(net.infer(&x).unwrap().data, back.infer(&x).unwrap().data);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let net = sample_net();
        write_network(&path, &net).unwrap();
        assert_eq!(read_network(&path).unwrap(), net);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode_network(&sample_net()).unwrap();
        assert!(decode_network(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_network(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_network(&magic).is_err());
        let mut shape = bytes;
        // first layer's out-channel count follows the 46-byte header
        shape[46] ^= 1;
        assert!(decode_network(&shape).is_err());
    }
}
