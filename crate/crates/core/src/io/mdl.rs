//! MDL1: trained network parameters.
//!
//! ```text
//! "MDL1"  u32 version=1  u32 n  u32 J  u32 K  u32 layer_count
//! per layer:
//!   u8 kind (0 conv, 1 locally connected)
//!   u32 in_channels  u32 out_channels  u32 kernel
//!   u8 activation (0 identity, 1 relu)
//!   i32 shortcut (-1 none, -2 network input, >= 0 source layer)
//!   u64 weight_count  f64 weights...
//!   u64 bias_count    f64 biases...
//! ```
//! Little-endian throughout. The init seed is not stored; decoded models carry seed 0.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic::{read_file, write_atomic};
use crate::io::reader::ByteReader;
use crate::net::{Activation, Layer, LayerKind, LayerSpec, NetworkParams, ShortcutSource};

pub const MDL_MAGIC: [u8; 4] = *b"MDL1";
pub const MDL_VERSION: u32 = 1;

const SHORTCUT_NONE: i32 = -1;
const SHORTCUT_INPUT: i32 = -2;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
}

pub fn encode_mdl(params: &NetworkParams) -> Result<Vec<u8>> {
    params.validate()?;
    let (n, rows, cols) = params.input_shape;
    let mut out = Vec::with_capacity(24 + 8 * params.parameter_count() + 40 * params.layers.len());
    out.extend_from_slice(&MDL_MAGIC);
    out.extend_from_slice(&MDL_VERSION.to_le_bytes());
    for v in [n, rows, cols, params.layers.len()] {
        out.extend_from_slice(&u32_of(v, "header field")?.to_le_bytes());
    }
    for layer in &params.layers {
        let s = &layer.spec;
        out.push(match s.kind {
            LayerKind::Conv => 0,
            LayerKind::LocallyConnected => 1,
        });
        for v in [s.in_channels, s.out_channels, s.kernel] {
            out.extend_from_slice(&u32_of(v, "layer field")?.to_le_bytes());
        }
        out.push(match s.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
        let shortcut = match s.shortcut {
            None => SHORTCUT_NONE,
            Some(ShortcutSource::Input) => SHORTCUT_INPUT,
            Some(ShortcutSource::Layer(j)) => i32::try_from(j).map_err(|_| {
                Error::InvalidArgument(format!("shortcut source {j} does not fit in i32"))
            })?,
        };
        out.extend_from_slice(&shortcut.to_le_bytes());
        for values in [&layer.weights, &layer.bias] {
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_mdl(bytes: &[u8], path: &Path) -> Result<NetworkParams> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MDL_MAGIC)?;
    let version = r.u32("version")?;
    if version != MDL_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = r.u32("channels")? as usize;
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let kind = match r.u8("layer kind")? {
            0 => LayerKind::Conv,
            1 => LayerKind::LocallyConnected,
            k => return Err(r.corrupt(&format!("layer {i}: unknown kind {k}"))),
        };
        let in_channels = r.u32("in channels")? as usize;
        let out_channels = r.u32("out channels")? as usize;
        let kernel = r.u32("kernel")? as usize;
        let activation = match r.u8("activation")? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            a => return Err(r.corrupt(&format!("layer {i}: unknown activation {a}"))),
        };
        let shortcut = match r.i32("shortcut")? {
            SHORTCUT_NONE => None,
            SHORTCUT_INPUT => Some(ShortcutSource::Input),
            j if j >= 0 => Some(ShortcutSource::Layer(j as usize)),
            j => return Err(r.corrupt(&format!("layer {i}: invalid shortcut index {j}"))),
        };
        let mut arrays = [Vec::new(), Vec::new()];
        for (slot, what) in arrays.iter_mut().zip(["weights", "biases"]) {
            let len = r.u64(what)? as usize;
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| r.corrupt("array length overflows"))?,
                what,
            )?;
            *slot = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
        }
        let [weights, bias] = arrays;
        layers.push(Layer {
            spec: LayerSpec {
                kind,
                in_channels,
                out_channels,
                kernel,
                activation,
                shortcut,
            },
            weights,
            bias,
        });
    }
    if r.remaining() != 0 {
        return Err(r.corrupt(&format!(
            "{} trailing bytes after the last layer",
            r.remaining()
        )));
    }
    NetworkParams::new((n, rows, cols), layers, 0).map_err(|e| r.corrupt(&e.to_string()))
}

pub fn write_mdl(params: &NetworkParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mdl(params)?)
}

pub fn read_mdl(path: &Path) -> Result<NetworkParams> {
    decode_mdl(&read_file(path)?, path)
}
