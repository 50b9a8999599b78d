//! `PIGANCKPT` checkpoint files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            9 bytes   "PIGANCKPT"
//! version          u32       1
//! metadata_len     u64
//! metadata         JSON (run configuration, iteration, ...)
//! network_count    u32
//! per network:
//!   name_len       u32, name (UTF-8)
//!   spec_len       u64, NetworkSpec JSON
//!   tensors        trainable tensors in layer order, then running statistics in layer order
//!   has_optimizer  u8 (0 or 1)
//!   optimizer      step u64, learning_rate f64, beta1 f64, beta2 f64, epsilon f64,
//!                  first moments, second moments (trainable order)
//! tensor:          rank u32, dims u64 x rank, data f64 x product(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::{LayerParams, Network, NetworkSpec, ParameterSet};
use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;
use crate::binio::{put_f64s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"PIGANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_JSON: u64 = 1 << 24;
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub network: Network,
    pub optimizer: Option<Adam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub networks: Vec<NamedNetwork>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&NamedNetwork> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<_> = self.networks.iter().map(|n| (n.name.as_str(), &n.network, n.optimizer.as_ref())).collect();
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &self.metadata, &entries)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_checkpoint(BufReader::new(File::open(path)?))
    }
}

fn put_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        put_u64(w, d as u64)?;
    }
    put_f64s(w, t.data())
}

fn get_tensor<R: Read>(r: &mut Reader<R>, want: &[usize]) -> Result<Tensor> {
    let at = r.offset();
    let rank = r.u32("tensor rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.len_u64("tensor dimension", MAX_ELEMENTS)?);
    }
    if shape != want {
        return Err(Error::Format { offset: at, detail: format!("tensor shape {shape:?}, expected {want:?}") });
    }
    let n = shape.iter().product();
    let data = r.f64s(n, "tensor data")?;
    Tensor::new(shape, data).map_err(|e| Error::Format { offset: at, detail: e.to_string() })
}

/// Writes the checkpoint layout described in the module docs.
pub fn write_checkpoint<W: Write>(
    w: &mut W,
    metadata: &serde_json::Value,
    networks: &[(&str, &Network, Option<&Adam>)],
) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    let meta = serde_json::to_vec(metadata)?;
    put_u64(w, meta.len() as u64)?;
    w.write_all(&meta)?;
    put_u32(w, networks.len() as u32)?;
    for (name, net, opt) in networks {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        let spec = serde_json::to_vec(net.spec())?;
        put_u64(w, spec.len() as u64)?;
        w.write_all(&spec)?;
        for layer in &net.params().layers {
            for t in &layer.trainable {
                put_tensor(w, t)?;
            }
        }
        for layer in &net.params().layers {
            for t in &layer.running {
                put_tensor(w, t)?;
            }
        }
        match opt {
            None => w.write_all(&[0])?,
            Some(adam) => {
                w.write_all(&[1])?;
                put_u64(w, adam.steps_taken())?;
                let c = adam.config;
                put_f64s(w, &[c.learning_rate, c.beta1, c.beta2, c.epsilon])?;
                let (m, v) = adam.moments();
                for t in m.iter().flatten().chain(v.iter().flatten()) {
                    put_tensor(w, t)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let mut r = Reader::new(reader);
    if r.bytes(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, detail: "not a PIGANCKPT file".into() });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let n = r.len_u64("metadata length", MAX_JSON)?;
    let at = r.offset();
    let metadata = serde_json::from_slice(&r.bytes(n, "metadata")?)
        .map_err(|e| Error::Format { offset: at, detail: format!("metadata: {e}") })?;
    let count = r.u32("network count")?;
    let mut networks = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.offset();
        let name = String::from_utf8(r.bytes(len, "name")?)
            .map_err(|_| Error::Format { offset: at, detail: "network name is not UTF-8".into() })?;
        let len = r.len_u64("spec length", MAX_JSON)?;
        let at = r.offset();
        let spec: NetworkSpec = serde_json::from_slice(&r.bytes(len, "spec")?)
            .map_err(|e| Error::Format { offset: at, detail: format!("network spec: {e}") })?;
        spec.layer_shapes().map_err(|e| Error::Format { offset: at, detail: e.to_string() })?;

        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let trainable = l.trainable_shapes().iter().map(|s| get_tensor(&mut r, s)).collect::<Result<_>>()?;
            layers.push(LayerParams { trainable, running: Vec::new() });
        }
        for (l, params) in spec.layers.iter().zip(layers.iter_mut()) {
            params.running = l.running_shapes().iter().map(|s| get_tensor(&mut r, s)).collect::<Result<_>>()?;
        }
        let params = ParameterSet { layers };
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("optimizer step")?;
                let h = r.f64s(4, "optimizer hyperparameters")?;
                let config = AdamConfig { learning_rate: h[0], beta1: h[1], beta2: h[2], epsilon: h[3] };
                let mut moments = [Vec::new(), Vec::new()];
                for m in moments.iter_mut() {
                    for layer in &params.layers {
                        let ts = layer.trainable.iter().map(|t| get_tensor(&mut r, t.shape())).collect::<Result<_>>()?;
                        m.push(ts);
                    }
                }
                let [first, second] = moments;
                Some(Adam::from_parts(config, step, first, second))
            }
            other => return Err(r.error(format!("invalid optimizer flag {other}"))),
        };
        let network = Network::from_parts(spec, params)?;
        networks.push(NamedNetwork { name, network, optimizer });
    }
    r.expect_end()?;
    Ok(Checkpoint { metadata, networks })
}
