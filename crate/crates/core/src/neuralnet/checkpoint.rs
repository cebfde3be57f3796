//! `BVEQ` parameter files: the shared envelope around a JSON description of
//! the head and layer shapes, then each layer's flags, `f64` weights
//! (row-major) and biases.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, Mlp, NetError, QHead, QNetwork};
use crate::binfmt::{EnvelopeReader, EnvelopeWriter};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BVEQ";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    head: QHead,
    num_actions: usize,
    /// `(outputs, inputs)` per layer.
    shapes: Vec<(usize, usize)>,
}

pub fn checkpoint_bytes(net: &QNetwork) -> Vec<u8> {
    let mlp = net.network();
    let meta = Meta {
        head: net.head(),
        num_actions: net.num_actions(),
        shapes: mlp.layers().iter().map(|l| l.weights.dim()).collect(),
    };
    let mut w = EnvelopeWriter::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.blob(serde_json::to_string(&meta).unwrap().as_bytes());
    for layer in mlp.layers() {
        w.u8(layer.train_weights as u8 | (layer.train_bias as u8) << 1);
        layer.weights.iter().for_each(|&x| w.f64(x));
        layer.bias.iter().for_each(|&x| w.f64(x));
    }
    w.finish()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<QNetwork, NetError> {
    let mut r = EnvelopeReader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let meta: Meta = serde_json::from_slice(r.blob()?).map_err(|e| NetError::Checkpoint(format!("meta: {e}")))?;
    let mut layers = Vec::with_capacity(meta.shapes.len());
    for &(out, inp) in &meta.shapes {
        let flags = r.u8()?;
        let w = (0..out * inp).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let b = (0..out).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let mut layer = Dense::new(Array2::from_shape_vec((out, inp), w).unwrap(), Array1::from(b))?;
        layer.train_weights = flags & 1 != 0;
        layer.train_bias = flags & 2 != 0;
        layers.push(layer);
    }
    r.expect_end()?;
    QNetwork::from_mlp(Mlp::from_layers(layers)?, meta.head, meta.num_actions)
}

pub fn save_checkpoint(net: &QNetwork, path: impl AsRef<Path>) -> Result<(), NetError> {
    std::fs::write(path, checkpoint_bytes(net)).map_err(|e| NetError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<QNetwork, NetError> {
    let bytes = std::fs::read(path).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binfmt::EnvelopeError;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = QNetwork::mlp(50, 3, &[56, 56], &mut rng);
        net.network_mut().layers_mut()[0].train_bias = false;
        let bytes = checkpoint_bytes(&net);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(checkpoint_bytes(&back), bytes);
        let cut = &bytes[..bytes.len() - 1];
        assert_eq!(checkpoint_from_bytes(cut), Err(NetError::Envelope(EnvelopeError::ChecksumMismatch)));
    }
}
