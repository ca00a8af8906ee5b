//! Residual 1D CNN for spectrum classification and its checkpoint format.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Tensor};

pub const INPUT_LENGTH: usize = 467;
/// Parameter total reported for the original network, kept for comparison.
pub const REPORTED_PARAM_COUNT: usize = 277_236;
pub const STAGE_FILTERS: [usize; 4] = [16, 32, 64, 128];
pub const BLOCKS_PER_STAGE: usize = 2;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CRNM";
const CHECKPOINT_VERSION: u16 = 1;
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One sigmoid unit, P(cancer).
    Type,
    /// Four softmax units in subtype order.
    Subtype,
}

impl Head {
    pub fn n_outputs(self) -> usize {
        match self {
            Head::Type => 1,
            Head::Subtype => 4,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Head::Type => 2,
            Head::Subtype => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Head::Type => "type",
            Head::Subtype => "subtype",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type" => Ok(Head::Type),
            "subtype" => Ok(Head::Subtype),
            other => Err(Error::InvalidParameter(format!(
                "unknown head `{other}` (type|subtype)"
            ))),
        }
    }
}

fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv1d {
        in_channels,
        out_channels,
        kernel,
        stride,
    }
}

/// Layers shared by both heads, ending with the last post-residual ReLU.
pub fn trunk_specs() -> Vec<LayerSpec> {
    let mut layers = vec![conv(1, STAGE_FILTERS[0], 7, 2), LayerSpec::Relu];
    let mut channels = STAGE_FILTERS[0];
    for (stage, &filters) in STAGE_FILTERS.iter().enumerate() {
        for block in 0..BLOCKS_PER_STAGE {
            let down = stage > 0 && block == 0;
            let stride = if down { 2 } else { 1 };
            layers.push(LayerSpec::ResidualAdd {
                body: vec![
                    conv(channels, filters, 3, stride),
                    LayerSpec::Relu,
                    conv(filters, filters, 3, 1),
                ],
                projection: down.then(|| Box::new(conv(channels, filters, 1, 2))),
            });
            layers.push(LayerSpec::Relu);
            channels = filters;
        }
    }
    layers
}

pub fn carenet_specs(head: Head) -> Vec<LayerSpec> {
    let mut layers = trunk_specs();
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense {
        inputs: STAGE_FILTERS[3],
        outputs: head.n_outputs(),
    });
    layers.push(match head {
        Head::Type => LayerSpec::Sigmoid,
        Head::Subtype => LayerSpec::Softmax,
    });
    layers
}

/// Serialized description of a model's graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub head: Head,
    pub input_length: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone)]
pub struct CarenetModel {
    pub head: Head,
    pub net: Network<f32>,
}

/// He-normal initialised model; the same seed gives the same weights.
pub fn build_carenet(head: Head, seed: u64) -> Result<CarenetModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::from_specs(&carenet_specs(head), (1, INPUT_LENGTH), &mut rng)?;
    Ok(CarenetModel { head, net })
}

pub fn count_params(model: &CarenetModel) -> usize {
    model.net.param_count()
}

impl CarenetModel {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            head: self.head,
            input_length: self.net.input_shape().1,
            layers: self.net.specs(),
        }
    }

    /// Index of the pooling layer; its input is the last convolutional
    /// feature map.
    pub fn pool_index(&self) -> usize {
        self.net
            .layers()
            .iter()
            .position(|l| matches!(l.spec(), LayerSpec::GlobalAvgPool))
            .expect("carenet has a pooling layer")
    }

    /// Index of the output activation; the layer before it yields logits.
    pub fn output_index(&self) -> usize {
        self.net.len() - 1
    }

    /// Output probabilities, one row per spectrum.
    pub fn predict<R: AsRef<[f32]>>(&self, spectra: &[R]) -> Result<Vec<Vec<f32>>> {
        let mut net = self.net.clone();
        let mut out = Vec::with_capacity(spectra.len());
        for chunk in spectra.chunks(INFERENCE_CHUNK) {
            let x = Tensor::from_rows(chunk)?;
            let y = net.forward(&x, false)?;
            if !y.is_finite() {
                return Err(Error::Numerical("model produced non-finite outputs".into()));
            }
            out.extend(y.sample_rows());
        }
        Ok(out)
    }
}

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub fold: Option<usize>,
    pub epoch: usize,
    #[serde(default)]
    pub dev_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    architecture: Architecture,
    meta: CheckpointMeta,
    n_params: usize,
}

/// `"CRNM"`, u16 version, u32 header length, JSON header, little-endian
/// f32 parameters, CRC32 of everything before it.
pub fn checkpoint_bytes(model: &CarenetModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let params = model.net.flat_params();
    let header = serde_json::to_vec(&CheckpointHeader {
        architecture: model.architecture(),
        meta: meta.clone(),
        n_params: params.len(),
    })?;
    let mut out = Vec::with_capacity(14 + header.len() + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(CarenetModel, CheckpointMeta)> {
    if bytes.len() < 14 {
        return Err(Error::Format("checkpoint shorter than its header".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum(
            "checkpoint CRC32 mismatch (truncated or corrupt)".into(),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let header_end = 10 + hlen;
    if header_end > body.len() {
        return Err(Error::Format("checkpoint header overruns the file".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[10..header_end])?;
    let blob = &body[header_end..];
    if blob.len() != 4 * header.n_params {
        return Err(Error::Format(format!(
            "checkpoint declares {} parameters but holds {} bytes",
            header.n_params,
            blob.len()
        )));
    }
    let arch = header.architecture;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::from_specs(&arch.layers, (1, arch.input_length), &mut rng)?;
    let params: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    net.set_flat_params(&params)?;
    Ok((
        CarenetModel {
            head: arch.head,
            net,
        },
        header.meta,
    ))
}

pub fn save_checkpoint(model: &CarenetModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CarenetModel, CheckpointMeta)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and insists on the given head.
pub fn load_checkpoint_for(path: &Path, head: Head) -> Result<(CarenetModel, CheckpointMeta)> {
    let (model, meta) = load_checkpoint(path)?;
    if model.head != head {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint has a {} head, expected {}",
            model.head, head
        )));
    }
    if model.net.specs() != carenet_specs(head) {
        return Err(Error::ArchitectureMismatch(
            "checkpoint graph differs from the reference model".into(),
        ));
    }
    Ok((model, meta))
}
