//! Checkpoint container: a magic line, a one-line JSON header describing the
//! architecture and every blob, then the blobs as little-endian f32.
//! Blob offsets in the header are byte offsets from the end of the header line.

use std::fs;
use std::path::Path;

use gdce_core::models::ModelRole;
use gdce_core::nn::{Adam, AdamConfig, LayerKind, Network};
use gdce_core::train::{Best, EpochLog, TrainState};
use gdce_core::{Discriminator, Gdce, PerceptualExtractor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Result};

pub const MAGIC: &str = "GDCE-CHECKPOINT";
pub const VERSION: u32 = 1;

/// Role tags of training-state files, next to the three model roles.
pub const CLASSIFIER_STATE: &str = "classifier-state";
pub const GDCE_STATE: &str = "gdce-state";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobInfo {
    pub name: String,
    pub len: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub role: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerKind>,
    pub blobs: Vec<BlobInfo>,
    pub seed: u64,
    #[serde(default)]
    pub frozen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<usize>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

/// A parsed file: header plus blobs in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub blobs: Vec<Vec<f32>>,
}

impl Container {
    fn new(role: &str, net: &Network, seed: u64) -> Self {
        let (c, h, w) = net.input_shape();
        Self {
            header: Header {
                version: VERSION,
                role: role.to_owned(),
                input_shape: [c, h, w],
                layers: net.descriptor(),
                blobs: Vec::new(),
                seed,
                frozen: false,
                tap: None,
                meta: serde_json::Value::Null,
            },
            blobs: Vec::new(),
        }
    }

    fn push(&mut self, name: String, data: Vec<f32>) {
        let offset = self.blobs.iter().map(|b| b.len() * 4).sum();
        self.header.blobs.push(BlobInfo { name, len: data.len(), offset });
        self.blobs.push(data);
    }

    fn push_all<'a>(&mut self, prefix: &str, bufs: impl IntoIterator<Item = &'a [f32]>) {
        for (i, b) in bufs.into_iter().enumerate() {
            self.push(format!("{prefix}.{i}"), b.to_vec());
        }
    }

    /// Blobs whose name starts with `prefix.`, in order.
    fn group(&self, prefix: &str) -> Vec<Vec<f32>> {
        let p = format!("{prefix}.");
        self.header
            .blobs
            .iter()
            .zip(&self.blobs)
            .filter(|(info, _)| info.name.starts_with(&p))
            .map(|(_, b)| b.clone())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let mut out = format!("{MAGIC}\n{header}\n").into_bytes();
        for b in &self.blobs {
            out.extend(b.iter().flat_map(|v| v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| DataError::Checkpoint(path.to_owned(), m);
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        if lines.next() != Some(MAGIC.as_bytes()) {
            return Err(bad("not a checkpoint file".into()));
        }
        let header_line = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let body = lines.next().ok_or_else(|| bad("truncated after header".into()))?;
        let raw: serde_json::Value = serde_json::from_slice(header_line).map_err(|e| bad(format!("header: {e}")))?;
        let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| bad("header has no version".into()))?;
        if version != u64::from(VERSION) {
            return Err(DataError::Version(path.to_owned(), version as u32));
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| bad(format!("header: {e}")))?;
        let expected: usize = header.blobs.iter().map(|b| b.len * 4).sum();
        if body.len() != expected {
            return Err(bad(format!("expected {expected} bytes of weights, found {}", body.len())));
        }
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for info in &header.blobs {
            let end = info.offset + info.len * 4;
            let chunk = body.get(info.offset..end).ok_or_else(|| bad(format!("blob {} out of bounds", info.name)))?;
            blobs.push(chunk.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
        }
        Ok(Self { header, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    fn expect_role(&self, path: &Path, role: &str) -> Result<()> {
        if self.header.role != role {
            return Err(DataError::Role {
                path: path.to_owned(),
                expected: role.to_owned(),
                found: self.header.role.clone(),
            });
        }
        Ok(())
    }

    fn network(&self, path: &Path, prefix: &str) -> Result<Network> {
        let [c, h, w] = self.header.input_shape;
        Network::from_parts(&self.header.layers, (c, h, w), self.group(prefix))
            .map_err(|e| DataError::Checkpoint(path.to_owned(), e.to_string()))
    }
}

fn model_container(role: ModelRole, net: &Network, seed: u64) -> Container {
    let mut c = Container::new(role.name(), net, seed);
    c.push_all("param", net.params());
    c
}

fn core_err(path: &Path) -> impl Fn(gdce_core::Error) -> DataError + '_ {
    move |e| DataError::Checkpoint(path.to_owned(), e.to_string())
}

pub fn save_gdce(path: &Path, gdce: &Gdce, seed: u64) -> Result<()> {
    model_container(ModelRole::Gdce, gdce.network(), seed).save(path)
}

pub fn load_gdce(path: &Path) -> Result<Gdce> {
    let c = Container::load(path)?;
    c.expect_role(path, ModelRole::Gdce.name())?;
    Gdce::from_network(c.network(path, "param")?).map_err(core_err(path))
}

pub fn save_discriminator(path: &Path, disc: &Discriminator, seed: u64) -> Result<()> {
    let mut c = model_container(ModelRole::Discriminator, disc.network(), seed);
    c.header.frozen = disc.is_frozen();
    c.save(path)
}

pub fn load_discriminator(path: &Path) -> Result<Discriminator> {
    let c = Container::load(path)?;
    c.expect_role(path, ModelRole::Discriminator.name())?;
    Discriminator::from_network(c.network(path, "param")?, c.header.frozen).map_err(core_err(path))
}

pub fn save_perceptual(path: &Path, v: &PerceptualExtractor, seed: u64) -> Result<()> {
    let mut c = model_container(ModelRole::Perceptual, v.network(), seed);
    c.header.frozen = true;
    c.header.tap = Some(v.tap());
    c.save(path)
}

pub fn load_perceptual(path: &Path) -> Result<PerceptualExtractor> {
    let c = Container::load(path)?;
    c.expect_role(path, ModelRole::Perceptual.name())?;
    let tap = c.header.tap.ok_or_else(|| DataError::Checkpoint(path.to_owned(), "no tap index".into()))?;
    PerceptualExtractor::from_network(c.network(path, "param")?, tap).map_err(core_err(path))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateMeta {
    epoch: usize,
    adam: AdamConfig,
    adam_step: u64,
    log: Vec<EpochLog>,
    best: Option<(usize, f64)>,
}

/// Save a resumable training state. `net` exposes the model's network.
pub fn save_state<M>(
    path: &Path,
    role: &str,
    state: &TrainState<M>,
    seed: u64,
    net: impl Fn(&M) -> &Network,
) -> Result<()> {
    let mut c = Container::new(role, net(&state.model), seed);
    c.push_all("model", net(&state.model).params());
    c.push_all("adam_m", state.adam.m.iter().map(Vec::as_slice));
    c.push_all("adam_v", state.adam.v.iter().map(Vec::as_slice));
    if let Some(b) = &state.best {
        c.push_all("best", net(&b.model).params());
    }
    let meta = StateMeta {
        epoch: state.epoch,
        adam: state.adam.config,
        adam_step: state.adam.step,
        log: state.log.clone(),
        best: state.best.as_ref().map(|b| (b.epoch, b.worst_group)),
    };
    c.header.meta = serde_json::to_value(meta).expect("state serializes");
    c.save(path)
}

/// Load a training state written by [`save_state`]; `build` wraps each network.
pub fn load_state<M>(
    path: &Path,
    role: &str,
    build: impl Fn(Network) -> gdce_core::Result<M>,
) -> Result<TrainState<M>> {
    let c = Container::load(path)?;
    c.expect_role(path, role)?;
    let meta: StateMeta = serde_json::from_value(c.header.meta.clone())
        .map_err(|e| DataError::Checkpoint(path.to_owned(), format!("state metadata: {e}")))?;
    let model = build(c.network(path, "model")?).map_err(core_err(path))?;
    let best = match meta.best {
        Some((epoch, worst_group)) => {
            Some(Best { epoch, worst_group, model: build(c.network(path, "best")?).map_err(core_err(path))? })
        }
        None => None,
    };
    let adam = Adam { config: meta.adam, step: meta.adam_step, m: c.group("adam_m"), v: c.group("adam_v") };
    if adam.m.len() != c.group("model").len() || adam.v.len() != adam.m.len() {
        return Err(DataError::Checkpoint(path.to_owned(), "optimizer moments do not match the model".into()));
    }
    Ok(TrainState { model, adam, epoch: meta.epoch, best, log: meta.log })
}

/// Hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use gdce_core::models::GdceConfig;
    use gdce_core::train::{gdce_state, TrainConfig};
    use gdce_core::Tensor;

    use super::*;

    fn small() -> Gdce {
        let cfg = GdceConfig { layers: 2, conv_channels: 4, iterations: 3, hidden: [8, 4], image_size: 16 };
        Gdce::new(&cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        let g = small();
        save_gdce(&p, &g, 7).unwrap();
        let back = load_gdce(&p).unwrap();
        let x = Tensor::new([2, 1, 16, 16], (0..512).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
        assert_eq!(g.network().infer(&x).unwrap(), back.network().infer(&x).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        save_gdce(&p, &small(), 0).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_gdce(&p).unwrap_err();
        assert!(err.to_string().contains("bytes of weights"), "{err}");
    }

    #[test]
    fn gdce_is_not_a_discriminator() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        save_gdce(&p, &small(), 0).unwrap();
        assert!(matches!(load_discriminator(&p), Err(DataError::Role { .. })));
    }

    #[test]
    fn unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ckpt");
        save_gdce(&p, &small(), 0).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let key = b"\"version\":1";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap();
        bytes[at + key.len() - 1] = b'9';
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_gdce(&p), Err(DataError::Version(_, 9))));
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ckpt");
        let mut state = gdce_state(small(), &TrainConfig::default()).unwrap();
        state.adam.step = 3;
        state.adam.m[0][0] = 0.25;
        save_state(&p, GDCE_STATE, &state, 1, |g: &Gdce| g.network()).unwrap();
        let back = load_state(&p, GDCE_STATE, Gdce::from_network).unwrap();
        assert_eq!(back, state);
    }
}
