//! Single-file checkpoints: safetensors arrays under `branch/stage/layer` names, with the model
//! config and optional input normalization in the header metadata.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use tch::{Device, Kind, Tensor};

use crate::config::ModelConfig;
use crate::data::Normalization;
use crate::error::{NetError, Result};
use crate::model::MbhrNet;

pub const FORMAT: &str = "mbhr-net";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug)]
pub struct Checkpoint {
    pub model: MbhrNet,
    pub normalization: Option<Normalization>,
}

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.to_device(Device::Cpu).contiguous().flatten(0, -1);
    match t.kind() {
        Kind::Double => {
            let v = Vec::<f64>::try_from(&flat)?;
            Ok((Dtype::F64, v.iter().flat_map(|x| x.to_le_bytes()).collect()))
        }
        _ => {
            let v = Vec::<f32>::try_from(&flat.to_kind(Kind::Float))?;
            Ok((Dtype::F32, v.iter().flat_map(|x| x.to_le_bytes()).collect()))
        }
    }
}

pub fn save_checkpoint(model: &MbhrNet, normalization: Option<&Normalization>, path: &Path) -> Result<()> {
    let mut owned = Vec::new();
    for (name, t) in model.named_tensors() {
        let shape: Vec<usize> = t.size().iter().map(|&d| d as usize).collect();
        let (dtype, bytes) = tensor_bytes(&t)?;
        owned.push((name, dtype, shape, bytes));
    }
    let views = owned
        .iter()
        .map(|(n, d, s, b)| Ok((n.clone(), TensorView::new(*d, s.clone(), b).map_err(|e| ckpt_err(path, e))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT.to_string());
    meta.insert("version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("model_config".to_string(), serde_json::to_string(model.config()).expect("config serializes"));
    if let Some(n) = normalization {
        meta.insert("normalization".to_string(), serde_json::to_string(n).expect("stats serialize"));
    }
    let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| ckpt_err(path, e))?;
    std::fs::write(path, bytes).map_err(|source| NetError::Io { path: path.to_path_buf(), source })
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> NetError {
    NetError::Checkpoint { path: path.to_path_buf(), msg: msg.to_string() }
}

fn decode(view: &TensorView<'_>) -> Option<Tensor> {
    let shape: Vec<i64> = view.shape().iter().map(|&d| d as i64).collect();
    let t = match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = view.data().chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        Dtype::F64 => {
            let v: Vec<f64> = view.data().chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_slice(&v)
        }
        _ => return None,
    };
    Some(t.reshape(shape))
}

/// Stored config without materializing the weights.
pub fn read_checkpoint_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|source| NetError::Io { path: path.to_path_buf(), source })?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    header(path, meta.metadata()).map(|(c, _)| c)
}

fn header(path: &Path, meta: &Option<HashMap<String, String>>) -> Result<(ModelConfig, Option<Normalization>)> {
    let meta = meta.as_ref().ok_or_else(|| ckpt_err(path, "missing header metadata"))?;
    if meta.get("format").map(String::as_str) != Some(FORMAT) {
        return Err(ckpt_err(path, "not an mbhr-net checkpoint"));
    }
    let version = meta.get("version").cloned().unwrap_or_default();
    if version != FORMAT_VERSION {
        return Err(NetError::Version { path: path.to_path_buf(), found: version, supported: FORMAT_VERSION.into() });
    }
    let cfg = meta.get("model_config").ok_or_else(|| ckpt_err(path, "missing model_config"))?;
    let cfg: ModelConfig = serde_json::from_str(cfg).map_err(|e| ckpt_err(path, format!("model_config: {e}")))?;
    let norm = match meta.get("normalization") {
        Some(s) => Some(serde_json::from_str(s).map_err(|e| ckpt_err(path, format!("normalization: {e}")))?),
        None => None,
    };
    Ok((cfg, norm))
}

pub fn load_checkpoint(path: &Path, device: Device) -> Result<Checkpoint> {
    load(path, device, None)
}

/// Like [`load_checkpoint`], but fails unless the stored config equals `expected`.
pub fn load_checkpoint_as(path: &Path, expected: &ModelConfig, device: Device) -> Result<Checkpoint> {
    load(path, device, Some(expected))
}

fn load(path: &Path, device: Device, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| NetError::Io { path: path.to_path_buf(), source })?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let (cfg, normalization) = header(path, meta.metadata())?;
    if let Some(exp) = expected {
        if exp != &cfg {
            return Err(NetError::ConfigConflict {
                path: path.to_path_buf(),
                expected: serde_json::to_string(exp).expect("config serializes"),
                found: serde_json::to_string(&cfg).expect("config serializes"),
            });
        }
    }
    let model = MbhrNet::new(cfg, device)?;
    let vars = model.named_tensors();
    let wanted: HashSet<&str> = vars.iter().map(|(n, _)| n.as_str()).collect();
    if let Some(extra) = st.names().into_iter().find(|n| !wanted.contains(n)) {
        return Err(ckpt_err(path, format!("unexpected tensor {extra}")));
    }
    for (name, var) in &vars {
        let view = st.tensor(name).map_err(|_| ckpt_err(path, format!("missing tensor {name}")))?;
        let src = decode(&view).ok_or_else(|| ckpt_err(path, format!("{name}: unsupported dtype {:?}", view.dtype())))?;
        if src.size() != var.size() {
            return Err(ckpt_err(path, format!("{name}: shape {:?}, model expects {:?}", src.size(), var.size())));
        }
        let src = src.to_kind(var.kind()).to_device(device);
        tch::no_grad(|| {
            let mut v = var.shallow_clone();
            v.copy_(&src);
        });
    }
    Ok(Checkpoint { model, normalization })
}
