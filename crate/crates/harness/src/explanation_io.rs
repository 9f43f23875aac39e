//! Explanation maps on disk: a bare tensor block (`<stem>.tensor`, same
//! layout as checkpoint parameters) plus a JSON sidecar (`<stem>.json`)
//! holding `{method, class_index, config, tensor_file, shape}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use sanity_core::attribution::{BaseMethod, ExplanationMap, IgConfig, Method, NoiseConfig};
use sanity_core::Tensor;

use crate::checkpoint::{write_tensor_block, CheckpointError, Reader};
use crate::{HarnessError, Result};

fn ig_json(cfg: &IgConfig) -> Value {
    json!({
        "steps": cfg.steps,
        "baseline": if cfg.baseline.is_some() { "custom" } else { "zeros" },
    })
}

fn base_json(base: &BaseMethod) -> Value {
    match base {
        BaseMethod::IntegratedGradients(cfg) => json!({"method": base.name(), "config": ig_json(cfg)}),
        _ => json!({"method": base.name()}),
    }
}

fn noise_json(base: &BaseMethod, noise: &NoiseConfig) -> Value {
    json!({
        "base": base_json(base),
        "samples": noise.samples,
        "sigma_fraction": noise.sigma_fraction,
        "seed": noise.seed,
    })
}

/// Method parameters as JSON.
pub fn method_config(method: &Method) -> Value {
    match method {
        Method::IntegratedGradients(cfg) => ig_json(cfg),
        Method::SmoothGrad { base, noise } | Method::VarGrad { base, noise } => noise_json(base, noise),
        _ => json!({}),
    }
}

pub fn sidecar(map: &ExplanationMap, tensor_file: &str) -> Value {
    json!({
        "method": map.method.name(),
        "class_index": map.class_index,
        "config": method_config(&map.method),
        "tensor_file": tensor_file,
        "shape": map.values.shape(),
    })
}

/// Writes `<dir>/<stem>.tensor` and `<dir>/<stem>.json`; returns both paths.
pub fn save_explanation(map: &ExplanationMap, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let tensor_name = format!("{stem}.tensor");
    let tensor_path = dir.join(&tensor_name);
    let json_path = dir.join(format!("{stem}.json"));
    let mut bytes = Vec::new();
    write_tensor_block(&mut bytes, &map.values);
    fs::write(&tensor_path, bytes).map_err(|e| HarnessError::io(&tensor_path, e))?;
    let text = serde_json::to_string_pretty(&sidecar(map, &tensor_name))?;
    fs::write(&json_path, text + "\n").map_err(|e| HarnessError::io(&json_path, e))?;
    Ok((tensor_path, json_path))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let wrap = |source| HarnessError::Checkpoint {
        path: path.to_owned(),
        source,
    };
    let mut r = Reader::new(&bytes);
    let t = r.tensor_block().map_err(wrap)?;
    if r.remaining() != 0 {
        return Err(wrap(CheckpointError::TrailingBytes(r.remaining())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_tensor_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let map = ExplanationMap {
            values: Tensor::new(vec![1, 2, 2], vec![0.5, -1.0, 1e-300, 3.25]).unwrap(),
            method: Method::SmoothGrad {
                base: BaseMethod::Gradient,
                noise: NoiseConfig::default(),
            },
            class_index: 4,
        };
        let (t, j) = save_explanation(&map, dir.path(), "img7").unwrap();
        assert_eq!(load_tensor(&t).unwrap(), map.values);
        let v: Value = serde_json::from_str(&fs::read_to_string(j).unwrap()).unwrap();
        assert_eq!(v["method"], "smooth_grad");
        assert_eq!(v["class_index"], 4);
        assert_eq!(v["tensor_file"], "img7.tensor");
        assert_eq!(v["config"]["samples"], 25);
        assert_eq!(v["config"]["base"]["method"], "gradient");
    }
}
