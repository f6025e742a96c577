//! Model persistence: a JSON header (spec, parameter count, blob checksum)
//! next to a little-endian `f64` parameter blob. Loading re-validates the
//! checksum and the spec/parameter agreement.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{f64s_to_le_bytes, le_bytes_to_f64s, read_bytes, sha256_hex, write_bytes};
use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::nn::spec::ModelSpec;

const PARAMS_FILE: &str = "params.f64";
const HEADER_FILE: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    version: u32,
    kind: String,
    spec: ModelSpec,
    param_count: usize,
    params_file: String,
    /// sha256 of the parameter blob.
    checksum: String,
}

/// Stable content id of a model: sha256 over the compact spec JSON and the
/// parameter blob. Used as a cache key.
pub fn model_content_id(model: &Model) -> String {
    let spec_json = serde_json::to_vec(model.spec()).expect("model spec serialises");
    let blob = f64s_to_le_bytes(&model.params);
    sha256_hex(&[&spec_json, &blob])
}

/// Writes `model.json` + `params.f64` into `dir`.
pub fn save_model(dir: &Path, model: &Model) -> Result<()> {
    let blob = f64s_to_le_bytes(&model.params);
    let header = ModelHeader {
        version: 1,
        kind: "model".into(),
        spec: model.spec().clone(),
        param_count: model.param_count(),
        params_file: PARAMS_FILE.into(),
        checksum: sha256_hex(&[&blob]),
    };
    write_bytes(&dir.join(PARAMS_FILE), &blob)?;
    let json =
        serde_json::to_vec_pretty(&header).map_err(|e| Error::json("model header", e))?;
    write_bytes(&dir.join(HEADER_FILE), &json)
}

/// Loads a model directory written by [`save_model`], validating checksum
/// and parameter count.
pub fn load_model(dir: &Path) -> Result<Model> {
    let header_path = dir.join(HEADER_FILE);
    let header: ModelHeader = serde_json::from_slice(&read_bytes(&header_path)?)
        .map_err(|e| Error::json(header_path.display().to_string(), e))?;
    if header.version != 1 || header.kind != "model" {
        return Err(Error::corrupt(&header_path, "unsupported model header"));
    }
    let blob_path = dir.join(&header.params_file);
    let blob = read_bytes(&blob_path)?;
    let actual = sha256_hex(&[&blob]);
    if actual != header.checksum {
        return Err(Error::corrupt(
            &blob_path,
            format!("checksum mismatch: header {} vs blob {actual}", header.checksum),
        ));
    }
    let params = le_bytes_to_f64s(&blob)?;
    if params.len() != header.param_count {
        return Err(Error::corrupt(
            &blob_path,
            format!(
                "blob holds {} parameters, header declares {}",
                params.len(),
                header.param_count
            ),
        ));
    }
    Model::from_params(header.spec, params)
}
