//! Model and monitor files.
//!
//! A model file is a small container:
//!
//! ```text
//! b"DGMD"  version byte (0x01)  u32 header length (LE)
//! JSON header
//! f64 payload, little-endian
//! ```
//!
//! The header names the method, the feature normalization and everything
//! needed to interpret the payload. Monitors are plain JSON envelopes that
//! reference a model file by path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Normalization, Orientation};
use crate::gmm::{Component, CovFactor, CovarianceStructure, GmmModel};
use crate::linalg::Cholesky;
use crate::monitor::{CalibrationMeta, Monitor};
use crate::nflow::{FlowModel, FlowTopology};
use crate::ocsvm::{Kernel, KernelSpec, OcSvmModel};
use crate::scorer::{MonitorModel, ScorerModel};
use crate::similarity::{ApsModel, MfsModel};

pub const MODEL_MAGIC: &[u8; 4] = b"DGMD";
pub const MODEL_VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum Header {
    Aps {
        n: usize,
        d: usize,
    },
    Mfs {
        d: usize,
    },
    #[serde(rename = "ocsvm")]
    OcSvm {
        d: usize,
        n_support: usize,
        spec: KernelSpec,
        kernel: Kernel,
        nu: f64,
        rho: f64,
        n_train: usize,
    },
    Gmm {
        k: usize,
        d: usize,
        structure: CovarianceStructure,
        weights: Vec<f64>,
    },
    #[serde(rename = "nf")]
    Flow {
        topology: FlowTopology,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    normalization: Normalization,
    payload_len: usize,
    #[serde(flatten)]
    header: Header,
}

pub fn encode_model(model: &MonitorModel) -> Result<Vec<u8>> {
    let mut payload: Vec<f64> = Vec::new();
    let header = match &model.model {
        ScorerModel::Aps(m) => {
            payload.extend_from_slice(m.reference().as_slice());
            Header::Aps {
                n: m.reference().n(),
                d: m.dim(),
            }
        }
        ScorerModel::Mfs(m) => {
            payload.extend_from_slice(m.mean_vector());
            Header::Mfs { d: m.dim() }
        }
        ScorerModel::OcSvm(m) => {
            payload.extend_from_slice(m.support_vectors().as_slice());
            payload.extend_from_slice(m.alphas());
            Header::OcSvm {
                d: m.dim(),
                n_support: m.support_vectors().n(),
                spec: *m.spec(),
                kernel: *m.kernel(),
                nu: m.nu(),
                rho: m.rho(),
                n_train: m.n_train(),
            }
        }
        ScorerModel::Gmm(m) => {
            for c in m.components() {
                payload.extend_from_slice(&c.mean);
                match &c.factor {
                    CovFactor::Full(l) => payload.extend_from_slice(l.factor()),
                    CovFactor::Diagonal(sd) => payload.extend_from_slice(sd),
                }
            }
            Header::Gmm {
                k: m.k(),
                d: m.dim(),
                structure: m.structure(),
                weights: m.weights(),
            }
        }
        ScorerModel::Flow(m) => {
            payload = m.blob();
            Header::Flow { topology: m.topology() }
        }
    };
    let env = Envelope {
        normalization: model.normalization,
        payload_len: payload.len(),
        header,
    };
    let json = serde_json::to_vec(&env).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(9 + json.len() + 8 * payload.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<MonitorModel> {
    if bytes.len() < 9 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a driftguard model file".into()));
    }
    if bytes[4] != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", bytes[4])));
    }
    let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json = bytes
        .get(9..9 + hlen)
        .ok_or_else(|| Error::Format("truncated model header".into()))?;
    let env: Envelope = serde_json::from_slice(json).map_err(|e| Error::Format(format!("model header: {e}")))?;
    let raw = &bytes[9 + hlen..];
    if raw.len() != 8 * env.payload_len {
        return Err(Error::Format(format!(
            "model payload has {} bytes, header promises {}",
            raw.len(),
            8 * env.payload_len
        )));
    }
    let payload: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut cursor = Cursor { data: &payload, pos: 0 };
    let model = match env.header {
        Header::Aps { n, d } => {
            let reference = FeatureMatrix::new(n, d, cursor.take(n * d)?.to_vec())?;
            let norms = reference.rows().map(crate::features::norm2).collect();
            ScorerModel::Aps(ApsModel::from_parts(reference, norms)?)
        }
        Header::Mfs { d } => ScorerModel::Mfs(MfsModel::new(cursor.take(d)?.to_vec())?),
        Header::OcSvm {
            d,
            n_support,
            spec,
            kernel,
            nu,
            rho,
            n_train,
        } => {
            let sv = FeatureMatrix::new(n_support, d, cursor.take(n_support * d)?.to_vec())?;
            let alphas = cursor.take(n_support)?.to_vec();
            ScorerModel::OcSvm(OcSvmModel::from_parts(sv, alphas, rho, spec, kernel, nu, n_train)?)
        }
        Header::Gmm {
            k,
            d,
            structure,
            weights,
        } => {
            if weights.len() != k {
                return Err(Error::Format(format!("{} weights for {k} components", weights.len())));
            }
            let mut comps = Vec::with_capacity(k);
            for w in weights {
                let mean = cursor.take(d)?.to_vec();
                let factor = match structure {
                    CovarianceStructure::Full => CovFactor::Full(Cholesky::from_factor(cursor.take(d * d)?.to_vec(), d)?),
                    CovarianceStructure::Diagonal => {
                        let sd = cursor.take(d)?.to_vec();
                        if sd.iter().any(|s| !(*s > 0.0)) {
                            return Err(Error::Format("non-positive standard deviation".into()));
                        }
                        CovFactor::Diagonal(sd)
                    }
                };
                comps.push(Component::new(w, mean, factor));
            }
            ScorerModel::Gmm(GmmModel::new(structure, comps)?)
        }
        Header::Flow { topology } => ScorerModel::Flow(FlowModel::from_parts(&topology, cursor.take(env.payload_len)?)?),
    };
    if cursor.pos != payload.len() {
        return Err(Error::Format("model payload has trailing values".into()));
    }
    Ok(MonitorModel::new(model, env.normalization))
}

struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let s = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("model payload too short".into()))?;
        self.pos += n;
        Ok(s)
    }
}

pub fn save_model(model: &MonitorModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MonitorModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct MonitorFile {
    format: String,
    version: u32,
    /// Model path, relative to the monitor file's directory unless absolute.
    model: PathBuf,
    method: String,
    /// `null` stands for −∞ (monitor disabled).
    threshold: Option<f64>,
    orientation: Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationMeta>,
}

const MONITOR_FORMAT: &str = "driftguard-monitor";

/// Writes the monitor envelope to `path`, referencing `model_path` (which
/// must already hold the scorer's model file).
pub fn save_monitor(monitor: &Monitor, path: &Path, model_path: &Path) -> Result<()> {
    let file = MonitorFile {
        format: MONITOR_FORMAT.into(),
        version: 1,
        model: model_path.to_path_buf(),
        method: monitor.scorer.method().name().into(),
        threshold: monitor.threshold.is_finite().then_some(monitor.threshold),
        orientation: monitor.orientation,
        calibration: monitor.calibration.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_monitor(path: &Path) -> Result<Monitor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MonitorFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("monitor file: {e}")))?;
    if file.format != MONITOR_FORMAT || file.version != 1 {
        return Err(Error::Format(format!("unsupported monitor file {} v{}", file.format, file.version)));
    }
    let model_path = if file.model.is_absolute() {
        file.model.clone()
    } else {
        path.parent().unwrap_or(Path::new(".")).join(&file.model)
    };
    let scorer = load_model(&model_path)?;
    if scorer.method().name() != file.method {
        return Err(Error::Format(format!(
            "monitor expects a {} model, {} holds {}",
            file.method,
            model_path.display(),
            scorer.method()
        )));
    }
    Ok(Monitor {
        scorer,
        threshold: file.threshold.unwrap_or(f64::NEG_INFINITY),
        orientation: file.orientation,
        calibration: file.calibration,
    })
}
