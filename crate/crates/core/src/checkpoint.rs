//! Versioned JSON checkpoints of an [`SnnVit`].
//!
//! Tensors are stored as nested arrays whose nesting encodes the shape.
//! Loading checks every tensor against a freshly built model of the stored
//! config and re-validates the parameter invariants.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blocks::model::{ParamKind, ParamStore};
use crate::blocks::{ModelConfig, SnnVit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Last completed epoch, if the model was trained.
    pub epoch: Option<usize>,
    pub seed: u64,
    /// Lower bound the mixer diagonals were projected onto.
    pub diag_clamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SnnVit<f64>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u64,
    config: ModelConfig,
    params: BTreeMap<String, Value>,
    metadata: CheckpointMeta,
}

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::CorruptCheckpoint(msg.into()))
}

fn nest(shape: &[usize], data: &[f64]) -> Value {
    match shape.split_first() {
        None => Value::from(data[0]),
        Some((&n, rest)) => {
            let step = rest.iter().product::<usize>();
            Value::Array((0..n).map(|i| nest(rest, &data[i * step..(i + 1) * step])).collect())
        }
    }
}

fn flatten(v: &Value, shape: &[usize], out: &mut Vec<f64>) -> std::result::Result<(), String> {
    match (shape.split_first(), v) {
        (None, Value::Number(x)) => {
            out.push(x.as_f64().ok_or("number out of range")?);
            Ok(())
        }
        (Some((&n, rest)), Value::Array(items)) if items.len() == n => {
            items.iter().try_for_each(|it| flatten(it, rest, out))
        }
        (Some((&n, _)), Value::Array(items)) => Err(format!("expected {n} entries, found {}", items.len())),
        _ => Err("nesting does not match the expected shape".into()),
    }
}

impl Checkpoint {
    pub fn new(model: SnnVit<f64>, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|(n, t)| (n.clone(), nest(t.shape(), t.data())))
                .collect(),
            metadata: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        let version = raw.get("format_version").and_then(Value::as_u64);
        if version != Some(FORMAT_VERSION) {
            let found = match raw.get("format_version").or_else(|| raw.get("version")) {
                Some(v) => v.to_string(),
                None => "missing".into(),
            };
            return Err(Error::Migration(format!(
                "checkpoint format version {found} cannot be read by a version {FORMAT_VERSION} reader; \
                 re-export the model with the current tool"
            )));
        }
        let doc: Document = serde_json::from_value(raw).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        doc.config
            .validate()
            .map_err(|e| Error::CorruptCheckpoint(format!("stored config is invalid: {e}")))?;
        let template = SnnVit::<f64>::new(doc.config.clone(), 0)?;
        let mut params = ParamStore::new();
        for (name, expected) in template.params.iter() {
            let Some(v) = doc.params.get(name) else {
                return corrupt(format!("missing tensor {name}"));
            };
            let mut data = Vec::with_capacity(expected.len());
            flatten(v, expected.shape(), &mut data)
                .map_err(|e| Error::CorruptCheckpoint(format!("{name}: {e}")))?;
            params.insert(name.clone(), Tensor::new(expected.shape().to_vec(), data)?);
        }
        if let Some(extra) = doc.params.keys().find(|k| !template.params.contains(k)) {
            return corrupt(format!("unexpected tensor {extra}"));
        }
        validate_params(&params, doc.metadata.diag_clamp)?;
        Ok(Self {
            model: SnnVit {
                config: doc.config,
                params,
            },
            meta: doc.metadata,
        })
    }
}

fn validate_params(params: &ParamStore<f64>, clamp: f64) -> Result<()> {
    if !(clamp > 0.0) {
        return corrupt(format!("diagonal clamp {clamp} must be positive"));
    }
    for (name, t) in params.iter() {
        if !t.is_finite() {
            return corrupt(format!("{name} has non-finite entries"));
        }
        match ParamKind::of(name) {
            ParamKind::Mixer => {
                let n = t.shape()[0];
                for r in 0..n {
                    for c in r + 1..n {
                        if t.data()[r * n + c] != 0.0 {
                            return corrupt(format!("{name}[{r}][{c}] is above the diagonal but non-zero"));
                        }
                    }
                    let d = t.data()[r * n + r];
                    if d < clamp {
                        return corrupt(format!("{name}[{r}][{r}] = {d} is below the clamp {clamp}"));
                    }
                }
            }
            ParamKind::Scale if t.data().iter().any(|&a| a <= 0.0) => {
                return corrupt(format!("{name} must be positive"));
            }
            ParamKind::Buffer if name.ends_with(".rv") && t.data().iter().any(|&v| v < 0.0) => {
                return corrupt(format!("{name} holds a negative variance"));
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            SnnVit::new(ModelConfig::default(), 3).unwrap(),
            CheckpointMeta {
                epoch: Some(4),
                seed: 3,
                diag_clamp: 0.1,
            },
        )
    }

    fn edit(ck: &Checkpoint, f: impl FnOnce(&mut Value)) -> String {
        let mut v: Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn nesting_encodes_shape() {
        let v = nest(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(v.to_string(), "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
        let mut out = Vec::new();
        assert!(flatten(&v, &[3, 2], &mut out).is_err());
    }

    #[test]
    fn upper_mixer_entry_is_corrupt() {
        let text = edit(&sample(), |v| v["params"]["s0.b0.m_w"][0][1] = 0.25.into());
        let err = Checkpoint::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(ref m) if m.contains("above the diagonal")), "{err}");
    }

    #[test]
    fn invariant_violations_are_corrupt() {
        let ck = sample();
        let cases = [
            edit(&ck, |v| v["params"]["s0.b0.m_w"][2][2] = 0.01.into()),
            edit(&ck, |v| v["params"]["s0.b0.alpha"] = Value::from(-1.0)),
            edit(&ck, |v| v["params"]["s0.glsps.bn1.rv"][0] = Value::from(-0.5)),
            edit(&ck, |v| v["params"]["head.b"] = serde_json::json!([1.0])),
            edit(&ck, |v| {
                v["params"].as_object_mut().unwrap().remove("head.w");
            }),
            edit(&ck, |v| v["params"]["extra"] = serde_json::json!([1.0])),
        ];
        for text in cases {
            assert!(matches!(Checkpoint::from_json(&text), Err(Error::CorruptCheckpoint(_))));
        }
    }

    #[test]
    fn other_versions_need_migration() {
        let text = edit(&sample(), |v| v["format_version"] = 2.into());
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Migration(_))));
    }
}
