use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, Dense, Dropout, Lstm, MaxPool1d, Rnn};
use super::{Layer, LayerKind, ModelGraph, NnError, Result, Tensor};

pub const MODEL_FORMAT: &str = "pricecast-model/1";

/// JSON form of a [`ModelGraph`]. Parameter data is base64 over
/// little-endian `f64` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub input_shape: Vec<usize>,
    pub rng_seed: u64,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<ParamBlob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shape: Vec<usize>,
    pub data: String,
}

impl ParamBlob {
    fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| NnError::Format(format!("bad base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(NnError::Format("parameter blob is not a whole number of f64".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(self.shape.clone(), values)
    }
}

impl LayerDocument {
    fn from_layer(layer: &Layer) -> Self {
        let mut doc = LayerDocument {
            kind: layer.kind(),
            stride: None,
            pool: None,
            rate: None,
            params: layer.params().into_iter().map(ParamBlob::encode).collect(),
        };
        match layer {
            Layer::Conv1d(c) => doc.stride = Some(c.stride),
            Layer::MaxPool1d(p) => {
                doc.pool = Some(p.pool);
                doc.stride = Some(p.stride);
            }
            Layer::Dropout(d) => doc.rate = Some(d.rate),
            _ => {}
        }
        doc
    }

    fn to_layer(&self) -> Result<Layer> {
        let params = self.params.iter().map(ParamBlob::decode).collect::<Result<Vec<_>>>()?;
        let want = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(NnError::Format(format!(
                    "{:?} needs {n} parameter tensors, found {}",
                    self.kind,
                    params.len()
                )))
            }
        };
        let field = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| NnError::Format(format!("{:?} is missing `{name}`", self.kind)))
        };
        let mut it = params.clone().into_iter();
        let layer = match self.kind {
            LayerKind::Conv1d => {
                want(2)?;
                Layer::Conv1d(Conv1d {
                    weight: it.next().unwrap(),
                    bias: it.next().unwrap(),
                    stride: field(self.stride, "stride")?,
                })
            }
            LayerKind::Maxpool1d => Layer::MaxPool1d(MaxPool1d {
                pool: field(self.pool, "pool")?,
                stride: field(self.stride, "stride")?,
            }),
            LayerKind::Dense => {
                want(2)?;
                Layer::Dense(Dense {
                    weight: it.next().unwrap(),
                    bias: it.next().unwrap(),
                })
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::Dropout => {
                let rate = self
                    .rate
                    .ok_or_else(|| NnError::Format("dropout is missing `rate`".into()))?;
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::InvalidRate(rate));
                }
                Layer::Dropout(Dropout { rate })
            }
            LayerKind::Lstm => {
                want(3)?;
                Layer::Lstm(Lstm {
                    w_input: it.next().unwrap(),
                    w_hidden: it.next().unwrap(),
                    bias: it.next().unwrap(),
                })
            }
            LayerKind::Rnn => {
                want(3)?;
                Layer::Rnn(Rnn {
                    w_input: it.next().unwrap(),
                    w_hidden: it.next().unwrap(),
                    bias: it.next().unwrap(),
                })
            }
        };
        Ok(layer)
    }
}

impl ModelGraph {
    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            input_shape: self.input_shape().to_vec(),
            rng_seed: self.rng_seed,
            layers: self.layers().iter().map(LayerDocument::from_layer).collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(NnError::Format(format!(
                "unsupported format `{}`, expected `{MODEL_FORMAT}`",
                doc.format
            )));
        }
        let layers = doc
            .layers
            .iter()
            .map(LayerDocument::to_layer)
            .collect::<Result<Vec<_>>>()?;
        ModelGraph::new(layers, doc.input_shape.clone(), doc.rng_seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        Self::from_document(&doc)
    }
}
