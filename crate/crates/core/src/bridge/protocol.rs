//! Line-delimited JSON messages exchanged with a model server.
//!
//! Request:  `{"id": <u64>, "op": "<op>", "payload": {...}}`
//! Response: `{"id": <u64>, "ok": true, "payload": {...}}` or
//!           `{"id": <u64>, "ok": false, "error": "<message>"}`
//!
//! Tensors travel as `{"shape": [d0, d1, ...], "data": "<base64>"}` where
//! the data is the little-endian IEEE-754 binary32 encoding of the values
//! in row-major order. Images use shape `[height, width, 3]`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const OP_ENCODE_TEXT: &str = "encode_text";
pub const OP_ENCODE_IMAGE: &str = "encode_image";
pub const OP_GENERATE: &str = "generate";
pub const OP_GENERATE_WITH_GRAD: &str = "generate_with_grad";
pub const OP_INFO: &str = "info";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl WireTensor {
    /// Encodes values as f32. Values outside the f32 range become infinities.
    pub fn encode(values: &[f64], shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                format!("{expected} values for shape {shape:?}"),
                values.len(),
            ));
        }
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Ok(WireTensor {
            shape,
            data: STANDARD.encode(bytes),
        })
    }

    pub fn encode_f32(values: &[f32], shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                format!("{expected} values for shape {shape:?}"),
                values.len(),
            ));
        }
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Ok(WireTensor {
            shape,
            data: STANDARD.encode(bytes),
        })
    }

    pub fn decode_f32(&self) -> Result<Vec<f32>> {
        let bytes = STANDARD
            .decode(self.data.as_bytes())
            .map_err(|e| Error::Protocol(format!("tensor data is not base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Protocol(format!(
                "tensor byte length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let expected = self
            .shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::Protocol(format!("tensor shape {:?} overflows", self.shape)))?;
        if expected != values.len() {
            return Err(Error::Protocol(format!(
                "tensor shape {:?} declares {expected} elements but data holds {}",
                self.shape,
                values.len()
            )));
        }
        Ok(values)
    }

    /// Decodes and upcasts to f64.
    pub fn decode(&self) -> Result<Vec<f64>> {
        Ok(self.decode_f32()?.into_iter().map(f64::from).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn success(id: u64, payload: Value) -> Self {
        Response {
            id,
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn failure(id: u64, message: impl Into<String>) -> Self {
        Response {
            id,
            ok: false,
            payload: None,
            error: Some(message.into()),
        }
    }
}

/// Cutout settings sent with `generate_with_grad`. `seed` selects the
/// windows; the client derives it from its policy and the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireCutouts {
    pub num_cuts: usize,
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub resize_to: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub feature_dim: usize,
    pub latent_total: usize,
    /// `[width, height]` of generated images.
    pub image_resolution: [usize; 2],
    #[serde(default)]
    pub hidden_layers: Option<usize>,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub models: serde_json::Map<String, Value>,
}

/// Serializes a message as one line (without the trailing newline).
pub fn to_line<T: Serialize>(message: &T) -> Result<String> {
    Ok(serde_json::to_string(message)?)
}
