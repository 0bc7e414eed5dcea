use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::protocol::*;
use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::latent::{LatentCode, LatentShape};
use crate::objective::{
    CutoutPolicy, Encoder, FeatureVector, FitnessFunction, Generator, Objective,
};

/// Where the model server lives: `tcp://host:port` or `stdio:<command>`
/// (the command is split on whitespace and spawned as a child process).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(Error::Config("empty tcp endpoint address".into()));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("empty stdio endpoint command".into()));
            }
            return Ok(Endpoint::Stdio(argv));
        }
        Err(Error::Config(format!(
            "bridge endpoint must start with tcp:// or stdio:, got {s:?}"
        )))
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: u64,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// One connection to a model server. Requests are serialized: a call holds
/// the connection until its response arrives.
pub struct BridgeClient {
    endpoint: String,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("endpoint", &self.endpoint)
            .finish()
    }
}

impl BridgeClient {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Protocol(format!("cannot connect to {addr}: {e}")))?;
                let reader = BufReader::new(stream.try_clone()?);
                Ok(BridgeClient::from_parts(
                    endpoint.to_string(),
                    Box::new(reader),
                    Box::new(BufWriter::new(stream)),
                    None,
                ))
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::Protocol(format!("cannot spawn {:?}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(BridgeClient::from_parts(
                    endpoint.to_string(),
                    Box::new(BufReader::new(stdout)),
                    Box::new(BufWriter::new(stdin)),
                    Some(child),
                ))
            }
        }
    }

    /// Client over arbitrary streams, e.g. an in-process server.
    pub fn from_streams(
        name: impl Into<String>,
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        BridgeClient::from_parts(name.into(), Box::new(reader), Box::new(writer), None)
    }

    fn from_parts(
        endpoint: String,
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Self {
        BridgeClient {
            endpoint,
            conn: Mutex::new(Connection {
                reader,
                writer,
                child,
                next_id: 1,
            }),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends one request and waits for its response payload.
    pub fn call(&self, op: &str, payload: Value) -> Result<Value> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let id = conn.next_id;
        conn.next_id += 1;
        let line = to_line(&Request {
            id,
            op: op.to_string(),
            payload,
        })?;
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.write_all(b"\n")?;
        conn.writer.flush()?;

        let mut reply = String::new();
        if conn.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Protocol(format!(
                "{} closed the connection during {op}",
                self.endpoint
            )));
        }
        let response: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response to {op}: {e}")))?;
        if response.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if !response.ok {
            return Err(Error::Remote(
                response.error.unwrap_or_else(|| format!("{op} failed")),
            ));
        }
        response
            .payload
            .ok_or_else(|| Error::Protocol(format!("{op} response has no payload")))
    }

    fn tensor_field(payload: &Value, field: &str) -> Result<WireTensor> {
        let value = payload
            .get(field)
            .ok_or_else(|| Error::Protocol(format!("response lacks field {field:?}")))?;
        serde_json::from_value(value.clone())
            .map_err(|e| Error::Protocol(format!("field {field:?} is not a tensor: {e}")))
    }

    pub fn info(&self) -> Result<ServerInfo> {
        let payload = self.call(OP_INFO, json!({}))?;
        serde_json::from_value(payload)
            .map_err(|e| Error::Protocol(format!("bad info payload: {e}")))
    }

    pub fn encode_text(&self, text: &str) -> Result<FeatureVector> {
        if text.is_empty() {
            return Err(Error::Config("cannot encode empty text".into()));
        }
        let payload = self.call(OP_ENCODE_TEXT, json!({ "text": text }))?;
        FeatureVector::new(Self::tensor_field(&payload, "features")?.decode()?)
    }

    pub fn encode_image(&self, image: &ImageTensor) -> Result<FeatureVector> {
        let tensor = WireTensor::encode(image.values(), vec![image.height(), image.width(), 3])?;
        let payload = self.call(OP_ENCODE_IMAGE, json!({ "image": tensor }))?;
        FeatureVector::new(Self::tensor_field(&payload, "features")?.decode()?)
    }

    pub fn generate(&self, latent: &LatentCode) -> Result<ImageTensor> {
        let shape = latent.shape();
        let tensor = WireTensor::encode(&latent.flatten(), vec![shape.total()])?;
        let payload = self.call(
            OP_GENERATE,
            json!({
                "latent": tensor,
                "hidden_layers": shape.num_hidden_layers,
                "latent_dim": shape.latent_dim,
            }),
        )?;
        decode_image(&Self::tensor_field(&payload, "image")?)
    }

    /// Server-side fitness and gradient of the negated fitness.
    pub fn generate_with_grad(
        &self,
        latent: &LatentCode,
        target: &FeatureVector,
        cutouts: WireCutouts,
    ) -> Result<(f64, Vec<f64>)> {
        let shape = latent.shape();
        let payload = self.call(
            OP_GENERATE_WITH_GRAD,
            json!({
                "latent": WireTensor::encode(&latent.flatten(), vec![shape.total()])?,
                "text_features": WireTensor::encode(target.values(), vec![target.len()])?,
                "cutouts": cutouts,
            }),
        )?;
        let fitness = payload
            .get("fitness")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Protocol("response lacks numeric fitness".into()))?;
        let grad = Self::tensor_field(&payload, "gradient")?.decode()?;
        if grad.len() != shape.total() {
            return Err(Error::Protocol(format!(
                "gradient has {} elements, expected {}",
                grad.len(),
                shape.total()
            )));
        }
        Ok((fitness, grad))
    }
}

fn decode_image(tensor: &WireTensor) -> Result<ImageTensor> {
    let [h, w, c] = tensor.shape[..] else {
        return Err(Error::Protocol(format!(
            "image shape {:?} is not [h, w, 3]",
            tensor.shape
        )));
    };
    if c != 3 {
        return Err(Error::Protocol(format!(
            "image has {c} channels, expected 3"
        )));
    }
    // f32 rounding may step just outside [0, 1]
    let values = tensor
        .decode()?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    ImageTensor::new(w, h, values)
}

pub struct BridgeGenerator {
    client: Arc<BridgeClient>,
    shape: LatentShape,
    identity: String,
}

impl BridgeGenerator {
    pub fn new(client: Arc<BridgeClient>, info: &ServerInfo, shape: LatentShape) -> Result<Self> {
        if info.latent_total != shape.total() {
            return Err(Error::Config(format!(
                "bridge generator takes {} latent elements but the configured shape has {}",
                info.latent_total,
                shape.total()
            )));
        }
        let model = info
            .models
            .get("generator")
            .map(|v| v.to_string())
            .unwrap_or_else(|| "unknown".into());
        Ok(BridgeGenerator {
            identity: format!("bridge-generator {model} via {}", client.endpoint()),
            client,
            shape,
        })
    }
}

impl Generator for BridgeGenerator {
    fn shape(&self) -> LatentShape {
        self.shape
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn generate(&self, latent: &LatentCode) -> Result<ImageTensor> {
        self.client.generate(latent)
    }
}

pub struct BridgeEncoder {
    client: Arc<BridgeClient>,
    feature_dim: usize,
    identity: String,
}

impl BridgeEncoder {
    pub fn new(client: Arc<BridgeClient>, info: &ServerInfo) -> Self {
        let model = info
            .models
            .get("encoder")
            .map(|v| v.to_string())
            .unwrap_or_else(|| "unknown".into());
        BridgeEncoder {
            identity: format!("bridge-encoder {model}"),
            feature_dim: info.feature_dim,
            client,
        }
    }
}

impl Encoder for BridgeEncoder {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn input_side(&self) -> Option<usize> {
        None
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn encode(&self, image: &ImageTensor) -> Result<FeatureVector> {
        let f = self.client.encode_image(image)?;
        if f.len() != self.feature_dim {
            return Err(Error::Protocol(format!(
                "encoder returned {} features, expected {}",
                f.len(),
                self.feature_dim
            )));
        }
        Ok(f)
    }
}

/// Fitness computed locally from bridge-generated images and bridge
/// features; gradients computed by the server.
pub struct BridgeObjective {
    client: Arc<BridgeClient>,
    objective: Objective,
}

impl BridgeObjective {
    /// Wraps an objective whose generator and encoder are served by `client`.
    pub fn new(client: Arc<BridgeClient>, objective: Objective) -> Self {
        BridgeObjective { client, objective }
    }

    pub fn connect(
        client: Arc<BridgeClient>,
        shape: LatentShape,
        target: FeatureVector,
        cutouts: CutoutPolicy,
    ) -> Result<Self> {
        let info = client.info()?;
        let generator = BridgeGenerator::new(client.clone(), &info, shape)?;
        let encoder = BridgeEncoder::new(client.clone(), &info);
        let objective = Objective::new(Arc::new(generator), Arc::new(encoder), target, cutouts)?;
        Ok(BridgeObjective { client, objective })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn wire_cutouts(&self, iteration: u64) -> WireCutouts {
        let p = self.objective.cutouts();
        WireCutouts {
            num_cuts: p.num_cuts,
            min_fraction: p.min_fraction,
            max_fraction: p.max_fraction,
            resize_to: p.resize_to,
            seed: p.iteration_seed(iteration),
        }
    }
}

impl FitnessFunction for BridgeObjective {
    fn latent_shape(&self) -> LatentShape {
        self.objective.generator().shape()
    }

    fn fitness(&self, latent: &LatentCode, iteration: u64) -> Result<f64> {
        self.objective.fitness(latent, iteration)
    }

    fn fitness_and_loss_gradient(
        &self,
        latent: &LatentCode,
        iteration: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.client.generate_with_grad(
            latent,
            self.objective.target(),
            self.wire_cutouts(iteration),
        )
    }

    fn supports_gradient(&self) -> bool {
        true
    }
}
