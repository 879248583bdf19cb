// SPDX-License-Identifier: Apache-2.0

//! External model adapter speaking newline-delimited JSON over a child
//! process's stdin/stdout. One request is in flight at a time; responses
//! must echo the request id.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ActivationVector, ModelError, Prediction, SegmentationModel};
use crate::grid::{Image, LabelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: u64,
    pub op: String,
    pub seed: Option<u64>,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

pub struct AdapterModel {
    command: String,
    dims: (usize, usize),
    num_classes: usize,
    timeout: Duration,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for AdapterModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterModel")
            .field("command", &self.command)
            .field("dims", &self.dims)
            .field("num_classes", &self.num_classes)
            .finish()
    }
}

impl AdapterModel {
    /// Launch `command` through `sh -c`.
    pub fn spawn(
        command: &str,
        dims: (usize, usize),
        num_classes: usize,
        timeout: Duration,
    ) -> Result<Self, ModelError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Transport(format!("spawn `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            dims,
            num_classes,
            timeout,
            conn: Mutex::new(Connection {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
        })
    }

    fn call(&self, op: &str, seed: Option<u64>, image: &Image) -> Result<AdapterResponse, ModelError> {
        self.check_dims(image)?;
        let mut conn = self.conn.lock().map_err(|_| ModelError::Transport("poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        let request = AdapterRequest {
            id,
            op: op.to_string(),
            seed,
            h: image.height(),
            w: image.width(),
            pixels: image.as_slice().to_vec(),
        };
        let mut line = serde_json::to_string(&request).map_err(|e| ModelError::Transport(e.to_string()))?;
        line.push('\n');
        conn.stdin
            .write_all(line.as_bytes())
            .and_then(|_| conn.stdin.flush())
            .map_err(|e| ModelError::Transport(format!("write: {e}")))?;
        let reply = match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(ModelError::Transport(format!("read: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(ModelError::Transport(format!("no reply within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ModelError::Transport("adapter closed its output".into()))
            }
        };
        let response: AdapterResponse =
            serde_json::from_str(&reply).map_err(|e| ModelError::Protocol(format!("bad response: {e}")))?;
        if response.id != id {
            return Err(ModelError::Protocol(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if let Some(msg) = response.error {
            return Err(ModelError::Remote(msg));
        }
        Ok(response)
    }

    fn labels(&self, response: AdapterResponse) -> Result<Prediction, ModelError> {
        let (h, w) = self.dims;
        let labels = response
            .labels
            .ok_or_else(|| ModelError::Protocol("response carries no labels".into()))?;
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= self.num_classes) {
            return Err(ModelError::Protocol(format!("label {bad} out of range")));
        }
        let grid = LabelGrid::from_vec(h, w, labels).map_err(|e| ModelError::Protocol(e.to_string()))?;
        Ok(Prediction::from_labels(grid, self.num_classes))
    }
}

impl SegmentationModel for AdapterModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_dims(&self) -> (usize, usize) {
        self.dims
    }

    fn predict(&self, image: &Image) -> Result<Prediction, ModelError> {
        let r = self.call("predict", None, image)?;
        self.labels(r)
    }

    fn predict_with_dropout(&self, image: &Image, pass_seed: u64) -> Result<Prediction, ModelError> {
        let r = self.call("predict_dropout", Some(pass_seed), image)?;
        self.labels(r)
    }

    fn activations(&self, image: &Image) -> Result<ActivationVector, ModelError> {
        let r = self.call("activations", None, image)?;
        let values = r
            .values
            .ok_or_else(|| ModelError::Protocol("response carries no values".into()))?;
        Ok(ActivationVector { values })
    }
}

impl Drop for AdapterModel {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            let _ = conn.child.kill();
            let _ = conn.child.wait();
        }
    }
}

/// Serve one request against a local model; the adapter side of the protocol.
pub fn serve_request(model: &dyn SegmentationModel, request: &AdapterRequest) -> AdapterResponse {
    let mut response = AdapterResponse {
        id: request.id,
        labels: None,
        values: None,
        error: None,
    };
    let image = match Image::from_vec(request.h, request.w, request.pixels.clone()) {
        Ok(img) => img,
        Err(e) => {
            response.error = Some(e.to_string());
            return response;
        }
    };
    let result = match request.op.as_str() {
        "predict" => model
            .predict(&image)
            .map(|p| response.labels = Some(p.labels.into_vec())),
        "predict_dropout" => model
            .predict_with_dropout(&image, request.seed.unwrap_or(0))
            .map(|p| response.labels = Some(p.labels.into_vec())),
        "activations" => model.activations(&image).map(|a| response.values = Some(a.values)),
        other => Err(ModelError::Protocol(format!("unknown op `{other}`"))),
    };
    if let Err(e) = result {
        response.error = Some(e.to_string());
    }
    response
}
