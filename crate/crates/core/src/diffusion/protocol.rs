//! Newline-delimited JSON transport for an external denoiser.
//!
//! Request: `{"op":"predict"|"predict_with_h","t":int,"x":[f32...],"h":[f32...]?}`.
//! Response: `{"epsilon":[f32...],"h":[f32...]}`, or `{"error":str}` on failure.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Denoiser, HVector, Prediction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Predict,
    PredictWithH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: Op,
    pub t: usize,
    pub x: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Client side of the protocol over any reader/writer pair. Requests on one
/// connection are serialized.
pub struct PipeDenoiser<R, W> {
    conn: Mutex<(R, W)>,
}

impl<R: BufRead + Send, W: Write + Send> PipeDenoiser<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            conn: Mutex::new((reader, writer)),
        }
    }

    fn call(&self, request: &Request) -> Result<Response> {
        let mut guard = self
            .conn
            .lock()
            .map_err(|_| Error::Protocol("connection poisoned".into()))?;
        let (reader, writer) = &mut *guard;
        let mut line =
            serde_json::to_string(request).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;
        let mut reply = String::new();
        if reader.read_line(&mut reply)? == 0 {
            return Err(Error::Protocol("denoiser closed the connection".into()));
        }
        let response: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        if let Some(message) = response.error {
            return Err(Error::Protocol(format!("denoiser error: {message}")));
        }
        Ok(response)
    }

    fn epsilon(response: &Response, dim: usize) -> Result<Vec<f64>> {
        let eps = response
            .epsilon
            .as_deref()
            .ok_or_else(|| Error::Protocol("response has no epsilon".into()))?;
        if eps.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: eps.len(),
            });
        }
        Ok(widen(eps))
    }
}

impl<R: BufRead + Send, W: Write + Send> Denoiser for PipeDenoiser<R, W> {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction> {
        let response = self.call(&Request {
            op: Op::Predict,
            t,
            x: narrow(x),
            h: None,
        })?;
        let epsilon = Self::epsilon(&response, x.len())?;
        let h = response
            .h
            .as_deref()
            .ok_or_else(|| Error::Protocol("predict response has no h".into()))?;
        Ok(Prediction {
            epsilon,
            h: HVector::new(widen(h))?,
        })
    }

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>> {
        let response = self.call(&Request {
            op: Op::PredictWithH,
            t,
            x: narrow(x),
            h: Some(narrow(h.values())),
        })?;
        Self::epsilon(&response, x.len())
    }
}

/// A denoiser running as a child process speaking the protocol on stdin/stdout.
pub struct ProcessDenoiser {
    child: Child,
    pipe: PipeDenoiser<BufReader<ChildStdout>, ChildStdin>,
}

impl ProcessDenoiser {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self {
            child,
            pipe: PipeDenoiser::new(BufReader::new(stdout), stdin),
        })
    }
}

impl Denoiser for ProcessDenoiser {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction> {
        self.pipe.predict(x, t)
    }

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>> {
        self.pipe.predict_with_h(x, t, h)
    }
}

impl Drop for ProcessDenoiser {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn answer<D: Denoiser + ?Sized>(denoiser: &D, line: &str) -> Response {
    let result = serde_json::from_str::<Request>(line)
        .map_err(|e| Error::Protocol(format!("malformed request: {e}")))
        .and_then(|req| {
            let x = widen(&req.x);
            match req.op {
                Op::Predict => {
                    let p = denoiser.predict(&x, req.t)?;
                    Ok((p.epsilon, p.h))
                }
                Op::PredictWithH => {
                    let h = req
                        .h
                        .ok_or_else(|| Error::Protocol("predict_with_h needs h".into()))?;
                    let h = HVector::new(widen(&h))?;
                    let eps = denoiser.predict_with_h(&x, req.t, &h)?;
                    Ok((eps, h))
                }
            }
        });
    match result {
        Ok((eps, h)) => Response {
            epsilon: Some(narrow(&eps)),
            h: Some(narrow(h.values())),
            error: None,
        },
        Err(e) => Response {
            epsilon: None,
            h: None,
            error: Some(e.to_string()),
        },
    }
}

/// Serves requests until the reader reaches end of input. Bad requests get an
/// error response and do not end the session.
pub fn serve_denoiser<D: Denoiser + ?Sized, R: BufRead, W: Write>(
    denoiser: &D,
    reader: R,
    mut writer: W,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut out = serde_json::to_string(&answer(denoiser, &line))
            .map_err(|e| Error::Protocol(e.to_string()))?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
