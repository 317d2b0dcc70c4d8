use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    check_finetune_inputs, Backend, BackendCall, BackendError, FinetuneConfig, Finetuned, GenConfig,
    ModelHandle, TextPair,
};
use crate::par::Parallelism;

/// Backend implemented by an external program speaking line-delimited JSON
/// on stdin/stdout. One request line, one response line.
///
/// Requests:
/// `{"op":"finetune","checkpoint":..,"out_dir":..,"pairs":[..],"config":{..}}`
/// `{"op":"generate","checkpoint":..,"sources":[..],"config":{..}}`
/// `{"op":"shutdown"}`
///
/// Responses carry `"ok": true` plus `losses` or `outputs`, or
/// `"ok": false` with an `error` message.
pub struct ProcessBackend {
    base_checkpoint: String,
    io: Mutex<PluginIo>,
    log: Mutex<Vec<BackendCall>>,
}

struct PluginIo {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request<'a> {
    Finetune {
        checkpoint: &'a str,
        out_dir: &'a str,
        pairs: &'a [TextPair],
        config: &'a FinetuneConfig,
    },
    Generate {
        checkpoint: &'a str,
        sources: &'a [String],
        config: &'a GenConfig,
    },
    Shutdown,
}

#[derive(Deserialize)]
struct Response {
    ok: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    losses: Vec<f64>,
    #[serde(default)]
    outputs: Vec<String>,
}

impl ProcessBackend {
    pub fn spawn(command: &[String], base_checkpoint: impl Into<String>) -> Result<Self, BackendError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Plugin("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Plugin(format!("cannot start `{program}`: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            base_checkpoint: base_checkpoint.into(),
            io: Mutex::new(PluginIo {
                child,
                stdin,
                stdout,
            }),
            log: Mutex::new(Vec::new()),
        })
    }

    fn request(&self, req: &Request<'_>) -> Result<Response, BackendError> {
        let mut io = self.io.lock().unwrap();
        let line = serde_json::to_string(req).expect("requests serialize");
        writeln!(io.stdin, "{line}")?;
        io.stdin.flush()?;
        let mut reply = String::new();
        if io.stdout.read_line(&mut reply)? == 0 {
            return Err(BackendError::Plugin("plugin closed its output".into()));
        }
        let resp: Response = serde_json::from_str(&reply)
            .map_err(|e| BackendError::Plugin(format!("malformed reply: {e}")))?;
        if !resp.ok {
            return Err(BackendError::Plugin(
                resp.error.unwrap_or_else(|| "unspecified plugin failure".into()),
            ));
        }
        Ok(resp)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        let _ = self.request(&Request::Shutdown);
        if let Ok(mut io) = self.io.lock() {
            let _ = io.child.wait();
        }
    }
}

impl Backend for ProcessBackend {
    fn id(&self) -> &str {
        "process"
    }

    fn pretrained(&self) -> ModelHandle {
        ModelHandle::pretrained(self.id(), self.base_checkpoint.clone())
    }

    fn finetune(
        &mut self,
        model: &ModelHandle,
        pairs: &[TextPair],
        cfg: &FinetuneConfig,
        phase: &str,
        out_dir: &Path,
    ) -> Result<Finetuned, BackendError> {
        check_finetune_inputs(model, pairs, cfg)?;
        std::fs::create_dir_all(out_dir)?;
        let out = out_dir.to_string_lossy();
        self.log.lock().unwrap().push(BackendCall::Finetune {
            phase: phase.to_string(),
            from_stage: model.stage,
            pairs: pairs.len(),
        });
        let resp = self.request(&Request::Finetune {
            checkpoint: &model.checkpoint_ref,
            out_dir: &out,
            pairs,
            config: cfg,
        })?;
        if resp.losses.len() != cfg.epochs as usize {
            return Err(BackendError::Training(format!(
                "plugin reported {} epoch losses for {} epochs",
                resp.losses.len(),
                cfg.epochs
            )));
        }
        Ok(Finetuned {
            handle: model.advanced(phase, cfg, out.into_owned())?,
            epoch_losses: resp.losses,
        })
    }

    fn generate(
        &self,
        model: &ModelHandle,
        source: &str,
        cfg: &GenConfig,
    ) -> Result<String, BackendError> {
        let mut out = self.generate_batch(model, &[source.to_string()], cfg, Parallelism::Sequential)?;
        Ok(out.pop().unwrap_or_default())
    }

    fn generate_batch(
        &self,
        model: &ModelHandle,
        sources: &[String],
        cfg: &GenConfig,
        _mode: Parallelism,
    ) -> Result<Vec<String>, BackendError> {
        self.log
            .lock()
            .unwrap()
            .extend(sources.iter().map(|s| BackendCall::Generate {
                stage: model.stage,
                source: s.clone(),
            }));
        let resp = self.request(&Request::Generate {
            checkpoint: &model.checkpoint_ref,
            sources,
            config: cfg,
        })?;
        if resp.outputs.len() != sources.len() {
            return Err(BackendError::Plugin(format!(
                "plugin returned {} outputs for {} sources",
                resp.outputs.len(),
                sources.len()
            )));
        }
        Ok(resp.outputs)
    }

    fn call_log(&self) -> Vec<BackendCall> {
        self.log.lock().unwrap().clone()
    }
}
