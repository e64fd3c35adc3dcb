//! Line-delimited JSON protocol for serving a model over a child process's
//! standard streams.
//!
//! Each request is one JSON object on one line, tagged by `op`; each response
//! is one line with `"ok": true` and the payload, or `"ok": false` and an
//! `"error"` message.
//!
//! | op           | request fields                                              | response fields                |
//! |--------------|-------------------------------------------------------------|--------------------------------|
//! | `info`       |                                                             | `info`                         |
//! | `encode`     | `text`                                                      | `tokens`                       |
//! | `decode`     | `tokens`                                                    | `text`                         |
//! | `logits`     | `prompt`, `system?`, `interventions?`, `capture?`           | `logits`, `captured`           |
//! | `generate`   | `prompt`, `system?`, `interventions?`, `max_new`, `temperature`, `seed` | `tokens`, `text`, `logprobs` |
//! | `perplexity` | `prompt`, `system?`, `interventions?`, `window`, `temperature`, `seed`, `scoring?` | `perplexity` |
//!
//! `prompt` is either a string (encoded with BOS prepended, after the optional
//! `system` text and a blank line) or an explicit token array used verbatim.
//! `interventions` is a list of `{layer, vector, alpha}`; `capture` is a list of
//! `{layer, position}` with `position` either an index or `"last"`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ForwardOutput, Generation, InterventionSpec, LanguageModel, PerplexityScoring, Position, Session};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PromptInput {
    Tokens(Vec<u32>),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureRequest {
    pub layer: usize,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedVector {
    pub layer: usize,
    pub position: usize,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Info,
    Encode {
        text: String,
    },
    Decode {
        tokens: Vec<u32>,
    },
    Logits {
        prompt: PromptInput,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        system: Option<String>,
        #[serde(default)]
        interventions: InterventionSpec,
        #[serde(default)]
        capture: Vec<CaptureRequest>,
    },
    Generate {
        prompt: PromptInput,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        system: Option<String>,
        #[serde(default)]
        interventions: InterventionSpec,
        max_new: usize,
        temperature: f64,
        seed: u64,
    },
    Perplexity {
        prompt: PromptInput,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        system: Option<String>,
        #[serde(default)]
        interventions: InterventionSpec,
        window: usize,
        temperature: f64,
        seed: u64,
        #[serde(default)]
        scoring: PerplexityScoring,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub n_layers: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Declared token ids for the option letters `A` and `B`.
    pub letter_a: u32,
    pub letter_b: u32,
    pub bos: Option<u32>,
    pub eos: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Info { info: ModelInfo },
    Logits { logits: Vec<f32>, captured: Vec<CapturedVector> },
    Generate { tokens: Vec<u32>, text: String, logprobs: Vec<f64> },
    Perplexity { perplexity: f64 },
    Tokens { tokens: Vec<u32> },
    Text { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, flatten, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
}

fn resolve_prompt<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &PromptInput,
    system: Option<&str>,
) -> Result<Vec<u32>> {
    match prompt {
        PromptInput::Tokens(t) => Ok(t.clone()),
        PromptInput::Text(text) => match system {
            Some(sys) => model.prompt_tokens(&format!("{sys}\n\n{text}")),
            None => model.prompt_tokens(text),
        },
    }
}

pub fn model_info<M: LanguageModel + ?Sized>(model: &M) -> Result<ModelInfo> {
    Ok(ModelInfo {
        n_layers: model.n_layers(),
        d_model: model.d_model(),
        vocab_size: model.vocab_size(),
        max_seq: model.max_seq(),
        letter_a: model.letter_token("A")?,
        letter_b: model.letter_token("B")?,
        bos: model.bos(),
        eos: model.eos(),
    })
}

/// Answer one request against an in-process model.
pub fn handle<M: LanguageModel + ?Sized>(model: &M, request: &Request) -> Result<Payload> {
    match request {
        Request::Info => Ok(Payload::Info {
            info: model_info(model)?,
        }),
        Request::Encode { text } => Ok(Payload::Tokens {
            tokens: model.encode(text)?,
        }),
        Request::Decode { tokens } => Ok(Payload::Text {
            text: model.decode(tokens)?,
        }),
        Request::Logits {
            prompt,
            system,
            interventions,
            capture,
        } => {
            let tokens = resolve_prompt(model, prompt, system.as_deref())?;
            let caps: Vec<(usize, Position)> = capture.iter().map(|c| (c.layer, c.position)).collect();
            let out = model.forward(&tokens, interventions, &caps)?;
            Ok(Payload::Logits {
                logits: out.logits,
                captured: out
                    .captured
                    .into_iter()
                    .map(|((layer, position), values)| CapturedVector {
                        layer,
                        position,
                        values,
                    })
                    .collect(),
            })
        }
        Request::Generate {
            prompt,
            system,
            interventions,
            max_new,
            temperature,
            seed,
        } => {
            let tokens = resolve_prompt(model, prompt, system.as_deref())?;
            let session = Session::with_interventions(model, interventions.clone())?;
            let Generation { tokens, logprobs } =
                session.generate(&tokens, *max_new, *temperature, *seed)?;
            Ok(Payload::Generate {
                text: model.decode(&tokens)?,
                tokens,
                logprobs,
            })
        }
        Request::Perplexity {
            prompt,
            system,
            interventions,
            window,
            temperature,
            seed,
            scoring,
        } => {
            let tokens = resolve_prompt(model, prompt, system.as_deref())?;
            let session = Session::with_interventions(model, interventions.clone())?;
            Ok(Payload::Perplexity {
                perplexity: session.perplexity(&tokens, *window, *temperature, *seed, *scoring)?,
            })
        }
    }
}

/// Serve requests line by line until EOF. Malformed lines get an error
/// response; the loop only stops on I/O failure.
pub fn serve<M: LanguageModel + ?Sized>(
    model: &M,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match handle(model, &req) {
                Ok(payload) => Response {
                    ok: true,
                    error: None,
                    payload: Some(payload),
                },
                Err(e) => Response {
                    ok: false,
                    error: Some(e.to_string()),
                    payload: None,
                },
            },
            Err(e) => Response {
                ok: false,
                error: Some(format!("bad request: {e}")),
                payload: None,
            },
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A model living in a child process that speaks the protocol above.
pub struct ProcessBackend {
    child: Mutex<Child>,
    pipes: Mutex<Pipes>,
    info: ModelInfo,
}

impl ProcessBackend {
    pub fn spawn(mut command: Command) -> Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Backend(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut backend = Self {
            child: Mutex::new(child),
            pipes: Mutex::new(Pipes { stdin, stdout }),
            info: ModelInfo {
                n_layers: 0,
                d_model: 0,
                vocab_size: 0,
                max_seq: 0,
                letter_a: 0,
                letter_b: 0,
                bos: None,
                eos: None,
            },
        };
        backend.info = match backend.call(&Request::Info)? {
            Payload::Info { info } => info,
            other => return Err(unexpected(&other)),
        };
        Ok(backend)
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn call(&self, request: &Request) -> Result<Payload> {
        let mut pipes = self.pipes.lock().expect("backend pipe lock");
        let mut line = serde_json::to_string(request).map_err(|e| Error::json("request", e))?;
        line.push('\n');
        pipes
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| pipes.stdin.flush())
            .map_err(|e| Error::Backend(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = pipes
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Backend(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Backend("backend closed its output".into()));
        }
        let resp: Response = serde_json::from_str(&reply).map_err(|e| Error::json("response", e))?;
        if !resp.ok {
            return Err(Error::Backend(resp.error.unwrap_or_else(|| "unknown error".into())));
        }
        resp.payload
            .ok_or_else(|| Error::Backend("response without payload".into()))
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(mut child) = self.child.lock() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn unexpected(p: &Payload) -> Error {
    Error::Backend(format!("unexpected response payload {p:?}"))
}

impl LanguageModel for ProcessBackend {
    fn n_layers(&self) -> usize {
        self.info.n_layers
    }

    fn d_model(&self) -> usize {
        self.info.d_model
    }

    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn max_seq(&self) -> usize {
        self.info.max_seq
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        match self.call(&Request::Encode { text: text.into() })? {
            Payload::Tokens { tokens } => Ok(tokens),
            other => Err(unexpected(&other)),
        }
    }

    fn decode(&self, tokens: &[u32]) -> Result<String> {
        match self.call(&Request::Decode {
            tokens: tokens.to_vec(),
        })? {
            Payload::Text { text } => Ok(text),
            other => Err(unexpected(&other)),
        }
    }

    fn letter_token(&self, letter: &str) -> Result<u32> {
        match letter {
            "A" => Ok(self.info.letter_a),
            "B" => Ok(self.info.letter_b),
            _ => Err(Error::UnresolvableLetter(letter.into())),
        }
    }

    fn bos(&self) -> Option<u32> {
        self.info.bos
    }

    fn eos(&self) -> Option<u32> {
        self.info.eos
    }

    fn forward(
        &self,
        tokens: &[u32],
        interventions: &InterventionSpec,
        captures: &[(usize, Position)],
    ) -> Result<ForwardOutput> {
        let req = Request::Logits {
            prompt: PromptInput::Tokens(tokens.to_vec()),
            system: None,
            interventions: interventions.clone(),
            capture: captures
                .iter()
                .map(|&(layer, position)| CaptureRequest { layer, position })
                .collect(),
        };
        match self.call(&req)? {
            Payload::Logits { logits, captured } => Ok(ForwardOutput {
                logits,
                captured: captured
                    .into_iter()
                    .map(|c| ((c.layer, c.position), c.values))
                    .collect(),
            }),
            other => Err(unexpected(&other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, TinyTransformer};

    fn model() -> TinyTransformer {
        TinyTransformer::init(&ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq: 64,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn roundtrip(m: &TinyTransformer, lines: &str) -> Vec<Response> {
        let mut out = Vec::new();
        serve(m, lines.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn logits_request_matches_in_process_forward() {
        let m = model();
        let resp = roundtrip(
            &m,
            r#"{"op":"logits","prompt":"Hi","capture":[{"layer":1,"position":"last"}]}"#,
        );
        let tokens = m.prompt_tokens("Hi").unwrap();
        let direct = m
            .forward(&tokens, &InterventionSpec::none(), &[(1, Position::Last)])
            .unwrap();
        match &resp[0].payload {
            Some(Payload::Logits { logits, captured }) => {
                assert_eq!(logits, &direct.logits);
                assert_eq!(captured.len(), 1);
                assert_eq!(captured[0].position, tokens.len() - 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_are_reported_in_band() {
        let m = model();
        let resp = roundtrip(&m, "not json\n{\"op\":\"logits\",\"prompt\":[999]}\n{\"op\":\"info\"}");
        assert_eq!(resp.len(), 3);
        assert!(!resp[0].ok && !resp[1].ok);
        assert!(resp[2].ok);
        match &resp[2].payload {
            Some(Payload::Info { info }) => {
                assert_eq!(info.n_layers, 2);
                assert_eq!(info.letter_a, u32::from(b'A') + 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generate_and_perplexity_requests() {
        let m = model();
        let resp = roundtrip(
            &m,
            "{\"op\":\"generate\",\"prompt\":\"ab\",\"max_new\":5,\"temperature\":0.0,\"seed\":1}\n\
             {\"op\":\"perplexity\",\"prompt\":\"ab\",\"window\":5,\"temperature\":0.7,\"seed\":42}",
        );
        assert!(resp.iter().all(|r| r.ok), "{resp:?}");
        match &resp[1].payload {
            Some(Payload::Perplexity { perplexity }) => assert!(perplexity.is_finite()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn request_wire_shape() {
        let req = Request::Logits {
            prompt: PromptInput::Text("x".into()),
            system: None,
            interventions: InterventionSpec::single(0, vec![1.0], 0.5),
            capture: vec![],
        };
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["op"], "logits");
        assert_eq!(v["interventions"][0]["alpha"], 0.5);
    }
}
