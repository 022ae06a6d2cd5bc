//! Deterministic stand-in for a real bridge, for dry runs and tests.
//!
//! Text embeddings are hash-seeded Gaussian directions. "Generated images"
//! are small JSON files whose embedding is the prompt's text direction plus
//! hash-seeded noise, so stub pipelines still classify sensibly.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Noise added to the prompt direction for each stub image.
const IMAGE_NOISE: f64 = 0.35;

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub dim: usize,
    pub image_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct StubImage {
    prompt: String,
    index: u32,
    steps: u32,
    guidance: f64,
    seed: u64,
}

pub struct StubServer {
    cfg: StubConfig,
}

fn seeded(tag: &str, payload: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(payload);
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl StubServer {
    pub fn new(cfg: StubConfig) -> Self {
        Self { cfg }
    }

    fn gaussian(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.cfg.dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn text_vector(&self, text: &str) -> Vec<f64> {
        let mut rng = seeded("text", text.as_bytes());
        unit(self.gaussian(&mut rng))
    }

    fn image_vector(&self, bytes: &[u8]) -> Vec<f64> {
        let mut rng = seeded("image", bytes);
        let noise = self.gaussian(&mut rng);
        match serde_json::from_slice::<StubImage>(bytes) {
            Ok(img) => {
                let base = self.text_vector(&img.prompt);
                let scale = IMAGE_NOISE / (self.cfg.dim as f64).sqrt();
                unit(base.iter().zip(&noise).map(|(b, n)| b + scale * n).collect())
            }
            Err(_) => unit(noise),
        }
    }

    fn generate(&self, req: &Value) -> Result<Vec<String>, String> {
        let prompt = req["prompt"].as_str().ok_or("generate needs a prompt")?;
        let count = req["count"].as_u64().ok_or("generate needs a count")?;
        let steps = req["steps"].as_u64().unwrap_or(50) as u32;
        let guidance = req["guidance"].as_f64().unwrap_or(15.0);
        let seed = req["seed"].as_u64().unwrap_or(0);
        fs::create_dir_all(&self.cfg.image_dir).map_err(|e| e.to_string())?;
        (0..count as u32)
            .map(|index| {
                let img = StubImage {
                    prompt: prompt.to_string(),
                    index,
                    steps,
                    guidance,
                    seed,
                };
                let bytes = serde_json::to_vec(&img).map_err(|e| e.to_string())?;
                let name = format!("{}.json", &hex::encode(Sha256::digest(&bytes))[..20]);
                let path = self.cfg.image_dir.join(&name);
                if !path.exists() {
                    fs::write(&path, &bytes).map_err(|e| e.to_string())?;
                }
                Ok(name)
            })
            .collect()
    }

    fn respond(&self, req: &Value) -> Result<Value, String> {
        let strings = |key: &str| -> Result<Vec<String>, String> {
            let items = req[key].as_array().ok_or(format!("missing {key}"))?;
            if items.is_empty() {
                return Err(format!("{key} is empty"));
            }
            items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or(format!("{key} must be strings")))
                .collect()
        };
        match req["op"].as_str() {
            Some("embed_text") => {
                let vectors: Vec<_> = strings("texts")?.iter().map(|t| self.text_vector(t)).collect();
                Ok(json!({ "embeddings": vectors }))
            }
            Some("embed_image") => {
                let vectors = strings("paths")?
                    .iter()
                    .map(|p| {
                        let bytes = fs::read(self.cfg.image_dir.join(p))
                            .map_err(|e| format!("cannot read image {p}: {e}"))?;
                        Ok(self.image_vector(&bytes))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                Ok(json!({ "embeddings": vectors }))
            }
            Some("generate") => Ok(json!({ "paths": self.generate(req)? })),
            Some(other) => Err(format!("unknown op {other:?}")),
            None => Err("request has no op".into()),
        }
    }

    /// Answers one request line with exactly one response line (no newline).
    pub fn handle_line(&self, line: &str) -> String {
        let parsed: Result<Value, _> = serde_json::from_str(line);
        let (id, result) = match parsed {
            Ok(req) => (req.get("id").cloned(), self.respond(&req)),
            Err(e) => (None, Err(format!("malformed request: {e}"))),
        };
        let mut out = match result {
            Ok(mut payload) => {
                payload["ok"] = json!(true);
                payload["info"] = json!({ "encoder": "stub", "dim": self.cfg.dim });
                payload
            }
            Err(msg) => json!({ "ok": false, "error": msg }),
        };
        if let Some(id) = id {
            out["id"] = id;
        }
        out.to_string()
    }

    /// Request loop until EOF on `input`.
    pub fn serve(&self, input: impl BufRead, mut output: impl Write) -> io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

/// Runs a stub server inside the calling process.
pub struct StubTransport {
    server: StubServer,
}

impl StubTransport {
    pub fn new(cfg: StubConfig) -> Self {
        Self {
            server: StubServer::new(cfg),
        }
    }
}

impl super::Transport for StubTransport {
    fn exchange(&mut self, line: &str) -> crate::error::Result<String> {
        Ok(self.server.handle_line(line))
    }
}
