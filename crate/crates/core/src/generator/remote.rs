use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::cache::prompt_hash;
use crate::error::{Error, Result};

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct Response {
    output: String,
}

/// HTTP client for a hosted model: `POST {"prompt", "max_tokens"}` → `{"output"}`.
/// Non-2xx responses and transport failures are retried.
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    endpoint: String,
    max_tokens: usize,
    retries: u32,
    backoff: Duration,
    agent: Agent,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, timeout: Duration, retries: u32, max_tokens: usize) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteGenerator {
            endpoint: endpoint.to_string(),
            max_tokens,
            retries,
            backoff: Duration::from_millis(200),
            agent,
        }
    }

    /// Base delay before the first retry; doubles on each further attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn generate(&self, prompt: &str) -> Result<String> {
        let body = serde_json::to_string(&Request {
            prompt,
            max_tokens: self.max_tokens,
        })
        .expect("request serializes");
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(out) => return Ok(out),
                Err(msg) => {
                    log::warn!("generation attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Generation {
            prompt_hash: prompt_hash(prompt),
            message: format!("{} attempt(s) failed, last: {last}", self.retries + 1),
        })
    }

    fn attempt(&self, body: &str) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        serde_json::from_str::<Response>(&text)
            .map(|r| r.output)
            .map_err(|e| format!("bad response body: {e}"))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal HTTP server: the first `failures` requests get a 503, later
    /// ones echo the prompt upper-cased. Returns the URL and a request counter.
    pub(crate) fn serve(failures: usize) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let count = Arc::new(AtomicUsize::new(0));
        let seen = count.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).unwrap();
                let n = seen.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = if n < failures {
                    ("503 Service Unavailable", "{}".to_string())
                } else {
                    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let out = v["prompt"].as_str().unwrap().to_uppercase();
                    ("200 OK", serde_json::json!({ "output": out }).to_string())
                };
                let resp = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (url, count)
    }

    #[test]
    fn retries_until_success() {
        let (url, count) = serve(2);
        let g = RemoteGenerator::new(&url, Duration::from_secs(5), 3, 16).with_backoff(Duration::from_millis(1));
        assert_eq!(g.generate("hi there").unwrap(), "HI THERE");
        assert_eq!(count.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_carry_prompt_hash() {
        let (url, _) = serve(usize::MAX);
        let g = RemoteGenerator::new(&url, Duration::from_secs(5), 1, 16).with_backoff(Duration::from_millis(1));
        match g.generate("p") {
            Err(Error::Generation { prompt_hash: h, .. }) => assert_eq!(h, prompt_hash("p")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_is_generation_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let g = RemoteGenerator::new(&format!("http://127.0.0.1:{port}/x"), Duration::from_secs(2), 0, 16);
        assert!(matches!(g.generate("p"), Err(Error::Generation { .. })));
    }
}
