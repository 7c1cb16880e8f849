use std::time::Duration;

use serde::Deserialize;

use super::gateway::{BackendReply, ChatBackend};
use super::{ChatRequest, LlmError};

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "SQLFLOW_API_KEY";

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl OpenAiBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        OpenAiBackend {
            agent: config.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    /// Credential from `SQLFLOW_API_KEY`, if set.
    pub fn from_env(base_url: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
        Self::new(base_url, key, timeout)
    }

    fn body(request: &ChatRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(stop) = &request.stop_sequences {
            body["stop"] = serde_json::json!(stop);
        }
        body
    }
}

impl ChatBackend for OpenAiBackend {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(Self::body(request)).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(format!("HTTP {status}: {}", snippet(&text)))),
            408 => return Err(LlmError::Timeout { attempts: 1 }),
            429 => return Err(LlmError::RateLimited { attempts: 1 }),
            500..=599 => {
                return Err(LlmError::Server {
                    status,
                    body: snippet(&text),
                })
            }
            _ => return Err(LlmError::BadResponse(format!("HTTP {status}: {}", snippet(&text)))),
        }
        let parsed: CompletionBody =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(format!("{e}: {}", snippet(&text))))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices in response".into()))?;
        Ok(BackendReply {
            content,
            usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
        })
    }
}

fn transport(err: ureq::Error) -> LlmError {
    match err {
        ureq::Error::Timeout(_) => LlmError::Timeout { attempts: 1 },
        other => LlmError::Transport(other.to_string()),
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{ChatMessage, LlmGateway, RetryPolicy};
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the given raw (status, body) pairs, one per connection, and
    /// returns the request bodies it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(format!("{auth}|{}", String::from_utf8(buf).unwrap()));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (addr, handle)
    }

    fn request() -> ChatRequest {
        ChatRequest::new("gpt-4-0613", vec![ChatMessage::user("How many singers?")])
    }

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"{\"sql\": \"SELECT count(*) FROM singer\"}"}}],"usage":{"prompt_tokens":12,"completion_tokens":9}}"#;

    #[test]
    fn parses_completion_and_usage() {
        let (addr, server) = serve(vec![(200, OK_BODY.into())]);
        let backend = OpenAiBackend::new(addr, Some("sk-test".into()), Duration::from_secs(5));
        let reply = backend.send(&request()).unwrap();
        assert_eq!(reply.content, r#"{"sql": "SELECT count(*) FROM singer"}"#);
        assert_eq!(reply.usage, Some((12, 9)));
        let seen = server.join().unwrap();
        assert!(seen[0]
            .to_ascii_lowercase()
            .starts_with("authorization: bearer sk-test|"));
        let body: serde_json::Value = serde_json::from_str(seen[0].split_once('|').unwrap().1).unwrap();
        assert_eq!(body["max_tokens"], 1024);
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn status_codes_map_to_errors() {
        let (addr, server) = serve(vec![(401, "{}".into()), (429, "{}".into()), (503, "busy".into())]);
        let backend = OpenAiBackend::new(addr, None, Duration::from_secs(5));
        assert!(matches!(backend.send(&request()), Err(LlmError::Auth(_))));
        assert!(matches!(backend.send(&request()), Err(LlmError::RateLimited { .. })));
        assert!(matches!(
            backend.send(&request()),
            Err(LlmError::Server { status: 503, .. })
        ));
        server.join().unwrap();
    }

    #[test]
    fn gateway_retries_rate_limit_over_http() {
        let (addr, server) = serve(vec![(429, "{}".into()), (200, OK_BODY.into())]);
        let backend = Arc::new(OpenAiBackend::new(addr, None, Duration::from_secs(5)));
        let gw = LlmGateway::live(backend).with_retry(RetryPolicy {
            initial_delay_ms: 1,
            ..RetryPolicy::default()
        });
        let resp = gw.complete("generate_sql", &request()).unwrap();
        assert_eq!(resp.attempts, 2);
        assert_eq!(resp.completion_tokens, 9);
        assert_eq!(server.join().unwrap().len(), 2);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = OpenAiBackend::new(format!("http://127.0.0.1:{port}"), None, Duration::from_secs(2));
        let err = backend.send(&request()).unwrap_err();
        assert!(err.is_transient(), "{err:?}");
    }
}
