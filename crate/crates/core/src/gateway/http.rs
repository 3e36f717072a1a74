use std::time::Duration;

use serde_json::Value;

use super::{Backend, ChatRequest, GatewayError, ModelReply};
use crate::config::BackendConfig;

/// Chat-completions endpoint over HTTP.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            max_retries: config.max_retries,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::Http {
                status,
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))
    }
}

impl Backend for HttpBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        let mut body = request.to_wire();
        body["model"] = Value::String(self.model.clone());
        let mut attempt = 0;
        let response = loop {
            match self.attempt(&body) {
                Ok(v) => break v,
                Err(e @ (GatewayError::Network(_) | GatewayError::Http { .. })) if attempt < self.max_retries => {
                    tracing::warn!(attempt, error = %e, "backend request failed; retrying");
                    attempt += 1;
                    std::thread::sleep(self.backoff * attempt);
                }
                Err(e) => return Err(e),
            }
        };
        ModelReply::from_completion(&response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ToolDeclarations;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let mut req = server.recv().unwrap();
                let mut text = String::new();
                req.as_reader().read_to_string(&mut text).unwrap();
                bodies.push(text);
                counter.fetch_add(1, Ordering::SeqCst);
                req.respond(tiny_http::Response::from_string(body).with_status_code(status)).unwrap();
            }
            bodies
        });
        (addr, hits, handle)
    }

    fn backend(endpoint: &str, retries: u32) -> HttpBackend {
        let cfg = BackendConfig {
            endpoint: endpoint.into(),
            max_retries: retries,
            timeout_secs: 5,
            ..Default::default()
        };
        HttpBackend::new(&cfg).with_backoff(Duration::from_millis(1))
    }

    #[test]
    fn posts_wire_body_and_parses_reply() {
        let (addr, _, handle) = serve(vec![(
            200,
            r#"{"choices":[{"message":{"content":"hello","tool_calls":[{"id":"c1","type":"function","function":{"name":"code_run","arguments":"{\"language\":\"bash\",\"source\":\"ls\"}"}}]}}]}"#,
        )]);
        let mut b = backend(&addr, 0);
        let req = ChatRequest {
            tools: ToolDeclarations::Full(crate::toolkit::builtin_schemas(&Default::default())),
            ..ChatRequest::plain("sys", "hi", 50)
        };
        let reply = b.complete(&req).unwrap();
        assert_eq!(reply.text.as_deref(), Some("hello"));
        assert_eq!(reply.tool_calls[0].name, "code_run");
        let sent: Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "default");
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["tools"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn server_errors_retry_then_fail() {
        let (addr, hits, handle) = serve(vec![(500, "boom"), (503, "still"), (500, "nope")]);
        let mut b = backend(&addr, 2);
        let err = b.complete(&ChatRequest::plain("s", "u", 5)).unwrap_err();
        assert!(matches!(err, GatewayError::Http { status: 500, .. }));
        handle.join().unwrap();
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unreachable_is_network_error() {
        let mut b = backend("http://127.0.0.1:1", 0);
        let err = b.complete(&ChatRequest::plain("s", "u", 5)).unwrap_err();
        assert!(err.is_retryable());
    }
}
