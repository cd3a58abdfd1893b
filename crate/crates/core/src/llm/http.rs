use serde_json::{json, Value};

use super::{ChatRequest, Transport, TransportError};

/// Chat-completion client: one user message per request, text taken from the
/// first choice.
pub struct HttpTransport {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().build(),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let body = json!({
            "model": request.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
        });
        let mut req = self
            .agent
            .post(&self.endpoint)
            .timeout(request.timeout)
            .set("Content-Type", "application/json");
        if let Some(key) = request.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                return Err(TransportError::Status {
                    code,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                let timed_out = matches!(t.kind(), ureq::ErrorKind::Io)
                    && (msg.contains("timed out") || msg.contains("Timeout") || msg.contains("would block"));
                return Err(if timed_out {
                    TransportError::Timeout
                } else {
                    TransportError::Connection(msg)
                });
            }
        };
        let payload: Value = response
            .into_json()
            .map_err(|e| TransportError::Malformed(e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
    }
}
