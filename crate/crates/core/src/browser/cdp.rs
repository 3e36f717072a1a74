use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use super::{BrowserError, PageDriver};

/// DevTools-protocol connection to one page target.
pub struct CdpDriver {
    socket: WebSocket<MaybeTlsStream<TcpStream>>,
    next_id: u64,
    call_timeout: Duration,
}

impl CdpDriver {
    /// Connects to a target's `webSocketDebuggerUrl`.
    pub fn connect(ws_url: &str) -> Result<Self, BrowserError> {
        let (socket, _) = tungstenite::connect(ws_url).map_err(|e| BrowserError::Connect(e.to_string()))?;
        let mut driver = Self {
            socket,
            next_id: 0,
            call_timeout: Duration::from_secs(30),
        };
        driver.call("Page.enable", json!({}))?;
        driver.call("Runtime.enable", json!({}))?;
        Ok(driver)
    }

    /// Finds the first page target through the HTTP endpoint's `/json/list`.
    pub fn discover(http_endpoint: &str) -> Result<String, BrowserError> {
        let url = format!("{}/json/list", http_endpoint.trim_end_matches('/'));
        let mut resp = ureq::get(&url).call().map_err(|e| BrowserError::Connect(format!("{url}: {e}")))?;
        let targets: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BrowserError::Connect(format!("{url}: {e}")))?;
        targets
            .as_array()
            .into_iter()
            .flatten()
            .find(|t| t["type"] == "page")
            .and_then(|t| t["webSocketDebuggerUrl"].as_str())
            .map(str::to_string)
            .ok_or_else(|| BrowserError::Connect(format!("{url}: no page target")))
    }

    pub fn attach(http_endpoint: &str) -> Result<Self, BrowserError> {
        Self::connect(&Self::discover(http_endpoint)?)
    }

    fn set_read_timeout(&mut self, timeout: Option<Duration>) {
        if let MaybeTlsStream::Plain(tcp) = self.socket.get_mut() {
            let _ = tcp.set_read_timeout(timeout);
        }
    }

    fn send(&mut self, method: &str, params: Value) -> Result<u64, BrowserError> {
        self.next_id += 1;
        let id = self.next_id;
        let msg = json!({"id": id, "method": method, "params": params}).to_string();
        self.socket.send(Message::text(msg)).map_err(|e| BrowserError::Protocol {
            step: method.into(),
            reason: e.to_string(),
        })?;
        Ok(id)
    }

    /// Next JSON message, or None once `deadline` passes.
    fn next_message(&mut self, deadline: Instant, step: &str) -> Result<Option<Value>, BrowserError> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.set_read_timeout(Some(left));
            match self.socket.read() {
                Ok(Message::Text(text)) => {
                    return serde_json::from_str(text.as_str()).map(Some).map_err(|e| BrowserError::Protocol {
                        step: step.into(),
                        reason: e.to_string(),
                    });
                }
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
                {
                    return Ok(None);
                }
                Err(e) => {
                    return Err(BrowserError::Protocol {
                        step: step.into(),
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    /// Sends a command and waits for its response, skipping events.
    pub fn call(&mut self, method: &str, params: Value) -> Result<Value, BrowserError> {
        let id = self.send(method, params)?;
        let deadline = Instant::now() + self.call_timeout;
        while let Some(msg) = self.next_message(deadline, method)? {
            if msg["id"].as_u64() == Some(id) {
                if let Some(err) = msg.get("error") {
                    return Err(BrowserError::Protocol {
                        step: method.into(),
                        reason: err["message"].as_str().unwrap_or("unknown").to_string(),
                    });
                }
                return Ok(msg["result"].clone());
            }
        }
        Err(BrowserError::Protocol {
            step: method.into(),
            reason: "no response".into(),
        })
    }
}

impl PageDriver for CdpDriver {
    fn navigate(&mut self, url: &str, timeout: Duration) -> Result<(), BrowserError> {
        let result = self.call("Page.navigate", json!({"url": url}))?;
        if let Some(err) = result["errorText"].as_str() {
            return Err(BrowserError::Navigation {
                url: url.into(),
                reason: err.into(),
            });
        }
        let deadline = Instant::now() + timeout;
        while let Some(msg) = self.next_message(deadline, "Page.loadEventFired")? {
            if msg["method"] == "Page.loadEventFired" {
                return Ok(());
            }
        }
        let title = self
            .evaluate("document.title")
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        Err(BrowserError::NavigationTimeout { url: url.into(), title })
    }

    fn evaluate(&mut self, expression: &str) -> Result<Value, BrowserError> {
        let result = self.call(
            "Runtime.evaluate",
            json!({"expression": expression, "returnByValue": true, "awaitPromise": true}),
        )?;
        if let Some(details) = result.get("exceptionDetails") {
            let text = details["exception"]["description"]
                .as_str()
                .or_else(|| details["text"].as_str())
                .unwrap_or("exception")
                .to_string();
            if text.contains("context was destroyed") || text.contains("Cannot find context") {
                return Err(BrowserError::StaleContext(text));
            }
            return Err(BrowserError::Script(text));
        }
        Ok(result["result"]["value"].clone())
    }
}

/// A browser this process launched; killed on drop.
pub struct BrowserProcess {
    child: Child,
    _profile: tempfile::TempDir,
    pub http_endpoint: String,
}

impl BrowserProcess {
    /// Starts a Chromium-family binary with remote debugging on a free port.
    pub fn launch(binary: &Path, headless: bool) -> Result<Self, BrowserError> {
        let profile = tempfile::tempdir().map_err(|e| BrowserError::Connect(e.to_string()))?;
        let mut cmd = Command::new(binary);
        cmd.arg("--remote-debugging-port=0")
            .arg(format!("--user-data-dir={}", profile.path().display()))
            .args(["--no-first-run", "--no-default-browser-check", "--disable-extensions", "about:blank"])
            .stdout(Stdio::null())
            .stderr(Stdio::piped());
        if headless {
            cmd.arg("--headless=new");
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| BrowserError::Connect(format!("{}: {e}", binary.display())))?;
        let stderr = child.stderr.take().expect("stderr piped");
        let mut lines = BufReader::new(stderr).lines();
        let ws = loop {
            match lines.next() {
                Some(Ok(line)) => {
                    if let Some(rest) = line.strip_prefix("DevTools listening on ") {
                        break rest.trim().to_string();
                    }
                }
                _ => {
                    let _ = child.kill();
                    return Err(BrowserError::Connect("browser exited before announcing its endpoint".into()));
                }
            }
        };
        std::thread::spawn(move || for _ in lines {});
        let http_endpoint = ws
            .strip_prefix("ws://")
            .and_then(|r| r.split('/').next())
            .map(|hostport| format!("http://{hostport}"))
            .ok_or_else(|| BrowserError::Connect(format!("unexpected endpoint {ws}")))?;
        Ok(Self {
            child,
            _profile: profile,
            http_endpoint,
        })
    }
}

impl Drop for BrowserProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    /// A one-connection DevTools stand-in. `respond` maps each request to
    /// the messages sent back (events and/or the response).
    fn fake_cdp<F>(respond: F) -> (String, std::thread::JoinHandle<Vec<Value>>)
    where
        F: Fn(&Value) -> Vec<Value> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut ws = tungstenite::accept(stream).unwrap();
            let mut seen = Vec::new();
            while let Ok(msg) = ws.read() {
                let Message::Text(text) = msg else { continue };
                let req: Value = serde_json::from_str(text.as_str()).unwrap();
                for out in respond(&req) {
                    ws.send(Message::text(out.to_string())).unwrap();
                }
                seen.push(req);
            }
            seen
        });
        (format!("ws://{addr}/devtools/page/1"), handle)
    }

    fn ok(req: &Value, result: Value) -> Value {
        json!({"id": req["id"], "result": result})
    }

    #[test]
    fn evaluate_and_navigate_round_trip() {
        let (url, handle) = fake_cdp(|req| match req["method"].as_str().unwrap() {
            "Page.navigate" => vec![
                ok(req, json!({"frameId": "f"})),
                json!({"method": "Network.noise", "params": {}}),
                json!({"method": "Page.loadEventFired", "params": {}}),
            ],
            "Runtime.evaluate" => {
                let expr = req["params"]["expression"].as_str().unwrap();
                if expr == "throw" {
                    vec![ok(req, json!({"result": {}, "exceptionDetails": {"text": "Uncaught", "exception": {"description": "Error: boom"}}}))]
                } else {
                    vec![json!({"method": "Runtime.consoleAPICalled"}), ok(req, json!({"result": {"type": "number", "value": 2}}))]
                }
            }
            _ => vec![ok(req, json!({}))],
        });
        let mut d = CdpDriver::connect(&url).unwrap();
        d.navigate("http://fixture/", Duration::from_secs(2)).unwrap();
        assert_eq!(d.evaluate("1+1").unwrap(), json!(2));
        assert!(matches!(d.evaluate("throw"), Err(BrowserError::Script(m)) if m == "Error: boom"));
        drop(d);
        let seen = handle.join().unwrap();
        let methods: Vec<&str> = seen.iter().map(|r| r["method"].as_str().unwrap()).collect();
        assert_eq!(methods, ["Page.enable", "Runtime.enable", "Page.navigate", "Runtime.evaluate", "Runtime.evaluate"]);
    }

    #[test]
    fn navigation_timeout_reports_title() {
        let (url, _handle) = fake_cdp(|req| match req["method"].as_str().unwrap() {
            "Runtime.evaluate" => vec![ok(req, json!({"result": {"value": "Half loaded"}}))],
            _ => vec![ok(req, json!({}))],
        });
        let mut d = CdpDriver::connect(&url).unwrap();
        let err = d.navigate("http://slow/", Duration::from_millis(100)).unwrap_err();
        assert!(matches!(err, BrowserError::NavigationTimeout { title, .. } if title == "Half loaded"));
    }

    #[test]
    fn navigation_error_text() {
        let (url, _handle) = fake_cdp(|req| match req["method"].as_str().unwrap() {
            "Page.navigate" => vec![ok(req, json!({"errorText": "net::ERR_NAME_NOT_RESOLVED"}))],
            _ => vec![ok(req, json!({}))],
        });
        let mut d = CdpDriver::connect(&url).unwrap();
        let err = d.navigate("http://nowhere.invalid/", Duration::from_secs(1)).unwrap_err();
        assert!(err.to_string().contains("ERR_NAME_NOT_RESOLVED"));
    }

    #[test]
    fn discovery_picks_page_target() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = server.server_addr().to_ip().unwrap();
        std::thread::spawn(move || {
            let req = server.recv().unwrap();
            assert_eq!(req.url(), "/json/list");
            let body = r#"[{"type":"service_worker","webSocketDebuggerUrl":"ws://x/sw"},
                           {"type":"page","webSocketDebuggerUrl":"ws://x/devtools/page/A"}]"#;
            req.respond(tiny_http::Response::from_string(body)).unwrap();
        });
        assert_eq!(CdpDriver::discover(&format!("http://{addr}")).unwrap(), "ws://x/devtools/page/A");
    }
}
