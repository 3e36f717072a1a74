//! The web tools over a page served from a local directory. No browser is
//! needed: the driver here fetches pages over HTTP and answers the extractor
//! call with the raw document, which the host then budgets and prunes.

use std::time::Duration;

use densa::browser::{BrowserError, BrowserHost, PageDriver, ScanMode, StaticServer, WebTools};
use densa::config::ToolThresholds;
use serde_json::{json, Value};

#[derive(Default)]
struct FetchDriver {
    html: String,
}

impl PageDriver for FetchDriver {
    fn navigate(&mut self, url: &str, _timeout: Duration) -> Result<(), BrowserError> {
        self.html = ureq::get(url)
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| BrowserError::Script(e.to_string()))?;
        Ok(())
    }

    fn evaluate(&mut self, _expression: &str) -> Result<Value, BrowserError> {
        let envelope = json!({"protocol": 1, "mode": "html", "content": self.html, "raw_len": self.html.len()});
        Ok(Value::String(envelope.to_string()))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let rows: String = (0..400).map(|i| format!("<tr><td>item {i}</td><td>{}</td></tr>", i * 3)).collect();
    let page = format!(
        "<html><head><script>var big = 1;</script></head><body><h1>Inventory</h1>\
         <form><input name=q><button id=go>Search</button></form><table>{rows}</table></body></html>"
    );
    std::fs::write(dir.path().join("index.html"), &page)?;
    let server = StaticServer::start(dir.path())?;

    let limits = ToolThresholds { web_scan_html: 2_000, ..ToolThresholds::default() };
    let mut host = BrowserHost::new(FetchDriver::default(), limits, Duration::from_secs(10));
    let scan = host.scan(Some(&server.url("index.html")), ScanMode::Html)?;
    println!("raw {} chars -> {} chars, truncated={}", scan.raw_len, scan.char_len, scan.truncated);
    println!("{}", scan.content);
    Ok(())
}
