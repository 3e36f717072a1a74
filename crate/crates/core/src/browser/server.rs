use std::path::{Component, Path, PathBuf};
use std::thread::JoinHandle;

use tiny_http::{Header, Response, Server};

/// Serves a directory of fixture pages on a loopback port until dropped.
pub struct StaticServer {
    server: std::sync::Arc<Server>,
    base: String,
    worker: Option<JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("js") => "application/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    if full.is_dir() { Some(full.join("index.html")) } else { Some(full) }
}

impl StaticServer {
    pub fn start(root: &Path) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = std::sync::Arc::new(server);
        let root = root.to_path_buf();
        let s = server.clone();
        let worker = std::thread::spawn(move || {
            for req in s.incoming_requests() {
                let resp = match resolve(&root, req.url()).and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
                    Some((path, bytes)) => {
                        let header = Header::from_bytes("Content-Type", content_type(&path)).expect("static header");
                        Response::from_data(bytes).with_header(header)
                    }
                    None => Response::from_string("not found").with_status_code(404),
                };
                let _ = req.respond(resp);
            }
        });
        Ok(Self {
            server,
            base: format!("http://{addr}"),
            worker: Some(worker),
        })
    }

    pub fn url(&self, page: &str) -> String {
        format!("{}/{}", self.base, page.trim_start_matches('/'))
    }
}

impl Drop for StaticServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_files_and_refuses_traversal() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.html"), "<p>hi</p>").unwrap();
        let s = StaticServer::start(dir.path()).unwrap();
        let mut resp = ureq::get(&s.url("a.html")).call().unwrap();
        assert_eq!(resp.body_mut().read_to_string().unwrap(), "<p>hi</p>");
        let err = ureq::get(&s.url("missing.html")).call().unwrap_err();
        assert!(err.to_string().contains("404"));
        assert!(resolve(dir.path(), "/../etc/passwd").is_none());
    }
}
