#![allow(dead_code)]

use std::fs;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nc_cli::service::{router, AppState, ServiceConfig};
use serde_json::Value;
use tempfile::TempDir;
use tungstenite::client::IntoClientRequest;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &to);
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
}

/// A scratch copy of a fixture project.
pub fn copy_fixture(name: &str) -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join(name);
    copy_dir(&fixtures_root().join(name), &root);
    (tmp, root)
}

pub fn nc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nc"))
        .args(args)
        .current_dir(dir)
        .env_remove("NC_PROJECT_ROOT")
        .output()
        .expect("nc runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Runs `nc` and returns stdout, failing the test on a nonzero exit.
pub fn nc_ok(dir: &Path, args: &[&str]) -> String {
    let o = nc(dir, args);
    assert!(o.status.success(), "nc {args:?} exited {:?}\n{}{}", o.status.code(), stdout(&o), stderr(&o));
    stdout(&o)
}

pub fn nc_json(dir: &Path, args: &[&str]) -> Value {
    let mut all = vec!["--json"];
    all.extend_from_slice(args);
    serde_json::from_str(&nc_ok(dir, &all)).unwrap()
}

pub struct Server {
    pub base: String,
    pub ws_base: String,
    pub library: TempDir,
    rt: tokio::runtime::Runtime,
}

impl Server {
    pub fn start(projects: &[&Path]) -> Server {
        let library = tempfile::tempdir().unwrap();
        let config = ServiceConfig {
            library: library.path().to_path_buf(),
            projects: projects.iter().map(|p| p.to_path_buf()).collect(),
            app_dir: None,
            workers: 1,
        };
        let state = AppState::new(&config).unwrap();
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        rt.spawn(async move { axum::serve(listener, router(state, None)).await.unwrap() });
        Server {
            base: format!("http://{addr}"),
            ws_base: format!("ws://{addr}"),
            library,
            rt,
        }
    }

    fn agent() -> ureq::Agent {
        ureq::Agent::config_builder().http_status_as_error(false).build().into()
    }

    /// Status and body, parsed as JSON when possible.
    pub fn call(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let (status, text) = self.call_text(method, path, body);
        let v = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, v)
    }

    pub fn call_text(&self, method: &str, path: &str, body: Option<Value>) -> (u16, String) {
        let url = format!("{}{path}", self.base);
        let agent = Server::agent();
        let resp = match (method, body) {
            ("GET", _) => agent.get(&url).call(),
            ("POST", Some(b)) => agent.post(&url).send_json(&b),
            ("POST", None) => agent.post(&url).send_empty(),
            _ => panic!("method {method}"),
        };
        let mut resp = resp.unwrap();
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().unwrap())
    }

    pub fn ok(&self, method: &str, path: &str, body: Option<Value>) -> Value {
        let (status, v) = self.call(method, path, body);
        assert!((200..300).contains(&status), "{method} {path}: {status} {v}");
        v
    }

    /// Polls until the run is idle and returns its record.
    pub fn wait(&self, run: &str) -> Value {
        let started = Instant::now();
        loop {
            let r = self.ok("GET", &format!("/runs/{run}"), None);
            let phase = r["phase"].as_str().unwrap_or_default();
            if r["active"] == false && ["Completed", "Failed", "Paused"].contains(&phase) {
                return r;
            }
            assert!(started.elapsed() < Duration::from_secs(60), "run {run} never finished: {r}");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn ws(&self, run: &str) -> WebSocket<MaybeTlsStream<TcpStream>> {
        let mut req = format!("{}/runs/{run}/ws", self.ws_base).into_client_request().unwrap();
        req.headers_mut()
            .insert("Sec-WebSocket-Protocol", nc_cli::service::EVENTS_PROTOCOL.parse().unwrap());
        let (mut socket, resp) = tungstenite::connect(req).unwrap();
        assert_eq!(
            resp.headers().get("Sec-WebSocket-Protocol").and_then(|v| v.to_str().ok()),
            Some(nc_cli::service::EVENTS_PROTOCOL)
        );
        if let MaybeTlsStream::Plain(s) = socket.get_mut() {
            s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
        }
        socket
    }

    pub fn runtime(&self) -> &tokio::runtime::Runtime {
        &self.rt
    }
}

/// Reads events until `stop` says so.
pub fn read_events(
    socket: &mut WebSocket<MaybeTlsStream<TcpStream>>,
    mut stop: impl FnMut(&[Value]) -> bool,
) -> Vec<Value> {
    let mut out = Vec::new();
    while !stop(&out) {
        match socket.read().expect("event") {
            Message::Text(t) => out.push(serde_json::from_str(t.as_str()).unwrap()),
            Message::Close(f) => panic!("closed: {f:?}"),
            _ => {}
        }
    }
    out
}

pub fn finished(events: &[Value]) -> bool {
    events.last().is_some_and(|e| e["kind"] == "RunFinished")
}
