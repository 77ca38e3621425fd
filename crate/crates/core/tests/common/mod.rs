#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::Duration;

use prober_core::model::{ExecutionBudget, Executor, RecordSet};
use prober_core::service::router;
use prober_core::store::config::PipelineConfig;
use prober_core::store::{run_pipeline, TraceStore};

pub fn store_run(root: &Path, id: &str, config: &str, input: &str) {
    let config = PipelineConfig::parse(config).unwrap();
    let input = RecordSet::parse_jsonl(input, 0).unwrap();
    let (t, _) = run_pipeline(
        &config,
        None,
        &input,
        &Executor::new(),
        &mut ExecutionBudget::unlimited(),
        Some(id),
        Some(0),
    )
    .unwrap();
    TraceStore::new(root).save(&t).unwrap();
}

pub fn supporters(names: &[&str]) -> String {
    names
        .iter()
        .map(|n| format!("{{\"id\":\"{n}\",\"value\":\"s\"}}\n"))
        .collect()
}

pub fn start(root: &Path) -> SocketAddr {
    let store = TraceStore::new(root);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(store)).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

pub fn send(
    addr: SocketAddr,
    method: &str,
    path: &str,
    body: Option<&str>,
    close: bool,
) -> TcpStream {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let body = body.unwrap_or("");
    let conn = if close { "Connection: close\r\n" } else { "" };
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: test\r\n{conn}Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    s
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: String,
}

pub fn dechunk(mut raw: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = raw.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        raw = &rest[n + 2..];
    }
}

pub fn call(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> Reply {
    let mut s = send(addr, method, path, body, true);
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, body) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split(' ').nth(1).unwrap().parse().unwrap();
    let header = |name: &str| {
        head.lines()
            .find_map(|l| {
                let (k, v) = l.split_once(':')?;
                k.eq_ignore_ascii_case(name).then(|| v.trim().to_string())
            })
            .unwrap_or_default()
    };
    let body = if header("transfer-encoding") == "chunked" {
        dechunk(body)
    } else {
        body.to_string()
    };
    Reply {
        status,
        content_type: header("content-type"),
        body,
    }
}

pub fn events(body: &str) -> Vec<(String, serde_json::Value)> {
    body.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = Some(serde_json::from_str(v.trim()).unwrap());
                }
            }
            Some((name?, data?))
        })
        .collect()
}

pub const THRESHOLD2: &str =
    r#"{"nodes":[{"id":"th","kind":"support_threshold","params":{"t":2}}]}"#;

pub fn threshold_output(root: &Path, run: &str) -> String {
    let run = TraceStore::new(root).open(run).unwrap();
    let id = run
        .node_run("th")
        .unwrap()
        .output
        .iter()
        .next()
        .unwrap()
        .id
        .local
        .clone();
    id
}

pub fn counted_threshold(counter: &Path) -> String {
    let script = r#"echo x >> "$0"; sleep 0.1; n=$(grep -c . "$2"); if [ "$n" -ge 2 ]; then echo '{"id":"o","value":"s"}'; fi"#;
    serde_json::json!({"nodes": [{"id": "th", "kind": "external", "params": {
        "command": ["sh", "-c", script, counter.to_str().unwrap()]
    }}]})
    .to_string()
}

pub fn count(counter: &Path) -> usize {
    std::fs::read_to_string(counter)
        .map(|s| s.lines().count())
        .unwrap_or(0)
}

/// Opens a stream, reads until the first `miset` event, hangs up, and
/// returns the call count at hang-up and after things settle.
pub fn disconnect_after_first_miset(
    addr: SocketAddr,
    path: &str,
    body: &str,
    counter: &Path,
) -> (usize, usize) {
    let mut s = send(addr, "POST", path, Some(body), false);
    let mut seen = Vec::new();
    let mut buf = [0u8; 4096];
    while !String::from_utf8_lossy(&seen).contains("event: miset") {
        let n = s.read(&mut buf).unwrap();
        assert!(n > 0, "stream ended early");
        seen.extend_from_slice(&buf[..n]);
    }
    let at_disconnect = count(counter);
    drop(s);
    std::thread::sleep(Duration::from_millis(1500));
    (at_disconnect, count(counter))
}
