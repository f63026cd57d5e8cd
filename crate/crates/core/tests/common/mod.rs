#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use hotline_risk::gateway::{
    BackendReply, ChatBackend, ChatRequest, Gateway, GatewayError, MockBackend, Redactor, RiskLexicon,
};

/// What the stub does with one incoming request.
#[derive(Debug, Clone)]
pub enum Reply {
    /// Status line code, extra headers and body.
    Status(u16, Vec<(&'static str, String)>, String),
    /// Chat-completions success carrying `content`.
    Content(String),
    /// Read the request, then say nothing for this long.
    Stall(Duration),
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub head: String,
    pub body: String,
}

/// Single-threaded HTTP/1.1 stub serving a fixed script, one reply per
/// connection. The last reply repeats once the script runs out.
pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<Captured> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut head = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        head.push_str(&line);
    }
    let len = head
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Captured {
        head,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn reason(code: u16) -> &'static str {
    match code {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

impl StubServer {
    pub fn start(script: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            let mut i = 0;
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let Some(req) = read_request(&mut stream) else { continue };
                seen.lock().unwrap().push(req);
                let reply = script[i.min(script.len() - 1)].clone();
                i += 1;
                let (code, headers, body) = match reply {
                    Reply::Stall(d) => {
                        // hold the connection open without answering
                        thread::spawn(move || {
                            thread::sleep(d);
                            drop(stream);
                        });
                        continue;
                    }
                    Reply::Content(text) => (200, vec![], content_body(&text)),
                    Reply::Status(code, headers, body) => (code, headers, body),
                };
                let mut resp = format!(
                    "HTTP/1.1 {code} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                    reason(code),
                    body.len()
                );
                for (k, v) in headers {
                    resp.push_str(&format!("{k}: {v}\r\n"));
                }
                resp.push_str("\r\n");
                resp.push_str(&body);
                let _ = stream.write_all(resp.as_bytes());
                let _ = stream.flush();
            }
        });
        Self { base_url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

pub fn content_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]
    })
    .to_string()
}

/// Mock backend that keeps a copy of every request it receives.
pub struct RecordingBackend {
    inner: MockBackend,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl RecordingBackend {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            inner: MockBackend::new(RiskLexicon::default()),
            seen: Mutex::new(Vec::new()),
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatBackend for RecordingBackend {
    fn id(&self) -> &str {
        "recording-mock"
    }

    fn send(&self, req: &ChatRequest) -> Result<BackendReply, GatewayError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.send(req)
    }
}

pub fn recording_gateway(redactor: Redactor) -> (Gateway, Arc<RecordingBackend>) {
    let backend = RecordingBackend::new();
    let gw = Gateway::new(backend.clone(), 1, redactor);
    (gw, backend)
}
