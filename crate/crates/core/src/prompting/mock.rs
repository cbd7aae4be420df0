//! Minimal local chat-completions endpoint for tests and offline demos.
//!
//! Each connection is served on its own thread; replies always close the
//! connection. The responder sees the request and its zero-based index.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl MockRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> Option<Value> {
        serde_json::from_slice(&self.body).ok()
    }

    /// Content of the last user message, if the body is a chat request.
    pub fn user_prompt(&self) -> Option<String> {
        let v = self.json()?;
        v.get("messages")?
            .as_array()?
            .iter()
            .rev()
            .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))?
            .get("content")?
            .as_str()
            .map(str::to_string)
    }
}

#[derive(Debug, Clone)]
pub enum MockReply {
    /// 200 with a chat-completion body whose first choice carries this content.
    Completion(String),
    /// Arbitrary status and raw body.
    Raw(u16, String),
    /// Sleep before answering.
    Delayed(Duration, Box<MockReply>),
}

impl MockReply {
    fn render(&self) -> (u16, String) {
        match self {
            MockReply::Completion(content) => (
                200,
                json!({
                    "id": "mock",
                    "object": "chat.completion",
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
                })
                .to_string(),
            ),
            MockReply::Raw(status, body) => (*status, body.clone()),
            MockReply::Delayed(d, inner) => {
                std::thread::sleep(*d);
                inner.render()
            }
        }
    }
}

type Responder = dyn Fn(&MockRequest, usize) -> MockReply + Send + Sync;

pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    count: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(responder: F) -> io::Result<MockServer>
    where
        F: Fn(&MockRequest, usize) -> MockReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let count = Arc::new(AtomicUsize::new(0));
        let responder: Arc<Responder> = Arc::new(responder);
        let handle = {
            let stop = stop.clone();
            let count = count.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let responder = responder.clone();
                    let count = count.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve(stream, &*responder, &count) {
                            log::debug!("mock connection error: {e}");
                        }
                    });
                }
            })
        };
        Ok(MockServer {
            addr,
            stop,
            count,
            handle: Some(handle),
        })
    }

    /// Base URL to put in an endpoint config (`.../v1`).
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests received so far.
    pub fn requests(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, responder: &Responder, count: &AtomicUsize) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    if method.is_empty() {
        return Ok(());
    }
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 {
            break;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.eq_ignore_ascii_case("content-length") {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let index = count.fetch_add(1, Ordering::SeqCst);
    let req = MockRequest {
        method,
        path,
        headers,
        body,
    };
    let (status, text) = responder(&req, index).render();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        reason(status),
        text.len()
    )?;
    stream.flush()
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}
