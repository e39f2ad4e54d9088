use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{mock_reply, ChatRequest};

/// Minimal HTTP/1.1 chat-completions server on localhost for hermetic tests.
///
/// Requests are answered in arrival order: the first ones with the scripted
/// status codes, the rest with [`mock_reply`].
pub struct MockHttpServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockHttpServer {
    pub fn start(script: Vec<u16>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let script = Arc::new(Mutex::new(VecDeque::from(script)));
        let handle = {
            let (shutdown, requests) = (shutdown.clone(), requests.clone());
            std::thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            requests.fetch_add(1, Ordering::SeqCst);
                            let status = script.lock().expect("script lock").pop_front();
                            if let Err(e) = handle_connection(stream, status) {
                                log::debug!("mock server connection error: {e}");
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
                        Err(e) => {
                            log::debug!("mock server accept error: {e}");
                            break;
                        }
                    }
                }
            })
        };
        Ok(Self { addr, shutdown, requests, handle: Some(handle) })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockHttpServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(stream: TcpStream, scripted: Option<u16>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    let (status, payload) = if !request_line.starts_with("POST /v1/chat/completions ") {
        (404, r#"{"error":"not found"}"#.to_string())
    } else if let Some(s) = scripted.filter(|&s| s != 200) {
        (s, r#"{"error":"scripted failure"}"#.to_string())
    } else {
        match serde_json::from_slice::<ChatRequest>(&body) {
            Ok(req) => {
                let c = mock_reply(&req);
                let logprobs = c.logprob.map(|lp| serde_json::json!({"content": [{"token": "", "logprob": lp}]}));
                let v = serde_json::json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": c.content}, "logprobs": logprobs}]
                });
                (200, v.to_string())
            }
            Err(e) => (400, serde_json::json!({"error": e.to_string()}).to_string()),
        }
    };
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        _ => "Error",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
