//! Socket front ends for [`ServerCore`]: length-prefixed TCP on one port;
//! a web-socket endpoint at `/ws` plus static files on the other.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentsim_core::presence;
use crossbeam_channel::{Receiver, TryRecvError};
use tungstenite::handshake::server::{ErrorResponse, Request, Response};

use crate::frame::{decode_payload, encode_frame, encode_payload, FrameDecoder};
use crate::protocol::ServerMode;
use crate::server::{Batch, ServerCore, SessionId};

pub const DEFAULT_TCP_PORT: u16 = 2000;
pub const DEFAULT_WS_PORT: u16 = 2001;
pub const WS_PATH: &str = "/ws";

const INDEX_HTML: &str = include_str!("index.html");
const MAX_HEAD: usize = 16 * 1024;
const MAX_UPLOAD: usize = 1024 * 1024;
const WS_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub tcp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    /// Directory served over HTTP on the web-socket port. A built-in page
    /// is served at `/` when absent.
    pub static_dir: Option<PathBuf>,
    /// Where `POST /responses` stores validated questionnaire CSVs; uploads
    /// are refused when absent.
    pub responses_dir: Option<PathBuf>,
}

impl ServeConfig {
    pub fn localhost(tcp_port: u16, ws_port: u16) -> Self {
        Self {
            tcp_addr: SocketAddr::from(([127, 0, 0, 1], tcp_port)),
            ws_addr: SocketAddr::from(([127, 0, 0, 1], ws_port)),
            static_dir: None,
            responses_dir: None,
        }
    }
}

type Shared = Arc<Mutex<ServerCore>>;

fn lock(core: &Shared) -> MutexGuard<'_, ServerCore> {
    // a panicked handler leaves the core usable; the state is only
    // mutated between complete messages
    core.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug)]
pub struct ServerHandle {
    pub tcp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    core: Shared,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn core(&self) -> &Arc<Mutex<ServerCore>> {
        &self.core
    }

    /// Blocks until [`ServerHandle::shutdown`] is called from elsewhere or
    /// the process ends.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop_all(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accepts
        let _ = TcpStream::connect(self.tcp_addr);
        let _ = TcpStream::connect(self.ws_addr);
        for s in self.streams.lock().unwrap_or_else(|p| p.into_inner()).iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop_all();
        }
    }
}

/// Binds both listeners and starts serving. In realtime mode a clock
/// thread ticks the world at its fixed rate.
pub fn start(core: ServerCore, config: ServeConfig) -> io::Result<ServerHandle> {
    let tcp = TcpListener::bind(config.tcp_addr)?;
    let ws = TcpListener::bind(config.ws_addr)?;
    let (tcp_addr, ws_addr) = (tcp.local_addr()?, ws.local_addr()?);
    let realtime = core.mode() == ServerMode::Realtime;
    let period = Duration::from_secs_f64(1.0 / core.tick_hz());
    let core: Shared = Arc::new(Mutex::new(core));
    let stop = Arc::new(AtomicBool::new(false));
    let streams = Arc::new(Mutex::new(Vec::new()));
    let http = Arc::new(HttpConfig {
        static_dir: config.static_dir,
        responses_dir: config.responses_dir,
        uploads: AtomicU64::new(0),
    });
    let mut threads = Vec::new();
    {
        let (core, stop, streams) = (core.clone(), stop.clone(), streams.clone());
        threads.push(thread::spawn(move || {
            accept_loop(tcp, &stop, &streams, |s| {
                let core = core.clone();
                thread::spawn(move || serve_tcp(s, core));
            })
        }));
    }
    {
        let (core, stop, streams) = (core.clone(), stop.clone(), streams.clone());
        threads.push(thread::spawn(move || {
            accept_loop(ws, &stop, &streams, |s| {
                let (core, http) = (core.clone(), http.clone());
                thread::spawn(move || serve_http(s, core, &http));
            })
        }));
    }
    if realtime {
        let (core, stop) = (core.clone(), stop.clone());
        threads.push(thread::spawn(move || clock(core, &stop, period)));
    }
    tracing::info!(%tcp_addr, %ws_addr, "serving");
    Ok(ServerHandle {
        tcp_addr,
        ws_addr,
        core,
        stop,
        streams,
        threads,
    })
}

fn accept_loop(
    listener: TcpListener,
    stop: &AtomicBool,
    streams: &Mutex<Vec<TcpStream>>,
    mut spawn: impl FnMut(TcpStream),
) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                if let Ok(c) = s.try_clone() {
                    let mut all = streams.lock().unwrap_or_else(|p| p.into_inner());
                    all.retain(|s| s.peer_addr().is_ok());
                    all.push(c);
                }
                spawn(s);
            }
            Err(e) => tracing::warn!(error = %e, "accept failed"),
        }
    }
}

fn clock(core: Shared, stop: &AtomicBool, period: Duration) {
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        }
        next += period;
        if let Err(fault) = lock(&core).tick() {
            tracing::error!(detail = %fault.0, "world fault, clock stopped");
            return;
        }
        // fall behind rather than burst when a tick overran
        if Instant::now() > next + period {
            next = Instant::now() + period;
        }
    }
}

fn handle(core: &Shared, sid: SessionId, msg: crate::protocol::Message) {
    if let Err(fault) = lock(core).handle(sid, msg) {
        tracing::error!(session = sid, detail = %fault.0, "world fault during tick");
    }
}

fn serve_tcp(stream: TcpStream, core: Shared) {
    let (sid, rx) = lock(&core).connect();
    let writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => {
            lock(&core).disconnect(sid);
            return;
        }
    };
    let out = thread::spawn(move || write_frames(writer, rx));
    let mut reader = stream;
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = match reader.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        while let Some(next) = decoder.next_message() {
            match next {
                Ok(msg) => handle(&core, sid, msg),
                Err(e) => {
                    lock(&core).reject_frame(sid, &e.to_string());
                    if e.is_fatal() {
                        break 'read;
                    }
                }
            }
        }
        if !lock(&core).is_connected(sid) {
            break;
        }
    }
    lock(&core).disconnect(sid);
    let _ = out.join();
    let _ = reader.shutdown(Shutdown::Both);
}

/// Drains the outbox until the session is dropped, then closes the socket.
fn write_frames(mut w: TcpStream, rx: Receiver<Batch>) {
    'outer: for batch in rx {
        for m in batch {
            let Ok(bytes) = encode_frame(&m) else {
                tracing::error!(kind = m.type_name(), "unencodable outgoing message");
                continue;
            };
            if w.write_all(&bytes).is_err() {
                break 'outer;
            }
        }
    }
    let _ = w.shutdown(Shutdown::Both);
}

#[derive(Debug)]
struct HttpConfig {
    static_dir: Option<PathBuf>,
    responses_dir: Option<PathBuf>,
    uploads: AtomicU64,
}

#[derive(Debug)]
struct RequestHead {
    method: String,
    path: String,
    upgrade: bool,
    content_length: usize,
    len: usize,
}

fn parse_head(bytes: &[u8]) -> Option<RequestHead> {
    let end = bytes.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let text = std::str::from_utf8(&bytes[..end]).ok()?;
    let mut lines = text.split("\r\n");
    let mut first = lines.next()?.split(' ');
    let method = first.next()?.to_string();
    let target = first.next()?;
    let path = target.split(['?', '#']).next().unwrap_or("/").to_string();
    let mut upgrade = false;
    let mut content_length = 0;
    for line in lines {
        let Some((k, v)) = line.split_once(':') else { continue };
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim());
        if k == "upgrade" && v.eq_ignore_ascii_case("websocket") {
            upgrade = true;
        } else if k == "content-length" {
            content_length = v.parse().ok()?;
        }
    }
    Some(RequestHead {
        method,
        path,
        upgrade,
        content_length,
        len: end,
    })
}

/// Peeks until a full request head is buffered, leaving it unread.
fn peek_head(stream: &TcpStream) -> Option<RequestHead> {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut buf = vec![0u8; MAX_HEAD];
    loop {
        let n = stream.peek(&mut buf).ok()?;
        if n == 0 {
            return None;
        }
        if let Some(h) = parse_head(&buf[..n]) {
            return Some(h);
        }
        if n == buf.len() || Instant::now() > deadline {
            return None;
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn serve_http(mut stream: TcpStream, core: Shared, http: &HttpConfig) {
    let Some(head) = peek_head(&stream) else {
        let _ = respond(&mut stream, 400, "text/plain", b"bad request");
        let _ = stream.shutdown(Shutdown::Both);
        return;
    };
    if head.upgrade {
        if head.path == WS_PATH {
            serve_ws(stream, core);
        } else {
            let _ = stream.read_exact(&mut vec![0; head.len]);
            let _ = respond(&mut stream, 404, "text/plain", b"web-socket endpoint is /ws");
            let _ = stream.shutdown(Shutdown::Both);
        }
        return;
    }
    let mut raw = vec![0; head.len];
    if stream.read_exact(&mut raw).is_err() {
        let _ = stream.shutdown(Shutdown::Both);
        return;
    }
    let _ = match (head.method.as_str(), head.path.as_str()) {
        ("POST", "/responses") => receive_responses(&mut stream, &head, http),
        ("GET", path) => serve_static(&mut stream, path, http.static_dir.as_deref()),
        _ => respond(&mut stream, 405, "text/plain", b"method not allowed"),
    };
    // the accept loop holds a clone, so dropping alone would not close
    let _ = stream.shutdown(Shutdown::Both);
}

fn respond(stream: &mut TcpStream, status: u16, content_type: &str, body: &[u8]) -> io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        413 => "Payload Too Large",
        422 => "Unprocessable Entity",
        _ => "Internal Server Error",
    };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(body)?;
    stream.flush()
}

pub fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "wav" => "audio/wav",
        "ogg" => "audio/ogg",
        "mp3" => "audio/mpeg",
        "wasm" => "application/wasm",
        "csv" => "text/csv",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a URL path onto `root`, refusing anything that would escape it.
pub fn resolve_static(root: &Path, url_path: &str) -> Option<PathBuf> {
    let rel = url_path.trim_start_matches('/');
    let rel = if rel.is_empty() || rel.ends_with('/') {
        format!("{rel}index.html")
    } else {
        rel.to_string()
    };
    let rel = Path::new(&rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn serve_static(stream: &mut TcpStream, path: &str, root: Option<&Path>) -> io::Result<()> {
    let Some(root) = root else {
        return if path == "/" || path == "/index.html" {
            respond(stream, 200, "text/html; charset=utf-8", INDEX_HTML.as_bytes())
        } else {
            respond(stream, 404, "text/plain", b"not found")
        };
    };
    let Some(file) = resolve_static(root, path) else {
        return respond(stream, 403, "text/plain", b"forbidden");
    };
    match std::fs::read(&file) {
        Ok(body) => respond(stream, 200, content_type(&file), &body),
        Err(_) => respond(stream, 404, "text/plain", b"not found"),
    }
}

fn receive_responses(stream: &mut TcpStream, head: &RequestHead, http: &HttpConfig) -> io::Result<()> {
    let Some(dir) = &http.responses_dir else {
        return respond(stream, 403, "text/plain", b"uploads are disabled");
    };
    if head.content_length > MAX_UPLOAD {
        return respond(stream, 413, "text/plain", b"too large");
    }
    let mut body = vec![0; head.content_length];
    stream.read_exact(&mut body)?;
    if let Err(e) = presence::score_csv(body.as_slice()) {
        return respond(stream, 422, "text/plain", e.to_string().as_bytes());
    }
    let n = http.uploads.fetch_add(1, Ordering::SeqCst) + 1;
    let name = format!(
        "responses_{}_{n:04}.csv",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    );
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(&name), &body)?;
    respond(stream, 200, "text/plain", name.as_bytes())
}

fn serve_ws(stream: TcpStream, core: Shared) {
    let check = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        tracing::debug!(path = %req.uri().path(), "web-socket upgrade");
        Ok(resp)
    };
    let mut ws = match tungstenite::accept_hdr(stream, check) {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!(error = %e, "web-socket handshake failed");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(WS_POLL)).is_err() {
        return;
    }
    let (sid, rx) = lock(&core).connect();
    loop {
        match ws.read() {
            Ok(tungstenite::Message::Text(text)) => match decode_payload(text.as_bytes()) {
                Ok(msg) => handle(&core, sid, msg),
                Err(e) => lock(&core).reject_frame(sid, &e.to_string()),
            },
            Ok(tungstenite::Message::Binary(_)) => {
                lock(&core).reject_frame(sid, "binary frames are not accepted; send text")
            }
            Ok(tungstenite::Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        let mut closed = false;
        loop {
            match rx.try_recv() {
                Ok(batch) => {
                    for m in batch {
                        if let Ok(text) = encode_payload(&m) {
                            if ws.send(tungstenite::Message::Text(text)).is_err() {
                                closed = true;
                            }
                        }
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    closed = true;
                    break;
                }
            }
        }
        if closed {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
    }
    lock(&core).disconnect(sid);
    let _ = ws.get_ref().shutdown(Shutdown::Both);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_paths_stay_inside_root() {
        let root = Path::new("/srv/ui");
        assert_eq!(resolve_static(root, "/"), Some(root.join("index.html")));
        assert_eq!(resolve_static(root, "/js/app.js"), Some(root.join("js/app.js")));
        assert_eq!(resolve_static(root, "/a/"), Some(root.join("a/index.html")));
        assert_eq!(resolve_static(root, "/../etc/passwd"), None);
        assert_eq!(resolve_static(root, "/a/../../x"), None);
        assert_eq!(resolve_static(root, "//etc/passwd").map(|p| p.starts_with(root)), Some(true));
    }

    #[test]
    fn head_parsing() {
        let h = parse_head(b"GET /ws?x=1 HTTP/1.1\r\nHost: a\r\nUpgrade: WebSocket\r\n\r\nrest").unwrap();
        assert_eq!((h.method.as_str(), h.path.as_str(), h.upgrade), ("GET", "/ws", true));
        assert_eq!(h.len, 53);
        assert!(parse_head(b"GET / HTTP/1.1\r\nHost: a\r\n").is_none());
        let p = parse_head(b"POST /responses HTTP/1.1\r\nContent-Length: 12\r\n\r\n").unwrap();
        assert_eq!(p.content_length, 12);
    }
}
