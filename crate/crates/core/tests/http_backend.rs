//! HTTP backend tests against a local mock server (loopback only; no
//! external network).

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use polyglot_abstain::backend::{
    Backend, BackendError, GenerationRequest, HttpBackend, HttpConfig, RequestHints, RequestKind,
};

struct MockResponse {
    status: u16,
    headers: Vec<(&'static str, String)>,
    body: String,
}

impl MockResponse {
    fn ok(body: serde_json::Value) -> Self {
        Self {
            status: 200,
            headers: vec![],
            body: body.to_string(),
        }
    }

    fn status(status: u16) -> Self {
        Self {
            status,
            headers: vec![],
            body: String::new(),
        }
    }
}

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
    handle: Option<JoinHandle<Vec<String>>>,
}

impl MockServer {
    /// Serves the canned responses one connection at a time, recording the
    /// request bodies.
    fn start(responses: Vec<MockResponse>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let hits_clone = hits.clone();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for response in responses {
                let (mut stream, _) = listener.accept().unwrap();
                hits_clone.fetch_add(1, Ordering::SeqCst);
                bodies.push(read_request(&mut stream));
                let status_line = format!(
                    "HTTP/1.1 {} {}\r\n",
                    response.status,
                    if response.status == 200 { "OK" } else { "X" }
                );
                let mut head = String::new();
                head.push_str(&status_line);
                head.push_str("connection: close\r\n");
                head.push_str("content-type: application/json\r\n");
                for (name, value) in &response.headers {
                    head.push_str(&format!("{name}: {value}\r\n"));
                }
                head.push_str(&format!("content-length: {}\r\n\r\n", response.body.len()));
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(response.body.as_bytes());
            }
            bodies
        });
        Self {
            url,
            hits,
            handle: Some(handle),
        }
    }

    fn finish(mut self) -> (usize, Vec<String>) {
        let bodies = self.handle.take().unwrap().join().unwrap();
        (self.hits.load(Ordering::SeqCst), bodies)
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> String {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    // headers
    while !buf.ends_with(b"\r\n\r\n") {
        if stream.read(&mut byte).unwrap() == 0 {
            break;
        }
        buf.push(byte[0]);
    }
    let head = String::from_utf8_lossy(&buf).to_string();
    let content_length: usize = head
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let mut body = vec![0u8; content_length];
    stream.read_exact(&mut body).unwrap();
    String::from_utf8_lossy(&body).to_string()
}

fn backend_for(url: &str, max_attempts: u32) -> HttpBackend {
    HttpBackend::new(HttpConfig {
        endpoint: url.to_string(),
        model_id: "test-model".to_string(),
        api_key: Some("test-key".to_string()),
        max_attempts,
        initial_backoff_ms: 1,
        timeout_secs: 5,
    })
}

fn completion_body(text: &str) -> serde_json::Value {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}]
    })
}

fn request() -> GenerationRequest {
    GenerationRequest::new("what is 2+2?", RequestKind::Answer)
}

#[test]
fn parses_chat_completion() {
    let server = MockServer::start(vec![MockResponse::ok(completion_body("Answer: B"))]);
    let backend = backend_for(&server.url, 5);
    let resp = backend.generate(&request()).unwrap();
    assert_eq!(resp.text, "Answer: B");
    assert_eq!(backend.call_count(), 1);

    let (hits, bodies) = server.finish();
    assert_eq!(hits, 1);
    let body: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "what is 2+2?");
}

#[test]
fn retries_transient_server_errors() {
    let server = MockServer::start(vec![
        MockResponse::status(500),
        MockResponse::ok(completion_body("4")),
    ]);
    let backend = backend_for(&server.url, 5);
    let resp = backend.generate(&request()).unwrap();
    assert_eq!(resp.text, "4");
    let (hits, _) = server.finish();
    assert_eq!(hits, 2);
}

#[test]
fn honors_retry_after_on_429() {
    let server = MockServer::start(vec![
        MockResponse {
            status: 429,
            headers: vec![("retry-after", "0".to_string())],
            body: String::new(),
        },
        MockResponse::ok(completion_body("ok")),
    ]);
    let backend = backend_for(&server.url, 5);
    assert_eq!(backend.generate(&request()).unwrap().text, "ok");
    let (hits, _) = server.finish();
    assert_eq!(hits, 2);
}

#[test]
fn gives_up_after_bounded_attempts() {
    let server = MockServer::start(vec![MockResponse::status(500), MockResponse::status(500)]);
    let backend = backend_for(&server.url, 2);
    match backend.generate(&request()) {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected transport error, got {other:?}"),
    }
    let (hits, _) = server.finish();
    assert_eq!(hits, 2);
}

#[test]
fn persistent_rate_limit_is_reported() {
    let server = MockServer::start(vec![
        MockResponse {
            status: 429,
            headers: vec![("retry-after", "0".to_string())],
            body: String::new(),
        },
        MockResponse {
            status: 429,
            headers: vec![("retry-after", "0".to_string())],
            body: String::new(),
        },
    ]);
    let backend = backend_for(&server.url, 2);
    assert!(matches!(
        backend.generate(&request()),
        Err(BackendError::RateLimited { attempts: 2 })
    ));
    server.finish();
}

#[test]
fn malformed_body_is_not_retried() {
    let server = MockServer::start(vec![MockResponse {
        status: 200,
        headers: vec![],
        body: "not json".to_string(),
    }]);
    let backend = backend_for(&server.url, 5);
    assert!(matches!(
        backend.generate(&request()),
        Err(BackendError::MalformedUpstream(_))
    ));
    let (hits, _) = server.finish();
    assert_eq!(hits, 1);
}

#[test]
fn client_errors_fail_fast() {
    let server = MockServer::start(vec![MockResponse::status(404)]);
    let backend = backend_for(&server.url, 5);
    assert!(matches!(
        backend.generate(&request()),
        Err(BackendError::MalformedUpstream(_))
    ));
    let (hits, _) = server.finish();
    assert_eq!(hits, 1, "4xx other than 429 is terminal");
}

#[test]
fn score_choices_normalizes_top_logprobs() {
    let body = serde_json::json!({
        "choices": [{
            "message": {"role": "assistant", "content": "B"},
            "logprobs": {"content": [{
                "token": "B",
                "logprob": -0.2,
                "top_logprobs": [
                    {"token": "B", "logprob": -0.2},
                    {"token": "A", "logprob": -2.0},
                    {"token": " C", "logprob": -3.0},
                    {"token": "the", "logprob": -4.0}
                ]
            }]}
        }]
    });
    let server = MockServer::start(vec![MockResponse::ok(body)]);
    let backend = backend_for(&server.url, 5);
    let scores = backend
        .score_choices("q", &['A', 'B', 'C', 'D'], &RequestHints::default())
        .unwrap();
    let total: f64 = scores.values().sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(scores[&'B'] > scores[&'A']);
    assert!(scores[&'A'] > scores[&'C'], "whitespace-trimmed token matched");
    assert_eq!(scores[&'D'], 0.0, "absent label gets zero mass");
    server.finish();
}

#[test]
fn missing_logprobs_is_unsupported() {
    let server = MockServer::start(vec![MockResponse::ok(completion_body("B"))]);
    let backend = backend_for(&server.url, 5);
    assert!(matches!(
        backend.score_choices("q", &['A', 'B'], &RequestHints::default()),
        Err(BackendError::Unsupported(_))
    ));
    server.finish();
}
