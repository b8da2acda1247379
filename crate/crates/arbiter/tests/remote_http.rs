//! Remote-backend tests against a local mock chat-completion server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use arbiter::agents::{
    AgentRole, AgentRuntime, AgentSpec, Backend, CallCtx, CallLog, Message, RetryPolicy,
};
use arbiter::core::BiasKind;
use arbiter::parse::ParseRules;

/// Serves scripted HTTP responses, one connection per request, and captures
/// request bodies. Status 0 means "drop the connection".
struct MockServer {
    endpoint: String,
    requests: Arc<std::sync::Mutex<Vec<String>>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    fn start(responses: Vec<(u16, String)>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(std::sync::Mutex::new(Vec::new()));
        let captured = requests.clone();
        let served = AtomicUsize::new(0);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let mut stream = match stream {
                    Ok(s) => s,
                    Err(_) => break,
                };
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                // Read headers, then the declared body length.
                let body_start;
                loop {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        return;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = find_header_end(&buf) {
                        body_start = pos;
                        break;
                    }
                }
                let headers = String::from_utf8_lossy(&buf[..body_start]).to_string();
                let content_length = headers
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(str::trim).map(String::from))
                    .and_then(|v| v.parse::<usize>().ok())
                    .unwrap_or(0);
                while buf.len() < body_start + content_length {
                    let n = stream.read(&mut chunk).unwrap_or(0);
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
                let body = String::from_utf8_lossy(&buf[body_start..]).to_string();
                captured.lock().unwrap().push(format!("{headers}===BODY===\n{body}"));

                let index = served.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = responses
                    .get(index)
                    .cloned()
                    .unwrap_or((500, "{}".to_string()));
                if status == 0 {
                    continue; // drop without answering
                }
                let reason = match status {
                    200 => "OK",
                    429 => "Too Many Requests",
                    _ => "Error",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(response.as_bytes());
                if index + 1 >= responses.len() {
                    break;
                }
            }
        });
        MockServer { endpoint, requests, handle: Some(handle) }
    }

    fn requests(&self) -> Vec<String> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(handle) = self.handle.take() {
            let _ = handle; // listener thread exits once its script is spent
        }
    }
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4)
}

fn chat_body(content: &str) -> String {
    serde_json::json!({
        "id": "mock",
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn remote_agent(id: &str, endpoint: &str) -> AgentSpec {
    AgentSpec {
        id: id.into(),
        backend: Backend::RemoteChat { endpoint: endpoint.into(), api_key_env: None },
        model_name: "mock-model".into(),
        temperature: 0.01,
        max_tokens: 128,
    }
}

fn ctx(agent: &str) -> CallCtx {
    CallCtx {
        task_id: "t1".into(),
        agent: agent.into(),
        role: AgentRole::Judge,
        round: 0,
        bias: BiasKind::None,
    }
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 1,
        backoff_multiplier: 1.0,
        ..RetryPolicy::default()
    }
}

#[test]
fn rate_limited_twice_then_success_is_attempt_three() {
    let server = MockServer::start(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, chat_body("Score of Solution 1: 8\nScore of Solution 2: 7")),
    ]);
    let runtime = AgentRuntime::new(
        &[remote_agent("r", &server.endpoint)],
        fast_retry(),
        ParseRules::default(),
        None,
    )
    .unwrap();
    let mut log = CallLog::new();
    let text = runtime
        .complete(&ctx("r"), &[Message::user("judge this")], &mut log)
        .unwrap();
    assert_eq!(text, "Score of Solution 1: 8\nScore of Solution 2: 7");
    assert_eq!(log.calls.len(), 3);
    assert_eq!(log.calls.last().unwrap().attempt, 3);
    assert!(log.calls[0].error.as_deref().unwrap().contains("429"));
    assert!(log.calls[2].response.is_some());
}

#[test]
fn exhausted_attempts_surface_a_backend_error_with_agent_id() {
    let server = MockServer::start(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (429, "{}".into()),
    ]);
    let runtime = AgentRuntime::new(
        &[remote_agent("flaky", &server.endpoint)],
        fast_retry(),
        ParseRules::default(),
        None,
    )
    .unwrap();
    let mut log = CallLog::new();
    let err = runtime
        .complete(&ctx("flaky"), &[Message::user("judge this")], &mut log)
        .unwrap_err();
    let message = err.to_string();
    assert!(message.contains("flaky"), "{message}");
    assert!(message.contains("3 attempt"), "{message}");
    assert_eq!(log.calls.len(), 3);
}

#[test]
fn wire_format_is_chat_completion_style() {
    let server = MockServer::start(vec![(200, chat_body("ok"))]);
    std::env::set_var("ARBITER_KEY_WIRE", "sekrit-token");
    let mut spec = remote_agent("wire", &server.endpoint);
    spec.temperature = 0.25;
    spec.max_tokens = 77;
    let runtime =
        AgentRuntime::new(&[spec], fast_retry(), ParseRules::default(), None).unwrap();
    let mut log = CallLog::new();
    let text = runtime
        .complete(
            &ctx("wire"),
            &[Message::system("sys prompt"), Message::user("user prompt")],
            &mut log,
        )
        .unwrap();
    assert_eq!(text, "ok");

    let requests = server.requests();
    assert_eq!(requests.len(), 1);
    let (headers, body) = requests[0].split_once("===BODY===\n").unwrap();
    assert!(
        headers.to_ascii_lowercase().contains("authorization: bearer sekrit-token"),
        "{headers}"
    );
    let json: serde_json::Value = serde_json::from_str(body.trim()).unwrap();
    assert_eq!(json["model"], "mock-model");
    assert_eq!(json["temperature"], 0.25);
    assert_eq!(json["max_tokens"], 77);
    assert_eq!(json["messages"][0]["role"], "system");
    assert_eq!(json["messages"][0]["content"], "sys prompt");
    assert_eq!(json["messages"][1]["role"], "user");
    std::env::remove_var("ARBITER_KEY_WIRE");
}

#[test]
fn explicit_key_env_must_exist() {
    let spec = AgentSpec {
        id: "locked".into(),
        backend: Backend::RemoteChat {
            endpoint: "http://127.0.0.1:9/unused".into(),
            api_key_env: Some("ARBITER_TEST_NO_SUCH_KEY".into()),
        },
        model_name: "m".into(),
        temperature: 0.01,
        max_tokens: 16,
    };
    let runtime =
        AgentRuntime::new(&[spec], fast_retry(), ParseRules::default(), None).unwrap();
    let mut log = CallLog::new();
    let err = runtime
        .complete(&ctx("locked"), &[Message::user("hi")], &mut log)
        .unwrap_err();
    assert!(err.to_string().contains("ARBITER_TEST_NO_SUCH_KEY"), "{err}");
    assert!(log.calls.is_empty(), "no request should be sent without the key");
}

#[test]
fn non_retryable_status_fails_fast() {
    let server = MockServer::start(vec![(404, "{}".into())]);
    let runtime = AgentRuntime::new(
        &[remote_agent("nf", &server.endpoint)],
        fast_retry(),
        ParseRules::default(),
        None,
    )
    .unwrap();
    let mut log = CallLog::new();
    let err = runtime
        .complete(&ctx("nf"), &[Message::user("hi")], &mut log)
        .unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
    assert_eq!(log.calls.len(), 1, "a 404 must not be retried");
}
