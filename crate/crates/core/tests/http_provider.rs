use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread::JoinHandle;

use planact::llm::{ChatMessage, CompletionError, HttpProvider, HttpProviderConfig, ModelBinding, ProviderError};
use serde_json::Value;

/// A request body and its authorization header.
type Seen = (Value, Option<String>);

/// Serves one canned (status, body) per connection and returns the request
/// bodies and authorization headers it saw.
fn serve(replies: Vec<(u16, String)>) -> (String, JoinHandle<Vec<Seen>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push((serde_json::from_slice(&buf).unwrap(), auth));
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (base, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn binding(base: String, key_env: Option<&str>) -> ModelBinding {
    let provider = HttpProvider::new(HttpProviderConfig {
        base_url: base,
        api_key_env: key_env.map(str::to_string),
        timeout_secs: 10,
        max_retries: 2,
        backoff_base_ms: 1,
        backoff_cap_ms: 5,
    })
    .unwrap();
    ModelBinding::new(Arc::new(provider), "llama-3.3-70b")
}

#[test]
fn one_request_with_greedy_sampling() {
    let (base, server) = serve(vec![(200, ok_body("do(action=\"Scroll Down\")"))]);
    let reply = binding(base, None)
        .complete(vec![ChatMessage::system("sys"), ChatMessage::user("html")])
        .unwrap();
    assert_eq!(reply, "do(action=\"Scroll Down\")");
    let seen = server.join().unwrap();
    assert_eq!(seen.len(), 1);
    let (body, auth) = &seen[0];
    assert_eq!(body["model"], "llama-3.3-70b");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 4196);
    assert_eq!(body["messages"].as_array().unwrap().len(), 2);
    assert_eq!(body["messages"][1]["role"], "user");
    assert!(auth.is_none());
}

#[test]
fn transient_errors_are_retried() {
    let (base, server) = serve(vec![(503, "{}".into()), (200, ok_body("fine"))]);
    assert_eq!(binding(base, None).complete(vec![ChatMessage::user("q")]).unwrap(), "fine");
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (base, server) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
    let err = binding(base, None).complete(vec![ChatMessage::user("q")]).unwrap_err();
    assert!(matches!(
        err,
        CompletionError::Provider(ProviderError::HttpStatus { status: 400, .. })
    ));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn api_key_comes_from_the_environment() {
    std::env::set_var("PLANACT_TEST_KEY", "sekret");
    let (base, server) = serve(vec![(200, ok_body("ok"))]);
    binding(base, Some("PLANACT_TEST_KEY")).complete(vec![ChatMessage::user("q")]).unwrap();
    let seen = server.join().unwrap();
    assert_eq!(seen[0].1.as_deref(), Some("Bearer sekret"));
}
