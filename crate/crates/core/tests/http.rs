//! Wire-protocol tests against local mock servers.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rebut_core::critics::{Critic, CriticError, CritiqueSource, FallbackCritic, HttpCriticService, ModelCritic, RuleCritic};
use rebut_core::extract::{extract_entities, ExtractError, HttpTagger};
use rebut_core::llm::{ChatClient, ChatMessage, ChatSettings, HttpChatClient, LlmError};
use rebut_core::model::ElementKind;
use serde_json::{json, Value};

type Seen = Arc<Mutex<Vec<(String, String)>>>;

/// Serves canned `(status, body)` replies in order and records each
/// request's path and body.
fn serve(replies: Vec<(u16, String)>) -> (String, Seen) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let seen: Seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let mut replies: VecDeque<_> = replies.into();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            log.lock().unwrap().push((req.url().to_string(), body));
            let (status, text) = replies.pop_front().unwrap_or((500, "exhausted".into()));
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
        }
    });
    (url, seen)
}

fn completion(content: Value) -> String {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] }).to_string()
}

fn chat(url: &str, retries: u32) -> HttpChatClient {
    let settings = ChatSettings {
        endpoint: url.to_string(),
        model: "m".into(),
        max_tokens: 64,
        seed: Some(7),
        retries,
        timeout_secs: 5,
        backoff_ms: 1,
        ..ChatSettings::default()
    };
    HttpChatClient::new(settings, None).unwrap()
}

#[test]
fn chat_passthrough_and_request_shape() {
    let (url, seen) = serve(vec![(200, completion(json!("canned answer")))]);
    let c = chat(&url, 0).complete(&[ChatMessage::system("s"), ChatMessage::user("u")]).unwrap();
    assert_eq!(c.text, "canned answer");
    assert_eq!(c.attempts, 1);
    let (path, body) = seen.lock().unwrap()[0].clone();
    assert_eq!(path, "/v1/chat/completions");
    let body: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["model"], "m");
    assert_eq!(body["temperature"], 1.0);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["seed"], 7);
    assert_eq!(body["messages"][1], json!({ "role": "user", "content": "u" }));
}

#[test]
fn chat_retries_server_errors() {
    let (url, _) = serve(vec![(500, "oops".into()), (200, completion(json!("fine")))]);
    let c = chat(&url, 1).complete(&[ChatMessage::user("u")]).unwrap();
    assert_eq!((c.text.as_str(), c.attempts), ("fine", 2));
}

#[test]
fn chat_retry_budget_exhausts() {
    let (url, seen) = serve(vec![(503, "".into()), (503, "".into()), (200, completion(json!("late")))]);
    let err = chat(&url, 1).complete(&[ChatMessage::user("u")]).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }));
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn chat_empty_and_malformed() {
    let (url, _) = serve(vec![
        (200, completion(json!(""))),
        (200, completion(Value::Null)),
        (200, "{\"choices\": []}".into()),
        (400, "bad request".into()),
    ]);
    let c = chat(&url, 0);
    let m = [ChatMessage::user("u")];
    assert!(matches!(c.complete(&m), Err(LlmError::EmptyCompletion)));
    assert!(matches!(c.complete(&m), Err(LlmError::EmptyCompletion)));
    assert!(matches!(c.complete(&m), Err(LlmError::Protocol(_))));
    assert!(matches!(c.complete(&m), Err(LlmError::Rejected { status: 400, .. })));
}

#[test]
fn chat_unreachable_is_transport_error() {
    let err = chat("http://127.0.0.1:9", 0).complete(&[ChatMessage::user("u")]).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 1, .. }));
}

fn critic_service(url: &str) -> Arc<HttpCriticService> {
    Arc::new(HttpCriticService::new(url, Duration::from_secs(5)).unwrap())
}

#[test]
fn critic_protocol_positive_and_negative() {
    let (url, seen) = serve(vec![
        (200, json!({ "positive": true, "critique": "The numbers are correct" }).to_string()),
        (200, json!({ "positive": false, "critique": "122,494 is not correct, the correct number is 7,636" }).to_string()),
    ]);
    let critic = ModelCritic::new(ElementKind::Number, critic_service(&url));
    let c = critic.critique("claim", "evidence", "response").unwrap();
    assert!(c.positive && c.flagged.is_empty());
    assert_eq!(c.source, CritiqueSource::Model);
    let c = critic.critique("claim", "evidence", "response").unwrap();
    assert!(!c.positive);
    assert_eq!(c.flagged[0].surface, "122,494");
    assert_eq!(c.flagged[0].correction.as_deref(), Some("7,636"));
    let (path, body) = seen.lock().unwrap()[0].clone();
    assert_eq!(path, "/critique");
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap(),
        json!({ "element_kind": "number", "claim": "claim", "evidence": "evidence", "response": "response" })
    );
}

#[test]
fn critic_protocol_errors() {
    let (url, _) = serve(vec![(200, "{\"positive\": \"yes\"}".into()), (404, "".into())]);
    let critic = ModelCritic::new(ElementKind::Topic, critic_service(&url));
    assert!(matches!(critic.critique("c", "e", "r"), Err(CriticError::Protocol(_))));
    assert!(matches!(critic.critique("c", "e", "r"), Err(CriticError::Protocol(_))));

    let down = ModelCritic::new(ElementKind::Number, critic_service("http://127.0.0.1:9"));
    assert!(matches!(down.critique("c", "e", "r"), Err(CriticError::Transport(_))));
    let fallback = FallbackCritic::new(Arc::new(down), Arc::new(RuleCritic::new(ElementKind::Number)));
    let c = fallback.critique("c", "Only 7,636 people.", "Only 7,636 people.").unwrap();
    assert_eq!(c.source, CritiqueSource::Rule);
    assert!(c.positive);
}

#[test]
fn tagger_protocol() {
    let text = "Reports from the World Health Organization in 2020.";
    let spans = json!({ "spans": [{ "surface": "World Health Organization", "start": 17, "end": 42, "kind": "entity" }] });
    let (url, seen) = serve(vec![
        (200, spans.to_string()),
        (200, json!({ "spans": [{ "surface": "Health", "start": 0, "end": 6, "kind": "entity" }] }).to_string()),
        (500, "".into()),
    ]);
    let tagger = HttpTagger::new(&url, Duration::from_secs(5)).unwrap();
    let found = extract_entities(text, Some(&tagger)).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!((found[0].surface(), found[0].start(), found[0].end()), ("World Health Organization", 17, 42));
    assert_eq!(seen.lock().unwrap()[0].0, "/tag");
    assert!(matches!(extract_entities(text, Some(&tagger)), Err(ExtractError::Protocol(_))));
    assert!(matches!(extract_entities(text, Some(&tagger)), Err(ExtractError::Transport(_))));
}
