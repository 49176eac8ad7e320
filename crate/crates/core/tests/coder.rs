use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use fecund_core::coder_client::{
    code_passage, code_passages, CoderBackend, CoderError, CompletionRequest, MockBackend, PassageContext, RemoteBackend,
    RemoteConfig, TemplateChain, TemplateName,
};
use fecund_core::ingest::{split_passages, RawArticle};

/// Serves one scripted `(status, body)` reply per connection and counts requests.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    std::thread::spawn(move || {
        let mut i = 0;
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let (status, text) = script.get(i).or(script.last()).cloned().unwrap();
            i += 1;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    (format!("http://{addr}/v1/chat/completions"), hits)
}

fn config(endpoint: String) -> RemoteConfig {
    RemoteConfig { endpoint, max_retries: 2, backoff_ms: 1, timeout_secs: 5, ..Default::default() }
}

fn ask(backend: &dyn CoderBackend) -> Result<String, CoderError> {
    backend.complete(&CompletionRequest { template: TemplateName::Round1, prompt: "hello", subject: "hello" })
}

fn reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn remote_returns_message_content() {
    let (url, hits) = serve(vec![(200, reply("Irrelevant"))]);
    assert_eq!(ask(&RemoteBackend::new(config(url))).unwrap(), "Irrelevant");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_retries_server_errors_then_succeeds() {
    let (url, hits) = serve(vec![(503, "busy".into()), (500, "oops".into()), (200, reply("ok"))]);
    assert_eq!(ask(&RemoteBackend::new(config(url))).unwrap(), "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_429_is_rate_limited() {
    let (url, hits) = serve(vec![(429, "slow down".into())]);
    match ask(&RemoteBackend::new(config(url))) {
        Err(CoderError::RateLimited { attempts }) => assert_eq!(attempts, 3),
        other => panic!("expected rate limit, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = serve(vec![(400, "bad".into())]);
    assert!(matches!(ask(&RemoteBackend::new(config(url))), Err(CoderError::Http { status: 400, .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_success_is_reported() {
    let (url, _) = serve(vec![(200, "{\"nope\": 1}".into())]);
    assert!(matches!(ask(&RemoteBackend::new(config(url))), Err(CoderError::MalformedReply(_))));
}

#[test]
fn unreachable_endpoint_fails_every_passage_with_transport_errors() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteBackend::new(config(format!("http://127.0.0.1:{port}/v1/chat/completions")));
    let art = RawArticle { id: "a".into(), full_text: "x".repeat(150) + "\n" + &"y".repeat(150), source_label: None };
    let passages = split_passages(&art, 100);
    let ctx: Vec<PassageContext> =
        passages.iter().map(|p| PassageContext { passage: p, article_len: 301, summary: "s", exemplars: None }).collect();
    let out = code_passages(&ctx, &backend, TemplateChain::Round1);
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|o| matches!(o.responses, Err(CoderError::Transport(_)))));
    assert_eq!(out.iter().map(|o| o.themes().count()).sum::<usize>(), 0);
}

/// Flags every passage as a caption and records prompts.
struct CaptionEverything;

impl fecund_core::registry::Named for CaptionEverything {
    fn name(&self) -> &str {
        "caption"
    }
}

impl CoderBackend for CaptionEverything {
    fn complete(&self, r: &CompletionRequest<'_>) -> Result<String, CoderError> {
        Ok(match r.template {
            TemplateName::TriageCaption => "{\"1. disclaimer?\": False, \"2. caption?\": True, \"Body?\": False}".into(),
            TemplateName::TriageRelevance => "{\"1. Refugees?\": \"No.\", \"2. Malaysia?\": \"Yes.\"}".into(),
            TemplateName::RelevanceConfidence => "{\"1. Relevant?\": \"Maybe.\", \"2. Why Not?\": \"A caption.\"}".into(),
            _ => "{\"1. Theme\": \"crowded camps\", \"2. Whose Attitude?\": \"NGOs\", \"3. Target\": \"UNHCR\", \"4. Valence\": \"Hostile.\"}"
                .into(),
        })
    }
}

#[test]
fn caption_flag_threads_through_the_chain() {
    let art = RawArticle { id: "a".into(), full_text: "Refugees at the border, pictured on Monday. ".repeat(4), source_label: None };
    let p = &split_passages(&art, 1)[0];
    let ctx = PassageContext { passage: p, article_len: p.text.chars().count(), summary: "Summary.", exemplars: None };
    let out = code_passage(&CaptionEverything, TemplateChain::Socratic, &ctx);
    let prompts: Vec<_> = out.prompts.iter().map(|(t, _)| *t).collect();
    assert_eq!(
        prompts,
        [
            TemplateName::TriageCaption,
            TemplateName::TriageRelevance,
            TemplateName::RelevanceConfidence,
            TemplateName::SocraticCode,
            TemplateName::SummaryReassess
        ]
    );
    assert!(!out.prompts[0].1.contains("flagged"));
    assert!(out.prompts[1].1.contains("Passage is a photo caption"));
    let step3 = &out.prompts[2].1;
    assert!(step3.contains("Passage is a photo caption") && step3.contains("Not about refugees"));
    assert!(out.prompts[4].1.contains("crowded camps"));
    assert_eq!(out.themes().collect::<Vec<_>>(), ["crowded camps"]);
}

#[test]
fn mock_is_deterministic_and_seed_sensitive() {
    let text = "The government announced new registration rules for refugees in Kuala Lumpur. ".repeat(6);
    let a = MockBackend::new(5);
    let b = MockBackend::new(5);
    assert_eq!(a.codes_for(&text), b.codes_for(&text));
    let differs = (0..20u64).any(|s| MockBackend::new(s).codes_for(&text) != a.codes_for(&text));
    assert!(differs);
    let art = RawArticle { id: "a".into(), full_text: text.clone() + "\n" + &text.to_uppercase(), source_label: None };
    let passages = split_passages(&art, 10);
    let ctx: Vec<PassageContext> =
        passages.iter().map(|p| PassageContext { passage: p, article_len: 1000, summary: "s", exemplars: None }).collect();
    let run = || code_passages(&ctx, &a, TemplateChain::Socratic);
    assert_eq!(run(), run());
}
