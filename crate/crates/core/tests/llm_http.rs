mod common;

use cohort_fusion::llm::{sample_analyses, ApiMode, OpenAiLlm, OpenAiLlmConfig, SamplingConfig};
use cohort_fusion::prompt::{PromptBundle, Truncation};
use cohort_fusion::Error;
use common::FakeServer;
use serde_json::json;

fn bundle() -> PromptBundle {
    PromptBundle {
        patient_id: "p-7".into(),
        text: "There is a 70-year-old female patient.".into(),
        included_cohorts: vec![],
        truncation_applied: Truncation::None,
        est_tokens: 10,
    }
}

fn client(url: &str, mode: ApiMode) -> OpenAiLlm {
    OpenAiLlm::new(OpenAiLlmConfig {
        base_url: url.into(),
        model: "m".into(),
        api_key: Some("secret".into()),
        mode,
        backoff_ms: 1,
        ..Default::default()
    })
    .unwrap()
}

fn completion_choices(n: usize) -> String {
    let choices: Vec<_> = (0..n)
        .rev()
        .map(|i| json!({"index": i, "text": format!("analysis {i}"), "logprobs": {"token_logprobs": [-0.5, -1.5]}}))
        .collect();
    json!({"choices": choices}).to_string()
}

#[test]
fn completions_request_shape_and_parse() {
    let server = FakeServer::start(|_, req| {
        let n = req.body["n"].as_u64().unwrap() as usize;
        (200, completion_choices(n))
    });
    let cfg = SamplingConfig { k: 3, temperature: 0.8, max_tokens: 64, seed: 5 };
    let s = sample_analyses(&bundle(), &cfg, &client(&server.url, ApiMode::Completions)).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s[0].text, "analysis 0");
    assert_eq!(s[2].sample_index, 2);
    assert!((s[1].perplexity - 1f64.exp()).abs() < 1e-12);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].path, "/v1/completions");
    assert_eq!(reqs[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(reqs[0].body["n"], 3);
    assert_eq!(reqs[0].body["max_tokens"], 64);
    assert_eq!(reqs[0].body["model"], "m");
    assert!(reqs[0].body["logprobs"].as_u64().is_some());
}

#[test]
fn chat_mode_reads_message_logprobs() {
    let server = FakeServer::start(|_, req| {
        assert_eq!(req.body["messages"][0]["role"], "user");
        let choices: Vec<_> = (0..req.body["n"].as_u64().unwrap())
            .map(|i| {
                json!({"index": i, "message": {"role": "assistant", "content": "ok"},
                       "logprobs": {"content": [{"token": "o", "logprob": -2.0}, {"token": "k", "logprob": 0.0}]}})
            })
            .collect();
        (200, json!({"choices": choices}).to_string())
    });
    let cfg = SamplingConfig { k: 2, ..Default::default() };
    let s = sample_analyses(&bundle(), &cfg, &client(&server.url, ApiMode::Chat)).unwrap();
    assert_eq!(s.len(), 2);
    assert!((s[0].perplexity - 1f64.exp()).abs() < 1e-12);
    assert_eq!(server.requests.lock().unwrap()[0].path, "/v1/chat/completions");
}

#[test]
fn transient_failures_are_retried() {
    let server = FakeServer::start(|i, req| {
        if i < 2 {
            (503, "{}".into())
        } else {
            (200, completion_choices(req.body["n"].as_u64().unwrap() as usize))
        }
    });
    let cfg = SamplingConfig { k: 2, ..Default::default() };
    let s = sample_analyses(&bundle(), &cfg, &client(&server.url, ApiMode::Completions)).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(server.count(), 3);
}

#[test]
fn exhausted_retries_name_patient() {
    let server = FakeServer::start(|_, _| (500, "down".into()));
    let cfg = SamplingConfig { k: 2, ..Default::default() };
    match sample_analyses(&bundle(), &cfg, &client(&server.url, ApiMode::Completions)) {
        Err(Error::Gateway { patient_id, .. }) => assert_eq!(patient_id, "p-7"),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.count(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(|_, _| (400, "bad".into()));
    let r = sample_analyses(&bundle(), &SamplingConfig::default(), &client(&server.url, ApiMode::Completions));
    assert!(matches!(r, Err(Error::Gateway { .. })));
    assert_eq!(server.count(), 1);
}

#[test]
fn missing_logprobs_is_capability_error() {
    let server = FakeServer::start(|_, req| {
        let choices: Vec<_> = (0..req.body["n"].as_u64().unwrap()).map(|i| json!({"index": i, "text": "x"})).collect();
        (200, json!({"choices": choices}).to_string())
    });
    let r = sample_analyses(&bundle(), &SamplingConfig { k: 2, ..Default::default() }, &client(&server.url, ApiMode::Completions));
    assert!(matches!(r, Err(Error::Capability(_))), "{r:?}");
}

#[test]
fn server_ignoring_n_is_topped_up() {
    let server = FakeServer::start(|_, _| (200, completion_choices(1)));
    let s = sample_analyses(&bundle(), &SamplingConfig { k: 4, ..Default::default() }, &client(&server.url, ApiMode::Completions)).unwrap();
    assert_eq!(s.len(), 4);
    assert_eq!(server.count(), 4);
    let seeds: Vec<u64> = server.requests.lock().unwrap().iter().map(|r| r.body["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![0, 1, 2, 3]);
}
