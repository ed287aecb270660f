mod common;

use cohort_fusion::embed::{embed_samples, embed_texts, EmbeddingCache, OpenAiEmbedder, OpenAiEmbedderConfig};
use cohort_fusion::Error;
use common::FakeServer;
use serde_json::json;

fn embedder(url: &str, batch: usize) -> OpenAiEmbedder {
    OpenAiEmbedder::new(OpenAiEmbedderConfig {
        base_url: url.into(),
        model: "e".into(),
        batch_size: batch,
        backoff_ms: 1,
        ..Default::default()
    })
    .unwrap()
}

fn respond(req: &common::Request, dim: usize) -> String {
    let data: Vec<_> = req.body["input"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| {
            let len = t.as_str().unwrap().len() as f64;
            json!({"index": i, "embedding": vec![len; dim]})
        })
        .collect();
    json!({"data": data}).to_string()
}

#[test]
fn batches_in_order() {
    let server = FakeServer::start(|_, req| {
        assert_eq!(req.body["model"], "e");
        (200, respond(req, 3))
    });
    let texts: Vec<String> = (1..=7).map(|i| "x".repeat(i)).collect();
    let v = embed_texts(&texts, &embedder(&server.url, 3)).unwrap();
    assert_eq!(v.len(), 7);
    for (i, row) in v.iter().enumerate() {
        assert_eq!(row, &vec![(i + 1) as f64; 3]);
    }
    assert_eq!(server.count(), 3);
    assert_eq!(server.requests.lock().unwrap()[0].path, "/v1/embeddings");
}

#[test]
fn inconsistent_dimension_rejected() {
    let server = FakeServer::start(|n, req| (200, respond(req, 2 + n)));
    let texts: Vec<String> = vec!["a".into(), "b".into()];
    let r = embed_texts(&texts, &embedder(&server.url, 1));
    assert!(matches!(r, Err(Error::Backend(_))));
}

#[test]
fn cache_avoids_second_request() {
    let server = FakeServer::start(|_, req| (200, respond(req, 4)));
    let e = embedder(&server.url, 8);
    let items = vec![("p".to_string(), 0usize, "abc".to_string()), ("p".to_string(), 1, "de".to_string())];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.jsonl");
    let mut cache = EmbeddingCache::open(&path).unwrap();
    let a = embed_samples(&items, &e, Some(&mut cache)).unwrap();
    let mut cache = EmbeddingCache::open(&path).unwrap();
    let b = embed_samples(&items, &e, Some(&mut cache)).unwrap();
    assert_eq!(a, b);
    assert_eq!(server.count(), 1);
    assert_eq!(a[1].sample_index, 1);
}
