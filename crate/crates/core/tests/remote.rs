//! The remote scorer against an in-process fill-mask server.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use flate2::write::GzEncoder;
use flate2::Compression;
use tiny_http::{Header, Response, Server};

use ckprobe_core::kb;
use ckprobe_core::probe::{self, RunOptions};
use ckprobe_core::scorer::wire::{self, ErrorResponse, FillMaskRequest, InfoResponse};
use ckprobe_core::scorer::{CooccurrenceScorer, RemoteOptions, RemoteScorer, ScoreError, Scorer};
use ckprobe_core::tokenizer::{TokenSeq, Vocab};

#[derive(Clone, Copy)]
enum Mode {
    Normal,
    Gzip,
    /// Every fill-mask request fails with 503.
    Unavailable,
}

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
}

/// Serves `scorer` over the wire protocol, reporting `info_vocab` from `/v1/info`.
fn serve(scorer: Arc<dyn Scorer>, info_vocab: usize, mode: Mode) -> MockServer {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let mask_id = 4;
    for _ in 0..8 {
        let server = Arc::clone(&server);
        let scorer = Arc::clone(&scorer);
        let hits = Arc::clone(&hits);
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let json = Header::from_bytes("Content-Type", "application/json").unwrap();
                let reply = |status: u16, body: String| {
                    Response::from_string(body).with_status_code(status).with_header(json.clone())
                };
                if req.url() == wire::INFO_PATH {
                    let info = InfoResponse {
                        model: "mock".into(),
                        vocab_size: info_vocab,
                        max_len: 512,
                    };
                    let _ = req.respond(reply(200, serde_json::to_string(&info).unwrap()));
                    continue;
                }
                hits.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let error = |msg: &str| serde_json::to_string(&ErrorResponse { error: msg.into() }).unwrap();
                if let Mode::Unavailable = mode {
                    let _ = req.respond(reply(503, error("model not loaded")));
                    continue;
                }
                let parsed: FillMaskRequest = match serde_json::from_str(&body) {
                    Ok(p) => p,
                    Err(e) => {
                        let _ = req.respond(reply(400, error(&e.to_string())));
                        continue;
                    }
                };
                if parsed.token_ids.get(parsed.mask_index) != Some(&mask_id) {
                    let _ = req.respond(reply(400, error("mask_index does not point at the mask token")));
                    continue;
                }
                let seq = TokenSeq {
                    strings: vec![String::new(); parsed.token_ids.len()],
                    ids: parsed.token_ids,
                };
                let d = scorer.score_masked(&seq, parsed.mask_index).unwrap();
                let payload = wire::encode_distribution(&d);
                match mode {
                    Mode::Gzip => {
                        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
                        enc.write_all(payload.as_bytes()).unwrap();
                        let gz = Header::from_bytes("Content-Encoding", "gzip").unwrap();
                        let resp = Response::from_data(enc.finish().unwrap())
                            .with_header(json.clone())
                            .with_header(gz);
                        let _ = req.respond(resp);
                    }
                    _ => {
                        let _ = req.respond(reply(200, payload));
                    }
                }
            }
        });
    }
    MockServer { url, hits }
}

fn toy(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy").join(name)
}

fn toy_scorer() -> (Arc<Vocab>, Arc<CooccurrenceScorer>) {
    let vocab = Arc::new(Vocab::load(toy("vocab.txt")).unwrap());
    let corpus = std::fs::read_to_string(toy("corpus.txt")).unwrap();
    let lines: Vec<&str> = corpus.lines().collect();
    let scorer = Arc::new(CooccurrenceScorer::build(&lines, vocab.clone(), 1.0).unwrap());
    (vocab, scorer)
}

fn query(vocab: &Vocab, text: &str) -> (TokenSeq, usize) {
    let mut seq = TokenSeq::default();
    seq.push(vocab.cls_id(), "[CLS]".into());
    seq.extend(vocab.tokenize(text));
    let mask = seq.len();
    seq.push(vocab.mask_id(), "[MASK]".into());
    seq.push(vocab.sep_id(), "[SEP]".into());
    (seq, mask)
}

fn quick_options() -> RemoteOptions {
    RemoteOptions {
        retry_backoff: Duration::from_millis(5),
        ..RemoteOptions::default()
    }
}

#[test]
fn remote_distribution_is_bit_identical_to_local() {
    let (vocab, local) = toy_scorer();
    let server = serve(local.clone(), vocab.len(), Mode::Normal);
    let remote = RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap();
    assert_eq!(remote.info().model, "mock");
    let (seq, mask) = query(&vocab, "hot and");
    let expected = local.score_masked(&seq, mask).unwrap();
    assert!(expected.logprobs().iter().all(|lp| lp.is_finite()));
    assert_eq!(remote.score_masked(&seq, mask).unwrap(), expected);
}

#[test]
fn remote_probe_run_matches_local_run() {
    let (vocab, local) = toy_scorer();
    let server = serve(local.clone(), vocab.len(), Mode::Normal);
    let remote = RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap();
    let (triples, _) = kb::parse_assertions(kb::open_dump(toy("conceptnet.tsv")).unwrap()).unwrap();
    let groups = kb::build_probe_set(&triples, &vocab);
    let (queries, _) = probe::render_queries(&groups, &probe::default_templates(), &vocab).unwrap();
    let options = RunOptions::default();
    let a = probe::run_probe(&queries, local.as_ref(), &vocab, &options);
    let b = probe::run_probe(&queries, &remote, &vocab, &options);
    assert_eq!(a, b);
    assert_eq!(server.hits.load(Ordering::SeqCst), queries.len());
}

#[test]
fn vocab_mismatch_is_a_config_error() {
    let (vocab, local) = toy_scorer();
    let server = serve(local, vocab.len() + 1, Mode::Normal);
    match RemoteScorer::connect(&server.url, &vocab, quick_options()) {
        Err(ScoreError::Config(msg)) => assert!(msg.contains("vocabulary"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn error_status_is_a_protocol_error_without_retry() {
    let (vocab, local) = toy_scorer();
    let server = serve(local, vocab.len(), Mode::Unavailable);
    let remote = RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap();
    let (seq, mask) = query(&vocab, "dog is a");
    match remote.score_masked(&seq, mask) {
        Err(ScoreError::Protocol { status, message }) => {
            assert_eq!(status, 503);
            assert_eq!(message, "model not loaded");
        }
        other => panic!("expected a protocol error, got {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn bad_query_is_rejected_before_sending() {
    let (vocab, local) = toy_scorer();
    let server = serve(local, vocab.len(), Mode::Normal);
    let remote = RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap();
    let (seq, mask) = query(&vocab, "dog is a");
    assert!(matches!(remote.score_masked(&seq, mask + 1), Err(ScoreError::BadQuery(_))));
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn unreachable_server_is_a_transport_error_after_retries() {
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let (vocab, _) = toy_scorer();
    match RemoteScorer::connect(&format!("http://127.0.0.1:{port}"), &vocab, quick_options()) {
        Err(ScoreError::Transport { attempts, retryable, .. }) => {
            assert_eq!(attempts, 3);
            assert!(retryable);
        }
        other => panic!("expected a transport error, got {other:?}"),
    }
}

#[test]
fn large_gzip_response_decodes() {
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].map(String::from).to_vec();
    tokens.extend((0..60_000).map(|i| format!("t{i}")));
    let vocab = Arc::new(Vocab::from_tokens(&tokens).unwrap());
    let corpus = ["t1 t2 t3", "t2 t3 t4 t4"];
    let local = Arc::new(CooccurrenceScorer::build(&corpus, vocab.clone(), 0.5).unwrap());
    let (seq, mask) = query(&vocab, "t2 t3");
    let expected = local.score_masked(&seq, mask).unwrap();
    assert!(wire::encode_distribution(&expected).len() > 1_000_000);

    let server = serve(local, vocab.len(), Mode::Gzip);
    let remote = RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap();
    assert_eq!(remote.score_masked(&seq, mask).unwrap(), expected);
}

#[test]
fn concurrent_identical_requests_agree() {
    let (vocab, local) = toy_scorer();
    let server = serve(local.clone(), vocab.len(), Mode::Normal);
    let remote = Arc::new(RemoteScorer::connect(&server.url, &vocab, quick_options()).unwrap());
    let (seq, mask) = query(&vocab, "butter can be made of");
    let expected = local.score_masked(&seq, mask).unwrap();
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let remote = Arc::clone(&remote);
            let seq = seq.clone();
            thread::spawn(move || remote.score_masked(&seq, mask).unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), expected);
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 100);
}
