use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use crs_cli::service::{params_digest, router, AppState, RecommendResponse};
use crs_core::corpus::{generate_synthetic, SyntheticSpec};
use crs_core::kg::link_entities;
use crs_core::model::{DialogueEmbedding, DialogueEncoder, HashedNgramEncoder, InferenceModel, ModelConfig, ModelParams};
use crs_core::{Error, Kg};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const D_LLM: usize = 32;

struct Failing;

impl DialogueEncoder for Failing {
    fn encode(&self, _: &str) -> crs_core::Result<DialogueEmbedding> {
        Err(Error::Embedding("upstream timed out".into()))
    }

    fn dim(&self) -> usize {
        D_LLM
    }

    fn provider_id(&self) -> String {
        "failing".into()
    }
}

fn kg() -> Kg {
    let spec = SyntheticSpec { num_clusters: 2, dialogues: 4, ..SyntheticSpec::default() };
    generate_synthetic(&spec).unwrap().kg
}

fn model(kg: &Kg) -> InferenceModel<f64> {
    let config = ModelConfig { d: 8, d_llm: D_LLM, seed: 3, ..ModelConfig::default() };
    let params = ModelParams::init(&config, kg.num_entities(), kg.num_relations());
    InferenceModel::new(config, params, kg).unwrap()
}

fn state_with(model: InferenceModel<f64>, encoder: Arc<dyn DialogueEncoder>, idle: Duration) -> Arc<AppState> {
    let kg = kg();
    Arc::new(AppState::new(model, kg, encoder, "test-hash".into(), idle))
}

fn state() -> Arc<AppState> {
    let kg = kg();
    state_with(model(&kg), Arc::new(HashedNgramEncoder::new(D_LLM).unwrap()), Duration::from_secs(1800))
}

fn app(state: &Arc<AppState>) -> Router {
    router(Arc::clone(state), None).unwrap()
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, Method::POST, "/api/session", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, session: &str, utterance: &str, k: usize) -> RecommendResponse {
    let (status, body) =
        call(app, Method::POST, "/api/recommend", Some(json!({"session_id": session, "utterance": utterance, "k": k}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    serde_json::from_value(body).unwrap()
}

fn assert_error_body(body: &Value) {
    assert!(body["error"].is_string(), "{body}");
    assert!(body["retriable"].is_boolean(), "{body}");
}

fn first_item_name(kg: &Kg) -> String {
    kg.entity(kg.items()[0]).unwrap().name.clone()
}

#[tokio::test]
async fn sessions_are_created_with_fresh_ids() {
    let s = state();
    let app = app(&s);
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    assert_eq!(s.session_count().await, 2);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app(&state());
    let (status, body) =
        call(&app, Method::POST, "/api/recommend", Some(json!({"session_id": "nope", "utterance": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error_body(&body);
}

#[tokio::test]
async fn mentioned_item_is_linked_and_excluded() {
    let s = state();
    let app = app(&s);
    let id = new_session(&app).await;
    let name = first_item_name(&s.kg);
    let utterance = format!("I watched {name} last week");
    let resp = say(&app, &id, &utterance, 10).await;
    let session = s.session(&id).await.unwrap();
    assert_eq!(session.utterances.len(), 2);
    assert_eq!(session.utterances[1].entities, resp.recommendations.iter().map(|r| r.item_id).collect::<Vec<_>>());

    let item = s.kg.items()[0];
    assert!(resp.linked_entities.iter().any(|e| e.entity_id == item && e.is_item));
    assert!(resp.recommendations.iter().all(|r| r.item_id != item));

    // oracle: link the same text and rank with the same inputs
    let linked: Vec<usize> = link_entities(&s.kg, &utterance).iter().map(|m| m.entity_id).collect();
    let encoder = HashedNgramEncoder::new(D_LLM).unwrap();
    let text = format!("User: {utterance}");
    let dialogue = encoder.encode(&text).unwrap().to_array::<f64>();
    let exclusions: HashSet<usize> = linked.iter().copied().filter(|&e| s.kg.is_item(e)).collect();
    let expected = s.model.recommend(&s.kg, dialogue.view(), &linked, 10, &exclusions).unwrap();
    let got: Vec<(usize, f64)> = resp.recommendations.iter().map(|r| (r.item_id, r.score)).collect();
    let want: Vec<(usize, f64)> = expected.items.iter().map(|r| (r.item_id, r.score)).collect();
    assert_eq!(got, want);
    let ranks: Vec<usize> = resp.recommendations.iter().map(|r| r.rank).collect();
    assert_eq!(ranks, (1..=got.len()).collect::<Vec<_>>());
}

#[tokio::test]
async fn entity_free_utterance_uses_the_dialogue_path_only() {
    let s = state();
    let app = app(&s);
    let id = new_session(&app).await;
    let utterance = "something cozy for tonight";
    let resp = say(&app, &id, utterance, 5).await;
    assert!(resp.linked_entities.is_empty());

    let encoder = HashedNgramEncoder::new(D_LLM).unwrap();
    let dialogue = encoder.encode(&format!("User: {utterance}")).unwrap().to_array::<f64>();
    let user = dialogue.dot(&s.model.params.w_dialogue);
    let mut scored: Vec<(usize, f64)> =
        s.kg.items().iter().map(|&i| (i, s.model.entity_embeddings.row(i).dot(&user))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let got: Vec<usize> = resp.recommendations.iter().map(|r| r.item_id).collect();
    let want: Vec<usize> = scored.iter().take(5).map(|x| x.0).collect();
    assert_eq!(got, want);
}

#[tokio::test]
async fn k_bounds_the_list_and_defaults_to_ten() {
    let s = state();
    let app = app(&s);
    let id = new_session(&app).await;
    assert_eq!(say(&app, &id, "anything", 1).await.recommendations.len(), 1);

    let (status, body) =
        call(&app, Method::POST, "/api/recommend", Some(json!({"session_id": id, "utterance": "more please"}))).await;
    assert_eq!(status, StatusCode::OK);
    let n = body["recommendations"].as_array().unwrap().len();
    assert_eq!(n, 10.min(s.kg.num_items() - 1));
}

#[tokio::test]
async fn identical_histories_give_identical_lists() {
    let s = state();
    let app = app(&s);
    let (a, b) = (new_session(&app).await, new_session(&app).await);
    let name = first_item_name(&s.kg);
    for turn in ["hello there", &format!("I liked {name}"), "what else?"] {
        assert_eq!(say(&app, &a, turn, 10).await, say(&app, &b, turn, 10).await);
    }
}

#[tokio::test]
async fn interleaved_sessions_match_serial_runs() {
    let s = state();
    let app = app(&s);
    let name = first_item_name(&s.kg);
    let script_a = ["hi".to_string(), format!("{name} was fun"), "and then?".to_string()];
    let script_b = ["hello".to_string(), "something dark".to_string(), "ok".to_string()];

    let mut serial = Vec::new();
    for script in [&script_a, &script_b] {
        let id = new_session(&app).await;
        for t in script.iter() {
            serial.push(say(&app, &id, t, 10).await);
        }
    }

    let (a, b) = (new_session(&app).await, new_session(&app).await);
    let mut got_a = Vec::new();
    let mut got_b = Vec::new();
    for i in 0..3 {
        let (ra, rb) = tokio::join!(say(&app, &a, &script_a[i], 10), say(&app, &b, &script_b[i], 10));
        got_a.push(ra);
        got_b.push(rb);
    }
    assert_eq!(got_a, serial[..3]);
    assert_eq!(got_b, serial[3..]);
}

#[tokio::test]
async fn serving_leaves_the_parameters_untouched() {
    let s = state();
    let app = app(&s);
    let before = params_digest(&s.model.params);
    let embeddings = s.model.entity_embeddings.clone();
    let name = first_item_name(&s.kg);
    for _ in 0..100 {
        let id = new_session(&app).await;
        for t in 0..10 {
            let text = if t % 3 == 0 { format!("maybe {name}") } else { format!("turn {t}") };
            say(&app, &id, &text, 3).await;
        }
    }
    assert_eq!(params_digest(&s.model.params), before);
    assert_eq!(s.model.entity_embeddings, embeddings);
}

#[tokio::test]
async fn provider_failure_is_502_and_leaves_the_session_untouched() {
    let kg = kg();
    let s = state_with(model(&kg), Arc::new(Failing), Duration::from_secs(60));
    let app = app(&s);
    let id = new_session(&app).await;
    let (status, body) =
        call(&app, Method::POST, "/api/recommend", Some(json!({"session_id": id, "utterance": "hi"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_error_body(&body);
    assert_eq!(body["retriable"], true);

    let session = s.session(&id).await.unwrap();
    assert!(session.utterances.is_empty() && session.entities.is_empty());
}

#[tokio::test]
async fn non_finite_model_is_500() {
    let kg = kg();
    let mut m = model(&kg);
    m.params.w_dialogue.fill(f64::NAN);
    let s = state_with(m, Arc::new(HashedNgramEncoder::new(D_LLM).unwrap()), Duration::from_secs(60));
    let app = app(&s);
    let id = new_session(&app).await;
    let (status, body) =
        call(&app, Method::POST, "/api/recommend", Some(json!({"session_id": id, "utterance": "hi"}))).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_error_body(&body);
    assert_eq!(body["retriable"], false);
}

#[tokio::test]
async fn malformed_requests_get_structured_errors() {
    let s = state();
    let app = app(&s);
    let id = new_session(&app).await;
    let cases = [
        json!({"utterance": "missing session"}),
        json!({"session_id": id, "utterance": "   "}),
        json!({"session_id": id, "utterance": "hi", "k": 0}),
        json!({"session_id": id, "utterance": "hi", "k": "ten"}),
    ];
    for body in cases {
        let (status, resp) = call(&app, Method::POST, "/api/recommend", Some(body.clone())).await;
        assert!(status.is_client_error(), "{body} -> {status}");
        assert_error_body(&resp);
    }

    let req = Request::post("/api/recommend").header(header::CONTENT_TYPE, "application/json").body(Body::from("{")).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_error_body(&body);

    let (status, body) = call(&app, Method::GET, "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error_body(&body);

    let (status, body) = call(&app, Method::GET, "/api/entities?limit=many", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error_body(&body);
}

#[tokio::test]
async fn entity_search_and_health() {
    let s = state();
    let app = app(&s);
    let name = first_item_name(&s.kg);
    let prefix: String = name.chars().take(6).collect::<String>().to_lowercase();
    let (status, body) = call(&app, Method::GET, &format!("/api/entities?q={}&limit=3", prefix.replace(' ', "%20")), None).await;
    assert_eq!(status, StatusCode::OK);
    let matches = body["matches"].as_array().unwrap();
    assert!(!matches.is_empty() && matches.len() <= 3);
    for m in matches {
        assert!(m["name"].as_str().unwrap().to_lowercase().starts_with(&prefix));
        assert!(m["entity_id"].is_u64() && m["is_item"].is_boolean());
    }

    let (status, body) = call(&app, Method::GET, "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["checkpoint_hash"], "test-hash");
    assert_eq!(body["num_entities"], s.kg.num_entities());
}

#[tokio::test]
async fn idle_sessions_are_evicted() {
    let kg = kg();
    let s = state_with(model(&kg), Arc::new(HashedNgramEncoder::new(D_LLM).unwrap()), Duration::from_millis(20));
    let app = app(&s);
    let id = new_session(&app).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (status, _) = call(&app, Method::POST, "/api/recommend", Some(json!({"session_id": id, "utterance": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    new_session(&app).await;
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert_eq!(s.evict_idle().await, 1);
    assert_eq!(s.session_count().await, 0);
}

#[tokio::test]
async fn cors_origin_is_echoed_when_configured() {
    let s = state();
    let app = router(Arc::clone(&s), Some("http://localhost:5173")).unwrap();
    let req = Request::get("/api/health").header(header::ORIGIN, "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
}
