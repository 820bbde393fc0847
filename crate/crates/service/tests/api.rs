use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use svgfont::dataset::{synthesize, SyntheticSpec};
use svgfont::labels::label_of_str;
use svgfont::latent::{ConceptDirection, Models};
use svgfont::svg_decoder::{DecoderConfig, SvgDecoder};
use svgfont::svg_path::Glyph;
use svgfont::vae::{Vae, VaeConfig};
use svgfont_service::{router, ModelBundle, ServiceConfig};

const O: &str = "M 10 0 L 90 0 L 90 100 L 10 100 Z M 30 20 L 30 80 L 70 80 L 70 20 Z";

fn bundle() -> Arc<ModelBundle> {
    static B: OnceLock<Arc<ModelBundle>> = OnceLock::new();
    B.get_or_init(|| {
        let labels: Vec<usize> = "abo".chars().map(|c| label_of_str(&c.to_string()).unwrap()).collect();
        let corpus = synthesize(&[SyntheticSpec::REGULAR], &labels, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vae = Vae::new(VaeConfig::small(), &mut rng).unwrap();
        let decoder = SvgDecoder::new(DecoderConfig::small(), &mut rng).unwrap();
        let z = vae.config.z_dim;
        let models = Models {
            vae,
            decoder,
            viewbox: corpus.meta.viewbox,
            temperature: 1.0,
        };
        let bold = ConceptDirection {
            name: "bold".into(),
            c: (0..z).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        };
        Arc::new(ModelBundle::new(models, corpus.meta.clone(), vec![bold]).unwrap())
    })
    .clone()
}

fn app() -> axum::Router {
    router(bundle(), &ServiceConfig::default())
}

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let resp = app
        .oneshot(req.body(body.map(Body::from).unwrap_or_default()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(uri: &str, body: Value) -> (StatusCode, Value) {
    call(app(), "POST", uri, Some(body.to_string())).await
}

fn zeros() -> Vec<f64> {
    vec![0.0; bundle().z_dim()]
}

#[tokio::test]
async fn health_and_concepts() {
    let (s, v) = call(app(), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok"}));
    let (s, v) = call(app(), "GET", "/concepts", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"concepts": ["bold"]}));
}

#[tokio::test]
async fn encode_returns_a_style_code() {
    let (s, v) = post("/encode", json!({"svg": O, "label": "o"})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["z"].as_array().unwrap().len(), bundle().z_dim());
    assert!(v["sigma2_mean"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn encode_errors_are_machine_readable() {
    let (s, v) = post("/encode", json!({"svg": "M 0 0 A 1 1 0 0 0 1 1", "label": "a"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "UnsupportedCommand");

    let mut comb = String::from("M 0 0");
    for i in 0..60 {
        comb += &format!(" L {} {}", i + 1, if i % 2 == 0 { 10 } else { 0 });
    }
    comb += " Z";
    let (s, v) = post("/encode", json!({"svg": comb, "label": "a"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "TooManyCommands");

    let (s, v) = post("/encode", json!({"svg": O, "label": "λ"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "UnknownLabel");
}

#[tokio::test]
async fn malformed_json_is_a_400_and_the_router_survives() {
    for body in ["{", "null", "{\"svg\": 3}", "[]"] {
        let (s, v) = call(app(), "POST", "/encode", Some(body.into())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"], "BadJson");
    }
    let (s, _) = call(app(), "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn propagate_from_z_is_seeded() {
    let body = json!({"z": zeros(), "targets": ["a", "b"], "n": 2, "seed": 5});
    let (s, first) = post("/propagate", body.clone()).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    assert_eq!(first["svgs"].as_array().unwrap().len(), 2);
    assert_eq!(first["confidence"].as_array().unwrap().len(), 2);
    assert_eq!(first["seed"], 5);
    for svg in first["svgs"].as_array().unwrap() {
        let d = svg.as_str().unwrap();
        assert!(d.is_empty() || Glyph::from_path(0, d).is_ok(), "{d}");
    }
    let (_, again) = post("/propagate", body).await;
    assert_eq!(first, again);

    // each character has its own stream, so target order does not matter
    let (_, swapped) = post(
        "/propagate",
        json!({"z": zeros(), "targets": ["b", "a"], "n": 2, "seed": 5}),
    )
    .await;
    assert_eq!(swapped["svgs"][0], first["svgs"][1]);
    assert_eq!(swapped["svgs"][1], first["svgs"][0]);
}

#[tokio::test]
async fn propagate_from_glyphs_matches_encode() {
    let (_, enc) = post("/encode", json!({"svg": O, "label": "o"})).await;
    let (s, v) = post(
        "/propagate",
        json!({"glyphs": [{"svg": O, "label": "o"}], "targets": ["a"], "n": 1, "seed": 1}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let a: Vec<f64> = serde_json::from_value(enc["z"].clone()).unwrap();
    let b: Vec<f64> = serde_json::from_value(v["z"].clone()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[tokio::test]
async fn propagate_rejects_bad_requests() {
    let cases = [
        (json!({"targets": ["a"]}), "ZXorGlyphs"),
        (json!({"z": zeros(), "glyphs": [], "targets": ["a"]}), "ZXorGlyphs"),
        (json!({"glyphs": [], "targets": ["a"]}), "EmptyInput"),
        (json!({"z": [0.0], "targets": ["a"]}), "DimMismatch"),
        (json!({"z": zeros(), "targets": ["a"], "n": 0}), "BadSampleCount"),
    ];
    for (body, kind) in cases {
        let (s, v) = post("/propagate", body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["error"], kind, "{body}");
    }
    let (s, _) = post("/propagate", json!({"z": zeros(), "targets": ["?"]})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn analogy_at_zero_alpha_is_propagation() {
    let (s, v) = post(
        "/analogy",
        json!({"z": zeros(), "concept": "bold", "alphas": [0.0, 1.5], "label": "a", "n": 2, "seed": 9}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["svgs"].as_array().unwrap().len(), 2);
    let (_, p) = post("/propagate", json!({"z": zeros(), "targets": ["a"], "n": 2, "seed": 9})).await;
    assert_eq!(v["svgs"][0], p["svgs"][0]);

    let (s, v) = post(
        "/analogy",
        json!({"z": zeros(), "concept": "serif", "alphas": [1.0], "label": "a"}),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "UnknownConcept");
}

#[tokio::test]
async fn interpolate_endpoints_and_steps() {
    let mut z_b = zeros();
    z_b[0] = 2.0;
    let (s, v) = post(
        "/interpolate",
        json!({"z_a": zeros(), "z_b": z_b, "steps": 3, "label": "b", "n": 1, "seed": 2}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["svgs"].as_array().unwrap().len(), 3);
    let (_, p) = post("/propagate", json!({"z": zeros(), "targets": ["b"], "n": 1, "seed": 2})).await;
    assert_eq!(v["svgs"][0], p["svgs"][0]);

    let (s, v) = post(
        "/interpolate",
        json!({"z_a": zeros(), "z_b": zeros(), "steps": 1, "label": "b"}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "BadSteps");
}

#[tokio::test]
async fn slow_requests_get_503() {
    let cfg = ServiceConfig {
        timeout: Duration::ZERO,
        ..ServiceConfig::default()
    };
    let body = json!({"z": zeros(), "targets": ["a", "b", "o"], "n": 20, "seed": 0});
    let (s, v) = call(router(bundle(), &cfg), "POST", "/propagate", Some(body.to_string())).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "Timeout");
}

#[tokio::test]
async fn bundle_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    bundle().save(dir.path()).unwrap();
    let loaded = Arc::new(ModelBundle::load(dir.path()).unwrap());
    let body = json!({"z": zeros(), "targets": ["a"], "n": 2, "seed": 3}).to_string();
    let (_, a) = call(app(), "POST", "/propagate", Some(body.clone())).await;
    let (_, b) = call(
        router(loaded, &ServiceConfig::default()),
        "POST",
        "/propagate",
        Some(body),
    )
    .await;
    assert_eq!(a, b);
}
