use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use callipaint::corpus::{ConditionLabel, Vocabularies};
use callipaint::denoiser::{init_params, Checkpoint, DenoiserConfig};
use callipaint::diffusion::{sample, ScheduleId, TraceOptions};
use callipaint::image::{GlyphImage, Mask};
use callipaint_service::{router, AppState, GenerationResponse};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn checkpoint(steps: usize) -> Checkpoint {
    let vocab = Vocabularies::new(
        vec!["天".into(), "永".into()],
        vec!["cursive".into(), "regular".into()],
        vec!["s1".into()],
    )
    .unwrap();
    let mut config = DenoiserConfig::for_vocab(&vocab);
    config.resolution = (8, 8);
    config.base_channels = 4;
    config.channel_mults = vec![1, 2];
    config.time_embed_dim = 8;
    config.groups = 2;
    config.timesteps = steps;
    let mut params = init_params(&config, 3).unwrap();
    // Nonzero output layer so generations depend on the seed.
    for v in params.store_mut().by_name_mut("out.conv.weight").unwrap().data.iter_mut() {
        *v = 0.05;
    }
    let schedule = ScheduleId {
        steps,
        ..ScheduleId::DEFAULT
    };
    Checkpoint::fresh(params, vocab, schedule).unwrap()
}

fn state(ckpt: Checkpoint, workers: usize, max_pending: usize) -> Arc<AppState> {
    Arc::new(AppState::new(ckpt, workers, max_pending).unwrap())
}

fn glyph() -> GlyphImage {
    GlyphImage::from_bytes(8, 8, &(0..64).map(|i| (i * 37 % 256) as u8).collect::<Vec<_>>()).unwrap()
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn inpaint_body(image: &GlyphImage, mask: &Mask, seed: Option<u64>) -> Value {
    let mut body = json!({
        "image": BASE64.encode(image.encode_png()),
        "mask": BASE64.encode(mask.encode_png()),
        "character": "永",
        "script": "regular",
        "style": "s1",
        "jump_len": 5,
        "n_resample": 2,
    });
    if let Some(s) = seed {
        body["seed"] = json!(s);
    }
    body
}

#[tokio::test]
async fn health_and_conditions() {
    let s = state(checkpoint(20), 1, 4);
    let (status, body) = call(&s, "GET", "/api/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model"], s.model_id.as_str());
    assert!(s.model_id.starts_with("sha256:"));
    let (status, body) = call(&s, "GET", "/api/v1/conditions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(&s.checkpoint.vocab).unwrap());
}

#[tokio::test]
async fn identity_mask_returns_request_image() {
    let s = state(checkpoint(20), 1, 4);
    let image = glyph();
    let (status, body) = call(
        &s,
        "POST",
        "/api/v1/inpaint",
        Some(inpaint_body(&image, &Mask::empty(8, 8), Some(1))),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: GenerationResponse = serde_json::from_value(body).unwrap();
    assert_eq!(BASE64.decode(resp.image).unwrap(), image.encode_png());
    assert_eq!(resp.seed, 1);
    assert_eq!(resp.steps, 40);
}

#[tokio::test]
async fn explicit_seed_is_reproducible() {
    let s = state(checkpoint(20), 2, 4);
    let mask = Mask::from_fn(8, 8, |y, _| y < 4);
    let a = call(&s, "POST", "/api/v1/inpaint", Some(inpaint_body(&glyph(), &mask, Some(9))))
        .await
        .1;
    let b = call(&s, "POST", "/api/v1/inpaint", Some(inpaint_body(&glyph(), &mask, Some(9))))
        .await
        .1;
    let c = call(&s, "POST", "/api/v1/inpaint", Some(inpaint_body(&glyph(), &mask, Some(10))))
        .await
        .1;
    assert_eq!(a["image"], b["image"]);
    assert_ne!(a["image"], c["image"]);
    let out = GlyphImage::decode_png(&BASE64.decode(a["image"].as_str().unwrap()).unwrap()).unwrap();
    for (i, (o, g)) in out.to_bytes().iter().zip(glyph().to_bytes()).enumerate() {
        if i >= 32 {
            assert_eq!(*o, g);
        }
    }
    // Without a seed the server draws one and echoes it.
    let d = call(&s, "POST", "/api/v1/inpaint", Some(inpaint_body(&glyph(), &mask, None)))
        .await
        .1;
    let again = call(
        &s,
        "POST",
        "/api/v1/inpaint",
        Some(inpaint_body(&glyph(), &mask, d["seed"].as_u64())),
    )
    .await
    .1;
    assert_eq!(d["image"], again["image"]);
}

#[tokio::test]
async fn step_count_is_t_times_r() {
    let s = state(checkpoint(200), 1, 4);
    let mut body = inpaint_body(&glyph(), &Mask::full(8, 8), Some(2));
    body["jump_len"] = json!(10);
    body["n_resample"] = json!(5);
    let (status, resp) = call(&s, "POST", "/api/v1/inpaint", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["steps"], 1000);
}

#[tokio::test]
async fn sample_matches_library_and_reports_t() {
    let ckpt = checkpoint(20);
    let schedule = ckpt.schedule.build().unwrap();
    let cond = ckpt.vocab.resolve("天", "cursive", "s1").unwrap();
    assert_eq!(cond, ConditionLabel::new(0, 0, 0));
    let (direct, _) = sample(&ckpt.params, &cond, &schedule, 4, TraceOptions::NONE).unwrap();
    let s = state(ckpt, 1, 4);
    let body = json!({"character": "天", "script": "cursive", "style": "s1", "seed": 4});
    let (status, resp) = call(&s, "POST", "/api/v1/sample", Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(resp["steps"], 20);
    assert_eq!(BASE64.decode(resp["image"].as_str().unwrap()).unwrap(), direct.encode_png());
    assert_eq!(call(&s, "POST", "/api/v1/sample", Some(body)).await.1["image"], resp["image"]);
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let s = state(checkpoint(20), 1, 4);
    let mut body = inpaint_body(&glyph(), &Mask::empty(8, 8), Some(1));
    body["script"] = json!("kaishu-typo");
    let (status, resp) = call(&s, "POST", "/api/v1/inpaint", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["field"], "script");

    let mut body = inpaint_body(&glyph(), &Mask::empty(8, 8), Some(1));
    body["image"] = json!("not base64!");
    let (status, resp) = call(&s, "POST", "/api/v1/inpaint", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["field"], "image");

    let mut body = inpaint_body(&glyph(), &Mask::empty(8, 8), Some(1));
    body["mask"] = json!(BASE64.encode(b"not a png"));
    let (status, resp) = call(&s, "POST", "/api/v1/inpaint", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["field"], "mask");

    let big = GlyphImage::from_bytes(16, 16, &[255; 256]).unwrap();
    let (status, resp) = call(
        &s,
        "POST",
        "/api/v1/inpaint",
        Some(inpaint_body(&big, &Mask::empty(8, 8), Some(1))),
    )
    .await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(resp["field"], "image");

    let mut body = inpaint_body(&glyph(), &Mask::empty(8, 8), Some(1));
    body["jump_len"] = json!(7);
    let (status, resp) = call(&s, "POST", "/api/v1/inpaint", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp["field"], "jump_len");

    let (status, _) = call(&s, "POST", "/api/v1/sample", Some(json!({"character": "天"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn non_finite_trajectory_echoes_seed() {
    let mut ckpt = checkpoint(20);
    for v in ckpt.params.store_mut().by_name_mut("out.conv.bias").unwrap().data.iter_mut() {
        *v = f32::NAN;
    }
    let s = state(ckpt, 1, 4);
    let body = json!({"character": "天", "script": "cursive", "style": "s1", "seed": 77});
    let (status, resp) = call(&s, "POST", "/api/v1/sample", Some(body)).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(resp["seed"], 77);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_queue_is_429() {
    let s = state(checkpoint(20), 1, 0);
    let (tx, rx) = std::sync::mpsc::channel::<()>();
    let held = Arc::clone(&s);
    let blocker = tokio::spawn(async move { held.gate.run(move || rx.recv().unwrap()).await });
    while s.gate.load() == 0 {
        tokio::task::yield_now().await;
    }
    let body = json!({"character": "天", "script": "cursive", "style": "s1", "seed": 1});
    let (status, _) = call(&s, "POST", "/api/v1/sample", Some(body.clone())).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    tx.send(()).unwrap();
    blocker.await.unwrap().unwrap().unwrap();
    assert_eq!(call(&s, "POST", "/api/v1/sample", Some(body)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn graceful_shutdown_stops_the_server() {
    let s = state(checkpoint(20), 1, 4);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(callipaint_service::serve_with_shutdown(listener, s, async {
        let _ = rx.await;
    }));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
