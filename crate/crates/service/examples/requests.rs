//! Drives the service router in-process: health, conditions, a sample, and
//! an identity-mask inpaint that comes back byte-identical.
//!
//! Pass a checkpoint path to use a trained model; otherwise a fresh
//! untrained one is used.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use callipaint::corpus::Vocabularies;
use callipaint::denoiser::{init_params, load_checkpoint, Checkpoint, DenoiserConfig};
use callipaint::diffusion::ScheduleId;
use callipaint::image::{GlyphImage, Mask};
use callipaint_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(if body.is_null() {
            Body::empty()
        } else {
            Body::from(body.to_string())
        })
        .unwrap();
    let resp = router(Arc::clone(state)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    println!("{method} {uri} -> {status}");
    value
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?,
        None => {
            let vocab = Vocabularies::new(vec!["永".into()], vec!["regular".into()], vec!["demo".into()])?;
            let config = DenoiserConfig {
                timesteps: 50,
                ..DenoiserConfig::desk(&vocab)
            };
            Checkpoint::fresh(
                init_params(&config, 0)?,
                vocab,
                ScheduleId {
                    steps: 50,
                    ..ScheduleId::DEFAULT
                },
            )?
        }
    };
    let (h, w) = ckpt.params.config().resolution;
    let steps = ckpt.schedule.steps;
    let (character, script, style) = (
        ckpt.vocab.character[0].clone(),
        ckpt.vocab.script[0].clone(),
        ckpt.vocab.style[0].clone(),
    );
    let state = Arc::new(AppState::new(ckpt, 2, 8)?);

    println!("{}", call(&state, "GET", "/api/v1/health", Value::Null).await);
    println!("{}", call(&state, "GET", "/api/v1/conditions", Value::Null).await);

    let sample = call(
        &state,
        "POST",
        "/api/v1/sample",
        json!({"character": character, "script": script, "style": style, "seed": 1}),
    )
    .await;
    println!(
        "sample: seed {} steps {} in {} ms",
        sample["seed"], sample["steps"], sample["elapsed_ms"]
    );

    let image = GlyphImage::from_bytes(h, w, &vec![255; h * w])?;
    let jump_len = if steps % 10 == 0 { 10 } else { 1 };
    let body = json!({
        "image": BASE64.encode(image.encode_png()),
        "mask": BASE64.encode(Mask::empty(h, w).encode_png()),
        "character": character, "script": script, "style": style,
        "jump_len": jump_len, "n_resample": 2,
    });
    let resp = call(&state, "POST", "/api/v1/inpaint", body).await;
    let same = BASE64.decode(resp["image"].as_str().unwrap_or_default())? == image.encode_png();
    println!(
        "identity inpaint: seed {} steps {} byte-identical {same}",
        resp["seed"], resp["steps"]
    );
    Ok(())
}
