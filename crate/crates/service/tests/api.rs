use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use loosecut::imagecore::{box_from_mask, dilate_box};
use loosecut::{LabelMask, RgbImage, SolverConfig};
use loosecut_service::store::SessionStore;
use loosecut_service::{rle, router, AppState, SegmentResponse};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(AppState::default())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, bytes.to_vec())
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn upload(app: &Router, png: Vec<u8>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, Request::post("/api/images").body(Body::from(png)).unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn disk(size: usize, radius: f64) -> (RgbImage, LabelMask) {
    let c = size as f64 / 2.0;
    let inside = move |x: usize, y: usize| {
        let (dx, dy) = (x as f64 + 0.5 - c, y as f64 + 0.5 - c);
        dx * dx + dy * dy <= radius * radius
    };
    let jitter = |x: usize, y: usize| ((x * 31 + y * 17) % 9) as f64;
    let img = RgbImage::from_fn(size, size, |x, y| {
        let j = jitter(x, y);
        if inside(x, y) {
            [240.0 - j, 20.0 + j, 20.0 + j]
        } else {
            [20.0 + j, 20.0 + j, 230.0 - j]
        }
    })
    .unwrap();
    (img, LabelMask::from_fn(size, size, inside))
}

fn tiny_png(seed: usize) -> Vec<u8> {
    RgbImage::from_fn(8, 8, |x, y| [((x + seed) * 30 % 256) as f64, (y * 30) as f64, 7.0])
        .unwrap()
        .to_png()
        .unwrap()
}

#[tokio::test]
async fn health() {
    let (status, body) = send(&app(), Request::get("/api/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({ "ok": true }));
}

#[tokio::test]
async fn upload_echoes_dimensions_and_serves_bytes() {
    let app = app();
    let png = RgbImage::from_fn(7, 5, |x, y| [x as f64 * 30.0, y as f64 * 40.0, 0.0])
        .unwrap()
        .to_png()
        .unwrap();
    let (status, body) = upload(&app, png.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(7), Some(5)));
    let id = body["id"].as_str().unwrap();

    let (status, bytes) = send(
        &app,
        Request::get(format!("/api/images/{id}")).body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, png);

    let (_, again) = upload(&app, png).await;
    assert_ne!(again["id"], body["id"]);
}

#[tokio::test]
async fn corrupt_upload_is_a_decode_error() {
    let (status, body) = upload(&app(), b"definitely not an image".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "decode_error");
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    let (status, _) = send(&app, Request::get("/api/images/nope").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = post_json(
        &app,
        "/api/segment",
        json!({ "id": "nope", "box": { "x0": 0, "y0": 0, "w": 1, "h": 1 } }),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_image");
}

#[tokio::test]
async fn loose_box_on_red_disk() {
    let app = app();
    let (img, gt) = disk(128, 20.0);
    let (_, up) = upload(&app, img.to_png().unwrap()).await;
    let b = dilate_box(&box_from_mask(&gt, 10).unwrap(), 2.4, 128, 128);
    let request = json!({ "id": up["id"], "box": b });
    let (status, body) = post_json(&app, "/api/segment", request.clone()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: SegmentResponse = serde_json::from_value(body).unwrap();
    let mask = rle::decode(&resp.mask).unwrap();
    let wrong = mask.count_changed(&gt) as f64 / (128.0 * 128.0);
    assert!(wrong < 0.02, "pixel error {wrong}");
    assert_eq!(resp.iterations, resp.trace.len());
    assert!(resp.trace.iter().enumerate().all(|(i, t)| t.iter == i + 1));

    // identical request, identical answer apart from wall-clock time
    let (_, body2) = post_json(&app, "/api/segment", request).await;
    let resp2: SegmentResponse = serde_json::from_value(body2).unwrap();
    assert_eq!(
        SegmentResponse { runtime_ms: 0, ..resp2 },
        SegmentResponse {
            runtime_ms: 0,
            ..resp.clone()
        }
    );

    let (status, body) = post_json(
        &app,
        "/api/segment",
        json!({ "id": up["id"], "box": b, "method": "grabcut" }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["trace"].as_array().unwrap().iter().all(|t| t["e_lc"] == 0.0));
}

#[tokio::test]
async fn request_errors_are_structured() {
    let app = app();
    let (img, _) = disk(32, 6.0);
    let (_, up) = upload(&app, img.to_png().unwrap()).await;
    let id = up["id"].clone();

    let (status, body) = post_json(
        &app,
        "/api/segment",
        json!({ "id": id, "box": { "x0": 0, "y0": 0, "w": 32, "h": 32 } }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "degenerate_init");
    assert_eq!(body["error"]["message"], "no background seed");

    let cases = [
        (
            json!({ "id": id, "box": { "x0": 30, "y0": 0, "w": 8, "h": 8 } }),
            "invalid_box",
        ),
        (
            json!({ "id": id, "box": { "x0": 4, "y0": 4, "w": 8, "h": 8 }, "method": "magic" }),
            "invalid_method",
        ),
        (
            json!({ "id": id, "box": { "x0": 4, "y0": 4, "w": 8, "h": 8 }, "config": { "betta": 1 } }),
            "invalid_config",
        ),
        (
            json!({ "id": id, "box": { "x0": 4, "y0": 4, "w": 8, "h": 8 }, "config": { "k_f": 2 } }),
            "invalid_input",
        ),
        (json!({ "id": id }), "invalid_request"),
    ];
    for (req, code) in cases {
        let (status, body) = post_json(&app, "/api/segment", req).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(body["error"]["code"], code, "{body}");
    }
}

#[tokio::test]
async fn config_overrides_apply() {
    let app = app();
    let (img, gt) = disk(64, 10.0);
    let (_, up) = upload(&app, img.to_png().unwrap()).await;
    let b = box_from_mask(&gt, 10).unwrap();
    let (status, body) = post_json(
        &app,
        "/api/segment",
        json!({ "id": up["id"], "box": b, "config": { "max_iters": 1, "n_clusters": 4, "seed": 5 } }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["iterations"], 1);
}

#[tokio::test]
async fn store_evicts_least_recently_used() {
    let app = app();
    let mut ids = Vec::new();
    for i in 0..64 {
        let (status, body) = upload(&app, tiny_png(i)).await;
        assert_eq!(status, StatusCode::OK);
        ids.push(body["id"].as_str().unwrap().to_string());
    }
    // touching the first upload makes the second one the oldest unused
    let get = |id: &str| Request::get(format!("/api/images/{id}")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, get(&ids[0])).await.0, StatusCode::OK);
    upload(&app, tiny_png(64)).await;
    assert_eq!(send(&app, get(&ids[0])).await.0, StatusCode::OK);
    assert_eq!(send(&app, get(&ids[1])).await.0, StatusCode::NOT_FOUND);
    for id in &ids[2..] {
        assert_eq!(send(&app, get(id)).await.0, StatusCode::OK);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_sequential() {
    let app = router(AppState::new(SessionStore::new(8), SolverConfig::default()));
    let mut requests = Vec::new();
    for (size, r) in [(48, 8.0), (56, 10.0), (64, 12.0)] {
        let (img, gt) = disk(size, r);
        let (_, up) = upload(&app, img.to_png().unwrap()).await;
        let b = dilate_box(&box_from_mask(&gt, 10).unwrap(), 1.2, size, size);
        requests.push(json!({ "id": up["id"], "box": b }));
    }
    let strip = |mut v: Value| {
        v["runtime_ms"] = json!(0);
        v
    };
    let mut sequential = Vec::new();
    for r in &requests {
        sequential.push(strip(post_json(&app, "/api/segment", r.clone()).await.1));
    }
    let handles: Vec<_> = requests
        .iter()
        .cloned()
        .map(|r| {
            let app = app.clone();
            tokio::spawn(async move { post_json(&app, "/api/segment", r).await.1 })
        })
        .collect();
    for (h, expected) in handles.into_iter().zip(sequential) {
        assert_eq!(strip(h.await.unwrap()), expected);
    }
}
