use amtc::config::RunConfig;
use amtc::service::{router, ServiceConfig};
use amtc::Spectrogram;
use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(&ServiceConfig::default())
}

/// Strong ridge on bin 10, weak ridge on bin 30, over a low floor.
fn two_ridges() -> Spectrogram {
    let columns: Vec<Vec<f64>> = (0..50)
        .map(|n| {
            (0..40)
                .map(|m| match m {
                    10 => 5.0,
                    30 => 2.0,
                    _ => 0.1 + ((m * 3 + n) % 7) as f64 / 100.0,
                })
                .collect()
        })
        .collect();
    Spectrogram::from_columns_unit(&columns).unwrap()
}

async fn send(app: &Router, method: &str, uri: &str, content_type: Option<&str>, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(ct) = content_type {
        req = req.header(header::CONTENT_TYPE, ct);
    }
    let response = app.clone().oneshot(req.body(body.into()).unwrap()).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|_| panic!("JSON body: {}", String::from_utf8_lossy(bytes)))
}

async fn create(app: &Router, z: &Spectrogram) -> String {
    let (status, body) = send(app, "POST", "/jobs", Some("text/csv"), z.to_csv_string()).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    json_of(&body)["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_accepts_raw_and_json_payloads() {
    let app = app();
    let z = two_ridges();
    let a = create(&app, &z).await;
    let request = json!({"data": z.to_csv_string(), "config": {"traces": 2}});
    let (status, body) = send(&app, "POST", "/jobs", Some("application/json"), request.to_string()).await;
    assert_eq!(status, StatusCode::CREATED);
    let view = json_of(&body);
    assert_ne!(view["id"].as_str().unwrap(), a);
    assert_eq!(view["bins"], 40);
    assert_eq!(view["frames"], 50);
    assert_eq!(view["traces"], 2);
    assert_eq!(view["status"], "ready");
}

#[tokio::test]
async fn malformed_uploads_are_rejected() {
    let app = app();
    let (status, body) = send(&app, "POST", "/jobs", Some("text/csv"), "3,2,0,1,0,1\n1,2\n").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json_of(&body)["error"]["kind"].is_string());
    let (status, _) = send(&app, "POST", "/jobs", Some("application/json"), "{\"data\": 3").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let bad_config = json!({"data": two_ridges().to_csv_string(), "config": {"model": {"k": 1, "nope": 0}}});
    let (status, _) = send(&app, "POST", "/jobs", Some("application/json"), bad_config.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_uploads_get_413() {
    let app = router(&ServiceConfig {
        max_body_bytes: 1024,
        ..ServiceConfig::default()
    });
    let (status, _) = send(&app, "POST", "/jobs", Some("text/csv"), two_ridges().to_csv_string()).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn spectrogram_tiles_and_unknown_ids() {
    let app = app();
    let id = create(&app, &two_ridges()).await;
    let (status, body) = send(&app, "GET", &format!("/jobs/{id}/spectrogram?maxw=25&maxh=20"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let tile = json_of(&body);
    assert_eq!((tile["frames"].as_u64(), tile["bins"].as_u64()), (Some(25), Some(20)));
    assert_eq!(tile["values"].as_array().unwrap().len(), 500);
    // Bin 10 sits in tile row 5 and dominates it.
    assert_eq!(tile["values"][5], 5.0);
    for uri in ["/jobs/nope", "/jobs/nope/spectrogram", "/jobs/nope/result"] {
        let (status, body) = send(&app, "GET", uri, None, Body::empty()).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(json_of(&body)["error"]["kind"], "not_found");
    }
    let (status, _) = send(&app, "POST", "/jobs/nope/track", None, Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn waited_track_returns_the_library_result() {
    let app = app();
    let z = two_ridges();
    let id = create(&app, &z).await;
    let (status, _) = send(&app, "GET", &format!("/jobs/{id}/result"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = send(&app, "POST", &format!("/jobs/{id}/track?wait=true"), Some("application/json"), r#"{"L": 2}"#).await;
    assert_eq!(status, StatusCode::OK);
    let cfg = RunConfig {
        traces: 2,
        ..RunConfig::default()
    };
    let expected = cfg.run_offline(&z, None).unwrap().to_json();
    assert_eq!(String::from_utf8(body).unwrap(), expected);
    let (status, body) = send(&app, "GET", &format!("/jobs/{id}/result"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(body).unwrap(), expected);
}

#[tokio::test]
async fn background_track_can_be_polled() {
    let app = app();
    let id = create(&app, &two_ridges()).await;
    let (status, body) = send(&app, "POST", &format!("/jobs/{id}/track"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(json_of(&body)["id"], id.as_str());
    for _ in 0..200 {
        let (status, body) = send(&app, "GET", &format!("/jobs/{id}/result"), None, Body::empty()).await;
        if status == StatusCode::OK {
            assert!(json_of(&body)["traces"][0].as_array().unwrap().iter().all(|b| b == 10));
            return;
        }
        assert_eq!(status, StatusCode::ACCEPTED);
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("tracking did not finish");
}

#[tokio::test]
async fn concurrent_runs_conflict() {
    let app = app();
    let big: Vec<Vec<f64>> = (0..3000)
        .map(|n| (0..300).map(|m| ((m * 7 + n * 13) % 17) as f64).collect())
        .collect();
    let z = Spectrogram::from_columns_unit(&big).unwrap();
    let request = json!({"data": z.to_csv_string(), "config": {"model": {"k": 60}, "traces": 4}});
    let (status, body) = send(&app, "POST", "/jobs", Some("application/json"), request.to_string()).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = json_of(&body)["id"].as_str().unwrap().to_string();
    let (first, _) = send(&app, "POST", &format!("/jobs/{id}/track"), None, Body::empty()).await;
    assert_eq!(first, StatusCode::ACCEPTED);
    let (second, body) = send(&app, "POST", &format!("/jobs/{id}/track"), None, Body::empty()).await;
    assert_eq!(second, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["error"]["kind"], "conflict");
}

#[tokio::test]
async fn bad_track_requests() {
    let app = app();
    let id = create(&app, &two_ridges()).await;
    let uri = format!("/jobs/{id}/track?wait=true");
    let (status, _) = send(&app, "POST", &uri, Some("application/json"), "{\"L\": ").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, "POST", &uri, Some("application/json"), r#"{"L": 0}"#).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let outside = json!({"constraints": [{"frames": [0, 5], "bins": [38, 45]}]});
    let (status, _) = send(&app, "POST", &uri, Some("application/json"), outside.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unreachable_region_is_unprocessable() {
    let app = app();
    let zeros = Spectrogram::from_columns_unit(&vec![vec![0.0; 8]; 6]).unwrap();
    let request = json!({"data": zeros.to_csv_string(), "config": {"detection": {"delta_f": 1}}});
    let (_, body) = send(&app, "POST", "/jobs", Some("application/json"), request.to_string()).await;
    let id = json_of(&body)["id"].as_str().unwrap().to_string();
    let region = json!({"constraints": [{"frames": [0, 5], "bins": [6, 7]}]});
    let (status, body) = send(&app, "POST", &format!("/jobs/{id}/track?wait=true"), Some("application/json"), region.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json_of(&body)["error"]["kind"], "constraint_unsatisfiable");
    let (status, body) = send(&app, "GET", &format!("/jobs/{id}/result"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json_of(&body)["error"]["kind"], "constraint_unsatisfiable");
}

#[tokio::test]
async fn a_region_on_the_weak_ridge_pulls_the_trace_through_it() {
    let app = app();
    let id = create(&app, &two_ridges()).await;
    let uri = format!("/jobs/{id}/track?wait=true");
    let (_, body) = send(&app, "POST", &uri, None, Body::empty()).await;
    let free = json_of(&body);
    assert!(free["traces"][0].as_array().unwrap().iter().all(|b| b == 10));
    let region = json!({"constraints": [{"frames": [20, 30], "bins": [28, 32]}]});
    let (status, body) = send(&app, "POST", &uri, Some("application/json"), region.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let bins: Vec<i64> = json_of(&body)["traces"][0].as_array().unwrap().iter().map(|b| b.as_i64().unwrap()).collect();
    for (n, b) in bins.iter().enumerate().take(31).skip(20) {
        assert!((b - 30).abs() <= 1, "frame {n}: bin {b}");
    }
    let (_, body) = send(&app, "GET", &format!("/jobs/{id}"), None, Body::empty()).await;
    assert_eq!(json_of(&body)["constraints"][0]["bins"], json!([28, 32]));
}

#[tokio::test]
async fn least_recently_used_job_is_evicted() {
    let app = router(&ServiceConfig {
        max_jobs: 2,
        ..ServiceConfig::default()
    });
    let z = two_ridges();
    let a = create(&app, &z).await;
    let b = create(&app, &z).await;
    let (status, _) = send(&app, "GET", &format!("/jobs/{a}"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let c = create(&app, &z).await;
    for (id, want) in [(&a, StatusCode::OK), (&b, StatusCode::NOT_FOUND), (&c, StatusCode::OK)] {
        let (status, _) = send(&app, "GET", &format!("/jobs/{id}"), None, Body::empty()).await;
        assert_eq!(status, want);
    }
}

#[tokio::test]
async fn static_files_are_served_at_the_root() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>tracker</title>").unwrap();
    let app = router(&ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    });
    let (status, body) = send(&app, "GET", "/", None, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("tracker"));
    let id = create(&app, &two_ridges()).await;
    let (status, _) = send(&app, "GET", &format!("/jobs/{id}"), None, Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
}
