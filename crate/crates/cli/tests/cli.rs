use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use loosecut::bench::{read_records, write_synthetic_dataset};
use loosecut::imagecore::{box_from_mask, dilate_box, error_rate, load_mask};

fn loosecut(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loosecut"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn segment_writes_mask_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = loosecut(&["synth", "--out", p(&data), "--count", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let gt = load_mask(data.join("masks/trap00.png")).unwrap();
    let b = dilate_box(&box_from_mask(&gt, 10).unwrap(), 6.0, gt.width(), gt.height());
    let mask_path = dir.path().join("mask.png");
    let trace_path = dir.path().join("trace.csv");
    let out = loosecut(&[
        "segment",
        "--image",
        p(&data.join("images/trap00.png")),
        "--box",
        &b.to_string(),
        "--out",
        p(&mask_path),
        "--trace",
        p(&trace_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = load_mask(&mask_path).unwrap();
    assert!(error_rate(&mask, &gt, &b).unwrap() < 0.05);
    let trace = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,e_gc,e_lc,e_total"));
    assert!(lines.next().unwrap().starts_with("1,"));

    // the initial-mask form, with a config file
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"max_iters": 2, "seed": 4}"#).unwrap();
    let init = dir.path().join("init.png");
    loosecut::imagecore::save_mask(&loosecut::LabelMask::from_box(gt.width(), gt.height(), &b), &init).unwrap();
    let out = loosecut(&[
        "segment",
        "--image",
        p(&data.join("images/trap00.png")),
        "--mask",
        p(&init),
        "--config",
        p(&config),
        "--method",
        "grabcut",
        "--out",
        p(&mask_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn segment_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = loosecut(&[
        "segment",
        "--image",
        p(&dir.path().join("none.png")),
        "--box",
        "0,0,2,2",
        "--out",
        "x.png",
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("none.png"));

    let bad_box = loosecut(&["segment", "--image", "a.png", "--box", "1,2,3", "--out", "x.png"]);
    assert!(!bad_box.status.success());

    let data = dir.path().join("data");
    write_synthetic_dataset(&data, 1).unwrap();
    let whole = loosecut(&[
        "segment",
        "--image",
        p(&data.join("images/trap00.png")),
        "--box",
        "0,0,160,160",
        "--out",
        p(&dir.path().join("m.png")),
    ]);
    assert!(!whole.status.success());
    assert!(String::from_utf8_lossy(&whole.stderr).contains("no background seed"));
}

#[test]
fn bench_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_synthetic_dataset(&data, 2).unwrap();
    let records = dir.path().join("records.csv");
    let summary = dir.path().join("summary.csv");
    let out = loosecut(&[
        "bench",
        "--dataset",
        p(&data),
        "--looseness",
        "0,1.2",
        "--methods",
        "loosecut,grabcut,loosecut-no-constraint",
        "--out",
        p(&records),
        "--summary",
        p(&summary),
        "--timing",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = read_records(&records).unwrap();
    assert_eq!(recs.len(), 12);
    let text = std::fs::read_to_string(&summary).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,looseness,n,mean_f_measure,mean_error_rate");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("grabcut,0.0,2,"));
    assert!(lines[6].starts_with("loosecut-no-constraint,1.2,2,"));

    let bad = loosecut(&[
        "bench",
        "--dataset",
        p(&data),
        "--methods",
        "nope",
        "--out",
        p(&records),
    ]);
    assert!(!bad.status.success());
}

#[test]
fn serve_answers_health_on_env_address() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_loosecut"))
        .arg("serve")
        .env("LOOSECUT_LISTEN", &addr)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Ok(mut s) = TcpStream::connect(&addr) {
            s.write_all(b"GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut buf = String::new();
            s.read_to_string(&mut buf).unwrap();
            break buf;
        }
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.ends_with(r#"{"ok":true}"#), "{response}");
}
