// Copyright 2026 The stv-audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Command-line behaviour: exit codes, JSON shapes, reproducibility and
//! agreement with the HTTP service.

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::Command;
use stv_audit::format::{parse_preference_file, FileFormat};
use stv_audit::session::{Reading, Task};
use stv_audit::Ballot;
use stv_audit_cli::run;
use stv_audit_service::{router, AppState};
use tower::ServiceExt;

const RECORD: &str = "\
# candidates: Ann|Bob|Cat|Dan|Eve
# groups: ||||
# seats: 2
1,3,x12
2,x9
3,x5
4,5,x2
5,4,x3
";

const AUDITED: &str = "\
# candidates: Ann|Bob|Cat|Dan|Eve
# groups: ||||
1,3,x5
2,x3
3,x2
";

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("stv-audit").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn cli_json(args: &[&str]) -> Value {
    let mut full = args.to_vec();
    full.push("--json");
    let (code, out, err) = cli(&full);
    assert_eq!(code, 0, "{args:?}: {err}");
    assert_eq!(out.lines().count(), 1);
    serde_json::from_str(&out).unwrap()
}

fn assert_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../schemas/{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{value}");
}

#[test]
fn json_outputs_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let rec = write(dir.path(), "e.csv", RECORD);
    let aud = write(dir.path(), "a.csv", AUDITED);
    let f = rec.to_str().unwrap();

    let log = cli_json(&["tabulate", "--file", f]);
    assert_schema("count-log", &log);
    assert_eq!(log["quota"], 11);

    let m = cli_json(&["margin", "--file", f, "--refine", "--exact-cap", "3"]);
    assert_schema("margin", &m);
    let exact = m["exact"]["exact"].as_u64().unwrap();
    assert!(m["best"].as_u64().unwrap() >= exact);

    assert_schema(
        "bayes-report",
        &cli_json(&["bayes", "--file", f, "--audited", aud.to_str().unwrap(), "--trials", "40", "--seed", "5"]),
    );
    assert_schema(
        "bootstrap-report",
        &cli_json(&["bootstrap", "--file", f, "--schedule", "5,15,31", "--trials", "30", "--seed", "5"]),
    );
    assert_schema("stats-binom", &cli_json(&["stats", "binom-upper", "--k", "0", "--n", "100"]));
    assert_schema("stats-binom", &cli_json(&["stats", "binom-lower", "--k", "3", "--n", "100"]));
    assert_schema(
        "stats-negative",
        &cli_json(&["stats", "negative", "--k", "3", "--n", "100", "--population", "1000", "--bound", "2"]),
    );
    assert_schema("stats-measured-risk", &cli_json(&["stats", "measured-risk", "--n", "1000", "--p0", "0.0002"]));
    assert_schema("stats-km-sample", &cli_json(&["stats", "km-sample", "--margin", "4", "--total", "10000"]));
    assert_schema(
        "km-audit-state",
        &cli_json(&["stats", "km-pvalue", "--file", f, "--inspected", "8", "--discrepancy", "13:informal"]),
    );
    assert_schema(
        "discrepancy-record",
        &cli_json(&["stats", "classify", "--file", f, "--index", "12", "--actual", "3,2"]),
    );
    assert_schema("sample-draw", &cli_json(&["sample", "--seed", "1", "--file", f, "--size", "6"]));
}

#[test]
fn km_planning_sizes() {
    let n = |frac: &str| cli_json(&["stats", "km-sample", "--margin-fraction", frac])["sample_size"].as_u64();
    assert_eq!(n("0.0004"), Some(7488));
    assert_eq!(n("0.0002"), Some(14978));
}

#[test]
fn human_reports() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "e.csv", RECORD);
    let (code, out, _) = cli(&["tabulate", "--file", f.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("quota 11"));
    assert!(out.contains("winners: Ann, Bob"));
    // Ann's surplus of 1 over 12 papers.
    assert!(out.contains("0.0833333 (1/12)"), "{out}");
    let (code, out, _) = cli(&["stats", "km-sample", "--margin-fraction", "0.0004"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("7488 "));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "e.csv", RECORD);
    let f = f.to_str().unwrap();
    let bad = write(dir.path(), "bad.csv", "# candidates: A|B\n1,7,x2\n");
    assert_eq!(cli(&["tabulate", "--file", f]).0, 0);
    assert_eq!(cli(&["--help"]).0, 0);
    let (code, _, err) = cli(&["tabulate", "--file", f, "--frobnicate"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
    assert_eq!(cli(&["recount"]).0, 2);
    assert_eq!(cli(&["tabulate", "--file", "/no/such/file.csv"]).0, 2);
    assert_eq!(cli(&["tabulate", "--file", bad.to_str().unwrap(), "--seats", "1"]).0, 2);
    assert_eq!(cli(&["tabulate", "--file", f, "--seats", "9"]).0, 2);
    assert_eq!(cli(&["margin", "--file", f, "--workers", "0"]).0, 2);
    assert_eq!(cli(&["sample", "--seed", "1", "--population", "5", "--size", "6"]).0, 2);
    assert_eq!(cli(&["stats", "binom-upper", "--k", "5", "--n", "3"]).0, 2);

    // A log whose entries do not replay is a runtime failure.
    let log = write(dir.path(), "s.jsonl", "{\"seq\":1,\"event\":{\"type\":\"extended\",\"new_size\":3}}\n");
    assert_eq!(cli(&["audit-replay", "--log", log.to_str().unwrap()]).0, 1);

    // Same contract from the installed binary.
    let bin = env!("CARGO_BIN_EXE_stv-audit");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["tabulate", "--file", f]), Some(0));
    assert_eq!(status(&["tabulate", "--nope"]), Some(2));
    assert_eq!(status(&["audit-replay", "--log", log.to_str().unwrap()]), Some(1));
}

#[test]
fn seeded_runs_reproduce_and_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "e.csv", RECORD);
    let f = f.to_str().unwrap();
    let boot = |seed: &str, workers: &str| {
        cli(&["bootstrap", "--file", f, "--schedule", "5,10,20", "--trials", "60", "--seed", seed, "--workers", workers, "--json"]).1
    };
    let a = boot("9", "1");
    assert_eq!(a, boot("9", "1"));
    assert_eq!(a, boot("9", "3"));
    assert_ne!(a, boot("10", "1"));

    let aud = write(dir.path(), "a.csv", AUDITED);
    let aud = aud.to_str().unwrap();
    let bayes = |workers: &str| {
        cli(&["bayes", "--file", f, "--audited", aud, "--trials", "50", "--seed", "2", "--workers", workers, "--json"]).1
    };
    assert_eq!(bayes("1"), bayes("4"));
    let margin = |workers: &str| cli(&["margin", "--file", f, "--refine", "--workers", workers, "--json"]).1;
    assert_eq!(margin("1"), margin("2"));
    let sample = || cli(&["sample", "--seed", "77", "--population", "1000000", "--size", "20", "--json"]).1;
    assert_eq!(sample(), sample());
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    if text.contains('\n') {
        Value::Array(text.lines().map(|l| serde_json::from_str(l).unwrap()).collect())
    } else {
        serde_json::from_str(&text).unwrap()
    }
}

#[tokio::test]
async fn replay_of_service_log_matches_service_stats() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::with_data_dir(dir.path()).unwrap();
    let app = router(state.clone());
    let request = json!({ "record": RECORD, "seed": 11, "initial_size": 9, "config": { "trials": 40 } });
    assert_schema("create-request", &request);
    let created = call(&app, "POST", "/sessions", Some(request)).await;
    assert_schema("create-reply", &created);
    let id = created["id"].as_str().unwrap().to_owned();
    let record = parse_preference_file(RECORD.as_bytes(), FileFormat::CanonicalCsv).unwrap().profile;

    let mut step = 0;
    loop {
        let task = call(&app, "GET", &format!("/sessions/{id}/task"), None).await;
        assert_schema("task", &task);
        let Task::Retrieve { index, .. } = serde_json::from_value(task).unwrap() else { break };
        let reported = record.ballot_at(index).unwrap().clone();
        // Every third ballot turns out to differ from the record.
        let reading = if step % 3 == 2 {
            Reading::Ballot(Ballot::from_indices(&[4, 3]))
        } else {
            Reading::Ballot(reported)
        };
        step += 1;
        let body = json!({ "reading": reading });
        assert_schema("submit-request", &body);
        let reply = call(&app, "POST", &format!("/sessions/{id}/entries/{index}"), Some(body.clone())).await;
        assert_schema("submit-reply", &reply);
        if reply["result"]["status"] == "flagged" {
            call(&app, "POST", &format!("/sessions/{id}/entries/{index}"), Some(body)).await;
        }
        if step == 4 {
            let ext = call(&app, "POST", &format!("/sessions/{id}/extend"), Some(json!({ "new_size": 12 }))).await;
            assert_schema("extend-reply", &ext);
        }
    }
    let stats = call(&app, "GET", &format!("/sessions/{id}/stats"), None).await;
    assert_schema("stats-snapshot", &stats);
    assert_eq!(stats["settled"], 12);
    let Value::Array(public) = call(&app, "GET", &format!("/sessions/{id}/log"), None).await else {
        panic!("log is JSON lines")
    };
    for line in &public {
        assert_schema("log-entry", line);
    }

    let path = state.log_path(&id).unwrap();
    let (code, out, err) = cli(&["audit-replay", "--log", path.to_str().unwrap(), "--json"]);
    assert_eq!(code, 0, "{err}");
    let (_, body) = {
        let req = Request::builder().uri(format!("/sessions/{id}/stats")).body(Body::empty()).unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        ((), resp.into_body().collect().await.unwrap().to_bytes())
    };
    assert_eq!(out.trim_end().as_bytes(), &body[..]);
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap(), stats);

    let (code, human, _) = cli(&["audit-replay", "--log", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(human.contains("12 settled"));
}

#[test]
fn missing_margin_is_searched_for() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "e.csv", RECORD);
    let f = f.to_str().unwrap();
    let searched = cli_json(&["stats", "km-pvalue", "--file", f, "--inspected", "0"]);
    let best = cli_json(&["margin", "--file", f])["best"].as_u64().unwrap();
    assert_eq!(searched["margin_m"].as_u64(), Some(best));
    assert_eq!(searched["p_value"], 1.0);
}
