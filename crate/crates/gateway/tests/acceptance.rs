//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{config, fixture, simulator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacegate_core::classifier::{decide, gate};
use spacegate_core::embedding::{cosine, local_hash_embed, tokenize};
use spacegate_core::index::load_exemplar_texts;
use spacegate_core::pipeline::{Pipeline, FIXTURE_TAU};
use spacegate_core::{
    ApiCall, ApiMetadata, CallStatus, CentroidModel, EmbeddingVector, Executor, ExemplarRecord, HttpMethod,
    Registry, VectorIndex,
};
use tokio::runtime::Runtime;

/// Leave-one-out predictions from `tools/oracle.py`, in fixture order.
#[rustfmt::skip]
const LOO_ORACLE: [&str; 34] = [
    "leave_office", "leave_office", "leave_office", "leave_office", "leave_office",
    "aircon_off", "aircon_off", "aircon_off", "lights_on", "aircon_on",
    "aircon_off", "lights_off", "aircon_on", "aircon_on", "aircon_off",
    "hall_lights_on", "hall_lights_on", "lights_on", "lights_off", "lights_off",
    "lights_on", "aircon_off", "lights_off", "lights_on", "lights_on",
    "elevator_call", "elevator_call", "elevator_call", "elevator_call", "aircon_on",
    "lights_on", "lights_on", "hall_lights_on", "hall_lights_on",
];

fn fixture_records() -> Vec<ExemplarRecord> {
    load_exemplar_texts(fixture("exemplars.json"))
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let v = local_hash_embed(&e.order, 256).unwrap();
            ExemplarRecord::new(format!("{}-{i:03}", e.api_id), e.api_id, e.order, v)
        })
        .collect()
}

fn index_of(records: &[ExemplarRecord]) -> VectorIndex {
    let mut index = VectorIndex::new();
    for r in records {
        index.insert(r.clone()).unwrap();
    }
    index
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn knn_oracle_equivalence(_: &Runtime) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows: Vec<Vec<f64>> = (0..1000).map(|_| random_unit(&mut rng, 256)).collect();
    let mut index = VectorIndex::new();
    for (i, v) in rows.iter().enumerate() {
        let e = EmbeddingVector::normalized(v.clone()).unwrap();
        index
            .insert(ExemplarRecord::new(format!("v{i:04}"), "c", "t", e))
            .unwrap();
    }
    let mut searching = Duration::ZERO;
    for _ in 0..100 {
        let q = random_unit(&mut rng, 256);
        let mut oracle: Vec<(f64, String)> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let dot: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
                let na: f64 = v.iter().map(|x| x * x).sum();
                let nb: f64 = q.iter().map(|x| x * x).sum();
                ((dot / (na * nb).sqrt()).clamp(-1.0, 1.0), format!("v{i:04}"))
            })
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let qv = EmbeddingVector::normalized(q.clone()).unwrap();
        for k in [1, 5, 20] {
            let t = Instant::now();
            let got = index.nearest(&qv, k).unwrap();
            searching += t.elapsed();
            let got: Vec<&str> = got.iter().map(|n| n.record.record_id.as_str()).collect();
            let want: Vec<&str> = oracle.iter().take(k).map(|(_, id)| id.as_str()).collect();
            assert_eq!(got, want, "k={k}");
        }
    }
    assert!(
        started.elapsed() < Duration::from_secs(5),
        "took {:?}",
        started.elapsed()
    );
    println!("      300 searches over 1000x256 in {searching:?}");
}

fn gate_correctness(rt: &Runtime) {
    let records = fixture_records();
    let index = index_of(&records);
    let model = CentroidModel::train(index.list()).unwrap();
    for r in &records {
        let q = local_hash_embed(&r.order, 256).unwrap();
        for tau in [0.01, FIXTURE_TAU, 0.999, 1.0] {
            let d = decide(&index, &model, &q, tau).unwrap();
            assert!(
                (d.gate_similarity - 1.0).abs() <= 1e-9,
                "{:?}: {}",
                r.order,
                d.gate_similarity
            );
            assert!(d.is_accepted(), "{:?} rejected at tau {tau}", r.order);
        }
    }

    let vocab: BTreeSet<String> = records.iter().flat_map(|r| tokenize(&r.order)).collect();
    let sentences: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(fixture("offtopic.json")).unwrap()).unwrap();
    assert_eq!(sentences.len(), 10);
    rt.block_on(async {
        let (sim, backend) = simulator().await;
        let pipeline = Pipeline::from_config(&config(backend)).await.unwrap();
        let mut ceiling: f64 = 0.0;
        for s in &sentences {
            let content: Vec<String> = tokenize(s)
                .into_iter()
                .filter(|t| vocab.contains(t) && t != "the" && t != "a")
                .collect();
            assert!(content.is_empty(), "{s:?} shares {content:?}");
            let resp = pipeline.handle_message(s).await.unwrap();
            assert!(resp.decision.gate_similarity < FIXTURE_TAU, "{s:?}");
            assert!(!resp.decision.is_accepted());
            assert!(resp.report.is_none());
            ceiling = ceiling.max(resp.decision.gate_similarity);
        }
        assert!(sim.log().is_empty(), "simulator saw {:?}", sim.log());
        println!("      off-topic ceiling {ceiling:.4} < tau {FIXTURE_TAU}");
    });
}

fn classifier_correctness(_: &Runtime) {
    let records = fixture_records();
    let classes: BTreeSet<&str> = records.iter().map(|r| r.api_id.as_str()).collect();
    assert!(classes.len() >= 5);
    for c in &classes {
        assert!(records.iter().filter(|r| r.api_id == *c).count() >= 4);
    }
    assert_eq!(records.len(), LOO_ORACLE.len());
    for (i, held) in records.iter().enumerate() {
        let rest = records
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| r);
        let got = CentroidModel::train(rest)
            .unwrap()
            .classify(&held.embedding)
            .unwrap()
            .api_id;
        assert_eq!(got, LOO_ORACLE[i], "held-out #{i} {:?}", held.order);
    }
    let correct = records
        .iter()
        .zip(LOO_ORACLE)
        .filter(|(r, p)| r.api_id == *p)
        .count();
    println!(
        "      {} held-out items match; LOO accuracy {correct}/{}",
        records.len(),
        records.len()
    );
}

fn leave_office_end_to_end(rt: &Runtime) {
    let (sim, backend) = rt.block_on(simulator());
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("spacegate.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config(backend)).unwrap()).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_spacegate"))
        .arg("--config")
        .arg(&cfg_path)
        .args(["route", "I'm leaving the office"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let resp: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resp["decision"]["status"], "accepted");
    assert_eq!(resp["decision"]["api_id"], "leave_office");
    let results = resp["report"]["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r["call_index"], i);
        assert_eq!(r["status"], "success");
        assert_eq!(r["http_status"], 200);
    }

    let state = sim.state();
    assert_eq!(state.aircons["A305"].power, spacegate_sim::Power::Off);
    assert_eq!(state.lights["A305"].power, spacegate_sim::Power::Off);
    assert_eq!(state.elevator.last_operation.as_deref(), Some("3fdown"));
    assert_eq!(state.elevator.current_floor, 3);

    let log = sim.log();
    let seen: Vec<(&str, &str, &str)> = log
        .iter()
        .map(|e| (e.method.as_str(), e.path.as_str(), e.body.as_str()))
        .collect();
    assert_eq!(
        seen,
        [
            (
                "PUT",
                "/api/airconditioner",
                r#"{"ac_id": "A305", "on_off": "off"}"#
            ),
            ("PUT", "/api/light", r#"{"light_id": "A305", "on_off": "off"}"#),
            ("PUT", "/api/elevator", r#"{"operation": "3fdown"}"#),
        ]
    );
}

fn stop_on_error(rt: &Runtime) {
    let (sim, backend) = rt.block_on(simulator());
    // Accepts and drops connections so attempts can be counted.
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead_addr = dead.local_addr().unwrap();
    let attempts = Arc::new(AtomicUsize::new(0));
    let a = attempts.clone();
    std::thread::spawn(move || {
        for conn in dead.incoming() {
            a.fetch_add(1, Ordering::SeqCst);
            drop(conn);
        }
    });
    let call =
        |addr, path: &str, body: &str| ApiCall::new(HttpMethod::Put, format!("http://{addr}{path}"), body);
    let meta = ApiMetadata {
        api_id: "leave_office_broken".into(),
        transaction: vec![
            call(
                backend,
                "/api/airconditioner",
                r#"{"ac_id": "A305", "on_off": "off"}"#,
            ),
            call(
                dead_addr,
                "/api/light",
                r#"{"light_id": "A305", "on_off": "off"}"#,
            ),
            call(backend, "/api/elevator", r#"{"operation": "3fdown"}"#),
        ],
    };
    let report = rt.block_on(Executor::new(Duration::from_secs(2)).execute_transaction(&meta));
    let statuses: Vec<CallStatus> = report.results.iter().map(|r| r.status).collect();
    assert_eq!(
        statuses,
        [CallStatus::Success, CallStatus::Failed, CallStatus::Skipped]
    );
    std::thread::sleep(Duration::from_millis(50));
    let logged = sim.log().len();
    let connected = attempts.load(Ordering::SeqCst);
    assert_eq!(logged, 1, "simulator requests");
    assert_eq!(connected, 1, "connection attempts on the dead endpoint");
    assert_eq!(logged + connected, 2, "requests attempted in total");
    assert_eq!(sim.state().elevator.last_operation, None);

    // A port with no listener at all behaves the same.
    sim.reset("office_floor").unwrap();
    let closed = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let mut meta = meta;
    meta.transaction[1].endpoint = format!("http://{closed}/api/light");
    let report = rt.block_on(Executor::new(Duration::from_secs(2)).execute_transaction(&meta));
    let statuses: Vec<CallStatus> = report.results.iter().map(|r| r.status).collect();
    assert_eq!(
        statuses,
        [CallStatus::Success, CallStatus::Failed, CallStatus::Skipped]
    );
    assert_eq!(sim.log().len(), 1);
}

fn persistence(_: &Runtime) {
    let dir = tempfile::tempdir().unwrap();
    let strip = |s: String| {
        s.lines()
            .filter(|l| !l.contains("\"created_at\""))
            .collect::<Vec<_>>()
            .join("\n")
    };

    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    VectorIndex::load(fixture("index.json"))
        .unwrap()
        .save(&a)
        .unwrap();
    VectorIndex::load(&a).unwrap().save(&b).unwrap();
    let ta = std::fs::read_to_string(&a).unwrap();
    assert_eq!(strip(ta.clone()), strip(std::fs::read_to_string(&b).unwrap()));
    assert_eq!(
        strip(ta),
        strip(std::fs::read_to_string(fixture("index.json")).unwrap())
    );

    let (a, b) = (dir.path().join("ra.json"), dir.path().join("rb.json"));
    Registry::load(fixture("registry.json"))
        .unwrap()
        .save(&a)
        .unwrap();
    Registry::load(&a).unwrap().save(&b).unwrap();
    let ta = std::fs::read(&a).unwrap();
    assert_eq!(ta, std::fs::read(&b).unwrap());
    assert_eq!(ta, std::fs::read(fixture("registry.json")).unwrap());

    let original =
        Registry::from_json(&std::fs::read_to_string(fixture("leave_office_original.json")).unwrap())
            .unwrap();
    assert_eq!(original.len(), 1);
    assert_eq!(original.get("leave_office").unwrap().transaction.len(), 3);
}

fn invariant_suites(rt: &Runtime) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let dim = rng.random_range(2..300);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ab = cosine(&a, &b).unwrap();
        assert!((ab - cosine(&b, &a).unwrap()).abs() <= 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        let c = rng.random_range(0.001..1000.0);
        let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
        assert!((cosine(&sa, &b).unwrap() - ab).abs() <= 1e-9);
    }

    let index = index_of(&fixture_records());
    let model = CentroidModel::train(index.list()).unwrap();
    let words: Vec<&str> = "turn on off the lights in my room office leaving call elevator please \
        air conditioner cool warm hall what is weather today music"
        .split(' ')
        .collect();
    for _ in 0..200 {
        let n = rng.random_range(1..7);
        let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
        let q = local_hash_embed(&text.join(" "), 256).unwrap();
        let (t1, t2): (f64, f64) = (rng.random_range(0.01..=1.0), rng.random_range(0.01..=1.0));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        assert!(!gate(&index, &q, hi).unwrap().passed || gate(&index, &q, lo).unwrap().passed);

        let raw: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = rng.random_range(0.001..1000.0);
        let q1 = EmbeddingVector::normalized(raw.clone()).unwrap();
        let q2 = EmbeddingVector::normalized(raw.iter().map(|x| x * s).collect()).unwrap();
        assert_eq!(
            model.classify(&q1).unwrap().api_id,
            model.classify(&q2).unwrap().api_id
        );
    }

    rt.block_on(async {
        let (sim, backend) = simulator().await;
        let mut cfg = config(backend);
        cfg.dry_run = true;
        let dry = Pipeline::from_config(&cfg).await.unwrap();
        let live = Pipeline::from_config(&config(backend))
            .await
            .unwrap()
            .with_dry_run(false);
        let d = dry.handle_message("I'm leaving the office").await.unwrap();
        assert!(d.report.is_none());
        assert!(sim.log().is_empty(), "dry run reached the simulator");
        let l = live.handle_message("I'm leaving the office").await.unwrap();
        let summaries = |r: &spacegate_core::PipelineResponse| {
            r.trace
                .iter()
                .map(|s| (s.step, s.name.clone(), s.summary.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(summaries(&d), summaries(&l));
        assert_eq!(sim.log().len(), 3);
    });
}

type Criterion = (&'static str, fn(&Runtime));

fn main() {
    let started = Instant::now();
    let rt = Runtime::new().unwrap();
    let criteria: [Criterion; 7] = [
        ("kNN oracle equivalence", knn_oracle_equivalence),
        ("gate correctness", gate_correctness),
        ("classifier leave-one-out vs oracle", classifier_correctness),
        ("leave_office end-to-end via `route`", leave_office_end_to_end),
        ("stop-on-error", stop_on_error),
        ("persistence round trips", persistence),
        ("invariant suites", invariant_suites),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(|| check(&rt))).is_ok();
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name} ({:.2?})",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed()
        );
    }
    let total = started.elapsed();
    println!(
        "acceptance: {}/{} passed in {total:.2?}",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 || total > Duration::from_secs(60) {
        std::process::exit(1);
    }
}
