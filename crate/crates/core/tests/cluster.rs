mod common;

use std::time::Duration;

use common::{access_oracle, demo_model, pod_rows, verb_conformance, Rig};
use kubesteer_core::kube::{fixtures, ClusterBackend, FakeCluster, KubeError, ResourceRef, VerbCategory};
use serde_json::json;

#[test]
fn every_category_matches_the_model_oracle() {
    let results = verb_conformance();
    let covered: Vec<VerbCategory> = results.iter().map(|(c, _)| *c).collect();
    assert_eq!(covered, VerbCategory::ALL.to_vec());
    for (category, r) in results {
        assert!(r.is_ok(), "{category}: {}", r.unwrap_err());
    }
}

#[test]
fn demo_fixture_shape() {
    let m = demo_model();
    assert_eq!(m.namespaces.len(), 3);
    assert_eq!(m.pods.len(), 6);
    assert_eq!(m.deployments.len(), 2);
    assert_eq!(m.services.len(), 1);
    let crashing: Vec<_> = pod_rows(&m).into_iter().filter(|r| r.2 == "CrashLoopBackOff").collect();
    assert_eq!(crashing.len(), 1);
    assert!(m.pods.keys().all(|k| m.pod_metrics.contains_key(k)));
    assert!(m.check_integrity().is_ok());

    assert!(fixtures::seed("empty", None).unwrap().is_empty());
    assert_eq!(
        fixtures::seed("missing", None).unwrap_err(),
        KubeError::FixtureNotFound("missing".into())
    );
}

#[test]
fn reads_equal_brute_force_per_kind() {
    let c = FakeCluster::new("demo", demo_model());
    let m = c.model();
    let deps = c.read(&ResourceRef::kind("deployment").in_namespace("demo")).unwrap();
    let names: Vec<&str> = deps.iter().map(|d| d["name"].as_str().unwrap()).collect();
    let want: Vec<&str> = m.deployments.keys().filter(|k| k.namespace == "demo").map(|k| k.name.as_str()).collect();
    assert_eq!(names, want);

    let ns = c.read(&ResourceRef::kind("namespace")).unwrap();
    assert_eq!(ns.len(), m.namespaces.len());

    let secret = c.read(&ResourceRef::kind("secret").in_namespace("demo").named("db-credentials")).unwrap();
    assert_eq!(secret.len(), 1);
    assert!(!secret[0].to_string().contains("s3cr3t-value"), "secret values leak: {}", secret[0]);

    let events = c.read(&ResourceRef::kind("event").in_namespace("default")).unwrap();
    assert_eq!(events.len(), m.events.iter().filter(|e| e.namespace == "default").count());
}

#[test]
fn access_review_rejects_unknown_subjects() {
    let rig = Rig::demo();
    let r = rig.dispatch(
        "check_role_binding",
        json!({"subject": "mallory", "category": "Read", "kind": "pod"}),
    );
    assert!(!r.is_success());
    let m = demo_model();
    assert!(!access_oracle(&m, "viewer", VerbCategory::WriteModify, "secret", Some("demo")));
    assert!(access_oracle(&m, "system:serviceaccount:demo:ci-bot", VerbCategory::ScaleLifecycle, "deployment", Some("demo")));
    assert!(!access_oracle(&m, "system:serviceaccount:demo:ci-bot", VerbCategory::ScaleLifecycle, "deployment", Some("default")));
}

#[test]
fn watch_is_bounded_and_cursor_based() {
    let c = FakeCluster::new("demo", demo_model());
    let all = c.watch_events(None, 0, 100, Duration::ZERO).unwrap();
    assert_eq!(all.events.len(), 5);
    let started = std::time::Instant::now();
    let none = c.watch_events(None, all.cursor, 10, Duration::from_millis(50)).unwrap();
    assert!(none.events.is_empty());
    assert!(started.elapsed() < Duration::from_millis(500));

    std::thread::scope(|s| {
        s.spawn(|| {
            std::thread::sleep(Duration::from_millis(20));
            c.inject_event("demo", "Pinged", "hello", "pod/api-0");
        });
        let next = c.watch_events(Some("demo"), all.cursor, 10, Duration::from_secs(5)).unwrap();
        assert_eq!(next.events.len(), 1);
        assert_eq!(next.events[0]["spec"]["reason"], "Pinged");
    });
}

#[test]
fn stubs_report_unsupported() {
    let rig = Rig::demo();
    for tool in ["port_forward", "attach_container", "bind_pod"] {
        let r = rig.dispatch(tool, json!({}));
        assert!(r.is_success());
        assert_eq!(r.data["supported"], false, "{tool}");
    }
}

#[test]
fn failed_mutations_leave_no_trace() {
    let rig = Rig::demo();
    let before = rig.cluster.model();
    let r = rig.dispatch("create_deployment", json!({"namespace": "nowhere", "name": "x", "replicas": 1}));
    assert!(!r.is_success());
    let r = rig.dispatch("scale_deployment", json!({"namespace": "demo", "name": "web", "replicas": -1}));
    assert!(!r.is_success());
    let r = rig.dispatch("apply_manifest", json!({"manifest": "[]"}));
    assert!(!r.is_success());
    assert_eq!(rig.cluster.model(), before);
}
