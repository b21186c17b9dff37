use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kubesteer_core::sandbox::{static_scan, Sandbox, SandboxPolicy, Violation};
use serde_json::{json, Value};

fn script(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scripts").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn sandbox(policy: SandboxPolicy) -> Sandbox {
    Sandbox::new("python3 -I -B", policy).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn echo_fixture_returns_envelope_of_args() {
    let args = json!({"namespace": "demo", "n": 3});
    let r = sandbox(SandboxPolicy::default()).execute(&script("echo_args.py"), &args).unwrap();
    assert!(r.exit_ok, "{r:?}");
    assert!(r.violations.is_empty());
    let out: Value = serde_json::from_str(r.stdout.trim()).unwrap();
    assert_eq!(out, json!({"status": "success", "data": args}));
}

#[test]
fn timeout_is_enforced_promptly() {
    let policy = SandboxPolicy {
        wall_timeout_ms: 100,
        ..SandboxPolicy::default()
    };
    let started = Instant::now();
    let r = sandbox(policy).execute(&script("sleep_forever.py"), &Value::Null).unwrap();
    let elapsed = started.elapsed();
    assert_eq!(r.violations, vec![Violation::Timeout]);
    assert!(!r.exit_ok);
    assert!(r.duration_ms >= 100 && r.duration_ms <= 150, "duration {}", r.duration_ms);
    assert!(elapsed < Duration::from_millis(600));
}

#[test]
fn output_is_capped() {
    let r = sandbox(SandboxPolicy::default()).execute(&script("flood.py"), &Value::Null).unwrap();
    assert_eq!(r.stdout.len(), 1_048_576);
    assert_eq!(r.violations, vec![Violation::OutputCap]);
}

#[test]
fn writes_outside_work_dir_are_refused_and_reported() {
    let scratch = tempfile::tempdir().unwrap();
    std::fs::write(scratch.path().join("keep.txt"), "original").unwrap();
    let before = snapshot(scratch.path());
    let target = scratch.path().join("keep.txt");
    let r = sandbox(SandboxPolicy::default())
        .execute(&script("escape_write.py"), &json!(target.to_str().unwrap()))
        .unwrap();
    assert!(r.violations.contains(&Violation::FsEscape), "{r:?}");
    assert_eq!(snapshot(scratch.path()), before);
}

#[test]
fn work_dir_is_writable_and_removed() {
    let r = sandbox(SandboxPolicy::default()).execute(&script("workdir_write.py"), &Value::Null).unwrap();
    assert!(r.exit_ok, "{r:?}");
    let out: Value = serde_json::from_str(r.stdout.trim()).unwrap();
    assert_eq!(out["data"], json!(["scratch.txt", "sub", "tool.py"]));
}

#[test]
fn sockets_are_refused() {
    let r = sandbox(SandboxPolicy::default()).execute(&script("net_probe.py"), &Value::Null).unwrap();
    assert!(r.violations.contains(&Violation::NetworkAttempt), "{r:?}");
    assert!(r.stdout.contains("network access denied"));
}

#[test]
fn env_is_stripped() {
    std::env::set_var("KUBESTEER_TEST_SECRET", "leak");
    let src = "import json, os\nprint(json.dumps({'status': 'success', 'data': sorted(os.environ)}))\n";
    let r = sandbox(SandboxPolicy::default()).execute(src, &Value::Null).unwrap();
    assert!(!r.stdout.contains("KUBESTEER_TEST_SECRET"));
    assert!(r.violations.contains(&Violation::EnvAccess));
}

#[test]
fn scan_matches_grep_oracle() {
    let policy = SandboxPolicy::default();
    let src = "import json\nimport subprocess\nx = 1\nos.system('ls')  # and socket\n";
    let mut oracle = Vec::new();
    for (i, line) in src.lines().enumerate() {
        for tok in &policy.denylist_tokens {
            oracle.extend(line.match_indices(tok.as_str()).map(|_| (i + 1, tok.clone())));
        }
    }
    oracle.sort();
    let mut got: Vec<(usize, String)> = static_scan(src, &policy).into_iter().map(|f| (f.line, f.token)).collect();
    got.sort();
    assert_eq!(got, oracle);
    assert_eq!(static_scan(src, &policy), static_scan(src, &policy));
}
