use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use kubesteer::*;
use serde_json::Value;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> Value {
    assert!(!p.is_null());
    let v = serde_json::from_str(CStr::from_ptr(p).to_str().unwrap()).unwrap();
    ks_string_free(p);
    v
}

unsafe fn last_error() -> String {
    let p = ks_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

unsafe fn scenario_system(name: &str) -> *mut KsSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(ks_system_new_scenario(c(name).as_ptr(), ptr::null(), &mut sys), KsStatus::Ok);
    assert!(!sys.is_null());
    sys
}

#[test]
fn turn_and_session_roundtrip() {
    unsafe {
        let sys = scenario_system("pod-health");
        let mut out = ptr::null_mut();
        let q = c("List all pods and identify those with errors in each namespace");
        assert_eq!(ks_run_turn(sys, c("s1").as_ptr(), q.as_ptr(), c("admin").as_ptr(), &mut out), KsStatus::Ok);
        let v = take(out);
        assert_eq!(v["kind"], "response");
        assert!(v["content"].as_str().unwrap().contains("default/batch-worker"));

        assert_eq!(ks_session(sys, c("s1").as_ptr(), &mut out), KsStatus::Ok);
        let state = take(out);
        assert_eq!(state["status"], "completed");

        assert_eq!(ks_session(sys, c("nope").as_ptr(), &mut out), KsStatus::NotFound);
        assert!(last_error().contains("nope"));

        assert_eq!(ks_health(sys, &mut out), KsStatus::Ok);
        assert_eq!(take(out)["status"], "ok");

        assert_eq!(ks_list_tools(sys, c("Logs").as_ptr(), &mut out), KsStatus::Ok);
        let tools = take(out);
        assert!(tools.as_array().unwrap().iter().all(|t| t["owner_agent"] == "Logs"));
        assert_eq!(ks_list_tools(sys, c("Wizard").as_ptr(), &mut out), KsStatus::InvalidArgument);
        ks_system_free(sys);
    }
}

#[test]
fn interrupt_then_resume() {
    unsafe {
        let sys = scenario_system("codegen-approval");
        let mut out = ptr::null_mut();
        let q = c("List the failed jobs in namespace default");
        assert_eq!(ks_run_turn(sys, c("s").as_ptr(), q.as_ptr(), c("admin").as_ptr(), &mut out), KsStatus::Ok);
        let v = take(out);
        assert_eq!(v["kind"], "interrupt");
        assert_eq!(v["pending_interrupt"]["kind"], "approval");

        assert_eq!(
            ks_run_turn(sys, c("s").as_ptr(), q.as_ptr(), c("admin").as_ptr(), &mut out),
            KsStatus::SessionBusy
        );
        assert_eq!(ks_resume(sys, c("s").as_ptr(), c("yes").as_ptr(), &mut out), KsStatus::Ok);
        assert_eq!(take(out)["kind"], "response");
        assert_eq!(
            ks_resume(sys, c("s").as_ptr(), c("yes").as_ptr(), &mut out),
            KsStatus::NoPendingInterrupt
        );
        ks_system_free(sys);
    }
}

#[test]
fn argument_errors_are_codes() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(ks_system_new_scenario(ptr::null(), ptr::null(), &mut sys), KsStatus::NullArgument);
        assert_eq!(
            ks_system_new_scenario(c("no-such-scenario").as_ptr(), ptr::null(), &mut sys),
            KsStatus::NotFound
        );
        assert!(sys.is_null());
        let mut out = ptr::null_mut();
        assert_eq!(ks_health(ptr::null(), &mut out), KsStatus::NullArgument);

        let sys = scenario_system("pod-health");
        let bad = [0x66u8, 0xff, 0x00];
        assert_eq!(
            ks_run_turn(sys, bad.as_ptr().cast(), c("x y").as_ptr(), c("admin").as_ptr(), &mut out),
            KsStatus::InvalidUtf8
        );
        assert_eq!(
            ks_run_turn(sys, c("s").as_ptr(), c("list pods").as_ptr(), c("wizard").as_ptr(), &mut out),
            KsStatus::InvalidArgument
        );
        assert_eq!(ks_resume(sys, c("ghost").as_ptr(), c("yes").as_ptr(), &mut out), KsStatus::CheckpointMissing);
        ks_system_free(sys);
        ks_system_free(ptr::null_mut());
        ks_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kubesteer.h")).unwrap();
    for sym in [
        "ks_system_new_from_env",
        "ks_system_new_scenario",
        "ks_system_free",
        "ks_run_turn",
        "ks_resume",
        "ks_session",
        "ks_health",
        "ks_list_tools",
        "ks_string_free",
        "ks_last_error",
        "typedef struct KsSystem KsSystem",
        "KS_STATUS_SESSION_BUSY = 5",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

/// Compiles and links a small C program against the header and static
/// library when a C compiler is present.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target/debug");
    let lib = target.join("libkubesteer.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "kubesteer.h"
int main(void) {
    KsSystem *sys = NULL;
    if (ks_system_new_scenario("pod-health", NULL, &sys) != KS_STATUS_OK) { puts(ks_last_error()); return 1; }
    char *out = NULL;
    KsStatus st = ks_run_turn(sys, "c", "List all pods and identify those with errors in each namespace", "admin", &out);
    if (st != KS_STATUS_OK) { puts(ks_last_error()); return 2; }
    int ok = strstr(out, "default/batch-worker") != NULL;
    ks_string_free(out);
    if (ks_resume(sys, "c", "yes", &out) != KS_STATUS_NO_PENDING_INTERRUPT) return 3;
    ks_system_free(sys);
    return ok ? 0 : 4;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-lssl", "-lcrypto"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
}
