//! Supervised execution of untrusted tool scripts.
//!
//! Each run gets a fresh temporary work directory, a stripped environment,
//! its own process group, rlimits, a wall-clock timeout and capped output
//! capture. With a Python interpreter a prelude installs an audit hook that
//! refuses writes outside the work directory and any socket use, reporting
//! them as violations on stderr. [`static_scan`] is a separate lexical
//! denylist check.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const DEFAULT_DENYLIST: &[&str] = &[
    "subprocess",
    "os.system",
    "os.popen",
    "os.exec",
    "os.spawn",
    "os.fork",
    "pty.",
    "ctypes",
    "socket",
    "shutil.rmtree",
    "__import__",
    "eval(",
    "exec(",
    "os.remove",
    "os.unlink",
    "importlib",
    "urllib",
    "requests",
];

const VIOLATION_MARKER: &str = "__SANDBOX_VIOLATION__";

/// Installed before the tool script runs. Audit hooks cannot be removed
/// from Python code once added.
const PYTHON_PRELUDE: &str = r#"
import os, sys
_WD = os.path.realpath(os.getcwd())
_NET = os.environ.get("SANDBOX_NETWORK") == "1"
_WFLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
def _report(kind, detail):
    sys.stderr.write("\n__SANDBOX_VIOLATION__ %s %r\n" % (kind, detail))
    sys.stderr.flush()
def _inside(p):
    if isinstance(p, int):
        return True
    try:
        rp = os.path.realpath(os.path.join(_WD, os.fsdecode(p)))
    except Exception:
        return False
    return rp == _WD or rp.startswith(_WD + os.sep)
_PATH_EVENTS = {"os.remove": 1, "os.rmdir": 1, "os.mkdir": 1, "os.chmod": 1, "os.chown": 1,
    "os.truncate": 1, "os.utime": 1, "shutil.rmtree": 1, "os.rename": 2, "os.link": 2,
    "os.symlink": 2, "shutil.copyfile": 2, "shutil.move": 2}
_SPAWN = {"subprocess.Popen", "os.system", "os.exec", "os.posix_spawn", "os.spawn",
    "os.fork", "os.forkpty", "pty.spawn", "ctypes.dlopen", "os.kill", "os.killpg"}
def _hook(event, args):
    if event == "open":
        path, mode, flags = args
        writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or \
            (isinstance(flags, int) and flags & _WFLAGS)
        if writing and path is not None and not _inside(path):
            _report("fs_escape", path)
            raise PermissionError("sandbox: write outside work directory")
    elif event in _PATH_EVENTS:
        for p in args[:_PATH_EVENTS[event]]:
            if isinstance(p, (str, bytes, os.PathLike)) and not _inside(p):
                _report("fs_escape", p)
                raise PermissionError("sandbox: filesystem access outside work directory")
    elif event.startswith("socket.") and not _NET:
        _report("network_attempt", event)
        raise PermissionError("sandbox: network access denied")
    elif event in _SPAWN:
        _report("process_spawn", event)
        raise PermissionError("sandbox: process control denied")
_src_path = sys.argv[1]
with open(_src_path) as _f:
    _code = compile(_f.read(), _src_path, "exec")
sys.argv = sys.argv[1:]
sys.addaudithook(_hook)
del _f
exec(_code, {"__name__": "__main__", "__file__": _src_path, "__builtins__": __builtins__})
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Timeout,
    OutputCap,
    FsEscape,
    NetworkAttempt,
    EnvAccess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub wall_timeout_ms: u64,
    pub max_output_bytes: usize,
    pub work_dir_only: bool,
    pub network_allowed: bool,
    pub env_allowlist: Vec<String>,
    pub denylist_tokens: Vec<String>,
    /// Address-space cap; `None` leaves the platform default.
    #[serde(default)]
    pub memory_limit_mib: Option<u64>,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            wall_timeout_ms: 10_000,
            max_output_bytes: 1_048_576,
            work_dir_only: true,
            network_allowed: false,
            env_allowlist: vec!["PATH".into(), "LANG".into(), "LC_ALL".into()],
            denylist_tokens: DEFAULT_DENYLIST.iter().map(|s| s.to_string()).collect(),
            memory_limit_mib: Some(1024),
        }
    }
}

impl SandboxPolicy {
    pub fn validate(&self) -> Result<(), SandboxError> {
        if self.wall_timeout_ms == 0 {
            return Err(SandboxError::InvalidPolicy("wall_timeout_ms must be positive".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(SandboxError::InvalidPolicy("max_output_bytes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxResult {
    pub exit_ok: bool,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub line: usize,
    pub column: usize,
    pub token: String,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    Unavailable(String),
    #[error("invalid sandbox policy: {0}")]
    InvalidPolicy(String),
}

/// Every denylist token occurrence, ordered by position. Lexical: tokens in
/// comments and string literals count.
pub fn static_scan(script: &str, policy: &SandboxPolicy) -> Vec<Finding> {
    let mut out = Vec::new();
    for (idx, line) in script.lines().enumerate() {
        for token in &policy.denylist_tokens {
            if token.is_empty() {
                continue;
            }
            for (col, _) in line.match_indices(token.as_str()) {
                out.push(Finding {
                    line: idx + 1,
                    column: col + 1,
                    token: token.clone(),
                });
            }
        }
    }
    out.sort_by(|a, b| (a.line, a.column, &a.token).cmp(&(b.line, b.column, &b.token)));
    out
}

/// Environment variable names the script reads that the policy does not
/// pass through. Unnamed access (`dict(os.environ)`) yields `"*"`.
pub fn env_references(script: &str, policy: &SandboxPolicy) -> BTreeSet<String> {
    let named = Regex::new(
        r#"(?:environ(?:\.get)?\s*[\[(]|getenv\s*\()\s*['"]([A-Za-z_][A-Za-z0-9_]*)['"]"#,
    )
    .expect("static regex");
    let any = Regex::new(r"\benviron\b|\bgetenv\b").expect("static regex");
    let mut out = BTreeSet::new();
    let allowed = |n: &str| policy.env_allowlist.iter().any(|a| a == n);
    let mut named_spans = Vec::new();
    for cap in named.captures_iter(script) {
        let m = cap.get(0).expect("whole match");
        named_spans.push(m.start()..m.end());
        let name = &cap[1];
        if !allowed(name) {
            out.insert(name.to_string());
        }
    }
    for m in any.find_iter(script) {
        if !named_spans.iter().any(|s| s.contains(&m.start())) {
            out.insert("*".to_string());
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    interpreter: Vec<String>,
    policy: SandboxPolicy,
}

impl Sandbox {
    /// `interpreter` is a command line such as `python3 -I -B`.
    pub fn new(interpreter: &str, policy: SandboxPolicy) -> Result<Self, SandboxError> {
        policy.validate()?;
        let interpreter: Vec<String> = interpreter.split_whitespace().map(str::to_string).collect();
        if interpreter.is_empty() {
            return Err(SandboxError::Unavailable("no interpreter configured".into()));
        }
        Ok(Self { interpreter, policy })
    }

    pub fn policy(&self) -> &SandboxPolicy {
        &self.policy
    }

    pub fn interpreter(&self) -> String {
        self.interpreter.join(" ")
    }

    fn is_python(&self) -> bool {
        Path::new(&self.interpreter[0])
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("python"))
    }

    /// Whether the interpreter can be started at all.
    pub fn available(&self) -> bool {
        Command::new(&self.interpreter[0])
            .arg("--version")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok_and(|s| s.success())
    }

    pub fn execute(&self, script: &str, args: &Value) -> Result<SandboxResult, SandboxError> {
        self.execute_with(script, args, &self.policy)
    }

    pub fn execute_with(&self, script: &str, args: &Value, policy: &SandboxPolicy) -> Result<SandboxResult, SandboxError> {
        policy.validate()?;
        let work = tempfile::Builder::new()
            .prefix("kubesteer-sbx-")
            .tempdir()
            .map_err(|e| SandboxError::Unavailable(format!("work directory: {e}")))?;
        let script_path = work.path().join("tool.py");
        std::fs::write(&script_path, script)
            .map_err(|e| SandboxError::Unavailable(format!("write script: {e}")))?;

        let mut cmd = Command::new(&self.interpreter[0]);
        cmd.args(&self.interpreter[1..]);
        if self.is_python() {
            cmd.arg("-c").arg(PYTHON_PRELUDE);
        } else {
            tracing::warn!(interpreter = %self.interpreter(), "no runtime hooks for this interpreter");
        }
        cmd.arg("tool.py")
            .current_dir(work.path())
            .env_clear()
            .env("HOME", work.path())
            .env("TMPDIR", work.path())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for name in &policy.env_allowlist {
            if let Ok(v) = std::env::var(name) {
                cmd.env(name, v);
            }
        }
        if policy.network_allowed {
            cmd.env("SANDBOX_NETWORK", "1");
        }
        let limits = Limits::from_policy(policy);
        // SAFETY: the closure only calls async-signal-safe libc functions.
        unsafe {
            cmd.pre_exec(move || limits.apply());
        }

        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| SandboxError::Unavailable(format!("spawn {}: {e}", self.interpreter[0])))?;

        let input = serde_json::to_vec(args).unwrap_or_default();
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // The script may exit without reading; a broken pipe is fine.
            let _ = stdin.write_all(&input);
        });
        let stdout_overflow = Arc::new(AtomicBool::new(false));
        let stdout_reader = capture(child.stdout.take().expect("piped stdout"), policy.max_output_bytes, stdout_overflow.clone());
        let stderr_reader = capture(
            child.stderr.take().expect("piped stderr"),
            policy.max_output_bytes,
            Arc::new(AtomicBool::new(false)),
        );

        let deadline = started + Duration::from_millis(policy.wall_timeout_ms);
        let (status, timed_out) = wait_until(&mut child, deadline);
        let duration_ms = started.elapsed().as_millis() as u64;
        let _ = writer.join();
        let stdout = stdout_reader.join().unwrap_or_default();
        let stderr_raw = stderr_reader.join().unwrap_or_default();

        let mut violations = BTreeSet::new();
        if timed_out {
            violations.insert(Violation::Timeout);
        }
        if stdout_overflow.load(Ordering::SeqCst) {
            violations.insert(Violation::OutputCap);
        }
        let mut stderr = String::new();
        for line in String::from_utf8_lossy(&stderr_raw).split_inclusive('\n') {
            if let Some(rest) = line.trim_end().strip_prefix(VIOLATION_MARKER) {
                match rest.split_whitespace().next() {
                    Some("fs_escape") if policy.work_dir_only => {
                        violations.insert(Violation::FsEscape);
                    }
                    Some("network_attempt") => {
                        violations.insert(Violation::NetworkAttempt);
                    }
                    _ => {}
                }
                stderr.push_str(&format!("sandbox denied:{rest}\n"));
            } else {
                stderr.push_str(line);
            }
        }
        if !env_references(script, policy).is_empty() {
            violations.insert(Violation::EnvAccess);
        }

        let exit_code = status.and_then(|s| s.code());
        Ok(SandboxResult {
            exit_ok: !timed_out && exit_code == Some(0),
            exit_code,
            stdout: String::from_utf8_lossy(&stdout).into_owned(),
            stderr,
            duration_ms,
            violations: violations.into_iter().collect(),
        })
        // `work` drops here and removes the directory.
    }
}

/// Reads a pipe to EOF, keeping at most `cap` bytes.
fn capture<R: Read + Send + 'static>(mut pipe: R, cap: usize, overflow: Arc<AtomicBool>) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 16 * 1024];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        overflow.store(true, Ordering::SeqCst);
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        kept
    })
}

fn wait_until(child: &mut Child, deadline: Instant) -> (Option<std::process::ExitStatus>, bool) {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return (Some(status), false),
            Ok(None) => {}
            Err(_) => return (None, false),
        }
        if Instant::now() >= deadline {
            let pgid = child.id() as libc::pid_t;
            // SAFETY: plain syscall on the child's own process group.
            unsafe {
                libc::killpg(pgid, libc::SIGKILL);
            }
            let _ = child.kill();
            return (child.wait().ok(), true);
        }
        thread::sleep(Duration::from_millis(2));
    }
}

#[derive(Debug, Clone, Copy)]
struct Limits {
    cpu_secs: u64,
    address_space: Option<u64>,
    file_size: u64,
}

impl Limits {
    fn from_policy(policy: &SandboxPolicy) -> Self {
        Self {
            cpu_secs: policy.wall_timeout_ms.div_ceil(1000) + 1,
            address_space: policy.memory_limit_mib.map(|m| m * 1024 * 1024),
            file_size: (policy.max_output_bytes as u64).max(16 * 1024 * 1024),
        }
    }

    fn apply(&self) -> std::io::Result<()> {
        fn set(resource: libc::__rlimit_resource_t, value: u64) {
            let lim = libc::rlimit {
                rlim_cur: value as libc::rlim_t,
                rlim_max: value as libc::rlim_t,
            };
            // SAFETY: setrlimit on the current (child) process. Failure only
            // weakens hardening, so it is ignored.
            unsafe {
                libc::setrlimit(resource, &lim);
            }
        }
        // SAFETY: setsid in the freshly forked child.
        unsafe {
            libc::setsid();
        }
        set(libc::RLIMIT_CPU, self.cpu_secs);
        set(libc::RLIMIT_FSIZE, self.file_size);
        set(libc::RLIMIT_CORE, 0);
        if let Some(bytes) = self.address_space {
            set(libc::RLIMIT_AS, bytes);
        }
        Ok(())
    }
}
