//! Isolated execution of generated programs against a test harness.
//!
//! Each run gets a fresh temporary directory that is the only writable
//! location. The child runs in its own process group with an address-space
//! limit, a cleared environment and, where the kernel allows it, a private
//! network namespace. For Python an audit hook additionally terminates the
//! process on any network use, process creation or write outside the
//! temporary directory. A hard wall-clock deadline kills the whole process
//! group.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exit status used by the guard when the program breaks a sandbox rule.
pub const VIOLATION_EXIT_CODE: i32 = 97;

const PYTHON_GUARD: &str = r#"import sys as _sbx_sys, os as _sbx_os
def _sbx_install():
    root = _sbx_os.path.realpath(_sbx_os.getcwd())
    write_flags = _sbx_os.O_WRONLY | _sbx_os.O_RDWR | _sbx_os.O_APPEND | _sbx_os.O_CREAT | _sbx_os.O_TRUNC
    denied = {"socket.connect", "socket.bind", "socket.sendto", "socket.sendmsg",
              "socket.getaddrinfo", "socket.gethostbyname", "subprocess.Popen",
              "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "pty.spawn"}
    path_events = {"os.remove", "os.rename", "os.rmdir", "os.mkdir", "os.truncate",
                   "os.chmod", "os.chown", "os.symlink", "os.link", "os.utime", "shutil.rmtree"}
    def violation(what):
        try:
            _sbx_sys.stderr.write("sandbox violation: " + what + "\n")
            _sbx_sys.stderr.flush()
        finally:
            _sbx_os._exit(97)
    def inside(path):
        try:
            path = _sbx_os.fsdecode(path)
        except Exception:
            return False
        real = _sbx_os.path.realpath(_sbx_os.path.join(root, path))
        return real == root or real.startswith(root + _sbx_os.sep)
    def hook(event, args):
        if event in denied:
            violation(event)
        elif event == "open":
            path, mode, flags = args
            if isinstance(path, int):
                return
            writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or bool((flags or 0) & write_flags)
            if writing and not inside(path):
                violation("write outside sandbox: " + str(path))
        elif event in path_events:
            if args and not isinstance(args[0], int) and not inside(args[0]):
                violation(event + " outside sandbox")
    _sbx_sys.addaudithook(hook)
_sbx_install()
del _sbx_install
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxOutcome {
    Passed,
    Failed,
    Timeout,
    Crashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxVerdict {
    pub outcome: SandboxOutcome,
    pub stdout: String,
    pub stderr: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("timeout must be at least 1 ms")]
    InvalidTimeout,
    #[error("sandbox setup failed: {0}")]
    Setup(#[source] std::io::Error),
    #[error("failed to start interpreter {interpreter:?}: {source}")]
    Spawn {
        interpreter: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    pub interpreter: String,
    pub interpreter_args: Vec<String>,
    pub file_name: String,
    pub memory_limit_bytes: u64,
    pub default_timeout_ms: u64,
    /// Bytes of stdout/stderr kept in the verdict.
    pub output_limit: usize,
    /// Prepend the Python audit-hook guard to the program.
    pub python_guard: bool,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
            interpreter_args: vec!["-I".into()],
            file_name: "program.py".into(),
            memory_limit_bytes: 256 * 1024 * 1024,
            default_timeout_ms: 10_000,
            output_limit: 4096,
            python_guard: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    config: SandboxConfig,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    /// Runs `program` followed by `test_harness`. Exit status 0 within the
    /// deadline means the completion passed.
    pub fn run(
        &self,
        program: &str,
        test_harness: &str,
        timeout_ms: u64,
    ) -> Result<SandboxVerdict, SandboxError> {
        if timeout_ms == 0 {
            return Err(SandboxError::InvalidTimeout);
        }
        let dir = tempfile::Builder::new()
            .prefix("evalkit-sandbox-")
            .tempdir()
            .map_err(SandboxError::Setup)?;
        let script_path: PathBuf = dir.path().join(&self.config.file_name);
        let mut source = String::new();
        if self.config.python_guard {
            source.push_str(PYTHON_GUARD);
        }
        source.push_str(program);
        if !program.ends_with('\n') {
            source.push('\n');
        }
        source.push_str(test_harness);
        source.push('\n');
        std::fs::write(&script_path, source).map_err(SandboxError::Setup)?;

        let mut command = Command::new(&self.config.interpreter);
        command
            .args(&self.config.interpreter_args)
            .arg(&self.config.file_name)
            .current_dir(dir.path())
            .env_clear()
            .env("PATH", "/usr/local/bin:/usr/bin:/bin")
            .env("HOME", dir.path())
            .env("TMPDIR", dir.path())
            .env("LANG", "C.UTF-8")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());

        let memory_limit = self.config.memory_limit_bytes;
        // SAFETY: only async-signal-safe libc calls are made between fork
        // and exec.
        unsafe {
            command.pre_exec(move || {
                libc::setpgid(0, 0);
                let mem = libc::rlimit { rlim_cur: memory_limit, rlim_max: memory_limit };
                libc::setrlimit(libc::RLIMIT_AS, &mem);
                let no_core = libc::rlimit { rlim_cur: 0, rlim_max: 0 };
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                // Best effort; unprivileged containers may refuse.
                libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
                Ok(())
            });
        }

        let start = Instant::now();
        let mut child = command.spawn().map_err(|source| SandboxError::Spawn {
            interpreter: self.config.interpreter.clone(),
            source,
        })?;
        let limit = self.config.output_limit;
        let stdout = child.stdout.take().map(|s| spawn_reader(s, limit));
        let stderr = child.stderr.take().map(|s| spawn_reader(s, limit));

        let deadline = Duration::from_millis(timeout_ms);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait().map_err(SandboxError::Setup)? {
                Some(status) => break status,
                None if start.elapsed() >= deadline => {
                    timed_out = true;
                    // SAFETY: signalling the child's own process group.
                    unsafe {
                        libc::kill(-(child.id() as i32), libc::SIGKILL);
                    }
                    let _ = child.kill();
                    break child.wait().map_err(SandboxError::Setup)?;
                }
                None => thread::sleep(Duration::from_millis(2)),
            }
        };
        let elapsed_ms = start.elapsed().as_millis() as u64;
        let stdout = stdout.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        let stderr = stderr.map(|h| h.join().unwrap_or_default()).unwrap_or_default();

        let outcome = if timed_out {
            SandboxOutcome::Timeout
        } else if status.signal().is_some() || status.code() == Some(VIOLATION_EXIT_CODE) {
            SandboxOutcome::Crashed
        } else if status.success() {
            SandboxOutcome::Passed
        } else {
            SandboxOutcome::Failed
        };
        if outcome != SandboxOutcome::Passed {
            log::debug!("sandbox {outcome:?} after {elapsed_ms} ms: {stderr}");
        }
        Ok(SandboxVerdict { outcome, stdout, stderr, elapsed_ms })
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut stream: R, limit: usize) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 4096];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = limit.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn python_available() -> bool {
        Command::new("python3").arg("--version").output().is_ok()
    }

    const ADD: &str = "def add(a, b):\n    return a + b\n";
    const HARNESS: &str = "assert add(1, 2) == 3\nassert add(-1, 1) == 0\n";

    #[test]
    fn correct_completion_passes() {
        if !python_available() {
            return;
        }
        let v = Sandbox::default().run(ADD, HARNESS, 5_000).unwrap();
        assert_eq!(v.outcome, SandboxOutcome::Passed, "{}", v.stderr);
    }

    #[test]
    fn wrong_completion_fails_with_stderr() {
        if !python_available() {
            return;
        }
        let v = Sandbox::default().run("def add(a, b):\n    return a - b\n", HARNESS, 5_000).unwrap();
        assert_eq!(v.outcome, SandboxOutcome::Failed);
        assert!(v.stderr.contains("AssertionError"), "{}", v.stderr);
    }

    #[test]
    fn exception_fails() {
        if !python_available() {
            return;
        }
        let v = Sandbox::default()
            .run("def add(a, b):\n    raise ValueError('boom')\n", HARNESS, 5_000)
            .unwrap();
        assert_eq!(v.outcome, SandboxOutcome::Failed);
        assert!(v.stderr.contains("ValueError"));
    }

    #[test]
    fn infinite_loop_times_out() {
        if !python_available() {
            return;
        }
        let v = Sandbox::default().run("while True:\n    pass\n", "", 300).unwrap();
        assert_eq!(v.outcome, SandboxOutcome::Timeout);
        assert!(v.elapsed_ms >= 300);
    }

    #[test]
    fn write_outside_temp_dir_is_not_success() {
        if !python_available() {
            return;
        }
        let target = std::env::temp_dir().join(format!("evalkit-escape-{}", std::process::id()));
        let program = format!(
            "try:\n    open({:?}, 'w').write('x')\nexcept Exception:\n    pass\n",
            target.display().to_string()
        );
        let v = Sandbox::default().run(&program, "", 5_000).unwrap();
        assert_ne!(v.outcome, SandboxOutcome::Passed);
        assert!(!target.exists());
    }

    #[test]
    fn write_inside_temp_dir_is_allowed() {
        if !python_available() {
            return;
        }
        let program = "open('scratch.txt', 'w').write('ok')\nassert open('scratch.txt').read() == 'ok'\n";
        let v = Sandbox::default().run(program, "", 5_000).unwrap();
        assert_eq!(v.outcome, SandboxOutcome::Passed, "{}", v.stderr);
    }

    #[test]
    fn network_connection_is_not_success() {
        if !python_available() {
            return;
        }
        let program = "import socket\ntry:\n    socket.create_connection(('127.0.0.1', 9), timeout=1)\nexcept Exception:\n    pass\n";
        let v = Sandbox::default().run(program, "", 5_000).unwrap();
        assert_ne!(v.outcome, SandboxOutcome::Passed);
    }

    #[test]
    fn zero_timeout_is_rejected() {
        assert!(matches!(Sandbox::default().run("", "", 0), Err(SandboxError::InvalidTimeout)));
    }

    #[test]
    fn missing_interpreter_is_setup_error() {
        let sandbox = Sandbox::new(SandboxConfig {
            interpreter: "/nonexistent/python".into(),
            ..SandboxConfig::default()
        });
        assert!(matches!(sandbox.run("", "", 100), Err(SandboxError::Spawn { .. })));
    }

    #[test]
    fn output_is_bounded() {
        if !python_available() {
            return;
        }
        let sandbox = Sandbox::new(SandboxConfig { output_limit: 10, ..SandboxConfig::default() });
        let v = sandbox.run("print('x' * 10000)\n", "", 5_000).unwrap();
        assert_eq!(v.stdout.len(), 10);
    }
}
