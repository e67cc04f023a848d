use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

impl ExitKind {
    pub fn success(&self) -> bool {
        *self == ExitKind::Exited(0)
    }
}

impl std::fmt::Display for ExitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExitKind::Exited(c) => write!(f, "exit code {c}"),
            ExitKind::Signaled(s) => write!(f, "killed by signal {s}"),
            ExitKind::TimedOut => write!(f, "timed out"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProcessOutput {
    pub exit: ExitKind,
    pub stdout: String,
    pub stderr: String,
}

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Runs `cmd` in its own process group; on timeout the whole group is killed.
pub fn run_with_timeout(mut cmd: Command, timeout: Duration) -> std::io::Result<ProcessOutput> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take().expect("piped"));
    let err = drain(child.stderr.take().expect("piped"));
    let exit = match child.wait_timeout(timeout)? {
        Some(status) => classify(status),
        None => {
            // SAFETY: plain kill(2) on the child's process group.
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            ExitKind::TimedOut
        }
    };
    Ok(ProcessOutput {
        exit,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
    })
}

fn classify(status: std::process::ExitStatus) -> ExitKind {
    use std::os::unix::process::ExitStatusExt;
    match (status.code(), status.signal()) {
        (Some(c), _) => ExitKind::Exited(c),
        (None, Some(s)) => ExitKind::Signaled(s),
        (None, None) => ExitKind::Exited(-1),
    }
}

/// First executable named `name` on `PATH`, or `name` itself if it is a path.
pub fn find_program(name: &str) -> Option<std::path::PathBuf> {
    let p = std::path::Path::new(name);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|d| d.join(name))
            .find(|c| c.is_file())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_signals_and_timeouts() {
        let mut c = Command::new("sh");
        c.args(["-c", "echo hi; exit 3"]);
        let o = run_with_timeout(c, Duration::from_secs(10)).unwrap();
        assert_eq!(o.exit, ExitKind::Exited(3));
        assert_eq!(o.stdout.trim(), "hi");

        let mut c = Command::new("sh");
        c.args(["-c", "kill -SEGV $$"]);
        let o = run_with_timeout(c, Duration::from_secs(10)).unwrap();
        assert_eq!(o.exit, ExitKind::Signaled(libc::SIGSEGV));

        let mut c = Command::new("sh");
        c.args(["-c", "sleep 30 & sleep 30"]);
        let t = std::time::Instant::now();
        let o = run_with_timeout(c, Duration::from_millis(200)).unwrap();
        assert_eq!(o.exit, ExitKind::TimedOut);
        assert!(t.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn large_output_does_not_deadlock() {
        let mut c = Command::new("sh");
        c.args(["-c", "yes 0123456789 | head -n 200000"]);
        let o = run_with_timeout(c, Duration::from_secs(30)).unwrap();
        assert!(o.exit.success());
        assert_eq!(o.stdout.lines().count(), 200_000);
    }
}
