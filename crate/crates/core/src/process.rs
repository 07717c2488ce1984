//! Child-process helpers: process groups, bounded capture, reaping.

use std::io::{self, Read};
use std::process::{Child, ExitStatus};
use std::thread;
use std::time::{Duration, Instant};

pub const TRUNCATION_MARKER: &str = "[truncated]";

/// Sends `signal` to the whole process group led by `pid`.
pub fn signal_group(pid: u32, signal: libc::c_int) {
    // SAFETY: kill(2) with a negated pgid; errors (group already gone) are ignored.
    unsafe {
        libc::kill(-(pid as libc::pid_t), signal);
    }
}

/// Polls until the child exits or `timeout` elapses.
pub fn wait_deadline(child: &mut Child, timeout: Duration) -> io::Result<Option<ExitStatus>> {
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if Instant::now() >= deadline {
            return Ok(None);
        }
        thread::sleep(Duration::from_millis(5));
    }
}

/// SIGTERM to the group, then SIGKILL after `grace`; always reaps.
pub fn terminate(child: &mut Child, grace: Duration) -> io::Result<ExitStatus> {
    signal_group(child.id(), libc::SIGTERM);
    if let Some(status) = wait_deadline(child, grace)? {
        signal_group(child.id(), libc::SIGKILL);
        return Ok(status);
    }
    signal_group(child.id(), libc::SIGKILL);
    child.wait()
}

/// Exit code, or 128 + signal number for signalled processes.
pub fn exit_code(status: ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

/// Reads a stream to EOF keeping at most `cap` bytes.
pub fn read_capped(mut stream: impl Read, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, truncated)
}

pub fn capped_text((bytes, truncated): (Vec<u8>, bool)) -> String {
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    if truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    text
}

/// Last `n` bytes of `bytes`, decoded lossily.
pub fn tail(bytes: &[u8], n: usize) -> String {
    let start = bytes.len().saturating_sub(n);
    String::from_utf8_lossy(&bytes[start..]).into_owned()
}
