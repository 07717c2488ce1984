//! Named checkpoints where tests can simulate a crash.
//!
//! Production code calls [`Faults::hit`] at each checkpoint; with no injector
//! installed this is a no-op. A firing injector makes the surrounding
//! operation stop immediately, leaving on disk whatever a real crash at that
//! point would have left.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

pub trait FaultInjector: Send + Sync {
    /// Returns true to crash at `point`.
    fn should_fail(&self, point: &str) -> bool;
}

#[derive(Clone, Default)]
pub struct Faults(Option<Arc<dyn FaultInjector>>);

impl fmt::Debug for Faults {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_some() {
            "Faults(armed)"
        } else {
            "Faults(none)"
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("injected crash at `{0}`")]
pub struct InjectedCrash(pub String);

impl Faults {
    pub fn none() -> Self {
        Faults(None)
    }

    pub fn with(injector: Arc<dyn FaultInjector>) -> Self {
        Faults(Some(injector))
    }

    pub fn hit(&self, point: &str) -> Result<(), InjectedCrash> {
        match &self.0 {
            Some(inj) if inj.should_fail(point) => Err(InjectedCrash(point.to_string())),
            _ => Ok(()),
        }
    }
}

/// Fires on the `n`th checkpoint reached (0-based) and records every point
/// seen, so a dry run can enumerate the checkpoints of a scenario.
#[derive(Debug)]
pub struct NthCheckpoint {
    target: Option<usize>,
    seen: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl NthCheckpoint {
    pub fn fail_at(n: usize) -> Arc<Self> {
        Arc::new(Self {
            target: Some(n),
            seen: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn recorder() -> Arc<Self> {
        Arc::new(Self {
            target: None,
            seen: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn points(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl FaultInjector for NthCheckpoint {
    fn should_fail(&self, point: &str) -> bool {
        self.log.lock().unwrap().push(point.to_string());
        let idx = self.seen.fetch_add(1, Ordering::SeqCst);
        self.target == Some(idx)
    }
}

/// Fires whenever the checkpoint name matches exactly.
#[derive(Debug)]
pub struct AtPoint(pub String);

impl FaultInjector for AtPoint {
    fn should_fail(&self, point: &str) -> bool {
        self.0 == point
    }
}
