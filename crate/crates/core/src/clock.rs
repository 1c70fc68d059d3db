//! Time sources. Every component reads time through [`Clock`] so the simulator
//! can drive the real coordinator and agent code on virtual time.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::domain::Millis;

pub trait Clock: Send + Sync {
    fn now(&self) -> Millis;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Millis {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as Millis).unwrap_or(0)
    }
}

/// A shared, manually advanced clock. Clones observe the same time.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start: Millis) -> Self {
        Self(Arc::new(AtomicU64::new(start)))
    }

    /// Moves time forward to `t`. Time never goes backwards.
    pub fn set(&self, t: Millis) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }

    pub fn advance(&self, by: Millis) {
        self.0.fetch_add(by, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Millis {
        self.0.load(Ordering::SeqCst)
    }
}

/// Wall time running `scale` times faster than real time from a starting
/// point. Used to demo long grace periods and checkpoint costs quickly.
#[derive(Debug, Clone, Copy)]
pub struct ScaledClock {
    start: std::time::Instant,
    origin: Millis,
    scale: f64,
}

impl ScaledClock {
    pub fn new(scale: f64) -> Self {
        Self { start: std::time::Instant::now(), origin: SystemClock.now(), scale }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Real duration corresponding to `ms` of clock time.
    pub fn real(&self, ms: Millis) -> std::time::Duration {
        std::time::Duration::from_secs_f64(ms as f64 / 1000.0 / self.scale)
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> Millis {
        self.origin + (self.start.elapsed().as_secs_f64() * 1000.0 * self.scale) as Millis
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_is_shared_and_monotone() {
        let a = ManualClock::new(10);
        let b = a.clone();
        a.advance(5);
        assert_eq!(b.now(), 15);
        b.set(3);
        assert_eq!(a.now(), 15);
        b.set(40);
        assert_eq!(a.now(), 40);
    }
}
