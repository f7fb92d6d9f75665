//! Injectable time sources. Every timestamp in the engine is seconds as `f64`.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync + fmt::Debug {
    fn now(&self) -> f64;
}

/// Blocks (or advances virtual time) until the clock reads at least `t`.
pub trait Pacer {
    fn wait_until(&self, t: f64);
}

/// Seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    }
}

impl Pacer for SystemClock {
    fn wait_until(&self, t: f64) {
        let remaining = t - self.now();
        if remaining > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(remaining));
        }
    }
}

/// Manually driven clock. Clones share the same reading; time never moves
/// backwards.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Arc<Mutex<f64>>,
}

impl VirtualClock {
    pub fn new(start: f64) -> Self {
        Self {
            now: Arc::new(Mutex::new(start)),
        }
    }

    pub fn advance(&self, seconds: f64) -> f64 {
        let mut now = self.now.lock().unwrap();
        if seconds > 0.0 {
            *now += seconds;
        }
        *now
    }

    /// Moves the clock to `t` if that is later than the current reading.
    pub fn advance_to(&self, t: f64) -> f64 {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
        *now
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }
}

impl Pacer for VirtualClock {
    fn wait_until(&self, t: f64) {
        self.advance_to(t);
    }
}
