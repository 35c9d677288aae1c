//! Tick sources for session drivers.

use std::sync::Arc;
use std::time::Duration;

use tokio::sync::watch;
use tokio::time::{interval_at, Instant, Interval, MissedTickBehavior};

/// A manually advanced clock shared by every session on a server.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    tx: Arc<watch::Sender<u64>>,
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl VirtualClock {
    pub fn new() -> Self {
        Self {
            tx: Arc::new(watch::channel(0).0),
        }
    }

    pub fn now(&self) -> u64 {
        *self.tx.borrow()
    }

    pub fn advance(&self, ticks: u64) {
        self.tx.send_modify(|t| *t += ticks);
    }

    fn subscribe(&self) -> watch::Receiver<u64> {
        self.tx.subscribe()
    }
}

#[derive(Debug, Clone)]
pub enum TickSource {
    /// Wall-clock ticks at each session's `tick_seconds`.
    Real,
    Virtual(VirtualClock),
}

/// Per-session ticker. A virtual ticker starts at the clock value it was
/// created at and yields once for every unit advanced after that, however
/// many arrive at once.
pub enum Ticker {
    Real(Interval),
    Virtual { rx: watch::Receiver<u64>, done: u64 },
}

impl Ticker {
    pub fn new(source: &TickSource, tick_seconds: f64) -> Self {
        match source {
            TickSource::Real => {
                let period = Duration::from_secs_f64(tick_seconds);
                let mut iv = interval_at(Instant::now() + period, period);
                iv.set_missed_tick_behavior(MissedTickBehavior::Delay);
                Ticker::Real(iv)
            }
            TickSource::Virtual(clock) => {
                let rx = clock.subscribe();
                let done = *rx.borrow();
                Ticker::Virtual { rx, done }
            }
        }
    }

    /// Waits for the next tick; `None` once a virtual clock is gone.
    pub async fn next(&mut self) -> Option<()> {
        match self {
            Ticker::Real(iv) => {
                iv.tick().await;
                Some(())
            }
            Ticker::Virtual { rx, done } => loop {
                if *rx.borrow_and_update() > *done {
                    *done += 1;
                    return Some(());
                }
                rx.changed().await.ok()?;
            },
        }
    }
}
