//! Token-bucket rate limiting and an in-flight cap for provider calls.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `rate` tokens per second, at most `burst` stored.
    pub fn new(rate: f64, burst: u32) -> Self {
        assert!(rate > 0.0 && burst > 0, "rate and burst must be positive");
        TokenBucket {
            rate,
            burst: burst as f64,
            state: Mutex::new((burst as f64, Instant::now())),
        }
    }

    /// Takes one token if available, otherwise returns the wait needed.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut st = self.state.lock().expect("bucket lock");
        let now = Instant::now();
        let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
        st.0 = (st.0 + refill).min(self.burst);
        st.1 = now;
        if st.0 >= 1.0 {
            st.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - st.0) / self.rate))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
pub struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

impl InFlight {
    pub fn new(cap: usize) -> Self {
        InFlight {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn enter(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        Permit(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn burst_then_wait() {
        let b = TokenBucket::new(1000.0, 3);
        for _ in 0..3 {
            assert!(b.try_acquire().is_ok());
        }
        assert!(b.try_acquire().is_err());
        std::thread::sleep(Duration::from_millis(5));
        assert!(b.try_acquire().is_ok());
    }

    #[test]
    fn in_flight_never_exceeds_cap() {
        let gate = Arc::new(InFlight::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = gate.enter();
                    let n = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(2));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
