use std::sync::{Condvar, Mutex};

use super::{ChatBackend, LlmError};

/// Counting semaphore that also records the highest concurrent occupancy.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a ConcurrencyGate);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.0.state.lock().unwrap_or_else(|e| e.into_inner());
        s.0 -= 1;
        self.0.freed.notify_one();
    }
}

impl ConcurrencyGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.0 >= self.limit {
            s = self.freed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.0 += 1;
        s.1 = s.1.max(s.0);
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).0
    }

    pub fn peak(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).1
    }
}

/// Any backend with at most `limit` calls in flight.
pub struct GatedBackend<B> {
    inner: B,
    gate: ConcurrencyGate,
}

impl<B: ChatBackend> GatedBackend<B> {
    pub fn new(inner: B, limit: usize) -> Self {
        Self {
            inner,
            gate: ConcurrencyGate::new(limit),
        }
    }

    pub fn gate(&self) -> &ConcurrencyGate {
        &self.gate
    }
}

impl<B: ChatBackend> ChatBackend for GatedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let _permit = self.gate.acquire();
        self.inner.complete(prompt)
    }
}
