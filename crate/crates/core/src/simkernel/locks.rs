use std::cell::Cell;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

thread_local! {
    static HELD: Cell<u32> = const { Cell::new(0) };
}

/// Counts socket-lock acquisitions and flags any context that asks for a
/// second socket lock while already holding one.
#[derive(Debug, Default)]
pub struct LockTracker {
    acquisitions: AtomicU64,
    violations: AtomicU64,
}

impl LockTracker {
    pub fn acquisitions(&self) -> u64 {
        self.acquisitions.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }

    pub(crate) fn lock<'a, T>(&'a self, m: &'a Mutex<T>) -> Tracked<'a, T> {
        // Checked before blocking: holding one lock while waiting on another
        // is exactly the AB-BA shape.
        if HELD.with(Cell::get) > 0 {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
        let guard = m.lock().unwrap_or_else(|e| e.into_inner());
        HELD.with(|h| h.set(h.get() + 1));
        self.acquisitions.fetch_add(1, Ordering::Relaxed);
        Tracked { guard }
    }
}

/// Socket locks currently held by this thread.
pub fn held_by_current_thread() -> u32 {
    HELD.with(Cell::get)
}

pub(crate) struct Tracked<'a, T> {
    guard: MutexGuard<'a, T>,
}

impl<T> Drop for Tracked<'_, T> {
    fn drop(&mut self) {
        HELD.with(|h| h.set(h.get() - 1));
    }
}

impl<T> Deref for Tracked<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        &self.guard
    }
}

impl<T> DerefMut for Tracked<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.guard
    }
}
