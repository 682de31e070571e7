//! Arithmetic-operation audit.
//!
//! Every arithmetic primitive on the value path reports what it did to a
//! set of thread-local counters. A datapath that claims to be free of
//! general multiplications can then be checked by running it under
//! [`with_scope`] and asserting `muls == 0` — the reference paths (which
//! do use real multiplies) report theirs, so the counter is known to be
//! live.
//!
//! Counters are thread-local: a scope observes only work performed on the
//! calling thread, so audited runs should use the sequential execution
//! paths.

use std::cell::Cell;

/// Snapshot of the operation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditCounts {
    pub shifts: u64,
    pub adds: u64,
    pub compares: u64,
    /// General (non-shift) multiplications. Zero on the accelerator datapath.
    pub muls: u64,
}

thread_local! {
    static SHIFTS: Cell<u64> = const { Cell::new(0) };
    static ADDS: Cell<u64> = const { Cell::new(0) };
    static COMPARES: Cell<u64> = const { Cell::new(0) };
    static MULS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn record_shift() {
    SHIFTS.with(|c| c.set(c.get().wrapping_add(1)));
}

#[inline]
pub fn record_add() {
    ADDS.with(|c| c.set(c.get().wrapping_add(1)));
}

#[inline]
pub fn record_compare() {
    COMPARES.with(|c| c.set(c.get().wrapping_add(1)));
}

#[inline]
pub fn record_mul() {
    MULS.with(|c| c.set(c.get().wrapping_add(1)));
}

/// Current counter values for this thread.
pub fn snapshot() -> AuditCounts {
    AuditCounts {
        shifts: SHIFTS.with(Cell::get),
        adds: ADDS.with(Cell::get),
        compares: COMPARES.with(Cell::get),
        muls: MULS.with(Cell::get),
    }
}

/// Runs `f` and returns its result together with the operations it
/// performed on the current thread.
pub fn with_scope<T>(f: impl FnOnce() -> T) -> (T, AuditCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        AuditCounts {
            shifts: after.shifts.wrapping_sub(before.shifts),
            adds: after.adds.wrapping_sub(before.adds),
            compares: after.compares.wrapping_sub(before.compares),
            muls: after.muls.wrapping_sub(before.muls),
        },
    )
}
