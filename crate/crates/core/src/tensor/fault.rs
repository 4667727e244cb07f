//! Deliberate gradient corruption for exercising the gradient checker.
//!
//! Faults are thread-local and captured when an op is recorded, so they only
//! affect graphs built on the thread that enabled them.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the weight gradient produced by `conv2d`.
    ConvBackwardSignFlip,
}

thread_local! {
    static CONV_SIGN_FLIP: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with `fault` active on the current thread.
pub fn with_fault<R>(fault: Fault, f: impl FnOnce() -> R) -> R {
    let cell = match fault {
        Fault::ConvBackwardSignFlip => &CONV_SIGN_FLIP,
    };
    let previous = cell.with(|c| c.replace(true));
    let out = f();
    cell.with(|c| c.set(previous));
    out
}

pub(crate) fn conv_sign_flip() -> bool {
    CONV_SIGN_FLIP.with(Cell::get)
}
