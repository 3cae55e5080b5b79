//! Cooperative interrupt handling.
//!
//! Long simulation runs poll [`requested`] between replicates so that
//! Ctrl-C flushes completed work instead of discarding it. The handler
//! only sets an atomic flag; a second signal falls through to the
//! default disposition and kills the process immediately.

use std::sync::atomic::{AtomicBool, Ordering};

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn handle_signal(_signal: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
    unsafe {
        libc::signal(libc::SIGINT, libc::SIG_DFL);
        libc::signal(libc::SIGTERM, libc::SIG_DFL);
    }
}

/// Installs the SIGINT and SIGTERM handler. Call once at startup.
pub fn install() {
    let handler = handle_signal as extern "C" fn(libc::c_int);
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
        libc::signal(libc::SIGTERM, handler as libc::sighandler_t);
    }
}

/// True once an interrupt has been received.
pub fn requested() -> bool {
    STOP.load(Ordering::SeqCst)
}

/// Exit code for an interrupted run, following shell convention.
pub const EXIT_INTERRUPTED: i32 = 130;
