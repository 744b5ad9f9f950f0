//! Process-wide guard for outbound network access.
//!
//! Every remote client asks [`authorize`] before opening a connection. With
//! the guard in deny mode (fixture mode) a request to anything other than a
//! loopback address fails before any socket is created, and the attempt is
//! counted so tests can assert isolation.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use thiserror::Error;

static DENY: AtomicBool = AtomicBool::new(false);
static PERMITTED: AtomicUsize = AtomicUsize::new(0);
static BLOCKED: AtomicUsize = AtomicUsize::new(0);
static LOOPBACK: AtomicUsize = AtomicUsize::new(0);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("outbound connection to {0} refused: fixture mode forbids network access")]
pub struct OutboundDenied(pub String);

pub fn deny_outbound() {
    DENY.store(true, Ordering::SeqCst);
}

pub fn allow_outbound() {
    DENY.store(false, Ordering::SeqCst);
}

pub fn is_denied() -> bool {
    DENY.load(Ordering::SeqCst)
}

/// True for URLs whose host is `localhost` or a loopback IP.
pub fn is_loopback(url: &str) -> bool {
    let Ok(parsed) = reqwest::Url::parse(url) else {
        return false;
    };
    let Some(host) = parsed.host_str() else {
        return false;
    };
    let host = host.trim_start_matches('[').trim_end_matches(']');
    host.eq_ignore_ascii_case("localhost") || host.parse::<std::net::IpAddr>().is_ok_and(|ip| ip.is_loopback())
}

/// Records an intended connection to `url`. Loopback targets are always
/// allowed; anything else fails while outbound access is denied.
pub fn authorize(url: &str) -> Result<(), OutboundDenied> {
    if is_loopback(url) {
        LOOPBACK.fetch_add(1, Ordering::SeqCst);
        return Ok(());
    }
    if is_denied() {
        BLOCKED.fetch_add(1, Ordering::SeqCst);
        return Err(OutboundDenied(url.to_string()));
    }
    PERMITTED.fetch_add(1, Ordering::SeqCst);
    Ok(())
}

/// Non-loopback connections allowed through since process start.
pub fn connections_made() -> usize {
    PERMITTED.load(Ordering::SeqCst)
}

/// Connections refused by the guard since process start.
pub fn connections_blocked() -> usize {
    BLOCKED.load(Ordering::SeqCst)
}

/// Loopback connections since process start.
pub fn loopback_connections() -> usize {
    LOOPBACK.load(Ordering::SeqCst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_detection() {
        assert!(is_loopback("http://127.0.0.1:8080/score"));
        assert!(is_loopback("http://localhost/x"));
        assert!(is_loopback("http://[::1]:9/"));
        assert!(!is_loopback("https://api.example.com/v1"));
        assert!(!is_loopback("not a url"));
    }
}
