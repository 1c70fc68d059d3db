use crate::coordinator::{DepartureNotice, Heartbeat, HeartbeatAck, RegisterRequest, RegisterResponse};
use crate::domain::{Millis, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("coordinator unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Rejected { code: String, message: String },
}

/// Agent-to-coordinator transport. All calls are agent-initiated.
pub trait CoordinatorLink {
    fn register(&mut self, req: &RegisterRequest) -> Result<RegisterResponse, LinkError>;
    fn heartbeat(&mut self, token: &str, msg: &Heartbeat) -> Result<HeartbeatAck, LinkError>;
    fn depart(&mut self, node: NodeId, token: &str, notice: &DepartureNotice) -> Result<(), LinkError>;
}

pub trait Sleeper {
    fn sleep(&mut self, ms: Millis);
}

pub const MAX_BACKOFF_MS: Millis = 60_000;

/// 1 s, 2 s, 4 s, … capped at 60 s.
pub fn backoff_delay_ms(attempt: u32) -> Millis {
    1_000u64.checked_shl(attempt).unwrap_or(MAX_BACKOFF_MS).min(MAX_BACKOFF_MS)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JoinError {
    #[error("coordinator unreachable after {attempts} attempts: {last}")]
    CoordinatorUnreachable { attempts: u32, last: String },
    #[error("registration rejected: {0}")]
    RegistrationRejected(String),
}

/// Registers with exponential backoff. `max_attempts = None` retries forever.
pub fn join_with_backoff(
    link: &mut dyn CoordinatorLink,
    req: &RegisterRequest,
    sleeper: &mut dyn Sleeper,
    max_attempts: Option<u32>,
) -> Result<RegisterResponse, JoinError> {
    let mut attempt = 0;
    loop {
        match link.register(req) {
            Ok(resp) => return Ok(resp),
            Err(LinkError::Rejected { code, message }) => {
                return Err(JoinError::RegistrationRejected(format!("{code}: {message}")))
            }
            Err(LinkError::Unreachable(last)) => {
                attempt += 1;
                if max_attempts.is_some_and(|m| attempt >= m) {
                    return Err(JoinError::CoordinatorUnreachable { attempts: attempt, last });
                }
                sleeper.sleep(backoff_delay_ms(attempt - 1));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let d: Vec<Millis> = (0..9).map(backoff_delay_ms).collect();
        assert_eq!(d, vec![1_000, 2_000, 4_000, 8_000, 16_000, 32_000, 60_000, 60_000, 60_000]);
        assert_eq!(backoff_delay_ms(200), 60_000);
    }
}
