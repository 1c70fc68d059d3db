use crate::domain::Millis;

/// Work lost to an interruption: progress made since the durable checkpoint
/// the job resumes from, or zero after a completed final checkpoint.
pub fn lost_work(progress_at_interruption: Millis, durable_progress: Millis, final_checkpoint_completed: bool) -> Millis {
    if final_checkpoint_completed {
        0
    } else {
        progress_at_interruption.saturating_sub(durable_progress)
    }
}
