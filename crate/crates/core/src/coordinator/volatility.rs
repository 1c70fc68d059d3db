/// One daily EWMA step: `(1 − α)·score + α·count`.
pub fn ewma_step(score: f64, count_today: u32, alpha: f64) -> f64 {
    (1.0 - alpha) * score + alpha * f64::from(count_today)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolatilityEvent {
    Interruption,
    DayElapsed,
}
