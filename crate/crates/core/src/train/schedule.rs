use std::f64::consts::PI;

/// Number of linear warmup steps: `round(warmup_ratio · total_steps)`.
pub fn warmup_steps(warmup_ratio: f64, total_steps: usize) -> usize {
    (warmup_ratio * total_steps as f64).round() as usize
}

/// Learning rate at `step`: linear ramp from 0 to `peak` over the warmup
/// steps, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, peak: f64, warmup_ratio: f64, total_steps: usize) -> f64 {
    let warmup = warmup_steps(warmup_ratio, total_steps);
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let decay = total_steps.saturating_sub(warmup);
    if decay == 0 {
        return peak;
    }
    let progress = ((step - warmup) as f64 / decay as f64).min(1.0);
    peak * 0.5 * (1.0 + (PI * progress).cos())
}
