//! Linear warmup followed by linear decay to zero.

/// Number of warmup steps: `ceil(ratio · total)`, capped at `total - 1` so
/// at least one update runs at the peak rate. The small slack keeps
/// products like `0.03 · 100` from rounding up to an extra step.
pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    let raw = warmup_ratio * total_steps as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(total_steps.saturating_sub(1))
}

/// Learning rate for optimizer update `step` (0-based) out of `total_steps`.
/// Zero at step 0 (when there is warmup), `base_lr` at the end of warmup,
/// zero at `total_steps` and beyond.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_ratio: f64) -> f64 {
    if step >= total_steps {
        return 0.0;
    }
    let warmup = warmup_steps(total_steps, warmup_ratio);
    if step < warmup {
        base_lr * (step as f64 / warmup as f64)
    } else {
        base_lr * ((total_steps - step) as f64 / (total_steps - warmup) as f64)
    }
}
