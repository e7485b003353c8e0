/// Epochs between learning-rate halvings.
pub const LR_DECAY_EVERY: usize = 50;
pub const LR_DECAY_FACTOR: f64 = 0.5;

/// Step schedule: `base · 0.5^⌊epoch / 50⌋`.
pub fn lr_at(epoch: usize, base: f64) -> f64 {
    base * LR_DECAY_FACTOR.powi((epoch / LR_DECAY_EVERY) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_every_fifty_epochs() {
        assert_eq!(lr_at(0, 0.01), 0.01);
        assert_eq!(lr_at(49, 0.01), 0.01);
        assert_eq!(lr_at(50, 0.01), 0.005);
        assert_eq!(lr_at(100, 0.01), 0.0025);
    }
}
