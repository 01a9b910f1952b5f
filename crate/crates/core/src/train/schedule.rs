/// Step decay: `lr0 * 0.5^floor(epoch / period)`.
pub fn learning_rate(lr0: f64, epoch: u64, halving_period: u64) -> f64 {
    if halving_period == 0 {
        return lr0;
    }
    lr0 * 0.5f64.powi((epoch / halving_period).min(i32::MAX as u64) as i32)
}
