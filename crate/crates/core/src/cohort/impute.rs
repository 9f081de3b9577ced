/// Time constant (in hourly bins) of the observation-recency decay channel.
pub const DECAY_HOURS: f64 = 12.0;

/// Forward-fill missing steps and derive a decay channel.
///
/// Each unobserved step copies the last observed step's values (zero before
/// the first observation). The decay channel is `exp(-dt / 12h)` where `dt`
/// is the number of bins since the last observation: exactly 1 at observed
/// steps, 0 before the first observation.
///
/// `ts` is `n * t_bins * d` row-major, `mask` is `n * t_bins`. Returns the
/// filled series and the decay channel as f64.
pub fn impute_forward_fill(
    ts: &[f32],
    mask: &[u8],
    n: usize,
    t_bins: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(ts.len(), n * t_bins * d, "ts length");
    assert_eq!(mask.len(), n * t_bins, "mask length");
    let mut filled = vec![0.0f64; n * t_bins * d];
    let mut decay = vec![0.0f64; n * t_bins];
    for i in 0..n {
        let mut last_obs: Option<usize> = None;
        for t in 0..t_bins {
            let here = (i * t_bins + t) * d;
            if mask[i * t_bins + t] == 1 {
                for c in 0..d {
                    filled[here + c] = ts[here + c] as f64;
                }
                last_obs = Some(t);
                decay[i * t_bins + t] = 1.0;
            } else if let Some(src) = last_obs {
                let from = (i * t_bins + src) * d;
                for c in 0..d {
                    filled[here + c] = ts[from + c] as f64;
                }
                decay[i * t_bins + t] = (-((t - src) as f64) / DECAY_HOURS).exp();
            }
            // before the first observation: zeros and decay 0
        }
    }
    (filled, decay)
}
