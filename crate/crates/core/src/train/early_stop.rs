#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Number of trailing epochs since the last improvement larger than `min_delta`.
///
/// An epoch improves only if its loss is strictly below `best - min_delta`;
/// the best value moves only on such an improvement.
pub fn epochs_without_improvement(history: &[f64], min_delta: f64) -> usize {
    let Some((&first, rest)) = history.split_first() else {
        return 0;
    };
    let mut best = first;
    let mut wait = 0;
    for &v in rest {
        if v < best - min_delta {
            best = v;
            wait = 0;
        } else {
            wait += 1;
        }
    }
    wait
}

/// Stops once `patience` consecutive epochs passed without an improvement above `min_delta`.
pub fn early_stop(history: &[f64], patience: usize, min_delta: f64) -> StopDecision {
    if epochs_without_improvement(history, min_delta) >= patience.max(1) {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_history_continues() {
        let h: Vec<f64> = (0..50).map(|i| 10.0 - 0.01 * i as f64).collect();
        for n in 1..=h.len() {
            assert_eq!(early_stop(&h[..n], 10, 0.001), StopDecision::Continue);
        }
    }

    #[test]
    fn plateau_stops_at_eleventh_entry() {
        let mut h = vec![1.0];
        for k in 0..10 {
            assert_eq!(early_stop(&h, 10, 0.001), StopDecision::Continue);
            h.push(0.9995 + 0.0001 * (k % 3) as f64);
        }
        assert_eq!(h.len(), 11);
        assert_eq!(early_stop(&h, 10, 0.001), StopDecision::Stop);
    }

    #[test]
    fn improvement_of_exactly_min_delta_does_not_reset() {
        // 0.5 - 0.25 is exact in binary
        let mut h = vec![0.5];
        h.extend(std::iter::repeat_n(0.25, 3));
        assert_eq!(epochs_without_improvement(&h, 0.25), 3);
        assert_eq!(early_stop(&h, 3, 0.25), StopDecision::Stop);
        h.push(0.2499);
        assert_eq!(epochs_without_improvement(&h, 0.25), 0);
    }
}
