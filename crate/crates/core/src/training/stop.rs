use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// First epoch with the minimum loss.
    pub best_epoch: usize,
}

/// Stop once the current epoch is `patience` or more epochs past the best
/// one. `history[e]` is the validation loss after epoch `e`.
pub fn early_stopper(history: &[f64], patience: usize) -> Result<StopDecision> {
    if history.is_empty() {
        return Err(invalid("empty validation history"));
    }
    if patience == 0 {
        return Err(invalid("patience must be at least 1"));
    }
    let best_epoch = history
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < history[b] { i } else { b });
    Ok(StopDecision {
        stop: history.len() - 1 - best_epoch >= patience,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_continues() {
        let h: Vec<f64> = (0..50).map(|i| 10.0 - i as f64 * 0.1).collect();
        assert_eq!(early_stopper(&h, 3).unwrap(), StopDecision { stop: false, best_epoch: 49 });
    }

    #[test]
    fn flat_history_stops_at_patience() {
        let h = vec![1.0; 101];
        assert_eq!(early_stopper(&h, 100).unwrap(), StopDecision { stop: true, best_epoch: 0 });
        assert!(!early_stopper(&h[..100], 100).unwrap().stop);
    }

    #[test]
    fn boundary() {
        let mut h = vec![2.0; 105];
        h[5] = 1.0;
        assert!(!early_stopper(&h, 100).unwrap().stop);
        h.push(2.0);
        assert_eq!(early_stopper(&h, 100).unwrap(), StopDecision { stop: true, best_epoch: 5 });
    }

    #[test]
    fn errors() {
        assert!(early_stopper(&[], 3).is_err());
        assert!(early_stopper(&[1.0], 0).is_err());
    }
}
