use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
    Exponential,
}

/// Learning rate for a 0-based `epoch` of `epochs`, decaying from `start`
/// to `end`. Both endpoints are returned exactly.
pub fn lr_at(kind: ScheduleKind, start: f64, end: f64, epoch: usize, epochs: usize) -> Result<f64> {
    if epoch >= epochs {
        return Err(Error::Contract(format!("epoch {epoch} outside 0..{epochs}")));
    }
    if epoch == 0 {
        return Ok(start);
    }
    if epoch == epochs - 1 {
        return Ok(end);
    }
    let x = epoch as f64 / (epochs - 1) as f64;
    Ok(match kind {
        ScheduleKind::Cosine => end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * x).cos()),
        ScheduleKind::Linear => start + (end - start) * x,
        ScheduleKind::Exponential => start * (end / start).powf(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let lr = |e| lr_at(ScheduleKind::Cosine, 2e-4, 1e-6, e, 51).unwrap();
        assert_eq!(lr(0), 2e-4);
        assert_eq!(lr(50), 1e-6);
        assert!((lr(25) - 1.005e-4).abs() < 1e-18);
        for e in 1..51 {
            assert!(lr(e) < lr(e - 1));
        }
    }

    #[test]
    fn single_epoch_and_out_of_range() {
        assert_eq!(lr_at(ScheduleKind::Cosine, 2e-4, 1e-6, 0, 1).unwrap(), 2e-4);
        assert!(matches!(
            lr_at(ScheduleKind::Cosine, 2e-4, 1e-6, 5, 5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn other_shapes_hit_endpoints() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Exponential] {
            assert_eq!(lr_at(kind, 2e-4, 1e-6, 0, 10).unwrap(), 2e-4);
            assert_eq!(lr_at(kind, 2e-4, 1e-6, 9, 10).unwrap(), 1e-6);
        }
        let mid = lr_at(ScheduleKind::Exponential, 1e-2, 1e-4, 1, 3).unwrap();
        assert!((mid - 1e-3).abs() < 1e-15);
    }
}
