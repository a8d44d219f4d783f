use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot summarise an empty sample set")]
pub struct EmptySamples;

/// Summary of a set of durations in milliseconds. `stddev` is the
/// population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub avg: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

pub fn summary_stats(samples: &[f64]) -> Result<Summary, EmptySamples> {
    if samples.is_empty() {
        return Err(EmptySamples);
    }
    let n = samples.len() as f64;
    let avg = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    Ok(Summary {
        count: samples.len(),
        avg,
        stddev: var.sqrt(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        median,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = summary_stats(&[9.0, 10.0, 10.0, 11.0]).unwrap();
        assert_eq!((s.avg, s.min, s.max, s.median), (10.0, 9.0, 11.0, 10.0));

        let s = summary_stats(&[3162.0]).unwrap();
        assert_eq!((s.avg, s.min, s.max, s.median, s.stddev), (3162.0, 3162.0, 3162.0, 3162.0, 0.0));

        let s = summary_stats(&[4.0; 4]).unwrap();
        assert_eq!((s.avg, s.stddev, s.min, s.max), (4.0, 0.0, 4.0, 4.0));

        // Deviations from the mean 3 are -3,-3,-3,9: squares sum to 108,
        // over 4 gives 27.
        let s = summary_stats(&[0.0, 0.0, 0.0, 12.0]).unwrap();
        assert_eq!(s.avg, 3.0);
        assert!((s.stddev - 27f64.sqrt()).abs() < 1e-12);
        assert!((s.stddev - 5.196).abs() < 1e-3);

        assert_eq!(summary_stats(&[]), Err(EmptySamples));
    }

    #[test]
    fn odd_median_ignores_order() {
        assert_eq!(summary_stats(&[5.0, 1.0, 3.0]).unwrap().median, 3.0);
    }
}
