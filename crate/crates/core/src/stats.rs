//! Small statistics helpers used by the benchmark and campaign reports.

use alloc::vec::Vec;

use crate::record::Stamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("utilization window is empty")]
    EmptyWindow,
    #[error("worker count must be at least one")]
    NoWorkers,
}

/// Median of `values`; averages the two middle elements for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: Stamp,
    pub end: Stamp,
}

impl Window {
    pub fn new(start: Stamp, end: Stamp) -> Self {
        Window { start, end }
    }

    pub fn len_nanos(&self) -> i64 {
        self.end.0 - self.start.0
    }

    /// Length of the overlap between `[a, b)` and this window.
    pub fn overlap_nanos(&self, a: Stamp, b: Stamp) -> i64 {
        let lo = a.0.max(self.start.0);
        let hi = b.0.min(self.end.0);
        (hi - lo).max(0)
    }
}

/// Fraction of worker time spent inside the given busy intervals.
///
/// Intervals are clipped to the window, so the result only exceeds 1 when
/// the intervals themselves oversubscribe the workers.
pub fn utilization(
    busy: &[(Stamp, Stamp)],
    workers: usize,
    window: Window,
) -> Result<f64, StatsError> {
    if workers == 0 {
        return Err(StatsError::NoWorkers);
    }
    let len = window.len_nanos();
    if len <= 0 {
        return Err(StatsError::EmptyWindow);
    }
    let busy: i64 = busy.iter().map(|(a, b)| window.overlap_nanos(*a, *b)).sum();
    Ok(busy as f64 / (workers as f64 * len as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn s(sec: f64) -> Stamp {
        Stamp((sec * 1e9) as i64)
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn sample_std_two_points() {
        assert!((sample_std(&[1.0, 3.0]) - libm::sqrt(2.0)).abs() < 1e-12);
        assert_eq!(sample_std(&[5.0]), 0.0);
    }

    #[test]
    fn single_worker_fully_busy() {
        let w = Window::new(s(0.0), s(10.0));
        assert_eq!(utilization(&[(s(0.0), s(10.0))], 1, w).unwrap(), 1.0);
    }

    #[test]
    fn two_workers_one_task() {
        let w = Window::new(s(0.0), s(10.0));
        assert_eq!(utilization(&[(s(0.0), s(10.0))], 2, w).unwrap(), 0.5);
    }

    #[test]
    fn clipping_and_errors() {
        let w = Window::new(s(2.0), s(4.0));
        let u = utilization(&[(s(0.0), s(3.0)), (s(3.5), s(9.0))], 1, w).unwrap();
        assert!((u - 0.75).abs() < 1e-12);
        assert_eq!(
            utilization(&[], 1, Window::new(s(1.0), s(1.0))),
            Err(StatsError::EmptyWindow)
        );
        assert_eq!(utilization(&vec![], 0, w), Err(StatsError::NoWorkers));
    }
}
