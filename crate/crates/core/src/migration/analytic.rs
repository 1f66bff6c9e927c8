use crate::num::Scalar;

/// Closed-form walk of pre-copy under a constant dirty rate.
///
/// Times are in seconds, sizes in pages. Latency and overheads are left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreCopyEstimate<T> {
    pub rounds: u32,
    pub downtime_s: T,
    pub migration_time_s: T,
    pub bytes_pages: u64,
}

/// Estimates pre-copy without simulating it.
///
/// Dirtying is counted as `floor(rate * t)` pages since the first round
/// started, capped at the image size per round.
pub fn analytic_pre_copy<T: Scalar>(
    num_pages: u64,
    bandwidth_pages_per_s: T,
    rate_pages_per_s: T,
    threshold: u64,
    max_rounds: u32,
) -> PreCopyEstimate<T> {
    assert!(
        bandwidth_pages_per_s > T::zero(),
        "bandwidth must be positive"
    );
    assert!(max_rounds >= 1, "at least one round is required");
    let mut batch = num_pages;
    let mut elapsed = T::zero();
    let mut bytes = 0u64;
    let mut rounds = 0u32;
    let mut dirtied_before = 0u64;
    loop {
        bytes += batch;
        elapsed = elapsed + T::from_int(batch) / bandwidth_pages_per_s;
        rounds += 1;
        let dirtied = (rate_pages_per_s * elapsed).floor_u64();
        batch = (dirtied - dirtied_before).min(num_pages);
        dirtied_before = dirtied;
        if batch <= threshold || rounds >= max_rounds {
            break;
        }
    }
    let downtime = T::from_int(batch) / bandwidth_pages_per_s;
    PreCopyEstimate {
        rounds,
        downtime_s: downtime,
        migration_time_s: elapsed + downtime,
        bytes_pages: bytes + batch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Exact;

    fn ex(n: i128) -> Exact {
        Exact::from_integer(n)
    }

    #[test]
    fn hundred_pages_at_ten_per_second() {
        let e = analytic_pre_copy(100, ex(100), ex(10), 2, 10);
        assert_eq!(e.rounds, 2);
        assert_eq!(e.downtime_s, Exact::new(1, 100));
        assert_eq!(e.migration_time_s, Exact::new(111, 100));
        assert_eq!(e.bytes_pages, 111);
    }

    #[test]
    fn rate_equal_to_bandwidth_never_converges() {
        let e = analytic_pre_copy(100, ex(100), ex(100), 2, 2);
        assert_eq!(e.rounds, 2);
        assert_eq!(e.bytes_pages, 300);
        assert_eq!(e.downtime_s, ex(1));
    }

    #[test]
    fn float_and_exact_agree_on_small_cases() {
        let f = analytic_pre_copy(100, 100.0f64, 10.0, 2, 10);
        assert_eq!(f.rounds, 2);
        assert!((f.migration_time_s - 1.11).abs() < 1e-12);
        let g = analytic_pre_copy(100, 100.0f32, 10.0, 2, 10);
        assert_eq!(g.bytes_pages, 111);
    }
}
