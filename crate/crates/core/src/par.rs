//! Index-ordered parallel map over independent trials.

/// `(0..n).map(f)` on up to `jobs` scoped threads; results keep index order,
/// so output never depends on `jobs`.
pub fn map_indexed<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let chunk = n.div_ceil(jobs);
    std::thread::scope(|scope| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, slot) in part.iter_mut().enumerate() {
                    *slot = Some(f(c * chunk + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_jobs() {
        let one = map_indexed(17, 1, |i| i * i);
        for jobs in [2, 4, 64] {
            assert_eq!(map_indexed(17, jobs, |i| i * i), one);
        }
        assert!(map_indexed(0, 3, |i| i).is_empty());
    }
}
