//! Deterministic, thread-count independent RANSAC driver.
//!
//! Hypothesis `i` draws its minimal sample from an RNG seeded by `(seed, i)`.
//! Hypotheses are scored in fixed-size batches, and the best model is the one
//! with the most inliers, ties broken by the lower hypothesis index.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    pub confidence: f64,
    pub max_iter: usize,
    pub min_iter: usize,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            confidence: 0.9999,
            max_iter: 10_000,
            min_iter: 50,
            seed: 0,
        }
    }
}

const BATCH: usize = 64;

pub(crate) fn hypothesis_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Iterations needed to draw one all-inlier sample with the given confidence.
pub fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    let w = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if w >= 1.0 {
        return 1;
    }
    if w <= f64::MIN_POSITIVE {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult<M> {
    pub model: M,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
}

/// Runs RANSAC over `n` data items.
///
/// `fit` maps a minimal sample to zero or more candidate models; `is_inlier`
/// classifies one datum against a model.
pub fn ransac<M, F, I>(
    n: usize,
    sample_size: usize,
    opts: &RansacOptions,
    fit: F,
    is_inlier: I,
) -> Option<RansacResult<M>>
where
    M: Send + Clone,
    F: Fn(&[usize]) -> Vec<M> + Sync,
    I: Fn(&M, usize) -> bool + Sync,
{
    if n < sample_size {
        return None;
    }
    let mut best: Option<(usize, usize, M)> = None;
    let mut needed = opts.max_iter;
    let mut done = 0;
    while done < needed.max(opts.min_iter).min(opts.max_iter) {
        let end = (done + BATCH).min(opts.max_iter);
        let batch: Vec<Option<(usize, usize, M)>> = (done..end)
            .into_par_iter()
            .map(|h| {
                let mut rng = hypothesis_rng(opts.seed, h);
                let idx = sample(&mut rng, n, sample_size).into_vec();
                let mut local: Option<(usize, usize, M)> = None;
                for m in fit(&idx) {
                    let count = (0..n).filter(|&i| is_inlier(&m, i)).count();
                    if local.as_ref().is_none_or(|(c, _, _)| count > *c) {
                        local = Some((count, h, m));
                    }
                }
                local
            })
            .collect();
        for cand in batch.into_iter().flatten() {
            if best.as_ref().is_none_or(|(c, _, _)| cand.0 > *c) {
                best = Some(cand);
            }
        }
        done = end;
        if let Some((c, _, _)) = &best {
            needed = required_iterations(*c as f64 / n as f64, sample_size, opts.confidence);
        }
    }
    let (count, _, model) = best?;
    let inliers: Vec<bool> = (0..n).map(|i| is_inlier(&model, i)).collect();
    Some(RansacResult {
        model,
        inliers,
        num_inliers: count,
        iterations: done,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_count_formula() {
        assert_eq!(required_iterations(1.0, 3, 0.99), 1);
        // 0.5^3 = 1/8: ln(0.01)/ln(7/8) = 34.5
        assert_eq!(required_iterations(0.5, 3, 0.99), 35);
        assert_eq!(required_iterations(0.0, 3, 0.99), usize::MAX);
    }

    #[test]
    fn fits_line_through_outliers() {
        // y = 2x + 1 with every fourth point corrupted.
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64;
                if i % 4 == 0 {
                    (x, 100.0 - x * 3.0)
                } else {
                    (x, 2.0 * x + 1.0)
                }
            })
            .collect();
        let run = || {
            ransac(
                pts.len(),
                2,
                &RansacOptions::default(),
                |s| {
                    let (a, b) = (pts[s[0]], pts[s[1]]);
                    if a.0 == b.0 {
                        return vec![];
                    }
                    let m = (b.1 - a.1) / (b.0 - a.0);
                    vec![(m, a.1 - m * a.0)]
                },
                |&(m, c), i| (pts[i].1 - (m * pts[i].0 + c)).abs() < 1e-9,
            )
            .unwrap()
        };
        let r = run();
        assert_eq!(r.num_inliers, 30);
        assert!((r.model.0 - 2.0).abs() < 1e-12);
        for (i, inl) in r.inliers.iter().enumerate() {
            assert_eq!(*inl, i % 4 != 0);
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let r1 = pool.install(run);
        assert_eq!(r1.model, r.model);
        assert_eq!(r1.iterations, r.iterations);
    }
}
