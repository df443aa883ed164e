//! Seeded, chunked Monte Carlo with deterministic merging.
//!
//! A run is split into a fixed number of chunks; chunk `w` draws from the
//! ChaCha stream `w` of the run seed. Chunks may execute on any number of
//! threads and are merged in chunk order, so results depend only on
//! `(seed, samples, chunks)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type McRng = ChaCha8Rng;

/// Environment variable capping the worker threads used for Monte Carlo.
pub const THREADS_ENV: &str = "GFT_LAB_THREADS";

/// Sample count, seed and chunking of one Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub chunks: usize,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self { samples, seed, chunks: 16 }
    }

    /// Same run with `factor` times the samples.
    pub fn scaled(self, factor: u64) -> Self {
        Self { samples: self.samples * factor, ..self }
    }

    /// Independent run whose seed is derived from this one.
    pub fn derive(self, tag: u64) -> Self {
        Self { seed: derive_seed(self.seed, tag), ..self }
    }
}

/// Generator for chunk `w` of a run.
pub fn chunk_rng(seed: u64, w: usize) -> McRng {
    let mut rng = McRng::seed_from_u64(seed);
    rng.set_stream(w as u64);
    rng
}

/// Mixes a tag into a seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Installs a global thread pool sized by [`THREADS_ENV`] when it is set.
pub fn init_threads_from_env() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Streaming per-column mean, variance and extremes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tally {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl Tally {
    pub fn new(cols: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; cols],
            m2: vec![0.0; cols],
            min: vec![f64::INFINITY; cols],
            max: vec![f64::NEG_INFINITY; cols],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for (c, &x) in row.iter().enumerate() {
            let d = x - self.mean[c];
            self.mean[c] += d / n;
            self.m2[c] += d * (x - self.mean[c]);
            self.min[c] = self.min[c].min(x);
            self.max[c] = self.max[c].max(x);
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        if other.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for c in 0..self.mean.len() {
            let d = other.mean[c] - self.mean[c];
            self.mean[c] += d * nb / n;
            self.m2[c] += other.m2[c] + d * d * na * nb / n;
            self.min[c] = self.min[c].min(other.min[c]);
            self.max[c] = self.max[c].max(other.max[c]);
        }
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self, c: usize) -> f64 {
        self.mean[c]
    }

    pub fn stderr(&self, c: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let var = (self.m2[c] / (self.n - 1) as f64).max(0.0);
        (var / self.n as f64).sqrt()
    }

    pub fn min(&self, c: usize) -> f64 {
        self.min[c]
    }

    pub fn max(&self, c: usize) -> f64 {
        self.max[c]
    }

    pub fn estimate(&self, c: usize) -> Estimate {
        Estimate { mean: self.mean(c), stderr: self.stderr(c) }
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(v: f64) -> Self {
        Self { mean: v, stderr: 0.0 }
    }

    /// `mean + k·stderr`.
    pub fn upper(&self, k: f64) -> f64 {
        self.mean + k * self.stderr
    }

    /// `mean - k·stderr`.
    pub fn lower(&self, k: f64) -> f64 {
        self.mean - k * self.stderr
    }
}

/// Runs `cfg.samples` draws of `sample`, which writes one row of `cols`
/// values per call.
pub fn run<F>(cfg: &McConfig, cols: usize, sample: F) -> Tally
where
    F: Fn(&mut McRng, &mut [f64]) + Sync,
{
    let chunks = cfg.chunks.max(1);
    let base = cfg.samples / chunks as u64;
    let extra = cfg.samples % chunks as u64;
    let parts: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|w| {
            let mut rng = chunk_rng(cfg.seed, w);
            let mut tally = Tally::new(cols);
            let mut row = vec![0.0; cols];
            let n = base + u64::from((w as u64) < extra);
            for _ in 0..n {
                row.iter_mut().for_each(|x| *x = 0.0);
                sample(&mut rng, &mut row);
                tally.push(&row);
            }
            tally
        })
        .collect();
    let mut total = Tally::new(cols);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// [`run`] for fallible samplers; the first error in chunk order wins.
pub fn try_run<F>(cfg: &McConfig, cols: usize, sample: F) -> crate::Result<Tally>
where
    F: Fn(&mut McRng, &mut [f64]) -> crate::Result<()> + Sync,
{
    let chunks = cfg.chunks.max(1);
    let base = cfg.samples / chunks as u64;
    let extra = cfg.samples % chunks as u64;
    let parts: Vec<crate::Result<Tally>> = (0..chunks)
        .into_par_iter()
        .map(|w| {
            let mut rng = chunk_rng(cfg.seed, w);
            let mut tally = Tally::new(cols);
            let mut row = vec![0.0; cols];
            let n = base + u64::from((w as u64) < extra);
            for _ in 0..n {
                row.iter_mut().for_each(|x| *x = 0.0);
                sample(&mut rng, &mut row)?;
                tally.push(&row);
            }
            Ok(tally)
        })
        .collect();
    let mut total = Tally::new(cols);
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn runs_are_reproducible_and_seed_sensitive() {
        let cfg = McConfig::new(10_000, 7);
        let f = |rng: &mut McRng, row: &mut [f64]| row[0] = rng.gen::<f64>();
        let a = run(&cfg, 1, f);
        let b = run(&cfg, 1, f);
        assert_eq!(a, b);
        let c = run(&McConfig::new(10_000, 8), 1, f);
        assert_ne!(a.mean(0), c.mean(0));
        assert_eq!(a.count(), 10_000);
        assert!((a.mean(0) - 0.5).abs() < 4.0 * a.stderr(0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = McConfig::new(5_000, 3);
        let f = |rng: &mut McRng, row: &mut [f64]| row[0] = rng.gen::<f64>().powi(2);
        let a = run(&cfg, 1, f);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run(&cfg, 1, f));
        assert_eq!(a, b);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let mut whole = Tally::new(1);
        xs.iter().for_each(|x| whole.push(&[*x]));
        let mut a = Tally::new(1);
        let mut b = Tally::new(1);
        xs[..37].iter().for_each(|x| a.push(&[*x]));
        xs[37..].iter().for_each(|x| b.push(&[*x]));
        a.merge(&b);
        assert!((a.mean(0) - whole.mean(0)).abs() < 1e-14);
        assert!((a.stderr(0) - whole.stderr(0)).abs() < 1e-14);
        assert_eq!(a.min(0), whole.min(0));
    }

    #[test]
    fn try_run_matches_run_and_propagates_errors() {
        let cfg = McConfig::new(2_000, 11);
        let a = run(&cfg, 1, |rng, row| row[0] = rng.gen::<f64>());
        let b = try_run(&cfg, 1, |rng, row| {
            row[0] = rng.gen::<f64>();
            Ok(())
        })
        .unwrap();
        assert_eq!(a, b);
        let e = try_run(&cfg, 1, |rng, _| {
            if rng.gen::<f64>() < 0.01 {
                Err(crate::Error::Parameter("boom".into()))
            } else {
                Ok(())
            }
        });
        assert!(matches!(e, Err(crate::Error::Parameter(m)) if m == "boom"));
    }

    #[test]
    fn degenerate_samples_have_zero_error() {
        let t = run(&McConfig::new(100, 1), 1, |_, row| row[0] = 1.0);
        assert_eq!(t.estimate(0), Estimate { mean: 1.0, stderr: 0.0 });
    }
}
