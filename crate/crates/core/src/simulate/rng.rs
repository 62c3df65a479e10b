//! Keyed Gaussian noise streams.
//!
//! Each `(seed, trial, stream)` triple selects its own ChaCha8 keystream
//! (`stream = trial * 8 + id`), and draw `t` of a stream is the `t`-th
//! ziggurat normal taken from it. A sample therefore depends only on
//! `(seed, trial, stream, t)`, whatever order the trials run in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::SystemSchedule;
use crate::schemes::NoiseStreams;

use super::McConfig;

pub const STREAM_X0: u64 = 0;
pub const STREAM_W: u64 = 1;
pub const STREAM_V: u64 = 2;
pub const STREAM_N: u64 = 3;
pub const STREAM_NF: u64 = 4;
const STREAMS_PER_TRIAL: u64 = 8;

pub fn stream_rng(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial * STREAMS_PER_TRIAL + stream);
    rng
}

pub fn gaussian_stream(seed: u64, trial: u64, stream: u64, len: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, trial, stream);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Standard normal draws for one trial over `horizon` steps.
pub fn trial_streams(seed: u64, trial: u64, horizon: usize) -> NoiseStreams {
    NoiseStreams {
        x0: gaussian_stream(seed, trial, STREAM_X0, 1)[0],
        w: gaussian_stream(seed, trial, STREAM_W, horizon),
        v: gaussian_stream(seed, trial, STREAM_V, horizon),
        n: gaussian_stream(seed, trial, STREAM_N, horizon),
        n_f: gaussian_stream(seed, trial, STREAM_NF, horizon),
    }
}

/// Streams of all `cfg.trials` trials, in trial order.
pub fn sample_gaussian_streams(schedule: &SystemSchedule, cfg: &McConfig) -> Vec<NoiseStreams> {
    (0..cfg.trials as u64)
        .map(|trial| trial_streams(cfg.seed, trial, schedule.horizon()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_by_seed_trial_and_stream() {
        let a = trial_streams(7, 3, 10);
        assert_eq!(a, trial_streams(7, 3, 10));
        assert_ne!(a.w, trial_streams(8, 3, 10).w);
        assert_ne!(a.w, trial_streams(7, 4, 10).w);
        assert_ne!(a.w, a.n);
        // a longer horizon extends a stream without changing its prefix
        assert_eq!(a.n[..], trial_streams(7, 3, 20).n[..10]);
    }

    #[test]
    fn moments() {
        let xs = gaussian_stream(1, 0, STREAM_N, 1_000_000);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.01);
    }
}
