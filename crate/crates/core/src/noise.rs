//! Seeded random streams and the standard-normal noise fed to the
//! reparameterized samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

/// Independent streams derived from one master seed. Each purpose gets its own
/// ChaCha stream id, so consuming one never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Noise = 2,
    Binarize = 3,
    Shuffle = 4,
    TestBinarize = 5,
    EvalNoise = 6,
    Synthetic = 7,
    Diagnostics = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// RNG for a stream that is re-derived per use, e.g. per evaluation epoch.
pub fn keyed_rng(seed: u64, stream: Stream, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream as u64);
    rng
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

/// Source of the ε ~ N(0, I) tensors consumed by reparameterized sampling.
pub trait NoiseSource<S: Scalar> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor<S>;
}

/// Fresh draws from a seeded RNG.
pub struct RngNoise<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<'a> RngNoise<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        RngNoise { rng }
    }
}

pub fn normal_tensor<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(&[rows, cols], data).expect("positive extents")
}

impl<S: Scalar> NoiseSource<S> for RngNoise<'_> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        normal_tensor(self.rng, rows, cols)
    }
}

/// ε = 0 everywhere: every sample equals its mean.
pub struct ZeroNoise;

impl<S: Scalar> NoiseSource<S> for ZeroNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        Tensor::zeros(&[rows, cols])
    }
}

/// Draws from an RNG once, then replays the identical sequence on every
/// subsequent pass. Makes the stochastic loss a deterministic function of the
/// parameters, which finite-difference checks need.
pub struct FrozenNoise<S> {
    rng: ChaCha8Rng,
    draws: Vec<Tensor<S>>,
    cursor: usize,
}

impl<S: Scalar> FrozenNoise<S> {
    pub fn new(seed: u64) -> Self {
        FrozenNoise {
            rng: stream_rng(seed, Stream::Noise),
            draws: Vec::new(),
            cursor: 0,
        }
    }

    /// Start replaying from the first recorded draw.
    pub fn rewind(&mut self) {
        self.cursor = 0;
    }
}

impl<S: Scalar> NoiseSource<S> for FrozenNoise<S> {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        if self.cursor == self.draws.len() {
            let t = normal_tensor(&mut self.rng, rows, cols);
            self.draws.push(t);
        }
        let t = self.draws[self.cursor].clone();
        assert_eq!(t.shape(), [rows, cols], "frozen noise replayed with a new shape");
        self.cursor += 1;
        t
    }
}

/// One RNG per input row, keyed by the row's values. A datapoint receives the
/// same draws wherever it sits in a batch, so per-datapoint estimates do not
/// depend on batch composition or order. Row `r` of every request (including
/// tiled copies) draws from the RNG of datapoint `r % n`.
pub struct RowKeyedNoise {
    rngs: Vec<ChaCha8Rng>,
}

impl RowKeyedNoise {
    pub fn new<S: Scalar>(seed: u64, x: &Tensor<S>) -> Self {
        let rngs = (0..x.rows())
            .map(|r| {
                let mut h = crc32fast::Hasher::new();
                for v in x.row(r) {
                    h.update(&v.as_f64().to_le_bytes());
                }
                keyed_rng(seed, Stream::Diagnostics, h.finalize() as u64)
            })
            .collect();
        RowKeyedNoise { rngs }
    }
}

impl<S: Scalar> NoiseSource<S> for RowKeyedNoise {
    fn standard_normal(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        let n = self.rngs.len();
        assert!(rows % n == 0, "{rows} rows are not copies of {n} datapoints");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let rng = &mut self.rngs[r % n];
            data.extend((0..cols).map(|_| S::of(rng.sample::<f64, _>(StandardNormal))));
        }
        Tensor::new(&[rows, cols], data).expect("positive extents")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = stream_rng(7, Stream::Binarize);
        let mut b = stream_rng(7, Stream::Init);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut c = stream_rng(7, Stream::Binarize);
        let mut d = stream_rng(7, Stream::Binarize);
        assert_eq!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn rng_state_restores_position() {
        let mut rng = stream_rng(3, Stream::Noise);
        for _ in 0..17 {
            rng.next_u32();
        }
        let st = RngState::capture(&rng);
        let mut back = st.restore().unwrap();
        assert_eq!(rng.next_u64(), back.next_u64());
    }

    #[test]
    fn frozen_noise_replays() {
        let mut n = FrozenNoise::<f64>::new(1);
        let a = n.standard_normal(2, 3);
        let b = n.standard_normal(1, 1);
        n.rewind();
        assert_eq!(n.standard_normal(2, 3), a);
        assert_eq!(n.standard_normal(1, 1), b);
    }

    #[test]
    fn row_keyed_noise_follows_rows() {
        let x = Tensor::<f64>::from_f64(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let swapped = x.select_rows(&[2, 0, 1]);
        let a: Tensor<f64> = RowKeyedNoise::new(5, &x).standard_normal(6, 4);
        let b: Tensor<f64> = RowKeyedNoise::new(5, &swapped).standard_normal(6, 4);
        for (ra, rb) in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)] {
            assert_eq!(a.row(ra), b.row(rb));
        }
        assert_ne!(a.row(0), a.row(3));
    }
}
