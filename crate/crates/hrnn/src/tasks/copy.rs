//! Copy task: a random binary prefix of length n followed by n blanks; the
//! target is n blanks followed by the prefix. Solving it requires carrying
//! the prefix across the blank half.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::real::Real;

/// Alphabet: 0, 1, and the blank marker.
pub const COPY_ALPHABET: usize = 3;
pub const COPY_BLANK: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopySample {
    /// 2n symbols: n random bits then n blanks.
    pub input: Vec<usize>,
    /// 2n symbols: n blanks then the bits.
    pub target: Vec<usize>,
    /// True on the last n positions (where recall is scored).
    pub recall_mask: Vec<bool>,
}

pub fn gen_copy(n: usize, rng: &mut ChaCha8Rng) -> CopySample {
    assert!(n >= 1, "copy length must be at least 1");
    let bits: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2usize)).collect();
    let mut input = bits.clone();
    input.extend(std::iter::repeat(COPY_BLANK).take(n));
    let mut target = vec![COPY_BLANK; n];
    target.extend(bits);
    let mut recall_mask = vec![false; n];
    recall_mask.extend(std::iter::repeat(true).take(n));
    CopySample {
        input,
        target,
        recall_mask,
    }
}

/// Stack B samples of equal length into step-major (alphabet, B) one-hots
/// plus per-step class lists.
pub fn stack_copy_batch<F: Real>(
    samples: &[CopySample],
) -> (Vec<Tensor<F>>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let batch = samples.len();
    let t_len = samples[0].input.len();
    let mut inputs = Vec::with_capacity(t_len);
    let mut input_classes = Vec::with_capacity(t_len);
    let mut target_classes = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let classes: Vec<usize> = samples.iter().map(|s| s.input[t]).collect();
        let mut values = vec![F::zero(); COPY_ALPHABET * batch];
        for (b, &c) in classes.iter().enumerate() {
            values[c * batch + b] = F::one();
        }
        inputs.push(if batch == 1 {
            Tensor::vector(values)
        } else {
            Tensor::matrix(COPY_ALPHABET, batch, values)
        });
        input_classes.push(classes);
        target_classes.push(samples.iter().map(|s| s.target[t]).collect());
    }
    (inputs, input_classes, target_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn structure_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = gen_copy(5, &mut rng);
        assert_eq!(s.input.len(), 10);
        assert!(s.input[0..5].iter().all(|&c| c < 2));
        assert!(s.input[5..10].iter().all(|&c| c == COPY_BLANK));
        assert!(s.target[0..5].iter().all(|&c| c == COPY_BLANK));
        assert_eq!(&s.target[5..10], &s.input[0..5]);
        assert_eq!(s.recall_mask, [false, false, false, false, false, true, true, true, true, true]);
    }

    #[test]
    fn smallest_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = gen_copy(1, &mut rng);
        assert_eq!(s.input.len(), 2);
        assert_eq!(s.input[1], COPY_BLANK);
        assert_eq!(s.target[0], COPY_BLANK);
        assert_eq!(s.target[1], s.input[0]);
    }

    #[test]
    fn prefix_roundtrips_through_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 7, 24] {
            let s = gen_copy(n, &mut rng);
            assert_eq!(&s.target[n..2 * n], &s.input[0..n]);
        }
    }

    #[test]
    fn bits_are_roughly_balanced() {
        // 10^4 Bernoulli(0.5) draws: mean within 3 sigma = 3/(2 sqrt(n)).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000usize;
        let mut ones = 0usize;
        for _ in 0..n / 10 {
            let s = gen_copy(10, &mut rng);
            ones += s.input[0..10].iter().filter(|&&b| b == 1).count();
        }
        let mean = ones as f64 / n as f64;
        let bound = 3.0 / (2.0 * (n as f64).sqrt());
        assert!((mean - 0.5).abs() < bound, "mean {mean}");
    }
}
