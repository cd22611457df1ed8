//! Deterministic, label-derived random streams.
//!
//! Every algorithm here is pinned so that any implementation fed the same
//! `(seed, labels)` produces the same bytes:
//!
//! - initial state: one SplitMix64 output of `seed ^ fnv1a64(labels.join("/"))`
//! - draws: SplitMix64
//! - bounded integers: `next_u64() % n`
//! - unit floats: top 53 bits of `next_u64()` scaled by 2^-53
//! - normals: Box-Muller, consuming two unit floats per pair of normals
//! - shuffles: Fisher-Yates, descending index

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A SplitMix64 stream keyed by a seed and an ordered list of labels.
///
/// Streams are cheap values. Work units derive their own child stream with
/// [`RngStream::derive`] instead of sharing a parent across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    labels: Vec<String>,
    state: u64,
    spare_normal: Option<u64>,
}

impl RngStream {
    pub fn new<S: AsRef<str>>(seed: u64, labels: &[S]) -> Self {
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_owned()).collect();
        let joined = labels.join("/");
        let start = seed ^ fnv1a64(joined.as_bytes());
        Self {
            seed,
            labels,
            state: mix64(start.wrapping_add(GOLDEN_GAMMA)),
            spare_normal: None,
        }
    }

    /// A fresh stream for `(seed, labels ++ extra)`. Independent of how many
    /// draws have been taken from `self`.
    pub fn derive<S: AsRef<str>>(&self, extra: &[S]) -> Self {
        let mut labels = self.labels.clone();
        labels.extend(extra.iter().map(|s| s.as_ref().to_owned()));
        Self::new(self.seed, &labels)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform integer in `[0, n)`. Modulo bias is accepted.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    pub fn next_f64_open_closed(&mut self) -> f64 {
        1.0 - self.next_f64()
    }

    /// Standard normal via Box-Muller. The second value of each pair is kept
    /// (as raw bits) and returned on the next call.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(bits) = self.spare_normal.take() {
            return f64::from_bits(bits);
        }
        let u1 = self.next_f64_open_closed();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some((r * theta.sin()).to_bits());
        r * theta.cos()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `m` distinct elements of `pool`, in draw order (shuffle-then-truncate).
    pub fn sample_without_replacement<T: Clone>(&mut self, pool: &[T], m: usize) -> Vec<T> {
        let mut v = pool.to_vec();
        self.shuffle(&mut v);
        v.truncate(m);
        v
    }
}

/// Convenience constructor mirroring `stream(seed, labels)`.
pub fn stream<S: AsRef<str>>(seed: u64, labels: &[S]) -> RngStream {
    RngStream::new(seed, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_sequence() {
        // SplitMix64 seeded with 0 starts 0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, ...
        // Our initial state is one mix of (start + gamma); drive the raw
        // generator directly to check the step function.
        let mut s = RngStream { seed: 0, labels: vec![], state: 0, spare_normal: None };
        assert_eq!(s.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(s.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(s.next_u64(), 0x06c45d188009454f);
    }

    #[test]
    fn same_inputs_same_draws() {
        let mut a = stream(42, &["forge", "cts"]);
        let mut b = stream(42, &["forge", "cts"]);
        let da: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let db: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(da, db);
    }

    #[test]
    fn labels_separate_streams() {
        let a = stream(42, &["a"]).next_u64();
        let b = stream(42, &["b"]).next_u64();
        assert_ne!(a, b);
        // Frozen from the first run; other implementations must match.
        assert_eq!(a, GOLDEN_SEED42_A);
        assert_eq!(b, GOLDEN_SEED42_B);
    }

    #[test]
    fn shuffle_golden() {
        let mut v = [0u32, 1, 2, 3];
        stream(7, &["x"]).shuffle(&mut v);
        assert_eq!(v, GOLDEN_SHUFFLE_7_X);
    }

    #[test]
    fn derive_matches_flat_labels() {
        let parent = stream(9, &["a"]);
        let mut child = parent.derive(&["b", "c"]);
        let mut flat = stream(9, &["a", "b", "c"]);
        assert_eq!(child.next_u64(), flat.next_u64());
    }

    #[test]
    fn unit_floats_in_range() {
        let mut s = stream(1, &["u"]);
        for _ in 0..10_000 {
            let x = s.next_f64();
            assert!((0.0..1.0).contains(&x));
            let y = s.next_f64_open_closed();
            assert!(y > 0.0 && y <= 1.0);
        }
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut s = stream(3, &["n"]);
        let xs = s.normals(200_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    const GOLDEN_SEED42_A: u64 = 6380237608057775841;
    const GOLDEN_SEED42_B: u64 = 17538353754141121765;
    const GOLDEN_SHUFFLE_7_X: [u32; 4] = [0, 3, 2, 1];
}
