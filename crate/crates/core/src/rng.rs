//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(key, counter)`, so results do not depend
//! on the order in which tensors or elements are visited. The construction is
//! SplitMix64 evaluated at an arbitrary position: `mix(key + counter * GAMMA)`.
//! Keys are derived from seeds and string labels with FNV-1a, which is stable
//! across platforms and releases (unlike `std`'s hasher).

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the bytes of `s`.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Mixes a seed with a string label into a new 64-bit seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    mix64(mix64(seed ^ GAMMA).wrapping_add(fnv1a(label)))
}

/// A keyed stream of random values indexed by a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    /// Independent stream for a labelled sub-purpose.
    pub fn stream(&self, label: &str) -> Self {
        Self {
            key: derive_seed(self.key, label),
        }
    }

    /// Independent stream for an integer sub-purpose.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(index.wrapping_add(GAMMA))),
        }
    }

    #[inline]
    pub fn u64_at(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn unit_at(&self, counter: u64) -> f64 {
        (self.u64_at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on counters `2c` and `2c + 1`.
    #[inline]
    pub fn normal_at(&self, counter: u64) -> f64 {
        let c = counter.wrapping_mul(2);
        let u1 = 1.0 - self.unit_at(c); // (0, 1]
        let u2 = self.unit_at(c.wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Mask stream used by DARE pruning for one tensor of one task vector.
pub fn dare_stream(seed: u64, tensor_name: &str) -> CounterRng {
    CounterRng::new(seed).stream(tensor_name)
}

/// Whether element `index` survives DARE pruning at drop probability `drop_p`.
#[inline]
pub fn dare_keeps(stream: &CounterRng, index: u64, drop_p: f64) -> bool {
    stream.unit_at(index) >= drop_p
}

/// Per-expert DARE seed, keyed by the expert's id so that reordering experts
/// leaves every mask unchanged.
pub fn expert_seed(seed: u64, expert_id: &str) -> u64 {
    derive_seed(seed, expert_id)
}
