//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a `ChaCha8Rng` whose seed is
//! derived from a master seed, a stream label, and an index. Labeled streams
//! keep the different consumers (scene generation, pixel noise, patch
//! sampling, exploration, replay sampling, ...) independent of one another:
//! adding draws to one stream never perturbs the others, which is what makes
//! whole runs reproducible byte-for-byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha output is identical on every
/// platform, which the byte-identical-rerun guarantee relies on.
pub type DetRng = ChaCha8Rng;

/// One round of the splitmix64 finalizer; also used as a stateless pixel
/// hash by the renderer.
pub(crate) fn mix(z: u64) -> u64 {
    splitmix64(z)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive an independent substream seed from `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mixed = splitmix64(master ^ fnv1a(stream));
    splitmix64(mixed ^ splitmix64(index.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Seeded RNG for the `(master, stream, index)` substream.
pub fn rng_from(master: u64, stream: &str, index: u64) -> DetRng {
    DetRng::seed_from_u64(derive_seed(master, stream, index))
}
