//! Deterministic random-number plumbing.
//!
//! All stochastic code in this crate draws from [`ChaCha12Rng`] streams that
//! are derived, never shared. A master seed fans out into independent child
//! seeds via [`child_seed`], keyed by a domain tag and an index. Keeping one
//! stream per logical unit of work (per class, per image, per episode, per
//! evaluation task) makes results independent of iteration order and thread
//! count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Domain tags for child-seed derivation. Each distinct sampling context
/// gets its own tag so streams never collide across subsystems.
pub mod tag {
    pub const CLASS: u64 = 0x11;
    pub const IMAGE: u64 = 0x12;
    pub const TEXTURE: u64 = 0x13;
    pub const STYLIZE: u64 = 0x14;
    pub const EPISODE: u64 = 0x21;
    pub const AUGMENT: u64 = 0x22;
    pub const INIT: u64 = 0x31;
    pub const TRAIN_STEP: u64 = 0x32;
    pub const VALIDATION: u64 = 0x33;
    pub const EVAL_TASK: u64 = 0x41;
    pub const EXPERIMENT: u64 = 0x42;
}

/// Mixes `(base, tag, index)` into a new 64-bit seed.
///
/// Uses the SplitMix64 finalizer twice, which is enough to decorrelate
/// consecutive indices and nested derivations.
pub fn child_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = mix(z);
    z = mix(z ^ tag.rotate_left(17) ^ index.rotate_left(43));
    z
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the stream for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Convenience: derive a child seed and open its stream in one call.
pub fn child_rng(base: u64, tag: u64, index: u64) -> ChaCha12Rng {
    rng_from(child_seed(base, tag, index))
}
