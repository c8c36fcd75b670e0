//! Deterministic stream derivation.
//!
//! One root seed per experiment; every consumer derives its generator from
//! `(root, stream id)` where the stream id encodes the consumer's role. New
//! experiment stages claim fresh role constants, so adding a stage never
//! perturbs the streams of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Role constants for the top-level harness stages. Per-item streams are
/// derived underneath these via [`stream`].
pub mod roles {
    pub const NOISE: u64 = 1;
    pub const SOLVE: u64 = 2;
    pub const MANIFOLD: u64 = 3;
    pub const VERIFY: u64 = 4;
    pub const AUDIT: u64 = 5;
    pub const ACCEPT: u64 = 6;
}

/// Compose a role with an item counter into a single stream id. The role
/// occupies the high 16 bits, leaving 48 bits of items per role.
pub fn stream(role: u64, item: u64) -> u64 {
    debug_assert!(role < (1 << 16));
    debug_assert!(item < (1 << 48));
    (role << 48) | item
}

/// Generator for `(root, stream)`: ChaCha12 keyed by the root seed with the
/// stream id selecting the (independent) keystream.
pub fn stream_rng(root: u64, stream_id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(root);
    rng.set_stream(stream_id);
    rng
}
