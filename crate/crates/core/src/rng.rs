// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded, splittable random streams.
//!
//! Every Monte Carlo loop in the crate draws replication `r` from its own
//! ChaCha8 stream, so results do not depend on how replications are spread
//! over worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier written into cache headers; caches from another generator are regenerated.
pub const RNG_ALGORITHM: &str = "chacha8-stream/ziggurat-normal/v1";

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
