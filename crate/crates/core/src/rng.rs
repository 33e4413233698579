//! Seeded, splittable random streams.
//!
//! Every random draw in the crate goes through an [`RngStream`]. A stream is
//! identified by `(seed, stream_id)`; sub-streams for individual candidates,
//! EoT samples, or bootstrap replicates are derived with [`RngStream::derive`]
//! so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream keyed by `path`. Distinct paths give distinct streams;
    /// the same path always gives the same stream.
    pub fn derive(&self, path: &[u64]) -> RngStream {
        let mut id = splitmix64(self.stream_id ^ 0x5EED_0000_0000_0001);
        for &word in path {
            id = splitmix64(id ^ splitmix64(word));
        }
        RngStream { seed: self.seed, stream_id: id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Domain tags so unrelated sub-streams never collide.
pub(crate) mod tags {
    pub const PATCH_INIT: u64 = 1;
    pub const NES_DIRECTION: u64 = 2;
    pub const EOT: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
}
