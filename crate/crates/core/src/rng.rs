//! Seeded random substreams.
//!
//! Every run has one master seed. A substream is identified by a purpose and
//! a client index and is a ChaCha8 generator keyed by the master seed, with
//! ChaCha stream number `(purpose << 32) | client`. Substreams never overlap
//! and do not depend on the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    /// Per-client objective shifts.
    Shift = 1,
    /// Per-client reward noise.
    Noise = 2,
    /// Oracle random search.
    Oracle = 3,
}

pub fn substream(master_seed: u64, purpose: Purpose, client: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((u64::from(purpose as u32) << 32) | u64::from(client));
    rng
}
