//! Counter-based random streams.
//!
//! Every random draw is addressed by `(master_seed, record_index, purpose)`:
//! the master seed keys a ChaCha8 generator and the record index and purpose
//! select one of its 2^64 independent streams. A record's draws therefore do
//! not depend on how many records precede it or which thread produces it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PURPOSE_BITS: u32 = 4;

/// What a stream is used for; each purpose gets a disjoint stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Demographics = 1,
    Count = 2,
    Meals = 3,
}

pub fn stream(master_seed: u64, record: u64, purpose: Purpose) -> ChaCha8Rng {
    assert!(
        record < 1 << (64 - PURPOSE_BITS),
        "record index {record} exceeds the stream address space"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((record << PURPOSE_BITS) | purpose as u64);
    rng
}

/// Token that reproduces a record's streams.
pub fn seed_path(master_seed: u64, record: u64) -> String {
    format!("{master_seed}/{record}")
}
