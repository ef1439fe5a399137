//! Seeded random streams.
//!
//! Every random consumer draws from ChaCha8 seeded with the run seed through
//! `seed_from_u64`, on stream `(label << 32) | index`. Labels are fixed, so a
//! given (seed, label, index) triple always yields the same sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Devices = 1,
    Simulation = 2,
    RandomSearch = 3,
    LocalSearch = 4,
    NetworkInit = 5,
    Exploration = 6,
    Replay = 7,
}

pub fn stream(seed: u64, label: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((label as u64) << 32) | (index & 0xffff_ffff));
    rng
}
