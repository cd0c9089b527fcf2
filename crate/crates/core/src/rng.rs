//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit stream. Work that fans out
//! over samples uses a [`StreamSplitter`]: one `u64` is drawn from the
//! parent stream and sample `j` gets a ChaCha8 generator seeded with that
//! value on stream `j`. Results therefore do not depend on how the work is
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives independent per-item streams from one parent draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSplitter {
    base: u64,
}

impl StreamSplitter {
    /// Consumes exactly one `u64` from `parent`.
    pub fn from_rng<R: Rng + ?Sized>(parent: &mut R) -> Self {
        Self { base: parent.random() }
    }

    pub fn from_seed(base: u64) -> Self {
        Self { base }
    }

    pub fn stream(&self, index: usize) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(index as u64);
        rng
    }
}
