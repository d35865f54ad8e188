//! Hierarchical random streams.
//!
//! Every consumer derives its own stream from a path of tags below the root
//! seed (root → epoch → task → trajectory), so results never depend on the
//! order in which independent pieces of work run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream-purpose tags for the second level below an epoch.
pub mod tag {
    pub const PRESTEP: u64 = 0x7072_6573;
    pub const TASKS: u64 = 0x7461_736b;
    pub const SUPPORT: u64 = 0x7375_7070;
    pub const QUERY: u64 = 0x7175_6572;
    pub const EVAL: u64 = 0x6576_616c;
    pub const INIT: u64 = 0x696e_6974;
    pub const CRITIC: u64 = 0x6372_6974;
    pub const EPOCH: u64 = 0x6570_6f63;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(splitmix(seed))
    }

    pub fn child(self, tag: u64) -> Self {
        StreamKey(splitmix(self.0 ^ splitmix(tag.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d)))
    }

    pub fn path(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |k, &t| k.child(t))
    }

    pub fn epoch(self, epoch: usize) -> Self {
        self.child(tag::EPOCH).child(epoch as u64)
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    pub fn id(self) -> u64 {
        self.0
    }
}
