//! Named, counter-addressed random streams derived from one root seed.
//!
//! Every consumer of randomness asks for a stream by purpose and integer
//! coordinates, e.g. `(Stream::Mask, [epoch, step, patient])`. The result is
//! a ChaCha8 generator keyed by the root seed with a stream id hashed from
//! the coordinates, so streams are independent of call order and of thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    Data,
    Mask,
    Init,
    Dropout,
    Patches,
    Split,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x6461_7461,
            Stream::Mask => 0x6d61_736b,
            Stream::Init => 0x696e_6974,
            Stream::Dropout => 0x6472_6f70,
            Stream::Patches => 0x7061_7463,
            Stream::Split => 0x7370_6c69,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    pub root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn stream(&self, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        let mut h = splitmix64(stream.tag());
        for &c in coords {
            h = splitmix64(h ^ splitmix64(c.wrapping_add(0x9e37_79b9)));
        }
        rng.set_stream(h);
        rng
    }

    /// A child tree, for components that need their own seed space
    /// (e.g. one fine-tuning run of many).
    pub fn child(&self, coords: &[u64]) -> SeedTree {
        let mut h = self.root;
        for &c in coords {
            h = splitmix64(h ^ splitmix64(c));
        }
        SeedTree { root: h }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
