//! Seed hierarchy.
//!
//! One master seed derives independent streams for every component and every
//! robot, so adding robots or components never perturbs existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named consumers of randomness inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Robot(u64),
    Priority,
    Learner,
    Bootstrap,
    Critic,
    Offline,
    Supervisor,
}

impl Stream {
    fn tag(self) -> (u64, u64) {
        match self {
            Stream::Robot(i) => (1, i),
            Stream::Priority => (2, 0),
            Stream::Learner => (3, 0),
            Stream::Bootstrap => (4, 0),
            Stream::Critic => (5, 0),
            Stream::Offline => (6, 0),
            Stream::Supervisor => (7, 0),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    let (kind, index) = stream.tag();
    splitmix64(splitmix64(master ^ splitmix64(kind)) ^ splitmix64(index.wrapping_add(0x5151)))
}

pub fn stream(master: u64, stream: Stream) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, stream))
}

pub fn robot_streams(master: u64, n: usize) -> Vec<StreamRng> {
    (0..n as u64).map(|i| stream(master, Stream::Robot(i))).collect()
}
