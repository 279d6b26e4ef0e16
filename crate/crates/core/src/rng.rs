//! Counter-based random streams.
//!
//! Every random draw is addressed by `(seed, stream, k)`. The ChaCha key comes
//! from the seed, the ChaCha stream id from [`StreamId`] and the word position
//! from `k`, so a draw never depends on how many other draws happened before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per step within one stream.
const WORDS_PER_STEP: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamId {
    ProcessNoise,
    SensorNoise,
    InputNoise,
    /// Reception of `sender`'s group `group` at `receiver`.
    Drop {
        sender: u16,
        group: u16,
        receiver: u16,
    },
    /// One draw per message shared by all receivers.
    GlobalDrop { sender: u16, group: u16 },
}

impl StreamId {
    fn code(self) -> u64 {
        match self {
            StreamId::ProcessNoise => 1 << 56,
            StreamId::SensorNoise => 2 << 56,
            StreamId::InputNoise => 3 << 56,
            StreamId::Drop {
                sender,
                group,
                receiver,
            } => (4 << 56) | (u64::from(sender) << 32) | (u64::from(group) << 16) | u64::from(receiver),
            StreamId::GlobalDrop { sender, group } => {
                (5 << 56) | (u64::from(sender) << 32) | (u64::from(group) << 16)
            }
        }
    }
}

/// Generator positioned at the start of step `k` of `stream`.
pub fn stream_rng(seed: u64, stream: StreamId, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.code());
    rng.set_word_pos(u128::from(k) * WORDS_PER_STEP);
    rng
}
