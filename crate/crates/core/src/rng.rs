//! Counter-based random streams.
//!
//! Every random object (a dataset row, a neuron's weights, a test point) is
//! drawn from its own ChaCha stream keyed by `(seed, domain)` and indexed by
//! the object's position. Sampling is therefore order-independent: row 17 of
//! a training set is the same whether 20 or 20 000 rows are drawn, and rows
//! may be generated in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct purposes never share a key.
pub mod domain {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0001;
    pub const TEST: u64 = 0x7465_7374_0000_0002;
    pub const NOISE: u64 = 0x6e6f_6973_6500_0003;
    pub const WEIGHTS: u64 = 0x7765_6967_6874_0004;
    pub const TARGET: u64 = 0x7461_7267_6574_0005;
    pub const NN_INIT: u64 = 0x6e6e_696e_6974_0006;
    pub const ROTATION: u64 = 0x726f_7461_7465_0007;
    pub const ORACLE: u64 = 0x6f72_6163_6c65_0008;
    pub const BATCH: u64 = 0x6261_7463_6800_0009;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for object `index` in `domain` under `seed`.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ domain.rotate_left(17);
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. one per grid point of a sweep.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}
