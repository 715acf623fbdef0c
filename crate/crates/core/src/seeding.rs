//! Deterministic seed fan-out.
//!
//! Every random stream in a run is derived from the master seed plus a
//! (domain, index) label, so adding a group or an agent never shifts the
//! streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Values are part of the reproducibility contract; do not renumber.
pub mod domain {
    pub const ENV_GROUP: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const GOV_SAMPLING: u64 = 3;
    pub const HH_SAMPLING: u64 = 4;
    pub const GOV_UPDATE: u64 = 5;
    pub const HH_UPDATE: u64 = 6;
    pub const GOV_INIT: u64 = 7;
    pub const HH_INIT: u64 = 8;
    pub const EVAL_EPISODE: u64 = 9;
    pub const SIMULATE: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(domain, index)` under `master`.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ splitmix64(domain.wrapping_mul(0xD6E8_FEB8_6659_FD93)));
    splitmix64(b ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn stream(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}
