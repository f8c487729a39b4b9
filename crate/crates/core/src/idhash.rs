//! Cheap multiplicative hasher for dense `u32` item ids. Graph search spends
//! much of its time in visited-set and ledger lookups; SipHash is overkill.

use std::collections::{HashMap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};

#[derive(Default)]
pub struct IdHasher {
    state: u64,
}

impl Hasher for IdHasher {
    fn finish(&self) -> u64 {
        self.state
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state = (self.state ^ u64::from(b)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }

    fn write_u32(&mut self, i: u32) {
        let x = u64::from(i).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.state = x ^ (x >> 29);
    }
}

pub type IdBuild = BuildHasherDefault<IdHasher>;
pub type IdSet = HashSet<u32, IdBuild>;
pub type IdMap<V> = HashMap<u32, V, IdBuild>;
