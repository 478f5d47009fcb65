//! Shared inputs for the benchmarks.

use wres_core::{Idx, Letter};

/// A word of `len` generators cycling through `n` concrete indices.
pub fn cyclic_word(len: usize, n: u8) -> Vec<Letter> {
    (0..len).map(|k| Letter::Gen(Idx::Fixed((k as u8 % n) + 1))).collect()
}
