//! Keyed, counter-based random draws.
//!
//! Every random decision in a run is a pure function of the scenario seed and
//! a key naming the decision. Nothing is drawn from a sequential generator, so
//! the value of a draw never depends on which worker evaluates it or in what
//! order. This is what makes sequential and parallel runs comparable by exact
//! equality.

/// What a draw is used for. Part of the key, so draws for different purposes
/// with otherwise equal coordinates are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum DrawKind {
    PlaceX = 1,
    PlaceY = 2,
    WaypointX = 3,
    WaypointY = 4,
    Speed = 5,
    Originate = 6,
    Forward = 7,
}

/// A keyed source of uniform `[0, 1)` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionStream {
    seed: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(GOLDEN)))
}

/// Combines a list of words into one well-mixed 64-bit value.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x6A09_E667_F3BC_C908, |h, &w| absorb(h, w))
}

impl DecisionStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw 64 bits for a key.
    #[inline]
    pub fn bits(&self, kind: DrawKind, entity: u32, step: u64, salt: u64) -> u64 {
        hash_words(&[self.seed, kind as u64, entity as u64, step, salt])
    }

    /// Uniform value in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn draw(&self, kind: DrawKind, entity: u32, step: u64, salt: u64) -> f64 {
        unit_f64(self.bits(kind, entity, step, salt))
    }
}

#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
