use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded, splittable random source. Passed explicitly wherever randomness
/// is needed; there is no global generator.
#[derive(Clone, Debug)]
pub struct SeedRng(ChaCha8Rng);

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// An independent child stream; advances this generator.
    pub fn split(&mut self) -> SeedRng {
        SeedRng::new(self.0.next_u64())
    }

    /// A stream determined only by `seed` and `stream`, without touching any
    /// generator state.
    pub fn derive(seed: u64, stream: u64) -> SeedRng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeedRng(rng)
    }
}

impl RngCore for SeedRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
