use alloc::vec::Vec;

use super::Fitness;
use crate::error::{Error, Result};
use crate::searchspace::{Architecture, NUM_CHOICES};

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Synthetic fitness table: a per-position score for each choice, a bonus
/// for equal neighbouring choices, and optional noise that is a fixed
/// function of the architecture. No training involved.
#[derive(Debug, Clone)]
pub struct TabularFitness {
    table: Vec<[f64; NUM_CHOICES]>,
    coupling: f64,
    noise: f64,
    seed: u64,
    calls: usize,
}

impl TabularFitness {
    pub fn new(blocks: usize, seed: u64, noise: f64) -> Self {
        let mut state = seed;
        let table = (0..blocks)
            .map(|_| core::array::from_fn(|_| unit(&mut state)))
            .collect();
        Self {
            table,
            coupling: 0.1,
            noise,
            seed,
            calls: 0,
        }
    }

    /// Number of times [`Fitness::evaluate`] ran.
    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn score(&self, arch: &Architecture) -> Result<f64> {
        if arch.len() != self.table.len() {
            return Err(Error::InvalidArchitecture(alloc::format!(
                "expected {} blocks, got {}",
                self.table.len(),
                arch.len()
            )));
        }
        let c = arch.choices();
        let n = c.len() as f64;
        let base: f64 = c.iter().zip(&self.table).map(|(k, row)| row[k.index()]).sum::<f64>() / n;
        let pairs = c.windows(2).filter(|w| w[0] == w[1]).count() as f64;
        let smooth = base + self.coupling * pairs / n.max(1.0);
        if self.noise == 0.0 {
            return Ok(smooth);
        }
        let mut state = self.seed ^ 0x5eed;
        for k in arch.key() {
            state = splitmix(&mut state) ^ u64::from(k);
        }
        Ok(smooth + self.noise * (2.0 * unit(&mut state) - 1.0))
    }
}

impl Fitness for TabularFitness {
    fn evaluate(&mut self, arch: &Architecture) -> Result<f64> {
        self.calls += 1;
        self.score(arch)
    }
}
