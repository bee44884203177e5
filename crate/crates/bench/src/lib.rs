//! Fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wrkmap_core::{LatticeTopology, NetworkState, StimulusDistribution};

/// Sorted chain of `n` scalar weights spread over `[0.1, 1]`.
pub fn ordered_chain(n: usize) -> NetworkState {
    let w: Vec<f64> = (0..n)
        .map(|r| 0.1 + 0.9 * (r as f64 + 0.5) / n as f64)
        .collect();
    NetworkState::from_scalars(LatticeTopology::chain(n).expect("n > 0"), &w)
        .expect("finite weights")
}

/// Random 2-D discrete instance with `neurons` weights and `stimuli` points.
pub fn discrete_instance(
    neurons: usize,
    stimuli: usize,
    seed: u64,
) -> (NetworkState, StimulusDistribution) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..neurons)
        .map(|_| vec![rng.random(), rng.random()])
        .collect();
    let pts = (0..stimuli)
        .map(|_| vec![rng.random(), rng.random()])
        .collect();
    let state = NetworkState::new(LatticeTopology::chain(neurons).expect("neurons > 0"), w)
        .expect("valid state");
    (
        state,
        StimulusDistribution::discrete_uniform(pts).expect("valid stimuli"),
    )
}
