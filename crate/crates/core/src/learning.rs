//! Serial stochastic learning: the Kohonen map, the generalized
//! winner-relaxing rule and plain vector quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::StimulusDistribution;
use crate::topology::{find_winner, KernelMode, LatticeTopology, NeighborhoodKernel, NetworkState};

/// Relative change in γ that triggers a rebuild of the κ-lookup table.
pub const KERNEL_REBUILD_TOL: f64 = 1e-3;

/// Kernel values below this are dropped when training picks its own
/// truncation radius for wide kernels.
pub const TRAINING_KERNEL_CUTOFF: f64 = 1e-8;

/// Exponential annealing of the learning rate and kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSchedule {
    pub eta_start: f64,
    pub eta_end: f64,
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub total_steps: u64,
}

impl LearningSchedule {
    pub fn new(
        eta_start: f64,
        eta_end: f64,
        gamma_start: f64,
        gamma_end: f64,
        total_steps: u64,
    ) -> Result<Self> {
        let s = Self {
            eta_start,
            eta_end,
            gamma_start,
            gamma_end,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eta) in [("eta_start", self.eta_start), ("eta_end", self.eta_end)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("learning rate must lie in (0, 1], got {eta}"),
                });
            }
        }
        for (name, gamma) in [
            ("gamma_start", self.gamma_start),
            ("gamma_end", self.gamma_end),
        ] {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("kernel width must be positive, got {gamma}"),
                });
            }
        }
        Ok(())
    }

    /// `(η(t), γ(t))` with `x(t) = x_start (x_end / x_start)^(t / T)`.
    pub fn at(&self, t: u64) -> Result<(f64, f64)> {
        if t > self.total_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        if t == 0 || self.total_steps == 0 {
            return Ok((self.eta_start, self.gamma_start));
        }
        if t == self.total_steps {
            return Ok((self.eta_end, self.gamma_end));
        }
        let frac = t as f64 / self.total_steps as f64;
        let interp = |a: f64, b: f64| a * (b / a).powf(frac);
        Ok((
            interp(self.eta_start, self.eta_end),
            interp(self.gamma_start, self.gamma_end),
        ))
    }
}

pub fn schedule_at(schedule: &LearningSchedule, t: u64) -> Result<(f64, f64)> {
    schedule.at(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Som,
    Gwrk,
    Vq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub rule: Rule,
    /// Winner-relaxing coefficient; only read by [`Rule::Gwrk`].
    pub lambda: f64,
    pub allow_unstable_lambda: bool,
}

impl RuleConfig {
    pub fn som() -> Self {
        Self {
            rule: Rule::Som,
            lambda: 0.0,
            allow_unstable_lambda: false,
        }
    }

    pub fn vq() -> Self {
        Self {
            rule: Rule::Vq,
            lambda: 0.0,
            allow_unstable_lambda: false,
        }
    }

    pub fn gwrk(lambda: f64) -> Self {
        Self {
            rule: Rule::Gwrk,
            lambda,
            allow_unstable_lambda: false,
        }
    }

    pub fn allowing_unstable(mut self, allow: bool) -> Self {
        self.allow_unstable_lambda = allow;
        self
    }

    /// λ as it enters the update; zero for SOM and VQ.
    pub fn effective_lambda(&self) -> f64 {
        match self.rule {
            Rule::Gwrk => self.lambda,
            Rule::Som | Rule::Vq => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "must be finite".into(),
            });
        }
        if self.rule == Rule::Gwrk
            && !self.allow_unstable_lambda
            && !(-1.0..=1.0).contains(&self.lambda)
        {
            return Err(Error::UnstableLambda(self.lambda));
        }
        Ok(())
    }
}

fn check_step_inputs(state: &NetworkState, eta: f64, v: &[f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("learning rate must lie in [0, 1], got {eta}"),
        });
    }
    if v.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: v.len(),
        });
    }
    Ok(())
}

/// One Kohonen step: `w_r += η g(r,s) (v - w_r)` for the winner `s`.
pub fn som_step(
    state: &mut NetworkState,
    kernel: &NeighborhoodKernel,
    eta: f64,
    v: &[f64],
) -> Result<usize> {
    gwrk_step(state, kernel, eta, 0.0, v)
}

/// One generalized winner-relaxing step.
///
/// Non-winners receive the Kohonen update. The winner additionally moves by
/// `-η λ Σ_{r≠s} g(r,s) (v - w_r)`, evaluated on the weights before this
/// step. `λ = 0` is exactly [`som_step`]. Returns the winner index.
pub fn gwrk_step(
    state: &mut NetworkState,
    kernel: &NeighborhoodKernel,
    eta: f64,
    lambda: f64,
    v: &[f64],
) -> Result<usize> {
    check_step_inputs(state, eta, v)?;
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: "must be finite".into(),
        });
    }
    let s = find_winner(state, v)?;
    let support = kernel.support(state.topology(), s);
    let dim = state.dim();

    let relax = if lambda != 0.0 {
        let mut sum = vec![0.0; dim];
        for &(r, g) in &support {
            if r == s {
                continue;
            }
            for (acc, (x, w)) in sum.iter_mut().zip(v.iter().zip(state.weight(r))) {
                *acc += g * (x - w);
            }
        }
        Some(sum)
    } else {
        None
    };

    let weights = state.weights_mut();
    for &(r, g) in &support {
        let rate = eta * g;
        for (w, x) in weights[r].iter_mut().zip(v) {
            *w += rate * (x - *w);
        }
    }
    if let Some(sum) = relax {
        for (w, extra) in weights[s].iter_mut().zip(sum) {
            *w -= eta * lambda * extra;
        }
    }
    state.advance();
    Ok(s)
}

/// Winner-only update, the γ → 0 limit.
pub fn vq_step(state: &mut NetworkState, eta: f64, v: &[f64]) -> Result<usize> {
    som_step(state, &NeighborhoodKernel::delta(), eta, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initialization {
    /// Uniform random in the support box of the stimuli.
    Random,
    /// Evenly spaced across the support box, following lattice order.
    Ordered,
}

/// Initial weights on `topology` for stimuli drawn from `dist`.
pub fn initial_state<R: Rng + ?Sized>(
    topology: &LatticeTopology,
    dist: &StimulusDistribution,
    init: Initialization,
    rng: &mut R,
) -> Result<NetworkState> {
    let bounds = dist.support_box();
    let n = topology.len();
    let weights = match init {
        Initialization::Random => (0..n)
            .map(|_| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect()
            })
            .collect(),
        Initialization::Ordered => (0..n)
            .map(|r| {
                let coords = topology.coords(r).expect("index in range");
                let mut w: Vec<f64> = bounds
                    .iter()
                    .enumerate()
                    .map(|(k, &(lo, hi))| {
                        // lattice axis k drives input component k; extra components sit mid-box
                        if k < topology.dims() {
                            let size = topology.sizes()[k] as f64;
                            lo + (hi - lo) * (coords[k] as f64 + 0.5) / size
                        } else {
                            0.5 * (lo + hi)
                        }
                    })
                    .collect();
                w.truncate(bounds.len());
                w
            })
            .collect(),
    };
    NetworkState::new(topology.clone(), weights)
}

/// Everything that determines a training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub state: NetworkState,
    pub schedule: LearningSchedule,
    pub rule: RuleConfig,
    pub rng_seed: u64,
    /// Snapshot interval in steps; 0 keeps only the initial and final state.
    pub snapshot_every: u64,
    pub kernel_mode: KernelMode,
}

/// A stored training state.
pub type Snapshot = NetworkState;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> &NetworkState {
        self.snapshots
            .last()
            .expect("trajectory always holds the initial state")
    }
}

/// Generator used for a run with the given seed.
pub fn run_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn training_kernel(gamma: f64, mode: KernelMode) -> Result<NeighborhoodKernel> {
    match mode {
        KernelMode::ExactGaussian => NeighborhoodKernel::exact(gamma),
        KernelMode::KappaLookup { truncation_radius } => {
            // wide kernels early in annealing would lose most of their mass to
            // a fixed small radius, so grow it until the cut tail is negligible
            let needed = (gamma * (2.0 * (1.0 / TRAINING_KERNEL_CUTOFF).ln()).sqrt()).ceil() as u32;
            NeighborhoodKernel::lookup(gamma, truncation_radius.max(needed))
        }
    }
}

/// Trains `run.state` serially on draws from `stimuli`.
///
/// The returned trajectory starts with the initial state, holds one snapshot
/// every `snapshot_every` steps and always ends with the final state.
pub fn train(run: &TrainingRun, stimuli: &StimulusDistribution) -> Result<Trajectory> {
    let mut rng = run_rng(run.rng_seed);
    train_with_rng(run, stimuli, &mut rng)
}

pub fn train_with_rng<R: Rng + ?Sized>(
    run: &TrainingRun,
    stimuli: &StimulusDistribution,
    rng: &mut R,
) -> Result<Trajectory> {
    run.rule.validate()?;
    run.schedule.validate()?;
    if stimuli.dim() != run.state.dim() {
        return Err(Error::DimensionMismatch {
            expected: run.state.dim(),
            found: stimuli.dim(),
        });
    }
    let lambda = run.rule.effective_lambda();
    let mut state = run.state.clone();
    let mut snapshots = vec![state.clone()];
    let total = run.schedule.total_steps;

    let (_, gamma0) = run.schedule.at(0)?;
    let mut kernel_gamma = gamma0;
    let mut kernel = match run.rule.rule {
        Rule::Vq => NeighborhoodKernel::delta(),
        _ => training_kernel(gamma0, run.kernel_mode)?,
    };

    for t in 0..total {
        let (eta, gamma) = run.schedule.at(t)?;
        if run.rule.rule != Rule::Vq
            && ((gamma - kernel_gamma) / kernel_gamma).abs() > KERNEL_REBUILD_TOL
        {
            kernel = training_kernel(gamma, run.kernel_mode)?;
            kernel_gamma = gamma;
        }
        let v = stimuli.sample(rng);
        gwrk_step(&mut state, &kernel, eta, lambda, &v)?;
        let done = t + 1;
        if run.snapshot_every > 0 && done % run.snapshot_every == 0 && done < total {
            snapshots.push(state.clone());
        }
    }
    if total > 0 {
        snapshots.push(state);
    }
    Ok(Trajectory { snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn chain3() -> NetworkState {
        NetworkState::from_scalars(LatticeTopology::chain(3).unwrap(), &[0.0, 0.5, 1.0]).unwrap()
    }

    fn quarter_kernel() -> NeighborhoodKernel {
        NeighborhoodKernel::from_kappa(0.25, KernelMode::ExactGaussian).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let mut s = chain3();
        som_step(&mut s, &quarter_kernel(), 0.0, &[0.9]).unwrap();
        assert_eq!(s.scalars(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn som_hand_example() {
        let mut s = chain3();
        let winner = som_step(&mut s, &quarter_kernel(), 0.1, &[0.9]).unwrap();
        assert_eq!(winner, 2);
        let w = s.scalars();
        // neuron 0 sits at lattice distance 2: moves by 0.1 * 0.25^4 * 0.9
        assert_abs_diff_eq!(w[0], 0.1 * 0.25f64.powi(4) * 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.51, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.99, epsilon = 1e-15);
    }

    #[test]
    fn som_hand_example_truncated_to_nearest_neighbors() {
        let mut s = chain3();
        let k = NeighborhoodKernel::from_kappa(
            0.25,
            KernelMode::KappaLookup {
                truncation_radius: 1,
            },
        )
        .unwrap();
        som_step(&mut s, &k, 0.1, &[0.9]).unwrap();
        let w = s.scalars();
        assert_eq!(w[0], 0.0);
        assert_abs_diff_eq!(w[1], 0.51, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.99, epsilon = 1e-15);
    }

    #[test]
    fn gwrk_hand_example() {
        let mut s = chain3();
        let k = NeighborhoodKernel::from_kappa(
            0.25,
            KernelMode::KappaLookup {
                truncation_radius: 1,
            },
        )
        .unwrap();
        gwrk_step(&mut s, &k, 0.1, 0.5, &[0.9]).unwrap();
        let w = s.scalars();
        assert_eq!(w[0], 0.0);
        assert_abs_diff_eq!(w[1], 0.51, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 0.985, epsilon = 1e-15);
    }

    #[test]
    fn vq_limit_moves_only_winner() {
        for lambda in [-1.0, 0.0, 0.5, 1.0] {
            let mut s = chain3();
            gwrk_step(&mut s, &NeighborhoodKernel::delta(), 0.1, lambda, &[0.9]).unwrap();
            let w = s.scalars();
            assert_eq!(w[0], 0.0);
            assert_eq!(w[1], 0.5);
            assert_abs_diff_eq!(w[2], 0.99, epsilon = 1e-15);
        }
        let mut a = chain3();
        vq_step(&mut a, 0.1, &[0.9]).unwrap();
        assert_abs_diff_eq!(a.scalars()[2], 0.99, epsilon = 1e-15);
    }

    #[test]
    fn step_errors() {
        let mut s = chain3();
        assert!(matches!(
            som_step(&mut s, &quarter_kernel(), 0.1, &[0.9, 0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(som_step(&mut s, &quarter_kernel(), 1.5, &[0.9]).is_err());
        assert!(gwrk_step(&mut s, &quarter_kernel(), 0.1, f64::NAN, &[0.9]).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = LearningSchedule::new(0.5, 0.05, 10.0, 0.8, 100_000).unwrap();
        assert_eq!(s.at(0).unwrap(), (0.5, 10.0));
        assert_eq!(s.at(100_000).unwrap(), (0.05, 0.8));
        let (eta, _) = s.at(50_000).unwrap();
        assert_abs_diff_eq!(eta, 0.5 * 0.1f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(eta, 0.1581, epsilon = 1e-4);
        assert!(matches!(s.at(100_001), Err(Error::StepOutOfRange { .. })));
        assert!(LearningSchedule::new(0.0, 0.1, 1.0, 1.0, 10).is_err());
        assert!(LearningSchedule::new(0.5, 0.1, 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn schedule_is_strictly_monotone() {
        let s = LearningSchedule::new(0.5, 0.02, 10.0, 0.8, 1000).unwrap();
        let mut prev = s.at(0).unwrap();
        for t in 1..=1000 {
            let cur = s.at(t).unwrap();
            assert!(cur.0 < prev.0 && cur.1 < prev.1);
            prev = cur;
        }
    }

    #[test]
    fn lambda_window_guard() {
        assert!(matches!(
            RuleConfig::gwrk(1.5).validate(),
            Err(Error::UnstableLambda(_))
        ));
        assert!(RuleConfig::gwrk(1.5)
            .allowing_unstable(true)
            .validate()
            .is_ok());
        assert!(RuleConfig::gwrk(-1.0).validate().is_ok());
        let run = small_run(RuleConfig::gwrk(-1.2), 10, 0);
        assert!(matches!(
            train(&run, &unit()),
            Err(Error::UnstableLambda(_))
        ));
    }

    fn unit() -> StimulusDistribution {
        StimulusDistribution::uniform(0.0, 1.0).unwrap()
    }

    fn small_run(rule: RuleConfig, steps: u64, seed: u64) -> TrainingRun {
        let topo = LatticeTopology::chain(12).unwrap();
        let mut rng = run_rng(seed ^ 0xabc);
        TrainingRun {
            state: initial_state(&topo, &unit(), Initialization::Random, &mut rng).unwrap(),
            schedule: LearningSchedule::new(0.5, 0.05, 3.0, 0.7, steps).unwrap(),
            rule,
            rng_seed: seed,
            snapshot_every: 100,
            kernel_mode: KernelMode::KappaLookup {
                truncation_radius: 3,
            },
        }
    }

    #[test]
    fn zero_steps_keeps_only_initial_state() {
        let run = small_run(RuleConfig::som(), 0, 1);
        let traj = train(&run, &unit()).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0], run.state);
    }

    #[test]
    fn snapshots_follow_interval() {
        let run = small_run(RuleConfig::som(), 1050, 1);
        let traj = train(&run, &unit()).unwrap();
        let steps: Vec<u64> = traj.snapshots.iter().map(|s| s.step()).collect();
        assert_eq!(
            steps,
            vec![0, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1050]
        );
    }

    #[test]
    fn gwrk_zero_reproduces_som_trajectory() {
        let a = train(&small_run(RuleConfig::som(), 3000, 5), &unit()).unwrap();
        let b = train(&small_run(RuleConfig::gwrk(0.0), 3000, 5), &unit()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = train(&small_run(RuleConfig::gwrk(0.5), 2000, 9), &unit()).unwrap();
        let b = train(&small_run(RuleConfig::gwrk(0.5), 2000, 9), &unit()).unwrap();
        assert_eq!(a, b);
        let c = train(&small_run(RuleConfig::gwrk(0.5), 2000, 10), &unit()).unwrap();
        assert_ne!(a.final_state(), c.final_state());
    }

    #[test]
    fn ordered_initialization_spans_support() {
        let topo = LatticeTopology::chain(4).unwrap();
        let d = StimulusDistribution::power_law(1.0, 0.1, 1.0).unwrap();
        let s = initial_state(&topo, &d, Initialization::Ordered, &mut run_rng(0)).unwrap();
        let w = s.scalars();
        for (r, x) in w.iter().enumerate() {
            assert_abs_diff_eq!(*x, 0.1 + 0.9 * (r as f64 + 0.5) / 4.0, epsilon = 1e-15);
        }
    }

    fn random_state(values: &[f64], dim: usize) -> NetworkState {
        let n = values.len() / dim;
        let weights = values.chunks(dim).map(|c| c.to_vec()).collect();
        NetworkState::new(LatticeTopology::chain(n).unwrap(), weights).unwrap()
    }

    proptest! {
        #[test]
        fn som_stays_in_box(
            init in prop::collection::vec(0.0f64..1.0, 16),
            stimuli in prop::collection::vec(0.0f64..1.0, 1..60),
            eta in 0.0f64..=1.0,
            gamma in 0.1f64..4.0,
        ) {
            let mut s = random_state(&init, 2);
            let k = NeighborhoodKernel::exact(gamma).unwrap();
            for v in stimuli.chunks(2).filter(|c| c.len() == 2) {
                som_step(&mut s, &k, eta, v).unwrap();
            }
            for x in s.weights().iter().flatten() {
                prop_assert!((0.0..=1.0).contains(x));
            }
        }

        #[test]
        fn non_winners_ignore_lambda(
            init in prop::collection::vec(-1.0f64..1.0, 10),
            v in prop::collection::vec(-1.0f64..1.0, 2),
            lambda in -1.0f64..1.0,
            gamma in 0.2f64..3.0,
        ) {
            let k = NeighborhoodKernel::exact(gamma).unwrap();
            let mut a = random_state(&init, 2);
            let mut b = a.clone();
            let s = gwrk_step(&mut a, &k, 0.3, lambda, &v).unwrap();
            gwrk_step(&mut b, &k, 0.3, 0.0, &v).unwrap();
            for r in (0..a.len()).filter(|&r| r != s) {
                prop_assert_eq!(a.weight(r), b.weight(r));
            }
        }

        #[test]
        fn winner_difference_is_center_of_mass_term(
            init in prop::collection::vec(-1.0f64..1.0, 12),
            v in prop::collection::vec(-1.0f64..1.0, 2),
            lambda in -1.0f64..1.0,
            gamma in 0.2f64..3.0,
            eta in 0.01f64..1.0,
        ) {
            let k = NeighborhoodKernel::exact(gamma).unwrap();
            let before = random_state(&init, 2);
            let mut a = before.clone();
            let mut b = before.clone();
            let s = gwrk_step(&mut a, &k, eta, lambda, &v).unwrap();
            som_step(&mut b, &k, eta, &v).unwrap();
            for c in 0..2 {
                let mut sum = 0.0;
                for r in (0..before.len()).filter(|&r| r != s) {
                    let g = crate::topology::kernel_value(&k, before.topology(), r, s).unwrap();
                    sum += g * (v[c] - before.weight(r)[c]);
                }
                let expected = -eta * lambda * sum;
                prop_assert!((a.weight(s)[c] - b.weight(s)[c] - expected).abs() < 1e-12);
            }
        }
    }
}
