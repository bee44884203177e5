//! Potential function of the winner-relaxing map over a discrete stimulus
//! set, its finite-difference gradient, and the elastic-net (TSP) limit.
//!
//! The potential is
//!
//! ```text
//! V({w}) = 1/2 Σ_μ Σ_r g(r, s(v^μ)) p(v^μ) |v^μ - w_r|^2
//! ```
//!
//! where `s(v^μ)` is the current winner of stimulus `μ`: for each stimulus the
//! kernel couples every neuron `r` to that stimulus's winner. The Voronoi
//! assignment is re-evaluated at every weight configuration, so `V` is smooth
//! only while no cell border crosses a stimulus.
//!
//! All evaluations here use the untruncated Gaussian, whatever mode the
//! supplied kernel carries.

use serde::{Deserialize, Serialize};

use crate::analysis::{least_squares, ExponentFit};
use crate::error::{Error, Result};
use crate::stimuli::StimulusDistribution;
use crate::topology::{
    squared_distance, KernelMode, LatticeTopology, NeighborhoodKernel, NetworkState,
};

/// Central-difference step for gradient probes.
pub const FD_STEP: f64 = 1e-6;

/// A gradient check needs every stimulus at least this many probe steps
/// away from a Voronoi border.
pub const MARGIN_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiPartition {
    /// Winner index of each stimulus.
    pub assignment: Vec<usize>,
    /// Smallest gap between second-best and best distance over stimuli.
    pub boundary_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub value: f64,
    pub partition: VoronoiPartition,
    pub gamma: f64,
}

fn check_dims(state: &NetworkState, points: &[Vec<f64>]) -> Result<()> {
    if points[0].len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: points[0].len(),
        });
    }
    Ok(())
}

pub fn voronoi_partition(state: &NetworkState, points: &[Vec<f64>]) -> Result<VoronoiPartition> {
    check_dims(state, points)?;
    let mut assignment = Vec::with_capacity(points.len());
    let mut margin = f64::INFINITY;
    for v in points {
        let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
        for (r, w) in state.weights().iter().enumerate() {
            let d = squared_distance(v, w).sqrt();
            if d < d1 {
                d2 = d1;
                d1 = d;
                best = r;
            } else if d < d2 {
                d2 = d;
            }
        }
        assignment.push(best);
        margin = margin.min(d2 - d1);
    }
    Ok(VoronoiPartition {
        assignment,
        boundary_margin: margin,
    })
}

/// Kernel matrix `g[r][s]` on the full lattice.
fn kernel_matrix(topology: &LatticeTopology, kernel: &NeighborhoodKernel) -> Vec<Vec<f64>> {
    let exact = kernel.to_exact();
    let n = topology.len();
    (0..n)
        .map(|r| {
            (0..n)
                .map(|s| exact.value_sq(topology.distance_sq(r, s).expect("in range")))
                .collect()
        })
        .collect()
}

fn potential_with(
    state: &NetworkState,
    points: &[Vec<f64>],
    probs: &[f64],
    g: &[Vec<f64>],
) -> Result<(f64, VoronoiPartition)> {
    let partition = voronoi_partition(state, points)?;
    let mut value = 0.0;
    for ((v, &p), &s) in points.iter().zip(probs).zip(&partition.assignment) {
        for (r, w) in state.weights().iter().enumerate() {
            let grs = g[r][s];
            if grs != 0.0 {
                value += grs * p * squared_distance(v, w);
            }
        }
    }
    Ok((0.5 * value, partition))
}

pub fn wrk_potential(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
) -> Result<PotentialReport> {
    let (points, probs) = stimuli.atoms()?;
    let g = kernel_matrix(state.topology(), kernel);
    let (value, partition) = potential_with(state, points, probs, &g)?;
    Ok(PotentialReport {
        value,
        partition,
        gamma: kernel.gamma(),
    })
}

/// Expected generalized winner-relaxing step divided by η, per neuron.
pub fn expected_gwrk_step(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
    lambda: f64,
) -> Result<Vec<Vec<f64>>> {
    let (points, probs) = stimuli.atoms()?;
    let g = kernel_matrix(state.topology(), kernel);
    let partition = voronoi_partition(state, points)?;
    let dim = state.dim();
    let mut field = vec![vec![0.0; dim]; state.len()];
    for ((v, &p), &s) in points.iter().zip(probs).zip(&partition.assignment) {
        let mut relax = vec![0.0; dim];
        for (r, w) in state.weights().iter().enumerate() {
            let grs = g[r][s];
            if grs == 0.0 {
                continue;
            }
            for c in 0..dim {
                let pull = grs * (v[c] - w[c]);
                field[r][c] += p * pull;
                if r != s {
                    relax[c] += pull;
                }
            }
        }
        for c in 0..dim {
            field[s][c] -= lambda * p * relax[c];
        }
    }
    Ok(field)
}

/// Central-difference gradient of the potential, partition re-evaluated at
/// every probe point.
pub fn potential_gradient_fd(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    let (points, probs) = stimuli.atoms()?;
    let g = kernel_matrix(state.topology(), kernel);
    let mut probe = state.clone();
    let mut grad = vec![vec![0.0; state.dim()]; state.len()];
    for r in 0..state.len() {
        for c in 0..state.dim() {
            let x = state.weight(r)[c];
            probe.set_component(r, c, x + h)?;
            let (plus, _) = potential_with(&probe, points, probs, &g)?;
            probe.set_component(r, c, x - h)?;
            let (minus, _) = potential_with(&probe, points, probs, &g)?;
            probe.set_component(r, c, x)?;
            grad[r][c] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Largest componentwise deviation, relative to the largest component of
/// `reference`.
pub fn max_relative_error(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let scale = reference
        .iter()
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let worst = candidate
        .iter()
        .flatten()
        .zip(reference.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

/// Compares `-∇V` (central differences, step `h`) with the expected
/// generalized step at the given λ.
pub fn gradient_check_lambda(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
    lambda: f64,
    h: f64,
) -> Result<f64> {
    let (points, _) = stimuli.atoms()?;
    let partition = voronoi_partition(state, points)?;
    let required = MARGIN_FACTOR * h;
    if !(partition.boundary_margin > required) {
        return Err(Error::BorderCrossing {
            margin: partition.boundary_margin,
            required,
        });
    }
    let grad = potential_gradient_fd(state, stimuli, kernel, h)?;
    let descent: Vec<Vec<f64>> = grad
        .iter()
        .map(|g| g.iter().map(|x| -x).collect())
        .collect();
    let field = expected_gwrk_step(state, stimuli, kernel, lambda)?;
    Ok(max_relative_error(&descent, &field))
}

/// Gradient check against the winner-relaxing step (λ = 1/2).
pub fn gradient_check(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
) -> Result<f64> {
    gradient_check_lambda(state, stimuli, kernel, 0.5, FD_STEP)
}

/// Small-κ limit of the potential on a ring with one neuron per city:
///
/// `1/2 Σ_μ p_μ |v^μ - w_{s(μ)}|^2 + κ Σ_r p̄_r |w_{r+1} - w_r|^2`
///
/// with `p̄_r` the mean probability of the cities won by `r` and `r+1`. For
/// equally weighted cities this is the classical expression scaled by the
/// city probability `1/N`, which keeps it on the same footing as
/// [`wrk_potential`].
pub fn tsp_limit_energy(
    state: &NetworkState,
    cities: &StimulusDistribution,
    kappa: f64,
) -> Result<f64> {
    let topo = state.topology();
    if !(topo.is_1d() && topo.periodic()[0]) {
        return Err(Error::Unsupported(
            "the TSP limit needs a periodic 1-D chain",
        ));
    }
    let (points, probs) = cities.atoms()?;
    let n = state.len();
    if points.len() != n {
        return Err(Error::CountMismatch {
            neurons: n,
            cities: points.len(),
        });
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            reason: format!("must be non-negative, got {kappa}"),
        });
    }
    let partition = voronoi_partition(state, points)?;
    let mut owner = vec![None; n];
    for (mu, &s) in partition.assignment.iter().enumerate() {
        if owner[s].is_some() {
            let wins = partition.assignment.iter().filter(|&&x| x == s).count();
            return Err(Error::NotBijective { neuron: s, wins });
        }
        owner[s] = Some(mu);
    }
    let owner: Vec<usize> = owner
        .into_iter()
        .map(|o| o.expect("bijection checked"))
        .collect();

    let fit: f64 = points
        .iter()
        .zip(probs)
        .zip(&partition.assignment)
        .map(|((v, p), &s)| p * squared_distance(v, state.weight(s)))
        .sum();
    let tension: f64 = (0..n)
        .map(|r| {
            let next = (r + 1) % n;
            0.5 * (probs[owner[r]] + probs[owner[next]])
                * squared_distance(state.weight(next), state.weight(r))
        })
        .sum();
    Ok(0.5 * fit + kappa * tension)
}

/// Result of sweeping one weight across a Voronoi border.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscontinuityWitness {
    /// Sweep parameter at which the assignment changes.
    pub border_at: f64,
    pub left_derivative: f64,
    pub right_derivative: f64,
    /// Largest deviation of the one-sided differences from the analytic
    /// directional derivative on their own side of the border.
    pub smooth_error: f64,
    pub value_jump: f64,
}

impl DiscontinuityWitness {
    pub fn derivative_jump(&self) -> f64 {
        (self.right_derivative - self.left_derivative).abs()
    }
}

/// Moves `w_neuron` along `direction` from its current position until the
/// Voronoi assignment first changes (searching `t ∈ (0, t_max]`), then
/// compares one-sided difference quotients of `V` on either side.
pub fn discontinuity_witness(
    state: &NetworkState,
    stimuli: &StimulusDistribution,
    kernel: &NeighborhoodKernel,
    neuron: usize,
    direction: &[f64],
    t_max: f64,
    h: f64,
) -> Result<DiscontinuityWitness> {
    let (points, probs) = stimuli.atoms()?;
    if direction.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: direction.len(),
        });
    }
    if neuron >= state.len() {
        return Err(Error::IndexOutOfRange {
            index: neuron,
            len: state.len(),
        });
    }
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter {
            name: "direction",
            reason: "must be nonzero".into(),
        });
    }
    let unit: Vec<f64> = direction.iter().map(|x| x / norm).collect();
    let g = kernel_matrix(state.topology(), kernel);
    let origin = state.weight(neuron).to_vec();
    let at = |t: f64| -> Result<NetworkState> {
        let mut s = state.clone();
        for c in 0..unit.len() {
            s.set_component(neuron, c, origin[c] + t * unit[c])?;
        }
        Ok(s)
    };
    let assignment =
        |t: f64| -> Result<Vec<usize>> { Ok(voronoi_partition(&at(t)?, points)?.assignment) };
    let eval = |t: f64| -> Result<f64> { Ok(potential_with(&at(t)?, points, probs, &g)?.0) };

    let start = assignment(0.0)?;
    let scan = 1000;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=scan {
        let t = t_max * i as f64 / scan as f64;
        if assignment(t)? != start {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi.ok_or(Error::NoBorderFound(t_max))?;
    let left_side = assignment(lo)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if assignment(mid)? == left_side {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let right_side = assignment(hi)?;
    if lo - h < 0.0 || assignment(lo - h)? != left_side || assignment(hi + h)? != right_side {
        return Err(Error::BorderCrossing {
            margin: hi - lo,
            required: h,
        });
    }

    let left_derivative = (eval(lo)? - eval(lo - h)?) / h;
    let right_derivative = (eval(hi + h)? - eval(hi)?) / h;

    // analytic derivative with the assignment frozen on each side
    let directional = |t: f64| -> Result<f64> {
        let s = at(t)?;
        let field = expected_gwrk_step(&s, stimuli, kernel, 0.0)?;
        Ok(-field[neuron]
            .iter()
            .zip(&unit)
            .map(|(f, u)| f * u)
            .sum::<f64>())
    };
    let smooth_error = (left_derivative - directional(lo - 0.5 * h)?)
        .abs()
        .max((right_derivative - directional(hi + 0.5 * h)?).abs());

    Ok(DiscontinuityWitness {
        border_at: 0.5 * (lo + hi),
        left_derivative,
        right_derivative,
        smooth_error,
        value_jump: eval(hi)? - eval(lo)?,
    })
}

/// End-phase weights on a ring for given city order: the stationary point
/// of the expected Kohonen step with neuron `r` owning city `r`,
/// `w_r = Σ_μ g(r,μ) p_μ v^μ / Σ_μ g(r,μ) p_μ`.
pub fn relaxed_ring_weights(cities: &StimulusDistribution, kappa: f64) -> Result<NetworkState> {
    let (points, probs) = cities.atoms()?;
    let n = points.len();
    let topo = LatticeTopology::ring(n)?;
    let kernel = NeighborhoodKernel::from_kappa(kappa, KernelMode::ExactGaussian)?;
    let dim = points[0].len();
    let weights = (0..n)
        .map(|r| {
            let mut num = vec![0.0; dim];
            let mut den = 0.0;
            for (mu, (v, &p)) in points.iter().zip(probs).enumerate() {
                let g = kernel.value_sq(topo.distance_sq(r, mu).expect("in range")) * p;
                den += g;
                for c in 0..dim {
                    num[c] += g * v[c];
                }
            }
            num.into_iter().map(|x| x / den).collect()
        })
        .collect();
    NetworkState::new(topo, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaScaling {
    pub kappas: Vec<f64>,
    pub wrk_values: Vec<f64>,
    pub tsp_values: Vec<f64>,
    /// `|V_WRK - V_TSP|` per κ.
    pub errors: Vec<f64>,
    /// Log-log fit of error against κ; the slope is the scaling exponent.
    pub fit: ExponentFit,
}

/// Truncation error of the TSP limit at the relaxed ring weights for each κ.
pub fn kappa_scaling(cities: &StimulusDistribution, kappas: &[f64]) -> Result<KappaScaling> {
    let mut out = KappaScaling {
        kappas: kappas.to_vec(),
        wrk_values: vec![],
        tsp_values: vec![],
        errors: vec![],
        fit: ExponentFit {
            slope: 0.0,
            intercept: 0.0,
            r_squared: 0.0,
            stderr: 0.0,
            points_used: 0,
        },
    };
    for &kappa in kappas {
        let state = relaxed_ring_weights(cities, kappa)?;
        let kernel = NeighborhoodKernel::from_kappa(kappa, KernelMode::ExactGaussian)?;
        let wrk = wrk_potential(&state, cities, &kernel)?.value;
        let tsp = tsp_limit_energy(&state, cities, kappa)?;
        out.wrk_values.push(wrk);
        out.tsp_values.push(tsp);
        out.errors.push((wrk - tsp).abs());
    }
    let xs: Vec<f64> = kappas.iter().map(|k| k.ln()).collect();
    let ys: Vec<f64> = out.errors.iter().map(|e| e.ln()).collect();
    out.fit = least_squares(&xs, &ys)?;
    Ok(out)
}
