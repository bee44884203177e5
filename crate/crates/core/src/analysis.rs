//! Magnification-exponent estimation, ordering diagnostics and the
//! winner-firing entropy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::StimulusDistribution;
use crate::topology::{find_winner, NetworkState};

/// Ordinary least-squares fit of `ln M_r` against `ln p(w_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub stderr: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub is_ordered: bool,
    pub defects: usize,
    pub first_ordered_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringHistogram {
    pub counts: Vec<u64>,
    /// Shannon entropy of the empirical winner distribution, in nats.
    pub entropy: f64,
}

/// Default number of neurons trimmed from each end before fitting.
pub fn default_trim(n: usize) -> usize {
    (n / 10).max(2)
}

/// `2 / (3 + λ)`, the magnification exponent of the generalized rule.
pub fn theoretical_exponent(lambda: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&lambda) {
        return Err(Error::UnstableLambda(lambda));
    }
    Ok(2.0 / (3.0 + lambda))
}

/// Simple linear regression `y = intercept + slope * x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<ExponentFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: ys.len(),
        });
    }
    if n < 3 {
        return Err(Error::InsufficientPoints { used: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 1e-24 * nf * (1.0 + mx * mx)) {
        return Err(Error::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (ssr / (nf - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(ExponentFit {
        slope,
        intercept,
        r_squared,
        stderr,
        points_used: n,
    })
}

fn strictly_monotone(w: &[f64]) -> bool {
    w.windows(2).all(|p| p[1] > p[0]) || w.windows(2).all(|p| p[1] < p[0])
}

/// Log-log magnification fit for a 1-D weight sequence under `density`.
///
/// Interior neurons `trim..n-trim` contribute `M_r = 2 / |w_{r+1} - w_{r-1}|`
/// regressed on `p(w_r)`. Neurons where the density vanishes are skipped.
/// The weights must be strictly monotone over the fitted neurons and their
/// stencil neighbors; folds among the trimmed end neurons are tolerated.
pub fn magnification_fit(
    weights: &[f64],
    density: impl Fn(f64) -> f64,
    trim: usize,
) -> Result<ExponentFit> {
    if trim == 0 {
        return Err(Error::InvalidParameter {
            name: "trim",
            reason: "at least one neuron must be trimmed per end".into(),
        });
    }
    let n = weights.len();
    if n < 2 * trim + 3 {
        return Err(Error::InsufficientPoints {
            used: n.saturating_sub(2 * trim),
        });
    }
    let window = &weights[trim - 1..=n - trim];
    if !strictly_monotone(window) {
        return Err(Error::TopologicalDefect {
            defects: count_defects(window).max(1),
        });
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in trim..n.saturating_sub(trim) {
        let p = density(weights[r]);
        if p > 0.0 {
            xs.push(p.ln());
            ys.push((2.0 / (weights[r + 1] - weights[r - 1]).abs()).ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientPoints { used: xs.len() });
    }
    least_squares(&xs, &ys)
}

pub fn estimate_exponent(
    state: &NetworkState,
    dist: &StimulusDistribution,
    trim: usize,
) -> Result<ExponentFit> {
    require_chain(state)?;
    if dist.is_discrete() {
        return Err(Error::Unsupported(
            "magnification needs a continuous density",
        ));
    }
    if dist.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: dist.dim(),
        });
    }
    let w = state.scalars();
    magnification_fit(&w, |v| dist.density_at(&[v]).unwrap_or(0.0), trim)
}

fn require_chain(state: &NetworkState) -> Result<()> {
    if !state.topology().is_1d() {
        return Err(Error::Unsupported(
            "analysis is defined for 1-D chains only",
        ));
    }
    if state.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: state.dim(),
        });
    }
    Ok(())
}

/// Number of sign changes between consecutive differences.
pub fn count_defects(w: &[f64]) -> usize {
    let signs: Vec<bool> = w
        .windows(2)
        .map(|p| p[1] - p[0])
        .filter(|d| *d != 0.0)
        .map(|d| d > 0.0)
        .collect();
    signs.windows(2).filter(|s| s[0] != s[1]).count()
}

pub fn ordering_report(state: &NetworkState) -> Result<OrderingReport> {
    require_chain(state)?;
    let defects = count_defects(&state.scalars());
    let is_ordered = defects == 0;
    Ok(OrderingReport {
        is_ordered,
        defects,
        first_ordered_step: is_ordered.then_some(state.step()),
    })
}

/// Step of the first snapshot with no defects.
pub fn ordering_time(snapshots: &[NetworkState]) -> Result<Option<u64>> {
    for s in snapshots {
        if ordering_report(s)?.is_ordered {
            return Ok(Some(s.step()));
        }
    }
    Ok(None)
}

pub fn entropy_nats(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// Winner histogram over `probes` draws and its plug-in entropy.
pub fn firing_entropy<R: Rng + ?Sized>(
    state: &NetworkState,
    dist: &StimulusDistribution,
    probes: usize,
    rng: &mut R,
) -> Result<FiringHistogram> {
    if probes < 10 * state.len() {
        return Err(Error::InvalidParameter {
            name: "probes",
            reason: format!(
                "need at least 10 probes per neuron ({}), got {probes}",
                10 * state.len()
            ),
        });
    }
    if dist.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: dist.dim(),
        });
    }
    let mut counts = vec![0u64; state.len()];
    for _ in 0..probes {
        let v = dist.sample(rng);
        counts[find_winner(state, &v)?] += 1;
    }
    let entropy = entropy_nats(&counts);
    Ok(FiringHistogram { counts, entropy })
}
