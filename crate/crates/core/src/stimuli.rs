//! Input densities `p(v)` and seeded samplers.
//!
//! Continuous distributions are products of identical-or-distinct 1-D
//! marginals; each marginal is sampled by inverse-CDF transform. Discrete
//! distributions carry an explicit set of stimulus vectors with
//! probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marginal {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `p(v) ∝ v^a` on `[lo, hi]`, `lo > 0`, `a > -1`.
    PowerLaw {
        a: f64,
        lo: f64,
        hi: f64,
    },
    /// Probability mass `masses[i]` spread evenly over `[breaks[i], breaks[i+1]]`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        masses: Vec<f64>,
    },
}

impl Marginal {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        Ok(Marginal::Uniform { lo, hi })
    }

    pub fn power_law(a: f64, lo: f64, hi: f64) -> Result<Self> {
        check_interval(lo, hi)?;
        if !(lo > 0.0) {
            return Err(invalid(
                "lo",
                format!("power-law support must start above zero, got {lo}"),
            ));
        }
        if !(a.is_finite() && a > -1.0) {
            return Err(invalid(
                "a",
                format!("power-law exponent must exceed -1, got {a}"),
            ));
        }
        Ok(Marginal::PowerLaw { a, lo, hi })
    }

    pub fn piecewise_constant(breaks: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 || masses.len() + 1 != breaks.len() {
            return Err(invalid(
                "masses",
                format!(
                    "need one mass per interval: {} breaks, {} masses",
                    breaks.len(),
                    masses.len()
                ),
            ));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid(
                "breaks",
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid(
                "masses",
                "masses must be finite and non-negative".into(),
            ));
        }
        let masses = normalize(masses, "masses")?;
        Ok(Marginal::PiecewiseConstant { breaks, masses })
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Marginal::Uniform { lo, hi } | Marginal::PowerLaw { lo, hi, .. } => (*lo, *hi),
            Marginal::PiecewiseConstant { breaks, .. } => (breaks[0], breaks[breaks.len() - 1]),
        }
    }

    pub fn density(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(v >= lo && v <= hi) {
            return 0.0;
        }
        match *self {
            Marginal::Uniform { lo, hi } => 1.0 / (hi - lo),
            Marginal::PowerLaw { a, lo, hi } => {
                let b = a + 1.0;
                b * v.powf(a) / (hi.powf(b) - lo.powf(b))
            }
            Marginal::PiecewiseConstant {
                ref breaks,
                ref masses,
            } => {
                let i = interval_of(breaks, v);
                masses[i] / (breaks[i + 1] - breaks[i])
            }
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v <= lo {
            return 0.0;
        }
        if v >= hi {
            return 1.0;
        }
        match *self {
            Marginal::Uniform { lo, hi } => (v - lo) / (hi - lo),
            Marginal::PowerLaw { a, lo, hi } => {
                let b = a + 1.0;
                (v.powf(b) - lo.powf(b)) / (hi.powf(b) - lo.powf(b))
            }
            Marginal::PiecewiseConstant {
                ref breaks,
                ref masses,
            } => {
                let i = interval_of(breaks, v);
                let below: f64 = masses[..i].iter().sum();
                below + masses[i] * (v - breaks[i]) / (breaks[i + 1] - breaks[i])
            }
        }
    }

    pub fn inverse_cdf(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(invalid(
                "q",
                format!("quantile must lie in [0, 1], got {q}"),
            ));
        }
        Ok(self.quantile(q))
    }

    fn quantile(&self, q: f64) -> f64 {
        let (lo, hi) = self.support();
        if q <= 0.0 {
            return lo;
        }
        if q >= 1.0 {
            return hi;
        }
        match *self {
            Marginal::Uniform { lo, hi } => lo + q * (hi - lo),
            Marginal::PowerLaw { a, lo, hi } => {
                let b = a + 1.0;
                let (l, h) = (lo.powf(b), hi.powf(b));
                (l + q * (h - l)).powf(1.0 / b).clamp(lo, hi)
            }
            Marginal::PiecewiseConstant {
                ref breaks,
                ref masses,
            } => {
                let mut below = 0.0;
                for (i, &m) in masses.iter().enumerate() {
                    let last = i + 1 == masses.len();
                    if m > 0.0 && (q <= below + m || last) {
                        let frac = ((q - below) / m).clamp(0.0, 1.0);
                        return breaks[i] + frac * (breaks[i + 1] - breaks[i]);
                    }
                    below += m;
                }
                hi
            }
        }
    }
}

fn interval_of(breaks: &[f64], v: f64) -> usize {
    // index i with breaks[i] <= v < breaks[i+1], the last interval closed
    let n = breaks.len() - 1;
    breaks[1..n].partition_point(|&b| b <= v)
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(invalid(
            "hi",
            format!("support needs finite lo < hi, got [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

fn normalize(mut values: Vec<f64>, name: &'static str) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(invalid(name, "total weight must be positive".into()));
    }
    values.iter_mut().for_each(|x| *x /= total);
    let check: f64 = values.iter().sum();
    if (check - 1.0).abs() > NORMALIZATION_TOL {
        return Err(invalid(name, format!("normalization drifted to {check}")));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StimulusDistribution {
    /// Product of independent 1-D marginals, one per input component.
    Continuous(Vec<Marginal>),
    Discrete {
        points: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

impl StimulusDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Ok(Self::Continuous(vec![Marginal::uniform(lo, hi)?]))
    }

    pub fn power_law(a: f64, lo: f64, hi: f64) -> Result<Self> {
        Ok(Self::Continuous(vec![Marginal::power_law(a, lo, hi)?]))
    }

    pub fn piecewise_constant(breaks: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        Ok(Self::Continuous(vec![Marginal::piecewise_constant(
            breaks, masses,
        )?]))
    }

    pub fn product(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(invalid("dimension", "need at least one marginal".into()));
        }
        Ok(Self::Continuous(marginals))
    }

    pub fn discrete(points: Vec<Vec<f64>>, probabilities: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != probabilities.len() {
            return Err(invalid(
                "probabilities",
                format!(
                    "{} points but {} probabilities",
                    points.len(),
                    probabilities.len()
                ),
            ));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(invalid(
                "points",
                "stimulus vectors must have at least one component".into(),
            ));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(invalid(
                    "points",
                    "stimulus components must be finite".into(),
                ));
            }
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(invalid(
                "probabilities",
                "every probability must be positive".into(),
            ));
        }
        let probabilities = normalize(probabilities, "probabilities")?;
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self::Discrete {
            points,
            probabilities,
            cumulative,
        })
    }

    /// Equally weighted discrete stimuli.
    pub fn discrete_uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::discrete(points, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Continuous(m) => m.len(),
            Self::Discrete { points, .. } => points[0].len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete { .. })
    }

    /// Axis-aligned bounding box of the support.
    pub fn support_box(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Continuous(m) => m.iter().map(Marginal::support).collect(),
            Self::Discrete { points, .. } => (0..self.dim())
                .map(|k| {
                    points
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                            (lo.min(p[k]), hi.max(p[k]))
                        })
                })
                .collect(),
        }
    }

    /// Stimulus vectors and probabilities of a discrete distribution.
    pub fn atoms(&self) -> Result<(&[Vec<f64>], &[f64])> {
        match self {
            Self::Discrete {
                points,
                probabilities,
                ..
            } => Ok((points, probabilities)),
            Self::Continuous(_) => Err(Error::Unsupported(
                "operation requires a discrete stimulus set",
            )),
        }
    }

    fn marginal_1d(&self) -> Result<&Marginal> {
        match self {
            Self::Continuous(m) if m.len() == 1 => Ok(&m[0]),
            Self::Continuous(_) => Err(Error::Unsupported(
                "inverse CDF is defined for 1-D densities only",
            )),
            Self::Discrete { .. } => {
                Err(Error::Unsupported("inverse CDF of a discrete distribution"))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Continuous(marginals) => marginals
                .iter()
                .map(|m| m.quantile(rng.random::<f64>()))
                .collect(),
            Self::Discrete {
                points, cumulative, ..
            } => {
                let u: f64 = rng.random();
                let i = cumulative
                    .partition_point(|&c| c <= u)
                    .min(points.len() - 1);
                points[i].clone()
            }
        }
    }

    pub fn density_at(&self, v: &[f64]) -> Result<f64> {
        match self {
            Self::Continuous(marginals) => {
                if v.len() != marginals.len() {
                    return Err(Error::DimensionMismatch {
                        expected: marginals.len(),
                        found: v.len(),
                    });
                }
                Ok(marginals
                    .iter()
                    .zip(v)
                    .map(|(m, &x)| m.density(x))
                    .product())
            }
            Self::Discrete { .. } => Err(Error::Unsupported("density of a discrete distribution")),
        }
    }

    pub fn cdf(&self, v: f64) -> Result<f64> {
        Ok(self.marginal_1d()?.cdf(v))
    }

    pub fn inverse_cdf(&self, q: f64) -> Result<f64> {
        self.marginal_1d()?.inverse_cdf(q)
    }
}

/// Free-function form of [`StimulusDistribution::sample`].
pub fn sample<R: Rng + ?Sized>(dist: &StimulusDistribution, rng: &mut R) -> Vec<f64> {
    dist.sample(rng)
}

pub fn density_at(dist: &StimulusDistribution, v: &[f64]) -> Result<f64> {
    dist.density_at(v)
}

pub fn inverse_cdf(dist: &StimulusDistribution, q: f64) -> Result<f64> {
    dist.inverse_cdf(q)
}
