//! Lattice geometry, the Gaussian neighborhood kernel and winner search.
//!
//! Lattice nodes are addressed by a flattened index. For a 2-D lattice of
//! sizes `[n0, n1]` the node at coordinates `(c0, c1)` has index
//! `c0 + n0 * c1`. Distances are Euclidean on the integer grid, with the
//! minimum-image convention along periodic dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation radius of the κ-lookup kernel.
pub const DEFAULT_TRUNCATION_RADIUS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeTopology {
    sizes: Vec<usize>,
    periodic: Vec<bool>,
}

impl LatticeTopology {
    pub fn new(sizes: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() > 2 {
            return Err(Error::InvalidParameter {
                name: "sizes",
                reason: format!("lattice must be 1-D or 2-D, got {} dimensions", sizes.len()),
            });
        }
        if periodic.len() != sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: sizes.len(),
                found: periodic.len(),
            });
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "sizes",
                reason: "every lattice dimension needs at least one node".into(),
            });
        }
        Ok(Self { sizes, periodic })
    }

    /// Open 1-D chain.
    pub fn chain(n: usize) -> Result<Self> {
        Self::new(vec![n], vec![false])
    }

    /// Periodic 1-D chain.
    pub fn ring(n: usize) -> Result<Self> {
        Self::new(vec![n], vec![true])
    }

    pub fn grid(n0: usize, n1: usize, periodic: bool) -> Result<Self> {
        Self::new(vec![n0, n1], vec![periodic, periodic])
    }

    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_1d(&self) -> bool {
        self.sizes.len() == 1
    }

    fn check(&self, index: usize) -> Result<()> {
        let len = self.len();
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
        Ok(())
    }

    pub fn coords(&self, index: usize) -> Result<[usize; 2]> {
        self.check(index)?;
        Ok(self.coords_unchecked(index))
    }

    fn coords_unchecked(&self, index: usize) -> [usize; 2] {
        match self.sizes.len() {
            1 => [index, 0],
            _ => [index % self.sizes[0], index / self.sizes[0]],
        }
    }

    pub fn index_of(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: coords.len(),
            });
        }
        let mut index = 0;
        let mut stride = 1;
        for (&c, &n) in coords.iter().zip(&self.sizes) {
            if c >= n {
                return Err(Error::IndexOutOfRange { index: c, len: n });
            }
            index += c * stride;
            stride *= n;
        }
        Ok(index)
    }

    fn axis_offset(&self, axis: usize, a: usize, b: usize) -> u64 {
        let d = a.abs_diff(b);
        if self.periodic[axis] {
            d.min(self.sizes[axis] - d) as u64
        } else {
            d as u64
        }
    }

    /// Squared grid distance; always an integer.
    pub fn distance_sq(&self, r: usize, s: usize) -> Result<u64> {
        self.check(r)?;
        self.check(s)?;
        Ok(self.distance_sq_unchecked(r, s))
    }

    pub(crate) fn distance_sq_unchecked(&self, r: usize, s: usize) -> u64 {
        let (cr, cs) = (self.coords_unchecked(r), self.coords_unchecked(s));
        (0..self.dims())
            .map(|axis| {
                let d = self.axis_offset(axis, cr[axis], cs[axis]);
                d * d
            })
            .sum()
    }

    /// Lattice nodes whose squared distance to `s` is at most `radius²`,
    /// each reported once together with that squared distance.
    pub(crate) fn ball(&self, s: usize, radius: u32) -> Vec<(usize, u64)> {
        let center = self.coords_unchecked(s);
        let axis_candidates = |axis: usize| -> Vec<(usize, u64)> {
            let n = self.sizes[axis];
            let c = center[axis];
            let r = radius as usize;
            if self.periodic[axis] {
                if 2 * r + 1 >= n {
                    (0..n).map(|x| (x, self.axis_offset(axis, x, c))).collect()
                } else {
                    (0..=2 * r)
                        .map(|k| {
                            let x = (c + n - r + k) % n;
                            (x, self.axis_offset(axis, x, c))
                        })
                        .collect()
                }
            } else {
                let lo = c.saturating_sub(r);
                let hi = (c + r).min(n - 1);
                (lo..=hi).map(|x| (x, c.abs_diff(x) as u64)).collect()
            }
        };
        let limit = (radius as u64) * (radius as u64);
        let first = axis_candidates(0);
        if self.dims() == 1 {
            return first
                .into_iter()
                .filter(|&(_, d)| d * d <= limit)
                .map(|(x, d)| (x, d * d))
                .collect();
        }
        let second = axis_candidates(1);
        let mut out = Vec::new();
        for &(y, dy) in &second {
            for &(x, dx) in &first {
                let d2 = dx * dx + dy * dy;
                if d2 <= limit {
                    out.push((x + self.sizes[0] * y, d2));
                }
            }
        }
        out
    }
}

/// Euclidean lattice distance between two nodes.
pub fn lattice_distance(topology: &LatticeTopology, r: usize, s: usize) -> Result<f64> {
    Ok((topology.distance_sq(r, s)? as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    ExactGaussian,
    KappaLookup { truncation_radius: u32 },
}

/// Gaussian neighborhood kernel `g(r,s) = exp(-d(r,s)^2 / (2 γ^2)) = κ^(d^2)`.
///
/// `γ = 0` is accepted and denotes the vector-quantization limit, where the
/// kernel collapses to the Kronecker delta.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodKernel {
    gamma: f64,
    kappa: f64,
    mode: KernelMode,
    // table[k] = g at squared distance k, for k <= truncation_radius^2
    table: Vec<f64>,
}

impl NeighborhoodKernel {
    pub fn exact(gamma: f64) -> Result<Self> {
        Self::new(gamma, KernelMode::ExactGaussian)
    }

    pub fn lookup(gamma: f64, truncation_radius: u32) -> Result<Self> {
        Self::new(gamma, KernelMode::KappaLookup { truncation_radius })
    }

    pub fn new(gamma: f64, mode: KernelMode) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("kernel width must be finite and non-negative, got {gamma}"),
            });
        }
        let kappa = if gamma == 0.0 {
            0.0
        } else {
            (-1.0 / (2.0 * gamma * gamma)).exp()
        };
        let table = match mode {
            KernelMode::ExactGaussian => Vec::new(),
            KernelMode::KappaLookup { truncation_radius } => {
                let r2 = (truncation_radius as u64).pow(2);
                (0..=r2).map(|d2| gaussian(gamma, d2)).collect()
            }
        };
        Ok(Self {
            gamma,
            kappa,
            mode,
            table,
        })
    }

    /// Kernel with a given nearest-neighbor coupling `κ ∈ [0, 1)`.
    pub fn from_kappa(kappa: f64, mode: KernelMode) -> Result<Self> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: format!("must lie in [0, 1), got {kappa}"),
            });
        }
        let gamma = if kappa == 0.0 {
            0.0
        } else {
            (-1.0 / (2.0 * kappa.ln())).sqrt()
        };
        Self::new(gamma, mode)
    }

    /// Winner-only kernel (vector quantization).
    pub fn delta() -> Self {
        Self::new(0.0, KernelMode::ExactGaussian).expect("zero width is valid")
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    /// The same width evaluated without truncation.
    pub fn to_exact(&self) -> Self {
        Self::new(self.gamma, KernelMode::ExactGaussian).expect("width already validated")
    }

    /// Kernel value for a squared lattice distance.
    pub fn value_sq(&self, d2: u64) -> f64 {
        match self.mode {
            KernelMode::ExactGaussian => gaussian(self.gamma, d2),
            KernelMode::KappaLookup { .. } => self.table.get(d2 as usize).copied().unwrap_or(0.0),
        }
    }

    /// Nodes with nonzero coupling to `s`, with their kernel values.
    pub fn support(&self, topology: &LatticeTopology, s: usize) -> Vec<(usize, f64)> {
        let radius = match self.mode {
            _ if self.gamma == 0.0 => 0,
            KernelMode::KappaLookup { truncation_radius } => truncation_radius,
            KernelMode::ExactGaussian => {
                return (0..topology.len())
                    .map(|r| (r, self.value_sq(topology.distance_sq_unchecked(r, s))))
                    .filter(|&(_, g)| g > 0.0)
                    .collect();
            }
        };
        topology
            .ball(s, radius)
            .into_iter()
            .map(|(r, d2)| (r, self.value_sq(d2)))
            .filter(|&(_, g)| g > 0.0)
            .collect()
    }
}

fn gaussian(gamma: f64, d2: u64) -> f64 {
    if d2 == 0 {
        1.0
    } else if gamma == 0.0 {
        0.0
    } else {
        (-(d2 as f64) / (2.0 * gamma * gamma)).exp()
    }
}

/// `g(r, s)` on the given lattice.
pub fn kernel_value(
    kernel: &NeighborhoodKernel,
    topology: &LatticeTopology,
    r: usize,
    s: usize,
) -> Result<f64> {
    Ok(kernel.value_sq(topology.distance_sq(r, s)?))
}

/// Weight vectors attached to the nodes of a lattice, plus the number of
/// learning steps applied so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    topology: LatticeTopology,
    dim: usize,
    weights: Vec<Vec<f64>>,
    step: u64,
}

impl NetworkState {
    pub fn new(topology: LatticeTopology, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != topology.len() {
            return Err(Error::DimensionMismatch {
                expected: topology.len(),
                found: weights.len(),
            });
        }
        let dim = weights[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "input dimension must be positive".into(),
            });
        }
        for w in &weights {
            if w.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: w.len(),
                });
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "weights",
                    reason: "weights must be finite".into(),
                });
            }
        }
        Ok(Self {
            topology,
            dim,
            weights,
            step: 0,
        })
    }

    /// 1-D chain with scalar weights.
    pub fn from_scalars(topology: LatticeTopology, values: &[f64]) -> Result<Self> {
        Self::new(topology, values.iter().map(|&x| vec![x]).collect())
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    pub fn topology(&self) -> &LatticeTopology {
        &self.topology
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weight(&self, r: usize) -> &[f64] {
        &self.weights[r]
    }

    /// First component of every weight vector.
    pub fn scalars(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w[0]).collect()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub(crate) fn advance(&mut self) {
        self.step += 1;
    }

    /// Replace a single weight component, keeping everything else.
    pub fn set_component(&mut self, r: usize, component: usize, value: f64) -> Result<()> {
        if r >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: r,
                len: self.len(),
            });
        }
        if component >= self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: component + 1,
            });
        }
        self.weights[r][component] = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|x| x.is_finite())
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the weight nearest to `v`; ties go to the smallest index.
pub fn find_winner(state: &NetworkState, v: &[f64]) -> Result<usize> {
    if v.len() != state.dim {
        return Err(Error::DimensionMismatch {
            expected: state.dim,
            found: v.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (r, w) in state.weights.iter().enumerate() {
        let d = squared_distance(v, w);
        if d < best_d {
            best = r;
            best_d = d;
        }
    }
    Ok(best)
}
