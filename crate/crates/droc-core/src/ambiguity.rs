//! The moment ambiguity set: all parameter distributions on an interval with
//! a prescribed mean and variance, represented through finite scenario
//! supports, moment LP data, and density discretization with first-order
//! moment-error bounds.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mean/variance description of the uncertain parameter on `[p_lower, p_upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguitySpec {
    /// Support lower bound.
    pub p_lower: f64,
    /// Support upper bound.
    pub p_upper: f64,
    /// Prescribed mean of the parameter.
    pub mu: f64,
    /// Prescribed standard deviation of the parameter.
    pub sigma: f64,
}

impl AmbiguitySpec {
    /// Build and validate a spec.
    ///
    /// Requires `p_lower < p_upper`, `sigma >= 0`,
    /// `p_lower <= mu <= p_upper`, and the interval feasibility condition
    /// `(mu - p_lower)(p_upper - mu) >= sigma^2`, which is necessary and
    /// sufficient for a distribution on the interval with these two moments
    /// to exist.
    pub fn new(p_lower: f64, p_upper: f64, mu: f64, sigma: f64) -> Result<Self> {
        let spec = Self {
            p_lower,
            p_upper,
            mu,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_lower", self.p_lower),
            ("p_upper", self.p_upper),
            ("mu", self.mu),
            ("sigma", self.sigma),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "ambiguity field {name} must be finite, got {v}"
                )));
            }
        }
        if !(self.p_lower < self.p_upper) {
            return Err(Error::InvalidData(format!(
                "parameter interval is empty: [{}, {}]",
                self.p_lower, self.p_upper
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidData(format!(
                "standard deviation must be nonnegative, got {}",
                self.sigma
            )));
        }
        if self.mu < self.p_lower || self.mu > self.p_upper {
            return Err(Error::InvalidData(format!(
                "mean {} outside the parameter interval [{}, {}]",
                self.mu, self.p_lower, self.p_upper
            )));
        }
        let slack = (self.mu - self.p_lower) * (self.p_upper - self.mu);
        if self.sigma * self.sigma > slack {
            return Err(Error::InvalidData(format!(
                "no distribution on [{}, {}] has mean {} and variance {:.6e} \
                 (requires variance <= {:.6e})",
                self.p_lower,
                self.p_upper,
                self.mu,
                self.sigma * self.sigma,
                slack
            )));
        }
        Ok(())
    }

    /// Prescribed second moment `mu^2 + sigma^2`.
    pub fn second_moment(&self) -> f64 {
        self.mu * self.mu + self.sigma * self.sigma
    }

    /// Moment right-hand side `b = [1, mu, mu^2 + sigma^2]`.
    pub fn moment_vector(&self) -> [f64; 3] {
        [1.0, self.mu, self.second_moment()]
    }

    /// Interval width.
    pub fn width(&self) -> f64 {
        self.p_upper - self.p_lower
    }
}

/// Finite set of admissible parameter values, sorted strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSupport {
    points: Vec<f64>,
}

impl DiscreteSupport {
    /// Build from sorted, distinct, finite points.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewPoints { need: 1, got: 0 });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidData("support contains a non-finite point".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidData(
                "support points must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The moment column `[1, p, p^2]` of one support point.
pub fn moment_column(p: f64) -> [f64; 3] {
    [1.0, p, p * p]
}

/// Where each cell's representative point sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Uniformly spaced points including both interval endpoints:
    /// `p_i = p_l + (i-1)/(m-1) * (p_u - p_l)`. Needs `m >= 2`.
    Endpoints,
    /// Centers of the `m` equal cells. Works for any `m >= 1`.
    Midpoints,
}

/// Partition `[p_lower, p_upper]` into `m` equal cells and return one
/// representative point per cell.
///
/// With [`Placement::Endpoints`], the first and last points are the interval
/// endpoints exactly. Each representative lies inside its own cell for both
/// modes, which is what the first-order moment bounds rely on.
///
/// Note: a grid with fewer than 3 points can never satisfy a moment pair
/// with `sigma > 0` together with the mean constraint in general; use
/// [`crate::lp::check_feasible_support`] to decide feasibility exactly.
pub fn characteristic_grid(
    spec: &AmbiguitySpec,
    m: usize,
    placement: Placement,
) -> Result<DiscreteSupport> {
    spec.validate()?;
    let (l, u) = (spec.p_lower, spec.p_upper);
    let points = match placement {
        Placement::Endpoints => {
            if m < 2 {
                return Err(Error::TooFewPoints { need: 2, got: m });
            }
            (0..m)
                .map(|i| {
                    if i == 0 {
                        l
                    } else if i == m - 1 {
                        u
                    } else {
                        l + i as f64 / (m - 1) as f64 * (u - l)
                    }
                })
                .collect()
        }
        Placement::Midpoints => {
            if m < 1 {
                return Err(Error::TooFewPoints { need: 1, got: m });
            }
            let width = (u - l) / m as f64;
            (0..m).map(|i| l + (i as f64 + 0.5) * width).collect()
        }
    };
    DiscreteSupport::new(points)
}

/// Data of the inner moment-constrained LP:
/// maximize `costs . q` over `q >= 0` subject to `sum_i q_i columns_i = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentLpData {
    /// Moment right-hand side `[1, mu, mu^2 + sigma^2]`.
    pub b: [f64; 3],
    /// One column `[1, p_i, p_i^2]` per support point.
    pub columns: Vec<[f64; 3]>,
    /// Scenario costs `h_i`.
    pub costs: Vec<f64>,
}

impl MomentLpData {
    /// Number of support points.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Assemble the inner-LP data from a spec, a support, and scenario costs.
pub fn build_moment_lp(
    spec: &AmbiguitySpec,
    support: &DiscreteSupport,
    costs: Vec<f64>,
) -> Result<MomentLpData> {
    spec.validate()?;
    if costs.len() != support.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} support points but {} costs",
            support.len(),
            costs.len()
        )));
    }
    for &p in support.points() {
        if p < spec.p_lower || p > spec.p_upper {
            return Err(Error::OutOfDomain(format!(
                "support point {p} outside [{}, {}]",
                spec.p_lower, spec.p_upper
            )));
        }
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidData("non-finite scenario cost".into()));
    }
    Ok(MomentLpData {
        b: spec.moment_vector(),
        columns: support.points().iter().map(|&p| moment_column(p)).collect(),
        costs,
    })
}

/// Discretize a probability density into cell masses.
///
/// Splits the interval into `m` equal cells, integrates the density over each
/// cell by composite Simpson quadrature with `quad_points` subintervals per
/// cell (rounded up to an even count of at least 2), and renormalizes the
/// masses to sum to one. Returns the characteristic grid of representative
/// points alongside the weights.
pub fn discretize_density(
    spec: &AmbiguitySpec,
    density: &dyn Fn(f64) -> f64,
    m: usize,
    quad_points: usize,
    placement: Placement,
) -> Result<(DiscreteSupport, Vec<f64>)> {
    let support = characteristic_grid(spec, m, placement)?;
    let width = spec.width() / m as f64;
    let n = quad_points.max(2).next_multiple_of(2);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        let a = spec.p_lower + i as f64 * width;
        let b = if i + 1 == m {
            spec.p_upper
        } else {
            spec.p_lower + (i + 1) as f64 * width
        };
        weights.push(simpson_checked(density, a, b, n)?);
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::MassMismatch(total - 1.0));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok((support, weights))
}

/// Absolute first- and second-moment residuals of a weighted support against
/// the spec's prescribed moments:
/// `e1 = |sum w_i p_i - mu|`, `e2 = |sum w_i p_i^2 - (mu^2 + sigma^2)|`.
pub fn moment_discretization_error(
    spec: &AmbiguitySpec,
    support: &DiscreteSupport,
    weights: &[f64],
) -> (f64, f64) {
    debug_assert_eq!(support.len(), weights.len());
    let mut first = 0.0;
    let mut second = 0.0;
    for (&p, &w) in support.points().iter().zip(weights) {
        first += w * p;
        second += w * p * p;
    }
    ((first - spec.mu).abs(), (second - spec.second_moment()).abs())
}

/// Composite Simpson quadrature over `n` (even) subintervals, rejecting
/// negative density samples.
fn simpson_checked(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<f64> {
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = if i == n { b } else { a + i as f64 * h };
        let v = f(x);
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidDensity(format!(
                "density evaluated to {v} at p = {x}"
            )));
        }
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * v;
    }
    Ok(acc * h / 3.0)
}

/// Density families accepted by the configuration layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Density {
    /// Constant density `1 / (p_upper - p_lower)`.
    Uniform,
    /// Normal density with the given parameters, renormalized over the
    /// parameter interval (truncated normal).
    Truncnorm { mean: f64, sigma: f64 },
    /// Piecewise-linear density through `(p, value)` sample points covering
    /// the whole parameter interval. Not renormalized: the user-provided
    /// table must integrate to about 1 over the interval.
    Table { points: Vec<(f64, f64)> },
}

impl Density {
    /// Build a callable evaluator on the spec's interval.
    pub fn evaluator(&self, spec: &AmbiguitySpec) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let (l, u) = (spec.p_lower, spec.p_upper);
        match self {
            Density::Uniform => {
                let inv = 1.0 / (u - l);
                Ok(Box::new(move |_| inv))
            }
            Density::Truncnorm { mean, sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidDensity(format!(
                        "truncated normal needs sigma > 0, got {sigma}"
                    )));
                }
                let (mean, sigma) = (*mean, *sigma);
                let bell = move |p: f64| (-0.5 * ((p - mean) / sigma).powi(2)).exp();
                let mass = simpson_checked(&bell, l, u, 4096)?;
                if mass <= f64::MIN_POSITIVE.sqrt() {
                    return Err(Error::InvalidDensity(format!(
                        "truncated normal carries no mass on [{l}, {u}]"
                    )));
                }
                Ok(Box::new(move |p| bell(p) / mass))
            }
            Density::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidDensity(
                        "density table needs at least two points".into(),
                    ));
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::InvalidDensity(
                        "density table abscissae must be strictly increasing".into(),
                    ));
                }
                if let Some(&(p, v)) = points.iter().find(|&&(_, v)| !(v >= 0.0) || !v.is_finite())
                {
                    return Err(Error::InvalidDensity(format!(
                        "density table value {v} at p = {p} is negative or non-finite"
                    )));
                }
                let eps = 1e-12 * (u - l).abs().max(1.0);
                if points[0].0 > l + eps || points[points.len() - 1].0 < u - eps {
                    return Err(Error::InvalidDensity(format!(
                        "density table [{}, {}] does not cover the parameter interval [{l}, {u}]",
                        points[0].0,
                        points[points.len() - 1].0
                    )));
                }
                let pts = points.clone();
                Ok(Box::new(move |p| {
                    let i = pts.partition_point(|&(x, _)| x <= p);
                    if i == 0 {
                        return pts[0].1;
                    }
                    if i == pts.len() {
                        return pts[pts.len() - 1].1;
                    }
                    let (x0, y0) = pts[i - 1];
                    let (x1, y1) = pts[i];
                    y0 + (p - x0) / (x1 - x0) * (y1 - y0)
                }))
            }
        }
    }
}
