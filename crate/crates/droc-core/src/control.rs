//! Piecewise-constant control parametrization on the normalized horizon [0, 1].
//!
//! A control is a step function: on each half-open interval
//! `[t_{k-1}, t_k)` it holds one constant row of `n_u` values, and the final
//! breakpoint `t = 1` belongs to the last piece. The flattened parameter
//! vector `v` lists rows piece by piece, so optimization directions index
//! into `(piece, component)` pairs through [`direction_index`].

use crate::{Error, Result};

/// Component-wise box bounds for one control row.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    /// Build a box from per-component bounds. Requires `lower[i] <= upper[i]`
    /// and finite entries.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidData(format!(
                    "box component {i} has invalid bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Uniform scalar box replicated over `n_u` components.
    pub fn uniform(n_u: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n_u], vec![hi; n_u])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Clamp one component into its bounds.
    pub fn clamp_component(&self, l: usize, value: f64) -> f64 {
        value.max(self.lower[l]).min(self.upper[l])
    }

    /// Whether component `l` of `value` sits on the lower bound within `tol`.
    pub fn at_lower(&self, l: usize, value: f64, tol: f64) -> bool {
        value - self.lower[l] <= tol
    }

    /// Whether component `l` of `value` sits on the upper bound within `tol`.
    pub fn at_upper(&self, l: usize, value: f64, tol: f64) -> bool {
        self.upper[l] - value <= tol
    }
}

/// Piecewise-constant control: breakpoints, per-piece rows, and the feasible
/// box shared by every piece.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    /// `n + 1` strictly increasing breakpoints spanning exactly [0, 1].
    breakpoints: Vec<f64>,
    /// Flattened rows: `values[k * n_u + l]` is component `l` on piece `k`.
    values: Vec<f64>,
    bounds: ControlBox,
}

impl ControlGrid {
    /// Grid with `n` equal pieces on [0, 1] and explicit flattened values
    /// (`n * bounds.dim()` entries, every entry inside the box).
    pub fn uniform(n: usize, values: Vec<f64>, bounds: ControlBox) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidData("control grid needs at least one piece".into()));
        }
        let breakpoints = (0..=n).map(|i| i as f64 / n as f64).collect();
        Self::from_breakpoints(breakpoints, values, bounds)
    }

    /// Grid with `n` equal pieces all holding the same row.
    pub fn constant(n: usize, row: &[f64], bounds: ControlBox) -> Result<Self> {
        let mut values = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            values.extend_from_slice(row);
        }
        Self::uniform(n, values, bounds)
    }

    /// Grid with explicit breakpoints (strictly increasing, first 0, last 1).
    pub fn from_breakpoints(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        bounds: ControlBox,
    ) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidData(
                "control grid needs at least two breakpoints".into(),
            ));
        }
        let n = breakpoints.len() - 1;
        if breakpoints[0] != 0.0 || breakpoints[n] != 1.0 {
            return Err(Error::InvalidData(format!(
                "breakpoints must span [0, 1], got [{}, {}]",
                breakpoints[0], breakpoints[n]
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidData(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let n_u = bounds.dim();
        if values.len() != n * n_u {
            return Err(Error::DimensionMismatch(format!(
                "expected {} control values ({} pieces x {} components), got {}",
                n * n_u,
                n,
                n_u,
                values.len()
            )));
        }
        for (j, &v) in values.iter().enumerate() {
            let l = j % n_u;
            if !v.is_finite() || v < bounds.lower()[l] || v > bounds.upper()[l] {
                return Err(Error::OutOfDomain(format!(
                    "control value {v} at flat index {j} outside box [{}, {}]",
                    bounds.lower()[l],
                    bounds.upper()[l]
                )));
            }
        }
        Ok(Self {
            breakpoints,
            values,
            bounds,
        })
    }

    /// Number of pieces `n`.
    pub fn pieces(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Control dimension `n_u`.
    pub fn dim_control(&self) -> usize {
        self.bounds.dim()
    }

    /// Total number of decision variables `n * n_u`.
    pub fn dim_flat(&self) -> usize {
        self.values.len()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn bounds(&self) -> &ControlBox {
        &self.bounds
    }

    /// Flattened decision vector.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    /// Row of piece `k` (0-based).
    pub fn row(&self, k: usize) -> &[f64] {
        let n_u = self.dim_control();
        &self.values[k * n_u..(k + 1) * n_u]
    }

    /// Same grid and box with replaced values (validated against the box).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_breakpoints(self.breakpoints.clone(), values, self.bounds.clone())
    }

    /// Same grid and box with raw values clamped component-wise into the box.
    pub fn project(&self, raw: &[f64]) -> Result<Self> {
        if raw.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                self.values.len(),
                raw.len()
            )));
        }
        let n_u = self.dim_control();
        let values = raw
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v.is_nan() {
                    Err(Error::InvalidData(format!("NaN control value at index {j}")))
                } else {
                    Ok(self.bounds.clamp_component(j % n_u, v))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_values(values)
    }

    /// Index of the piece containing normalized time `t` (0-based).
    ///
    /// Pieces are half-open on the right, and `t = 1` belongs to the last
    /// piece, so the step function is right-continuous on [0, 1).
    pub fn piece_of(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfDomain(format!(
                "time {t} outside the normalized horizon [0, 1]"
            )));
        }
        let n = self.pieces();
        if t >= 1.0 {
            return Ok(n - 1);
        }
        // Largest k with breakpoints[k] <= t.
        let k = self.breakpoints.partition_point(|&b| b <= t) - 1;
        Ok(k.min(n - 1))
    }

    /// Control row active at normalized time `t`.
    pub fn value(&self, t: f64) -> Result<&[f64]> {
        Ok(self.row(self.piece_of(t)?))
    }
}

/// Map a 1-based flat direction index `j` to 1-based `(piece, component)`.
///
/// `j` runs over `1..=n * n_u` in piece-major order: piece
/// `k = ceil(j / n_u)` and component `l = j mod n_u`, with a zero remainder
/// meaning the last component `l = n_u`.
pub fn direction_index(j: usize, n_u: usize) -> Result<(usize, usize)> {
    if n_u == 0 {
        return Err(Error::InvalidData("control dimension must be positive".into()));
    }
    if j == 0 {
        return Err(Error::OutOfDomain("direction index is 1-based".into()));
    }
    let k = (j - 1) / n_u + 1;
    let l = (j - 1) % n_u + 1;
    Ok((k, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> ControlGrid {
        // 3 pieces, 2 components, values counted 1..6 scaled into [0, 1].
        let bounds = ControlBox::uniform(2, 0.0, 1.0).unwrap();
        ControlGrid::uniform(
            3,
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            bounds,
        )
        .unwrap()
    }

    #[test]
    fn evaluation_is_right_continuous_with_closed_end() {
        let g = grid3();
        // Breakpoints at 0, 1/3, 2/3, 1.
        assert_eq!(g.value(0.0).unwrap(), &[0.1, 0.2]);
        let third = 1.0 / 3.0;
        // Just below and exactly at the first interior breakpoint.
        assert_eq!(g.value(third - 1e-12).unwrap(), &[0.1, 0.2]);
        assert_eq!(g.value(third).unwrap(), &[0.3, 0.4]);
        // t = 1 belongs to the last piece.
        assert_eq!(g.value(1.0).unwrap(), &[0.5, 0.6]);
        assert!(matches!(g.value(1.0 + 1e-9), Err(Error::OutOfDomain(_))));
        assert!(matches!(g.value(-1e-9), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn piece_lookup_matches_linear_scan() {
        let bounds = ControlBox::uniform(1, -1.0, 1.0).unwrap();
        let bk = vec![0.0, 0.1, 0.35, 0.6, 1.0];
        let g = ControlGrid::from_breakpoints(bk.clone(), vec![0.0; 4], bounds).unwrap();
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            let expect = if t >= 1.0 {
                3
            } else {
                (0..4).rev().find(|&k| bk[k] <= t).unwrap()
            };
            assert_eq!(g.piece_of(t).unwrap(), expect, "t = {t}");
        }
    }

    #[test]
    fn direction_index_matches_enumeration() {
        // Enumerate (piece, component) pairs in flat order and compare.
        for n_u in 1..=4 {
            for n in 1..=5 {
                let mut j = 0;
                for k in 1..=n {
                    for l in 1..=n_u {
                        j += 1;
                        assert_eq!(direction_index(j, n_u).unwrap(), (k, l));
                    }
                }
            }
        }
        // Spot checks of the stated convention, including zero remainder.
        assert_eq!(direction_index(7, 1).unwrap(), (7, 1));
        assert_eq!(direction_index(4, 2).unwrap(), (2, 2));
        assert_eq!(direction_index(3, 2).unwrap(), (2, 1));
        assert!(direction_index(0, 2).is_err());
    }

    #[test]
    fn projection_clamps_into_box() {
        let g = grid3();
        let raw = vec![-0.5, 0.2, 1.7, 0.4, 0.5, 2.0];
        let p = g.project(&raw).unwrap();
        assert_eq!(p.flat(), &[0.0, 0.2, 1.0, 0.4, 0.5, 1.0]);
        assert!(g.project(&[f64::NAN; 6]).is_err());
        assert!(matches!(
            g.project(&[0.0; 5]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constructors_validate() {
        let bounds = ControlBox::uniform(1, 0.0, 1.0).unwrap();
        // Value outside the box.
        assert!(matches!(
            ControlGrid::uniform(2, vec![0.5, 1.5], bounds.clone()),
            Err(Error::OutOfDomain(_))
        ));
        // Wrong value count.
        assert!(matches!(
            ControlGrid::uniform(2, vec![0.5], bounds.clone()),
            Err(Error::DimensionMismatch(_))
        ));
        // Breakpoints not spanning [0, 1].
        assert!(ControlGrid::from_breakpoints(
            vec![0.0, 0.4, 0.9],
            vec![0.0, 0.0],
            bounds.clone()
        )
        .is_err());
        // Not strictly increasing.
        assert!(ControlGrid::from_breakpoints(
            vec![0.0, 0.5, 0.5, 1.0],
            vec![0.0; 3],
            bounds.clone()
        )
        .is_err());
        // Degenerate box lower > upper.
        assert!(ControlBox::uniform(1, 1.0, 0.0).is_err());
        // Zero pieces.
        assert!(ControlGrid::uniform(0, vec![], bounds).is_err());
    }

    #[test]
    fn constant_grid_replicates_row() {
        let bounds = ControlBox::uniform(2, 0.0, 1.0).unwrap();
        let g = ControlGrid::constant(3, &[0.25, 0.75], bounds).unwrap();
        assert_eq!(g.flat(), &[0.25, 0.75, 0.25, 0.75, 0.25, 0.75]);
        assert_eq!(g.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn bound_activity_tests() {
        let b = ControlBox::uniform(1, 0.0, 0.04).unwrap();
        assert!(b.at_lower(0, 0.0, 1e-12));
        assert!(b.at_lower(0, 1e-13, 1e-12));
        assert!(!b.at_lower(0, 1e-3, 1e-12));
        assert!(b.at_upper(0, 0.04, 1e-12));
        assert!(!b.at_upper(0, 0.039, 1e-12));
        assert_eq!(b.clamp_component(0, 0.05), 0.04);
        assert_eq!(b.clamp_component(0, -0.05), 0.0);
    }
}
