use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::objectives::Surrogate;
use crate::special::logsumexp;
use crate::tensor::Tensor;

/// Smallest grid accepted for normalizing ratio surrogates.
pub const MIN_GRID_RESOLUTION: usize = 64;

/// A surrogate evaluated on the cell centres of a regular 2-D lattice.
///
/// `ln Z` is the midpoint-rule integral `LSE(cells) + ln(cell area)`, so the
/// normalized cell masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEvaluation {
    lower: [f64; 2],
    upper: [f64; 2],
    resolution: usize,
    /// Row-major: cell `(i, j)` at index `i·res + j`, `i` along θ₁.
    log_density: Vec<f64>,
    log_z: f64,
}

impl GridEvaluation {
    pub fn evaluate<S: Surrogate + ?Sized>(
        surrogate: &S,
        x: &[f64],
        lower: [f64; 2],
        upper: [f64; 2],
        resolution: usize,
    ) -> Result<Self> {
        if surrogate.theta_dim() != 2 {
            return Err(invalid("grid evaluation needs a 2-D parameter"));
        }
        if resolution == 0 || !(lower[0] < upper[0] && lower[1] < upper[1]) {
            return Err(invalid("grid needs a positive resolution and a non-empty box"));
        }
        let centres = Self::centres(lower, upper, resolution);
        let log_density = surrogate.log_unnorm_many(&centres, x)?;
        Self::from_log_density(lower, upper, resolution, log_density)
    }

    /// Builds a grid from precomputed cell values.
    pub fn from_log_density(lower: [f64; 2], upper: [f64; 2], resolution: usize, log_density: Vec<f64>) -> Result<Self> {
        if log_density.len() != resolution * resolution {
            return Err(invalid("grid values do not match the resolution"));
        }
        if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite { op: "grid density" });
        }
        let area = (upper[0] - lower[0]) * (upper[1] - lower[1]) / (resolution * resolution) as f64;
        let lse = logsumexp(&log_density);
        if !lse.is_finite() {
            return Err(Error::Empty("grid mass"));
        }
        Ok(GridEvaluation {
            lower,
            upper,
            resolution,
            log_density,
            log_z: lse + area.ln(),
        })
    }

    /// Cell centres as an `res² × 2` matrix in grid order.
    pub fn centres(lower: [f64; 2], upper: [f64; 2], resolution: usize) -> Tensor {
        let h = [
            (upper[0] - lower[0]) / resolution as f64,
            (upper[1] - lower[1]) / resolution as f64,
        ];
        let mut data = Vec::with_capacity(2 * resolution * resolution);
        for i in 0..resolution {
            for j in 0..resolution {
                data.push(lower[0] + (i as f64 + 0.5) * h[0]);
                data.push(lower[1] + (j as f64 + 0.5) * h[1]);
            }
        }
        Tensor::matrix(resolution * resolution, 2, data).expect("sizes agree")
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn cell_area(&self) -> f64 {
        (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])
            / (self.resolution * self.resolution) as f64
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Probability mass of every cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let la = self.cell_area().ln();
        self.log_density
            .iter()
            .map(|v| (v - self.log_z + la).exp())
            .collect()
    }

    /// Lower corner of cell `idx`.
    fn corner(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx / self.resolution, idx % self.resolution);
        [
            self.lower[0] + i as f64 * (self.upper[0] - self.lower[0]) / self.resolution as f64,
            self.lower[1] + j as f64 * (self.upper[1] - self.lower[1]) / self.resolution as f64,
        ]
    }
}

/// Draws cells in proportion to their mass, then a uniform point inside.
pub fn grid_sample<R: Rng>(grid: &GridEvaluation, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>> {
    let mut cdf = Vec::with_capacity(grid.log_density.len());
    let mut acc = 0.0;
    for m in grid.cell_masses() {
        acc += m;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Empty("grid mass"));
    }
    let h = [
        (grid.upper[0] - grid.lower[0]) / grid.resolution as f64,
        (grid.upper[1] - grid.lower[1]) / grid.resolution as f64,
    ];
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let c = grid.corner(idx);
            vec_of(c[0] + h[0] * rng.random::<f64>(), c[1] + h[1] * rng.random::<f64>())
        })
        .collect())
}

fn vec_of(a: f64, b: f64) -> Vec<f64> {
    alloc::vec![a, b]
}
