//! Simpson-rule discretization of the nonlocal jump operator
//!
//! ```text
//! I f(x) = ∫ f(x + γz) ν(dz) − ∂f/∂x ∫_{-1}^{1} γz ν(dz) − f(x) Γ
//! ```
//!
//! `c_j` carry Simpson weight × `Γ(i) φ(z_j)` over the whole truncation window,
//! `d_j` the same over `[-1, 1]` for the compensator.

use crate::model::{JumpSpec, ModelError};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    /// Effective node spacing (requested spacing rounded down to an even interval count).
    pub xi: f64,
    pub nodes_full: Vec<f64>,
    pub weights_full: Vec<f64>,
    pub nodes_comp: Vec<f64>,
    pub weights_comp: Vec<f64>,
    /// `Σ c_j`, used as `Γ` in the `−f·Γ` term so constants are annihilated.
    pub gamma_total: f64,
    /// `Σ d_j z_j`.
    pub comp_mean: f64,
}

/// Composite Simpson nodes and weights on `[-half_width, half_width]` with an
/// even interval count and spacing at most `xi`.
fn simpson_panel(half_width: f64, xi: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut n = (2.0 * half_width / xi).ceil() as usize;
    n = n.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = 2.0 * half_width / n as f64;
    let half = (n / 2) as i64;
    // integer offsets keep the node set exactly symmetric
    let nodes = (0..=n as i64).map(|j| (j - half) as f64 * h).collect();
    let weights = (0..=n)
        .map(|j| {
            let w = if j == 0 || j == n {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    (h, nodes, weights)
}

impl QuadratureGrid {
    pub fn build(jumps: &JumpSpec, regime: usize, xi: f64) -> Result<Self, ModelError> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(ModelError::Domain(format!("quadrature step {xi} outside (0,1)")));
        }
        if jumps.z_trunc.is_nan() || jumps.z_trunc < 1.0 {
            return Err(ModelError::Domain("z_trunc must be >= 1".into()));
        }
        let intensity = *jumps.intensity.get(regime).ok_or_else(|| {
            ModelError::Domain(format!("regime {} has no jump intensity", regime + 1))
        })?;

        let (h, nodes_full, simpson_full) = simpson_panel(jumps.z_trunc, xi);
        let weights_full: Vec<f64> = nodes_full
            .iter()
            .zip(&simpson_full)
            .map(|(&z, &w)| w * intensity * jumps.density_at(z))
            .collect();
        let (_, nodes_comp, simpson_comp) = simpson_panel(1.0, xi);
        let weights_comp: Vec<f64> = nodes_comp
            .iter()
            .zip(&simpson_comp)
            .map(|(&z, &w)| w * intensity * jumps.density_at(z))
            .collect();

        let gamma_total = weights_full.iter().sum();
        let comp_mean = nodes_comp
            .iter()
            .zip(&weights_comp)
            .map(|(z, d)| z * d)
            .sum();
        Ok(Self {
            xi: h,
            nodes_full,
            weights_full,
            nodes_comp,
            weights_comp,
            gamma_total,
            comp_mean,
        })
    }

    pub fn is_trivial(&self) -> bool {
        self.gamma_total == 0.0 && self.comp_mean == 0.0
    }

    /// Three-term approximation of the jump operator at `f[x_index]`.
    ///
    /// `f` lives on the uniform x-grid starting at `x_min` with step `h`.
    /// Off-grid points are linearly interpolated and clamped outside the grid.
    pub fn apply(
        &self,
        f: &[f64],
        x_min: f64,
        h: f64,
        x_index: usize,
        gamma_i: f64,
        dfdx: f64,
    ) -> f64 {
        let x = x_min + x_index as f64 * h;
        let integral: f64 = self
            .nodes_full
            .iter()
            .zip(&self.weights_full)
            .map(|(&z, &c)| c * interpolate(f, x_min, h, x + gamma_i * z))
            .sum();
        integral - dfdx * gamma_i * self.comp_mean - f[x_index] * self.gamma_total
    }

    /// Folds the interpolated integral into per-node grid weights.
    pub fn stencil(&self, gamma_i: f64, x_min: f64, h: f64, n_x: usize) -> JumpStencil {
        let mut offsets = Vec::with_capacity(n_x + 1);
        let mut entries = Vec::new();
        let mut dense = vec![0.0; n_x];
        offsets.push(0);
        for ix in 0..n_x {
            dense.iter_mut().for_each(|w| *w = 0.0);
            let x = x_min + ix as f64 * h;
            for (&z, &c) in self.nodes_full.iter().zip(&self.weights_full) {
                if c == 0.0 {
                    continue;
                }
                let (lo, hi, t) = interp_weights(x + gamma_i * z, x_min, h, n_x);
                dense[lo] += c * (1.0 - t);
                dense[hi] += c * t;
            }
            entries.extend(
                dense
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(m, w)| (m, *w)),
            );
            offsets.push(entries.len());
        }
        JumpStencil { offsets, entries }
    }
}

/// Sparse rows `Σ_m w_m f[m]` reproducing `Σ_j c_j f(x_i + γ z_j)`.
#[derive(Debug, Clone, Default)]
pub struct JumpStencil {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl JumpStencil {
    pub fn row(&self, ix: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[ix]..self.offsets[ix + 1]]
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bracketing indices and the weight of the upper one; clamps outside the grid.
#[inline]
pub(crate) fn interp_weights(x: f64, x_min: f64, h: f64, n: usize) -> (usize, usize, f64) {
    let s = (x - x_min) / h;
    if s <= 0.0 {
        return (0, 0, 0.0);
    }
    let last = n - 1;
    if s >= last as f64 {
        return (last, last, 0.0);
    }
    let lo = s.floor() as usize;
    let lo = lo.min(last - 1);
    (lo, lo + 1, s - lo as f64)
}

pub(crate) fn interpolate(f: &[f64], x_min: f64, h: f64, x: f64) -> f64 {
    let (lo, hi, t) = interp_weights(x, x_min, h, f.len());
    f[lo] * (1.0 - t) + f[hi] * t
}
