//! Linear-regression phase sanitization, the conventional baseline.
//!
//! Phases are unwrapped along ascending pilot index per channel, one line is
//! fitted jointly through all channels' unwrapped phases, and the fitted ramp
//! is removed from every row.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Observation, PhaseDistortion, PilotSet};
use crate::scalar::{arg, cis, wrap_angle, Cx, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionResult<T: Real> {
    /// Radians per pilot index.
    pub slope: T,
    /// Radians.
    pub intercept: T,
    pub sanitized: DMatrix<Cx<T>>,
}

impl<T: Real> RegressionResult<T> {
    /// The fitted line read as a distortion estimate `(Ωd, Ω0)`.
    pub fn as_distortion(&self) -> PhaseDistortion<T> {
        PhaseDistortion::new(self.slope, self.intercept)
    }
}

/// Adjacent-difference unwrapping with a π threshold.
pub fn unwrap_phases<T: Real>(raw: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(raw.len());
    let mut prev_raw = None;
    let mut prev_out = T::zero();
    for &p in raw {
        let next = match prev_raw {
            None => p,
            Some(r) => prev_out + wrap_angle(p - r),
        };
        out.push(next);
        prev_out = next;
        prev_raw = Some(p);
    }
    out
}

pub fn linreg_sanitize<T: Real>(obs: &Observation<T>, pilots: &PilotSet<T>) -> Result<RegressionResult<T>> {
    let q = pilots.n_pilots();
    if obs.csi.nrows() != q {
        return Err(Error::dim("observation rows", q, obs.csi.nrows()));
    }
    let qs = pilots.index_values();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by_key(|&m| pilots.pilot_indices()[m]);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for col in obs.csi.column_iter() {
        let usable: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&m| col[m].re != T::zero() || col[m].im != T::zero())
            .collect();
        let raw: Vec<T> = usable.iter().map(|&m| arg(col[m])).collect();
        xs.extend(usable.iter().map(|&m| qs[m]));
        ys.extend(unwrap_phases(&raw));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "linear regression needs at least 2 nonzero pilots, got {}",
            xs.len()
        )));
    }
    let n = T::from_usize(xs.len()).unwrap_or_else(T::one);
    let mean_x = xs.iter().fold(T::zero(), |a, &x| a + x) / n;
    let mean_y = ys.iter().fold(T::zero(), |a, &y| a + y) / n;
    let (sxy, sxx) = xs.iter().zip(&ys).fold((T::zero(), T::zero()), |(sxy, sxx), (&x, &y)| {
        let dx = x - mean_x;
        (sxy + dx * (y - mean_y), sxx + dx * dx)
    });
    if sxx <= T::zero() {
        return Err(Error::InvalidInput("usable pilots share a single index".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let mut sanitized = obs.csi.clone();
    for (m, &qm) in qs.iter().enumerate() {
        let rot = cis(-(intercept + slope * qm));
        for v in sanitized.row_mut(m).iter_mut() {
            *v *= rot;
        }
    }
    Ok(RegressionResult {
        slope,
        intercept,
        sanitized,
    })
}
