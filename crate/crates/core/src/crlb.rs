//! Cramér–Rao bounds.
//!
//! * Phase parameters: Fisher information of `(Ωd, Ω0)` under a perfectly
//!   predicted channel (`γ = σ^{-2} I`), averaged over the channel covariance.
//! * Channel state: the filtering / one-step-prediction Riccati recursion with
//!   the measurement matrix evaluated at the true distortion. This module
//!   keeps the explicit `Q × Q` innovation inverse; the estimator uses the
//!   equivalent `L × L` form, so the two act as independent routes.

use nalgebra::{Cholesky, DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::model::{check_hermitian_psd, PhaseDistortion, PilotSet};
use crate::scalar::{cis, lit, to_f64, Cx, Real};

pub struct PhaseCrlbInput<'a, T: Real> {
    pub pilots: &'a PilotSet<T>,
    /// `Σ^i = E[h_i h_i^H]`, one `L × L` matrix per channel.
    pub channel_covs: Vec<DMatrix<Cx<T>>>,
    pub noise_var: T,
}

impl<'a, T: Real> PhaseCrlbInput<'a, T> {
    /// Diagonal covariances from an `L × N` tap power profile.
    pub fn from_profile(pilots: &'a PilotSet<T>, profile: &DMatrix<T>, noise_var: T) -> Self {
        let channel_covs = profile
            .column_iter()
            .map(|col| DMatrix::from_diagonal(&col.map(|p| Cx::new(p, T::zero()))))
            .collect();
        PhaseCrlbInput {
            pilots,
            channel_covs,
            noise_var,
        }
    }

    fn validate(&self) -> Result<()> {
        let l = self.pilots.channel_length();
        if !(self.noise_var > T::zero()) {
            return Err(Error::InvalidInput("noise variance must be positive".into()));
        }
        for (i, s) in self.channel_covs.iter().enumerate() {
            if s.shape() != (l, l) {
                return Err(Error::dim("channel covariance", format!("{l}x{l}"), format!("{:?}", s.shape())));
            }
            let scale = s.iter().fold(T::one(), |m, v| m.max(v.norm_sqr().sqrt()));
            check_hermitian_psd(s, lit::<T>(1e-10) * scale)
                .map_err(|msg| Error::InvalidInput(format!("channel covariance {i}: {msg}")))?;
        }
        Ok(())
    }
}

/// `Re Tr(X Σ)`.
fn trace_product<T: Real>(x: &DMatrix<Cx<T>>, s: &DMatrix<Cx<T>>) -> T {
    let mut acc = T::zero();
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            acc += (x[(r, c)] * s[(c, r)]).re;
        }
    }
    acc
}

/// `C^H diag(q^power) C`.
fn weighted_gram<T: Real>(dft: &DMatrix<Cx<T>>, indices: &[T], power: i32) -> DMatrix<Cx<T>> {
    let mut wc = dft.clone();
    for (m, &q) in indices.iter().enumerate() {
        let w = Cx::new(q.powi(power), T::zero());
        for v in wc.row_mut(m).iter_mut() {
            *v *= w;
        }
    }
    dft.adjoint() * wc
}

fn fisher_from_parts<T: Real>(
    dft: &DMatrix<Cx<T>>,
    indices: &[T],
    covs: &[DMatrix<Cx<T>>],
    noise_var: T,
) -> Matrix2<T> {
    let g2 = weighted_gram(dft, indices, 2);
    let g1 = weighted_gram(dft, indices, 1);
    let g0 = weighted_gram(dft, indices, 0);
    let (mut a, mut b, mut c) = (T::zero(), T::zero(), T::zero());
    for s in covs {
        a += trace_product(&g2, s);
        b += trace_product(&g1, s);
        c += trace_product(&g0, s);
    }
    let k = lit::<T>(2.0) / noise_var;
    Matrix2::new(a * k, b * k, b * k, c * k)
}

/// Fisher information of `(Ωd, Ω0)`:
/// `(2/σ²) [[Σ Tr(C^H Q∘Q C Σ^i), Σ Tr(C^H Q C Σ^i)], [·, Σ Tr(C^H C Σ^i)]]`.
///
/// Entry `(0, 0)` belongs to the slope, `(1, 1)` to the offset.
pub fn fisher_matrix<T: Real>(inp: &PhaseCrlbInput<'_, T>) -> Result<Matrix2<T>> {
    inp.validate()?;
    Ok(fisher_from_parts(
        inp.pilots.dft(),
        inp.pilots.index_values(),
        &inp.channel_covs,
        inp.noise_var,
    ))
}

/// `Tr I^{-1}(Ω)`.
pub fn crlb_phase<T: Real>(inp: &PhaseCrlbInput<'_, T>) -> Result<T> {
    let f = fisher_matrix(inp)?;
    let det = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
    let scale = f[(0, 0)].abs() * f[(1, 1)].abs();
    if !(f[(0, 0)] > T::zero() && f[(1, 1)] > T::zero()) || !(det > lit::<T>(1e-12) * scale) {
        return Err(Error::Unidentifiable(format!(
            "Fisher information is singular (det {:e}); slope and offset cannot both be resolved",
            to_f64(det)
        )));
    }
    Ok((f[(0, 0)] + f[(1, 1)]) / det)
}

/// Per-packet channel-state bounds.
#[derive(Clone, Debug)]
pub struct CrlbTrace<T: Real> {
    /// `J^i_{k|k}` per packet and channel.
    pub filtering: Vec<Vec<DMatrix<Cx<T>>>>,
    /// `J^i_{k+1|k}`.
    pub prediction: Vec<Vec<DMatrix<Cx<T>>>>,
    /// `J^i_{k|k-1}`, the bound before packet `k` is observed.
    pub prior: Vec<Vec<DMatrix<Cx<T>>>>,
    /// `Σ_i Tr J^i_{k|k}`.
    pub scalar_bound_per_packet: Vec<T>,
}

/// Measurement matrix `B = e^{jΩ0} E(Ωd) C`.
pub fn measurement_matrix<T: Real>(d: &PhaseDistortion<T>, pilots: &PilotSet<T>) -> DMatrix<Cx<T>> {
    let mut b = pilots.dft().clone();
    for (m, &q) in pilots.index_values().iter().enumerate() {
        let rot = cis(d.phase_at(q));
        for v in b.row_mut(m).iter_mut() {
            *v *= rot;
        }
    }
    b
}

/// Riccati recursion `J_{k|k} = J_{k|k-1} − J B^H (B J B^H + σ² I)^{-1} B J`,
/// `J_{k+1|k} = α² J_{k|k} + diag(σ²_v)`.
///
/// The bound before the first prediction is the identity, matching the
/// filter's `P = I` initialization; packet `k` (1-based) therefore starts from
/// `J_{1|0} = α² I + diag(σ²_v)`.
pub fn crlb_filter_trace<T: Real>(
    pilots: &PilotSet<T>,
    alpha: T,
    process_noise: &DMatrix<T>,
    noise_var: T,
    true_distortions: &[PhaseDistortion<T>],
    n_packets: usize,
) -> Result<CrlbTrace<T>> {
    let l = pilots.channel_length();
    let q = pilots.n_pilots();
    if true_distortions.len() < n_packets {
        return Err(Error::InvalidInput(format!(
            "{} distortions for {n_packets} packets",
            true_distortions.len()
        )));
    }
    if process_noise.nrows() != l {
        return Err(Error::dim("process noise rows", l, process_noise.nrows()));
    }
    if !(noise_var > T::zero()) {
        return Err(Error::InvalidInput("noise variance must be positive".into()));
    }
    let n = process_noise.ncols();
    let a2 = Cx::new(alpha * alpha, T::zero());
    let half = Cx::new(lit::<T>(0.5), T::zero());
    let predict = |j: &DMatrix<Cx<T>>, i: usize| {
        let mut next = j * a2;
        for t in 0..l {
            next[(t, t)] += Cx::new(process_noise[(t, i)], T::zero());
        }
        next
    };
    let mut prior: Vec<DMatrix<Cx<T>>> = (0..n).map(|i| predict(&DMatrix::identity(l, l), i)).collect();

    let mut trace = CrlbTrace {
        filtering: Vec::with_capacity(n_packets),
        prediction: Vec::with_capacity(n_packets),
        prior: Vec::with_capacity(n_packets),
        scalar_bound_per_packet: Vec::with_capacity(n_packets),
    };
    for d in &true_distortions[..n_packets] {
        let b = measurement_matrix(d, pilots);
        let bh = b.adjoint();
        let mut filt = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        let mut total = T::zero();
        for (i, j) in prior.iter().enumerate() {
            let bj = &b * j;
            let mut s = &bj * &bh;
            for m in 0..q {
                s[(m, m)] += Cx::new(noise_var, T::zero());
            }
            let chol = Cholesky::new(s)
                .ok_or_else(|| Error::Numeric("innovation covariance not positive definite".into()))?;
            let x = chol.solve(&bj);
            let jf = j - bj.adjoint() * x;
            let jf = (&jf + jf.adjoint()) * half;
            total += jf.trace().re;
            pred.push(predict(&jf, i));
            filt.push(jf);
        }
        trace.prior.push(std::mem::replace(&mut prior, pred.clone()));
        trace.filtering.push(filt);
        trace.prediction.push(pred);
        trace.scalar_bound_per_packet.push(total);
    }
    Ok(trace)
}
