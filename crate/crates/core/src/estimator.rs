//! Adaptive Kalman filter with per-packet MAP estimation of the phase slope
//! and offset errors.
//!
//! Every packet goes through three stages: AR(1) prediction of the channel,
//! joint estimation of `(Ωd, Ω0)` by minimizing the negative log-likelihood
//! `g(Ωd, Ω0) = Σ_i (y_i − B h_i)^H (B P_i B^H + σ² I)^{-1} (y_i − B h_i)`
//! with `B = e^{jΩ0} E(Ωd) C`, and a Kalman update evaluated at the estimate.
//!
//! The `Q × Q` weights are never formed. Because `E` is diagonal unitary,
//! `(B P B^H + σ² I)^{-1} = E (C P C^H + σ² I)^{-1} E^H`, and the push-through
//! identity turns that into `σ^{-2} (I − C M C^H)` with the `L × L` matrix
//! `M = (σ² I + P C^H C)^{-1} P`. The same `M` is the Kalman gain seen from
//! the tap domain, `κ = M B^H`.
//!
//! For a fixed slope the NLL is minimized over the offset in closed form
//! (`Ω0* = arg S(Ωd)`), leaving a 1-D profile over the slope support. The
//! support is split into intervals narrow enough for the profile to be
//! locally convex; each interval is probed and the best local minima are
//! polished with a safeguarded Newton iteration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{FilterState, Interval, Observation, PhaseDistortion, PilotSet, PriorSupport};
use crate::scalar::{abs, arg, cis, lit, to_f64, wrap_angle, Cx, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig<T: Real> {
    pub alpha: T,
    /// Per-tap process-noise variances, `L × N`.
    pub process_noise: DMatrix<T>,
    /// Observation noise variance `σ²_w`.
    pub noise_var: T,
    /// MAP prior supports.
    pub support: PriorSupport<T>,
    pub newton_max_iters: usize,
    pub newton_tol: T,
    /// Number of locally convex search intervals on the slope support.
    pub n_intervals: usize,
    /// Probe points per interval (interval ends are shared).
    pub probes_per_interval: usize,
    /// How many of the best probed local minima are refined by Newton.
    pub refine_candidates: usize,
    /// Use only the diagonal of the predicted covariance inside the NLL weight.
    pub diagonal_weight: bool,
}

/// Default interval count: intervals no wider than `π / (2 max|q|)`.
pub fn default_interval_count<T: Real>(slope_support: &Interval<T>, max_abs_index: i64) -> usize {
    let w = to_f64(slope_support.width());
    let n = (w * max_abs_index as f64 * 2.0 / std::f64::consts::PI).ceil();
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

impl<T: Real> EstimatorConfig<T> {
    pub fn new(
        alpha: T,
        process_noise: DMatrix<T>,
        noise_var: T,
        support: PriorSupport<T>,
        pilots: &PilotSet<T>,
    ) -> Self {
        EstimatorConfig {
            alpha,
            process_noise,
            noise_var,
            n_intervals: default_interval_count(&support.slope, pilots.max_abs_index()),
            support,
            newton_max_iters: 50,
            newton_tol: lit(1e-9),
            probes_per_interval: 2,
            refine_candidates: 3,
            diagonal_weight: false,
        }
    }

    /// One process-noise variance per channel, applied to every tap.
    pub fn with_channel_noise(
        alpha: T,
        channel_vars: &[T],
        noise_var: T,
        support: PriorSupport<T>,
        pilots: &PilotSet<T>,
    ) -> Self {
        let l = pilots.channel_length();
        let q = DMatrix::from_fn(l, channel_vars.len(), |_, i| channel_vars[i]);
        Self::new(alpha, q, noise_var, support, pilots)
    }

    pub fn n_channels(&self) -> usize {
        self.process_noise.ncols()
    }

    pub fn validate(&self, pilots: &PilotSet<T>, n_channels: usize) -> Result<()> {
        if !(self.newton_tol > T::zero()) || self.newton_max_iters == 0 {
            return Err(Error::InvalidInput("newton_tol must be > 0 and newton_max_iters ≥ 1".into()));
        }
        if !(self.noise_var > T::zero()) {
            return Err(Error::InvalidInput("estimator noise variance must be positive".into()));
        }
        if self.n_intervals == 0 || self.probes_per_interval == 0 || self.refine_candidates == 0 {
            return Err(Error::InvalidInput("search sizes must be positive".into()));
        }
        if self.process_noise.nrows() != pilots.channel_length() || self.process_noise.ncols() != n_channels {
            return Err(Error::dim(
                "estimator process noise",
                format!("{}x{}", pilots.channel_length(), n_channels),
                format!("{}x{}", self.process_noise.nrows(), self.process_noise.ncols()),
            ));
        }
        Ok(())
    }
}

/// Result of the per-packet MAP search.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSolution<T> {
    pub distortion: PhaseDistortion<T>,
    pub nll_value: T,
    pub interval_index: usize,
    pub iterations_used: usize,
    /// The prediction carried no phase reference (all-zero channel estimate);
    /// the distortion defaults to zero.
    pub degenerate: bool,
}

impl<T: Real> MapSolution<T> {
    /// Wraps externally known distortion parameters, bypassing the MAP search.
    pub fn known(distortion: PhaseDistortion<T>) -> Self {
        MapSolution {
            distortion,
            nll_value: T::zero(),
            interval_index: 0,
            iterations_used: 0,
            degenerate: false,
        }
    }
}

/// Closed-form offset for a fixed slope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetSolution<T> {
    pub offset: T,
    pub degenerate: bool,
}

/// `Ĥ = 0`, `P = I` for every channel.
pub fn init_filter<T: Real>(pilots: &PilotSet<T>, n_channels: usize) -> FilterState<T> {
    let l = pilots.channel_length();
    FilterState {
        estimate: DMatrix::from_element(l, n_channels, Cx::new(T::zero(), T::zero())),
        covariances: vec![DMatrix::identity(l, l); n_channels],
        phase: PhaseDistortion::zero(),
        packet_index: 0,
    }
}

/// `Ĥ ← α Ĥ`, `P_i ← α² P_i + diag(σ²_v,i)`.
pub fn predict<T: Real>(state: &FilterState<T>, cfg: &EstimatorConfig<T>) -> Result<FilterState<T>> {
    let n = state.n_channels();
    let l = state.channel_length();
    if cfg.process_noise.shape() != (l, n) {
        return Err(Error::dim("estimator process noise", format!("{l}x{n}"), format!("{:?}", cfg.process_noise.shape())));
    }
    let a = Cx::new(cfg.alpha, T::zero());
    let a2 = Cx::new(cfg.alpha * cfg.alpha, T::zero());
    let covariances = state
        .covariances
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut next = p * a2;
            for t in 0..l {
                next[(t, t)] += Cx::new(cfg.process_noise[(t, i)], T::zero());
            }
            next
        })
        .collect();
    Ok(FilterState {
        estimate: &state.estimate * a,
        covariances,
        phase: state.phase,
        packet_index: state.packet_index,
    })
}

/// `M = (σ² I + P K)^{-1} P`, Hermitian for Hermitian `P` and `K`.
fn weight_matrix<T: Real>(p: &DMatrix<Cx<T>>, gram: &DMatrix<Cx<T>>, noise_var: T) -> Result<DMatrix<Cx<T>>> {
    let l = p.nrows();
    let mut a = p * gram;
    for t in 0..l {
        a[(t, t)] += Cx::new(noise_var, T::zero());
    }
    let m = a
        .lu()
        .solve(p)
        .ok_or_else(|| Error::Numeric("singular innovation covariance".into()))?;
    // symmetrize away rounding
    Ok((&m + m.adjoint()) * Cx::new(lit::<T>(0.5), T::zero()))
}

/// `a^H M b` with `M` stored column-major.
fn quad_form<T: Real>(m: &[Cx<T>], l: usize, a: &[Cx<T>], b: &[Cx<T>]) -> Cx<T> {
    let mut acc = Cx::new(T::zero(), T::zero());
    for r in 0..l {
        let mut row = Cx::new(T::zero(), T::zero());
        for c in 0..l {
            row += m[c * l + r] * b[c];
        }
        acc += a[r].conj() * row;
    }
    acc
}

struct ChannelTerms<T: Real> {
    /// Observed column `y_i`.
    y: Vec<Cx<T>>,
    /// `C ĥ_i`.
    c: Vec<Cx<T>>,
    /// `M_i` column-major.
    m: Vec<Cx<T>>,
    /// `K ĥ_i`.
    kh: Vec<Cx<T>>,
    /// `ĥ_i − M_i K ĥ_i`.
    v: Vec<Cx<T>>,
    /// `‖y_i‖²`.
    y_energy: T,
}

/// Per-packet NLL evaluator.
struct NllKernel<'a, T: Real> {
    pilots: &'a PilotSet<T>,
    /// `conj(C)` row-major `Q × L`.
    cc: Vec<Cx<T>>,
    channels: Vec<ChannelTerms<T>>,
    inv_var: T,
    /// `Σ_i c_i^H G_i c_i`, independent of the distortion.
    signal_term: T,
    offset_support: Interval<T>,
    full_circle: bool,
    degenerate: bool,
}

#[derive(Clone, Copy, Debug)]
struct ProfileEval<T> {
    value: T,
    d1: T,
    d2: T,
}

fn zero<T: Real>() -> Cx<T> {
    Cx::new(T::zero(), T::zero())
}

impl<'a, T: Real> NllKernel<'a, T> {
    fn new(
        obs: &Observation<T>,
        predicted: &FilterState<T>,
        pilots: &'a PilotSet<T>,
        cfg: &EstimatorConfig<T>,
    ) -> Result<Self> {
        let q = pilots.n_pilots();
        let l = pilots.channel_length();
        let n = obs.n_channels();
        if obs.csi.nrows() != q {
            return Err(Error::dim("observation rows", q, obs.csi.nrows()));
        }
        if predicted.n_channels() != n || predicted.channel_length() != l {
            return Err(Error::dim(
                "predicted state",
                format!("{l}x{n}"),
                format!("{}x{}", predicted.channel_length(), predicted.n_channels()),
            ));
        }
        if !(cfg.noise_var > T::zero()) {
            return Err(Error::Numeric("noise variance must be positive for an invertible NLL weight".into()));
        }
        let dft = pilots.dft();
        let gram = pilots.gram();
        let mut cc = Vec::with_capacity(q * l);
        for m in 0..q {
            for t in 0..l {
                cc.push(dft[(m, t)].conj());
            }
        }
        let inv_var = T::one() / cfg.noise_var;
        let mut signal_term = T::zero();
        let mut degenerate = true;
        let mut channels = Vec::with_capacity(n);
        for i in 0..n {
            let h = predicted.estimate.column(i).into_owned();
            if h.iter().any(|z| z.re != T::zero() || z.im != T::zero()) {
                degenerate = false;
            }
            let p = if cfg.diagonal_weight {
                DMatrix::from_diagonal(&predicted.covariances[i].diagonal())
            } else {
                predicted.covariances[i].clone()
            };
            let m = weight_matrix(&p, gram, cfg.noise_var)?;
            let kh: DVector<Cx<T>> = gram * &h;
            let mkh = &m * &kh;
            let v = &h - &mkh;
            // c^H G c = σ^{-2} (ĥ^H K ĥ − (Kĥ)^H M (Kĥ))
            let hkh = h.dotc(&kh).re;
            let khmkh = kh.dotc(&mkh).re;
            signal_term += inv_var * (hkh - khmkh);
            let c = dft * &h;
            let y: Vec<Cx<T>> = obs.csi.column(i).iter().copied().collect();
            let y_energy = y.iter().fold(T::zero(), |a, z| a + z.norm_sqr());
            channels.push(ChannelTerms {
                y,
                c: c.iter().copied().collect(),
                m: m.as_slice().to_vec(),
                kh: kh.iter().copied().collect(),
                v: v.iter().copied().collect(),
                y_energy,
            });
        }
        Ok(NllKernel {
            pilots,
            cc,
            channels,
            inv_var,
            signal_term,
            offset_support: cfg.support.offset,
            full_circle: cfg.support.offset_is_full_circle(),
            degenerate,
        })
    }

    fn phasors(&self, slope: T) -> Vec<Cx<T>> {
        self.pilots
            .index_values()
            .iter()
            .map(|&q| cis(-q * slope))
            .collect()
    }

    /// `u = C^H E(Ωd)^H y` and its first two slope derivatives, written into the buffers.
    fn project(&self, ch: &ChannelTerms<T>, ph: &[Cx<T>], order: u8, u: &mut [Cx<T>], u1: &mut [Cx<T>], u2: &mut [Cx<T>]) {
        let l = u.len();
        let qs = self.pilots.index_values();
        u.iter_mut().for_each(|z| *z = zero());
        if order >= 1 {
            u1.iter_mut().for_each(|z| *z = zero());
        }
        if order >= 2 {
            u2.iter_mut().for_each(|z| *z = zero());
        }
        for (m, (&y, &p)) in ch.y.iter().zip(ph).enumerate() {
            let w = y * p;
            let row = &self.cc[m * l..(m + 1) * l];
            match order {
                0 => {
                    for t in 0..l {
                        u[t] += row[t] * w;
                    }
                }
                1 => {
                    let wq = w * qs[m];
                    for t in 0..l {
                        u[t] += row[t] * w;
                        u1[t] += row[t] * wq;
                    }
                }
                _ => {
                    let wq = w * qs[m];
                    let wqq = wq * qs[m];
                    for t in 0..l {
                        u[t] += row[t] * w;
                        u1[t] += row[t] * wq;
                        u2[t] += row[t] * wqq;
                    }
                }
            }
        }
        // d/dΩ e^{-jqΩ} = -jq e^{-jqΩ};  d²/dΩ² = -q² e^{-jqΩ}
        if order >= 1 {
            u1.iter_mut().for_each(|z| *z = Cx::new(z.im, -z.re));
        }
        if order >= 2 {
            u2.iter_mut().for_each(|z| *z = -*z);
        }
    }

    /// Offset minimizing `-2 Re(e^{-jΩ0} S)` on the offset support; `true` when interior.
    fn best_offset(&self, s: Cx<T>) -> (T, bool) {
        let theta = if s.norm_sqr() > T::zero() { arg(s) } else { T::zero() };
        if self.full_circle {
            return (wrap_angle(theta), true);
        }
        let iv = self.offset_support;
        if iv.contains(theta) {
            return (theta, true);
        }
        if s.norm_sqr() == T::zero() {
            return (iv.clamp(T::zero()), false);
        }
        let dist = |b: T| wrap_angle(theta - b).abs();
        if dist(iv.lo) <= dist(iv.hi) {
            (iv.lo, false)
        } else {
            (iv.hi, false)
        }
    }

    /// Profile `min_{Ω0} g(Ωd, Ω0)` and its slope derivatives up to `order`.
    fn profile(&self, slope: T, order: u8) -> ProfileEval<T> {
        let l = self.pilots.channel_length();
        let ph = self.phasors(slope);
        let two: T = lit(2.0);
        let mut u = vec![zero(); l];
        let mut u1 = vec![zero(); l];
        let mut u2 = vec![zero(); l];
        let mut base = self.signal_term;
        let mut base1 = T::zero();
        let mut base2 = T::zero();
        let mut s = zero::<T>();
        let mut s1 = zero::<T>();
        let mut s2 = zero::<T>();
        for ch in &self.channels {
            self.project(ch, &ph, order, &mut u, &mut u1, &mut u2);
            let quad = quad_form(&ch.m, l, &u, &u).re;
            base += self.inv_var * (ch.y_energy - quad);
            s += dot_conj(&ch.v, &u);
            if order >= 1 {
                base1 -= self.inv_var * two * quad_form(&ch.m, l, &u1, &u).re;
                s1 += dot_conj(&ch.v, &u1);
            }
            if order >= 2 {
                let a = quad_form(&ch.m, l, &u2, &u).re;
                let b = quad_form(&ch.m, l, &u1, &u1).re;
                base2 -= self.inv_var * two * (a + b);
                s2 += dot_conj(&ch.v, &u2);
            }
        }
        s *= self.inv_var;
        s1 *= self.inv_var;
        s2 *= self.inv_var;

        let (offset, interior) = self.best_offset(s);
        let mag = abs(s);
        let (value, d1, d2) = if interior && mag > T::zero() {
            let re1 = (s.conj() * s1).re;
            let m1 = re1 / mag;
            let m2 = (s1.norm_sqr() + (s.conj() * s2).re) / mag - re1 * re1 / (mag * mag * mag);
            (base - two * mag, base1 - two * m1, base2 - two * m2)
        } else {
            let rot = cis(-offset);
            (
                base - two * (rot * s).re,
                base1 - two * (rot * s1).re,
                base2 - two * (rot * s2).re,
            )
        };
        ProfileEval { value, d1, d2 }
    }

    /// `g(Ωd, Ω0)` in residual form, `Σ_i σ^{-2}(‖r_i‖² − (C^H r_i)^H M_i (C^H r_i))`
    /// with `r_i = E^H y_i − e^{jΩ0} C ĥ_i`.
    fn value(&self, slope: T, offset: T) -> T {
        let l = self.pilots.channel_length();
        let ph = self.phasors(slope);
        let rot = cis(offset);
        let mut u = vec![zero(); l];
        let mut scratch1 = vec![zero(); l];
        let mut scratch2 = vec![zero(); l];
        let mut total = T::zero();
        for ch in &self.channels {
            self.project(ch, &ph, 0, &mut u, &mut scratch1, &mut scratch2);
            let r_energy = ch
                .y
                .iter()
                .zip(&ph)
                .zip(&ch.c)
                .fold(T::zero(), |acc, ((&y, &p), &c)| acc + (y * p - rot * c).norm_sqr());
            let chr: Vec<Cx<T>> = u.iter().zip(&ch.kh).map(|(&a, &b)| a - rot * b).collect();
            let quad = quad_form(&ch.m, l, &chr, &chr).re;
            total += self.inv_var * (r_energy - quad);
        }
        total
    }

    fn s_at(&self, slope: T) -> Cx<T> {
        let l = self.pilots.channel_length();
        let ph = self.phasors(slope);
        let mut u = vec![zero(); l];
        let mut a = vec![zero(); l];
        let mut b = vec![zero(); l];
        let mut s = zero::<T>();
        for ch in &self.channels {
            self.project(ch, &ph, 0, &mut u, &mut a, &mut b);
            s += dot_conj(&ch.v, &u);
        }
        s * self.inv_var
    }
}

fn dot_conj<T: Real>(a: &[Cx<T>], b: &[Cx<T>]) -> Cx<T> {
    a.iter().zip(b).fold(zero(), |acc, (x, y)| acc + x.conj() * *y)
}

/// Negative log-likelihood `g(Ωd, Ω0)` of the observation under the predicted state.
pub fn nll<T: Real>(
    obs: &Observation<T>,
    predicted: &FilterState<T>,
    d: &PhaseDistortion<T>,
    pilots: &PilotSet<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<T> {
    let k = NllKernel::new(obs, predicted, pilots, cfg)?;
    Ok(k.value(d.slope, d.offset))
}

/// Value, first and second slope derivative of the offset-profiled NLL.
pub fn profile_nll<T: Real>(
    obs: &Observation<T>,
    predicted: &FilterState<T>,
    slope: T,
    pilots: &PilotSet<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<(T, T, T)> {
    let k = NllKernel::new(obs, predicted, pilots, cfg)?;
    let e = k.profile(slope, 2);
    Ok((e.value, e.d1, e.d2))
}

/// Exact minimizer over `Ω0` of `g` at a fixed slope:
/// `Ω0* = arg Σ_i (E C ĥ_i)^H γ_i y_i`, restricted to the offset support.
pub fn closed_form_offset<T: Real>(
    obs: &Observation<T>,
    predicted: &FilterState<T>,
    slope: T,
    pilots: &PilotSet<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<OffsetSolution<T>> {
    let k = NllKernel::new(obs, predicted, pilots, cfg)?;
    let s = k.s_at(slope);
    if k.degenerate || s.norm_sqr() == T::zero() {
        return Ok(OffsetSolution {
            offset: k.offset_support.clamp(T::zero()),
            degenerate: true,
        });
    }
    Ok(OffsetSolution {
        offset: k.best_offset(s).0,
        degenerate: false,
    })
}

/// MAP estimate of `(Ωd, Ω0)` over the prior supports.
pub fn estimate_distortion<T: Real>(
    obs: &Observation<T>,
    predicted: &FilterState<T>,
    pilots: &PilotSet<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<MapSolution<T>> {
    let kernel = NllKernel::new(obs, predicted, pilots, cfg)?;
    let support = cfg.support;
    let sup = support.slope;

    if kernel.degenerate {
        let slope = sup.clamp(T::zero());
        let offset = kernel.offset_support.clamp(T::zero());
        let distortion = PhaseDistortion { slope, offset, support: Some(support) };
        return Ok(MapSolution {
            nll_value: kernel.value(slope, offset),
            distortion,
            interval_index: interval_of(slope, &sup, cfg.n_intervals),
            iterations_used: 0,
            degenerate: true,
        });
    }

    let (slope, iterations) = if sup.width() == T::zero() {
        (sup.lo, 0)
    } else {
        search_slope(&kernel, &sup, cfg)
    };
    let offset = kernel.best_offset(kernel.s_at(slope)).0;
    let distortion = PhaseDistortion { slope, offset, support: Some(support) };
    Ok(MapSolution {
        nll_value: kernel.value(slope, offset),
        distortion,
        interval_index: interval_of(slope, &sup, cfg.n_intervals),
        iterations_used: iterations,
        degenerate: false,
    })
}

fn interval_of<T: Real>(x: T, sup: &Interval<T>, n: usize) -> usize {
    let w = sup.width();
    if w <= T::zero() || n <= 1 {
        return 0;
    }
    let pos = to_f64((x - sup.lo) / w) * n as f64;
    (pos.floor().max(0.0) as usize).min(n - 1)
}

fn search_slope<T: Real>(kernel: &NllKernel<'_, T>, sup: &Interval<T>, cfg: &EstimatorConfig<T>) -> (T, usize) {
    let n_probe = cfg.n_intervals * cfg.probes_per_interval + 1;
    let step = sup.width() / lit::<T>((n_probe - 1) as f64);
    let xs: Vec<T> = (0..n_probe)
        .map(|i| if i + 1 == n_probe { sup.hi } else { sup.lo + step * lit::<T>(i as f64) })
        .collect();
    let vals: Vec<T> = xs.iter().map(|&x| kernel.profile(x, 0).value).collect();

    let mut candidates: Vec<usize> = (0..n_probe)
        .filter(|&i| {
            let left = i == 0 || vals[i] <= vals[i - 1];
            let right = i + 1 == n_probe || vals[i] <= vals[i + 1];
            left && right
        })
        .collect();
    candidates.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    candidates.truncate(cfg.refine_candidates);

    let mut best_x = xs[candidates.first().copied().unwrap_or(0)];
    let mut best_v = vals[candidates.first().copied().unwrap_or(0)];
    let mut best_iters = 0;
    for &i in &candidates {
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(n_probe - 1)];
        let (x, v, iters) = newton_refine(kernel, xs[i], vals[i], lo, hi, cfg);
        if v < best_v {
            best_x = x;
            best_v = v;
            best_iters = iters;
        }
    }
    (best_x, best_iters)
}

/// Safeguarded Newton on the profile derivative inside `[lo, hi]`; falls back
/// to bisection when the curvature is not positive or the step leaves the bracket.
fn newton_refine<T: Real>(
    kernel: &NllKernel<'_, T>,
    x0: T,
    f0: T,
    mut lo: T,
    mut hi: T,
    cfg: &EstimatorConfig<T>,
) -> (T, T, usize) {
    let mut x = x0;
    let mut best = (x0, f0);
    let half: T = lit(0.5);
    let mut iters = 0;
    for it in 1..=cfg.newton_max_iters {
        iters = it;
        let e = kernel.profile(x, 2);
        if e.value < best.1 {
            best = (x, e.value);
        }
        if e.d1 > T::zero() {
            hi = x;
        } else if e.d1 < T::zero() {
            lo = x;
        } else {
            break;
        }
        let newton = x - e.d1 / e.d2;
        let next = if e.d2 > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * half
        };
        let moved = (next - x).abs();
        x = next;
        if moved < cfg.newton_tol || hi - lo < cfg.newton_tol {
            let v = kernel.profile(x, 0).value;
            if v < best.1 {
                best = (x, v);
            }
            break;
        }
    }
    (best.0, best.1, iters)
}

/// Kalman update at the MAP estimate:
/// `κ = P B̂^H (B̂ P B̂^H + σ² I)^{-1}`, `ĥ ← ĥ + κ (y − B̂ ĥ)`, `P ← (I − κ B̂) P`.
///
/// Evaluated in the tap domain as `κ B̂ = M K` and `κ y = M B̂^H y`.
pub fn update<T: Real>(
    obs: &Observation<T>,
    predicted: &FilterState<T>,
    sol: &MapSolution<T>,
    pilots: &PilotSet<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<FilterState<T>> {
    let q = pilots.n_pilots();
    let l = pilots.channel_length();
    let n = obs.n_channels();
    if obs.csi.nrows() != q {
        return Err(Error::dim("observation rows", q, obs.csi.nrows()));
    }
    if predicted.n_channels() != n || predicted.channel_length() != l {
        return Err(Error::dim(
            "predicted state",
            format!("{l}x{n}"),
            format!("{}x{}", predicted.channel_length(), predicted.n_channels()),
        ));
    }
    if !(cfg.noise_var > T::zero()) {
        return Err(Error::Numeric("noise variance must be positive".into()));
    }
    let d = &sol.distortion;
    let gram = pilots.gram();
    // B̂^H = e^{-jΩ0} C^H E^H
    let derot: DVector<Cx<T>> = DVector::from_iterator(
        q,
        pilots.index_values().iter().map(|&qm| cis(-d.phase_at(qm))),
    );
    let ch = pilots.dft().adjoint();
    let half = Cx::new(lit::<T>(0.5), T::zero());

    let mut estimate = predicted.estimate.clone();
    let mut covariances = Vec::with_capacity(n);
    for i in 0..n {
        let p = &predicted.covariances[i];
        let m = weight_matrix(p, gram, cfg.noise_var)?;
        let h = predicted.estimate.column(i).into_owned();
        let y = obs.csi.column(i).component_mul(&derot);
        let innovation = &ch * y - gram * &h;
        estimate.set_column(i, &(&h + &m * innovation));
        let post = p - &m * gram * p;
        covariances.push((&post + post.adjoint()) * half);
    }
    Ok(FilterState {
        estimate,
        covariances,
        phase: sol.distortion,
        packet_index: obs.packet_index,
    })
}

/// predict → estimate_distortion → update.
pub fn step<T: Real>(
    obs: &Observation<T>,
    state: &FilterState<T>,
    cfg: &EstimatorConfig<T>,
    pilots: &PilotSet<T>,
) -> Result<(FilterState<T>, MapSolution<T>)> {
    let predicted = predict(state, cfg)?;
    let sol = estimate_distortion(obs, &predicted, pilots, cfg)?;
    let next = update(obs, &predicted, &sol, pilots, cfg)?;
    Ok((next, sol))
}

/// Filter step with known distortion parameters (no MAP search).
pub fn step_known<T: Real>(
    obs: &Observation<T>,
    state: &FilterState<T>,
    d: &PhaseDistortion<T>,
    cfg: &EstimatorConfig<T>,
    pilots: &PilotSet<T>,
) -> Result<FilterState<T>> {
    let predicted = predict(state, cfg)?;
    update(obs, &predicted, &MapSolution::known(*d), pilots, cfg)
}

/// Stateful wrapper running the filter packet by packet.
#[derive(Clone, Debug)]
pub struct KalmanMap<T: Real> {
    cfg: EstimatorConfig<T>,
    pilots: PilotSet<T>,
    state: FilterState<T>,
}

impl<T: Real> KalmanMap<T> {
    pub fn new(cfg: EstimatorConfig<T>, pilots: PilotSet<T>) -> Result<Self> {
        let n = cfg.n_channels();
        cfg.validate(&pilots, n)?;
        let state = init_filter(&pilots, n);
        Ok(KalmanMap { cfg, pilots, state })
    }

    pub fn state(&self) -> &FilterState<T> {
        &self.state
    }

    pub fn config(&self) -> &EstimatorConfig<T> {
        &self.cfg
    }

    pub fn pilots(&self) -> &PilotSet<T> {
        &self.pilots
    }

    pub fn step(&mut self, obs: &Observation<T>) -> Result<MapSolution<T>> {
        let (next, sol) = step(obs, &self.state, &self.cfg, &self.pilots)?;
        self.state = next;
        Ok(sol)
    }

    pub fn step_known(&mut self, obs: &Observation<T>, d: &PhaseDistortion<T>) -> Result<()> {
        self.state = step_known(obs, &self.state, d, &self.cfg, &self.pilots)?;
        Ok(())
    }
}
