//! Domain types and the pure observation / evolution equations.
//!
//! The observed CSI of packet `k` is
//! `H_obs = e^{jΩ0} · E(Ωd) · C · H + W`, where `C` is the pilot DFT matrix,
//! `E(Ωd) = diag(e^{jΩd q_m})` the phase ramp and `H` the `L × N` time-domain
//! channel (one column per TX/RX pair). The channel follows the AR(1) model
//! `H_k = α H_{k-1} + V_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cis, lit, to_f64, wrap_angle, Cx, Real};

/// Serializable description of a pilot layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotSpec {
    pub dft_size: usize,
    pub pilot_indices: Vec<i64>,
    pub channel_length: usize,
}

impl Default for PilotSpec {
    /// 40 MHz 802.11n-like layout: 114 pilots at ±2..±58 on a 128-point grid, 8 taps.
    fn default() -> Self {
        let pilot_indices = (-58..=-2).chain(2..=58).collect();
        PilotSpec {
            dft_size: 128,
            pilot_indices,
            channel_length: 8,
        }
    }
}

/// Observed subcarriers of an `M`-point DFT grid and the channel length `L`.
///
/// Owns the `Q × L` DFT matrix `C` with `C[m, l] = e^{-j 2π q_m l / M}` and its
/// Gram matrix `C^H C`.
#[derive(Clone, Debug)]
pub struct PilotSet<T: Real> {
    spec: PilotSpec,
    indices: Vec<T>,
    dft: DMatrix<Cx<T>>,
    gram: DMatrix<Cx<T>>,
}

impl<T: Real> PilotSet<T> {
    pub fn new(dft_size: usize, pilot_indices: Vec<i64>, channel_length: usize) -> Result<Self> {
        Self::from_spec(PilotSpec {
            dft_size,
            pilot_indices,
            channel_length,
        })
    }

    pub fn from_spec(spec: PilotSpec) -> Result<Self> {
        let m = spec.dft_size;
        let q = spec.pilot_indices.len();
        let l = spec.channel_length;
        if m == 0 || l == 0 {
            return Err(Error::InvalidInput(
                "dft_size and channel_length must be positive".into(),
            ));
        }
        if q > m {
            return Err(Error::InvalidInput(format!(
                "{q} pilots exceed the DFT size {m}"
            )));
        }
        if l + 2 > q {
            return Err(Error::InvalidInput(format!(
                "channel length {l} needs at least {} pilots, got {q}",
                l + 2
            )));
        }
        let mut sorted = spec.pilot_indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("pilot indices must be distinct".into()));
        }

        let two_pi = T::two_pi();
        let m_t = lit::<T>(m as f64);
        let dft = DMatrix::from_fn(q, l, |row, tap| {
            // reduce q·l modulo M exactly before scaling
            let r = (spec.pilot_indices[row] * tap as i64).rem_euclid(m as i64);
            cis(-two_pi * lit::<T>(r as f64) / m_t)
        });
        let gram = dft.adjoint() * &dft;
        let indices = spec
            .pilot_indices
            .iter()
            .map(|&v| lit::<T>(v as f64))
            .collect();
        Ok(PilotSet {
            spec,
            indices,
            dft,
            gram,
        })
    }

    /// Default 114-pilot layout, see [`PilotSpec::default`].
    pub fn wifi_40mhz() -> Self {
        Self::from_spec(PilotSpec::default()).expect("default pilot layout is valid")
    }

    pub fn spec(&self) -> &PilotSpec {
        &self.spec
    }

    pub fn dft_size(&self) -> usize {
        self.spec.dft_size
    }

    pub fn pilot_indices(&self) -> &[i64] {
        &self.spec.pilot_indices
    }

    /// Pilot indices converted to `T`.
    pub fn index_values(&self) -> &[T] {
        &self.indices
    }

    pub fn n_pilots(&self) -> usize {
        self.spec.pilot_indices.len()
    }

    pub fn channel_length(&self) -> usize {
        self.spec.channel_length
    }

    pub fn max_abs_index(&self) -> i64 {
        self.spec
            .pilot_indices
            .iter()
            .map(|q| q.abs())
            .max()
            .unwrap_or(0)
    }

    /// The `Q × L` DFT matrix `C`.
    pub fn dft(&self) -> &DMatrix<Cx<T>> {
        &self.dft
    }

    /// `C^H C`, which is also `B^H B` for every distortion.
    pub fn gram(&self) -> &DMatrix<Cx<T>> {
        &self.gram
    }

    /// Diagonal of the pilot-index matrix `diag(q_1, …, q_Q)`.
    pub fn index_diag(&self) -> DVector<T> {
        DVector::from_column_slice(&self.indices)
    }

    /// Position of a pilot index within the set.
    pub fn position(&self, pilot_index: i64) -> Option<usize> {
        self.spec.pilot_indices.iter().position(|&q| q == pilot_index)
    }
}

/// DFT matrix `C` of a pilot set.
pub fn dft_matrix<T: Real>(pilots: &PilotSet<T>) -> DMatrix<Cx<T>> {
    pilots.dft().clone()
}

/// Closed real interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidInput(format!(
                "interval bounds out of order: [{}, {}]",
                to_f64(lo),
                to_f64(hi)
            )));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(x: T) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn symmetric(half_width: T) -> Self {
        Interval {
            lo: -half_width,
            hi: half_width,
        }
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: T) -> T {
        x.clamp(self.lo, self.hi)
    }

    pub fn midpoint(&self) -> T {
        (self.lo + self.hi) * lit(0.5)
    }

    fn negated(&self) -> Self {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

/// Prior supports of the slope and offset errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSupport<T> {
    pub slope: Interval<T>,
    pub offset: Interval<T>,
}

impl<T: Real> PriorSupport<T> {
    /// Slope in `[-0.2, 0.2]`, offset over the full circle `[-π, π]`.
    pub fn wifi_default() -> Self {
        PriorSupport {
            slope: Interval::symmetric(lit(0.2)),
            offset: Interval::symmetric(T::pi()),
        }
    }

    /// True when the offset support covers a full turn, i.e. imposes no constraint.
    pub fn offset_is_full_circle(&self) -> bool {
        self.offset.width() >= T::two_pi() - lit(1e-12)
    }

    pub fn contains(&self, slope: T, offset: T) -> bool {
        self.slope.contains(slope) && (self.offset_is_full_circle() || self.offset.contains(offset))
    }
}

/// Phase slope `Ωd` (radians per subcarrier index) and offset `Ω0` (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseDistortion<T> {
    pub slope: T,
    /// Canonicalized to `(-π, π]`.
    pub offset: T,
    pub support: Option<PriorSupport<T>>,
}

impl<T: Real> PhaseDistortion<T> {
    /// Unconstrained distortion.
    pub fn new(slope: T, offset: T) -> Self {
        PhaseDistortion {
            slope,
            offset: wrap_angle(offset),
            support: None,
        }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Distortion with prior supports; rejects values outside them.
    pub fn with_support(slope: T, offset: T, support: PriorSupport<T>) -> Result<Self> {
        let offset = wrap_angle(offset);
        if !support.contains(slope, offset) {
            return Err(Error::InvalidInput(format!(
                "distortion ({}, {}) outside its prior support",
                to_f64(slope),
                to_f64(offset)
            )));
        }
        Ok(PhaseDistortion {
            slope,
            offset,
            support: Some(support),
        })
    }

    /// `(-Ωd, -Ω0)`; undoes [`apply_distortion`].
    pub fn negated(&self) -> Self {
        PhaseDistortion {
            slope: -self.slope,
            offset: wrap_angle(-self.offset),
            support: self.support.map(|s| PriorSupport {
                slope: s.slope.negated(),
                offset: s.offset.negated(),
            }),
        }
    }

    /// Phase applied at pilot index `q`: `Ω0 + Ωd q`.
    #[inline]
    pub fn phase_at(&self, q: T) -> T {
        self.offset + self.slope * q
    }
}

/// Multiplies row `m` of a `Q × N` frequency-domain matrix by `e^{j(Ω0 + Ωd q_m)}`.
pub fn apply_distortion<T: Real>(
    clean: &DMatrix<Cx<T>>,
    d: &PhaseDistortion<T>,
    pilots: &PilotSet<T>,
) -> Result<DMatrix<Cx<T>>> {
    if clean.nrows() != pilots.n_pilots() {
        return Err(Error::dim("distortion input rows", pilots.n_pilots(), clean.nrows()));
    }
    let mut out = clean.clone();
    for (m, &q) in pilots.index_values().iter().enumerate() {
        let rot = cis(d.phase_at(q));
        for v in out.row_mut(m).iter_mut() {
            *v *= rot;
        }
    }
    Ok(out)
}

/// Exponential power delay profile `σ²_l ∝ e^{-l / decay}`, normalized to unit sum.
pub fn exponential_profile<T: Real>(channel_length: usize, decay: f64) -> Vec<T> {
    let raw: Vec<f64> = (0..channel_length)
        .map(|l| (-(l as f64) / decay).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| lit(p / total)).collect()
}

/// Time-domain MIMO channel with its AR(1) statistics.
///
/// Matrices are `L × N`: one column per channel, one row per tap.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState<T: Real> {
    pub taps: DMatrix<Cx<T>>,
    pub alpha: T,
    /// Per-tap process-noise variance `σ²_v` of each channel.
    pub process_noise: DMatrix<T>,
    /// Tap power profile `σ²_{i,l}`; every column sums to one.
    pub profile: DMatrix<T>,
}

impl<T: Real> ChannelState<T> {
    pub fn new(
        taps: DMatrix<Cx<T>>,
        alpha: T,
        process_noise: DMatrix<T>,
        profile: DMatrix<T>,
    ) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1], got {}",
                to_f64(alpha)
            )));
        }
        let shape = taps.shape();
        if process_noise.shape() != shape {
            return Err(Error::dim("process noise", format!("{shape:?}"), format!("{:?}", process_noise.shape())));
        }
        if profile.shape() != shape {
            return Err(Error::dim("tap profile", format!("{shape:?}"), format!("{:?}", profile.shape())));
        }
        if process_noise.iter().chain(profile.iter()).any(|&v| v < T::zero()) {
            return Err(Error::InvalidInput("variances must be nonnegative".into()));
        }
        let tol = if std::mem::size_of::<T>() >= 8 { 1e-12 } else { 1e-5 };
        for (i, col) in profile.column_iter().enumerate() {
            let sum = to_f64(col.sum());
            if (sum - 1.0).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "tap profile of channel {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ChannelState {
            taps,
            alpha,
            process_noise,
            profile,
        })
    }

    /// Process noise `(1 - α²) σ²_{i,l}`, which keeps the tap powers stationary at the profile.
    pub fn stationary(taps: DMatrix<Cx<T>>, alpha: T, profile: DMatrix<T>) -> Result<Self> {
        let q = profile.map(|p| (T::one() - alpha * alpha) * p);
        Self::new(taps, alpha, q, profile)
    }

    pub fn n_channels(&self) -> usize {
        self.taps.ncols()
    }

    pub fn channel_length(&self) -> usize {
        self.taps.nrows()
    }

    /// Keeps only the listed channel columns.
    pub fn select_channels(&self, columns: &[usize]) -> Self {
        ChannelState {
            taps: self.taps.select_columns(columns),
            alpha: self.alpha,
            process_noise: self.process_noise.select_columns(columns),
            profile: self.profile.select_columns(columns),
        }
    }
}

/// One AR(1) transition `H ← α H + V`; `None` means a noiseless step.
pub fn ar1_step<T: Real>(
    state: &ChannelState<T>,
    noise: Option<&DMatrix<Cx<T>>>,
) -> Result<ChannelState<T>> {
    let alpha = Cx::new(state.alpha, T::zero());
    let mut next = state.clone();
    next.taps = state.taps.map(|h| h * alpha);
    if let Some(v) = noise {
        if v.shape() != state.taps.shape() {
            return Err(Error::dim(
                "process noise draw",
                format!("{:?}", state.taps.shape()),
                format!("{:?}", v.shape()),
            ));
        }
        next.taps += v;
    }
    Ok(next)
}

/// Observed CSI of one packet: `Q × N`, with its noise variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T: Real> {
    pub csi: DMatrix<Cx<T>>,
    pub noise_var: T,
    pub packet_index: usize,
}

impl<T: Real> Observation<T> {
    pub fn new(
        csi: DMatrix<Cx<T>>,
        noise_var: T,
        packet_index: usize,
        pilots: &PilotSet<T>,
    ) -> Result<Self> {
        if csi.nrows() != pilots.n_pilots() {
            return Err(Error::dim("observation rows", pilots.n_pilots(), csi.nrows()));
        }
        if csi.ncols() == 0 {
            return Err(Error::InvalidInput("observation has no channels".into()));
        }
        if !(noise_var >= T::zero()) {
            return Err(Error::InvalidInput("noise variance must be nonnegative".into()));
        }
        Ok(Observation {
            csi,
            noise_var,
            packet_index,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.csi.ncols()
    }

    pub fn select_channels(&self, columns: &[usize]) -> Self {
        Observation {
            csi: self.csi.select_columns(columns),
            noise_var: self.noise_var,
            packet_index: self.packet_index,
        }
    }
}

/// `H_obs = e^{jΩ0} E(Ωd) C H + W`. A zero `noise_var` is allowed for noiseless tests.
pub fn observe<T: Real>(
    state: &ChannelState<T>,
    d: &PhaseDistortion<T>,
    noise_var: T,
    pilots: &PilotSet<T>,
    noise: Option<&DMatrix<Cx<T>>>,
) -> Result<Observation<T>> {
    if state.channel_length() != pilots.channel_length() {
        return Err(Error::dim("channel length", pilots.channel_length(), state.channel_length()));
    }
    if !(noise_var >= T::zero()) {
        return Err(Error::InvalidInput("noise variance must be nonnegative".into()));
    }
    let clean = pilots.dft() * &state.taps;
    let mut csi = apply_distortion(&clean, d, pilots)?;
    if let Some(w) = noise {
        if w.shape() != csi.shape() {
            return Err(Error::dim(
                "observation noise draw",
                format!("{:?}", csi.shape()),
                format!("{:?}", w.shape()),
            ));
        }
        csi += w;
    }
    Ok(Observation {
        csi,
        noise_var,
        packet_index: 0,
    })
}

/// Channel estimate with per-channel `L × L` error covariances.
#[derive(Clone, Debug)]
pub struct FilterState<T: Real> {
    pub estimate: DMatrix<Cx<T>>,
    pub covariances: Vec<DMatrix<Cx<T>>>,
    pub phase: PhaseDistortion<T>,
    pub packet_index: usize,
}

impl<T: Real> FilterState<T> {
    pub fn n_channels(&self) -> usize {
        self.estimate.ncols()
    }

    pub fn channel_length(&self) -> usize {
        self.estimate.nrows()
    }

    /// Sum of the covariance traces.
    pub fn covariance_trace(&self) -> T {
        self.covariances
            .iter()
            .fold(T::zero(), |acc, p| acc + p.trace().re)
    }

    /// Checks that every covariance is Hermitian and PSD within `tol`.
    pub fn check_invariants(&self, tol: T) -> Result<()> {
        for (i, p) in self.covariances.iter().enumerate() {
            check_hermitian_psd(p, tol).map_err(|msg| {
                Error::Numeric(format!("covariance of channel {i}: {msg}"))
            })?;
        }
        Ok(())
    }
}

pub(crate) fn check_hermitian_psd<T: Real>(p: &DMatrix<Cx<T>>, tol: T) -> std::result::Result<(), String> {
    if !p.is_square() {
        return Err("not square".into());
    }
    let asym = (p - p.adjoint()).iter().fold(T::zero(), |m, v| m.max(v.norm_sqr().sqrt()));
    if asym > tol {
        return Err(format!("not Hermitian (deviation {})", to_f64(asym)));
    }
    let sym = (p + p.adjoint()).map(|v| v * Cx::new(lit(0.5), T::zero()));
    let min = sym
        .symmetric_eigenvalues()
        .iter()
        .fold(T::max_value().unwrap_or(T::one()), |m, &v| m.min(v));
    if min < -tol {
        return Err(format!("negative eigenvalue {}", to_f64(min)));
    }
    Ok(())
}
