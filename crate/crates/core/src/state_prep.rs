//! Initial states: vacuum bins, single-photon temporal modes in a 0/1
//! superposition, and the optomechanical system in its ground state at
//! chain position 0.
//!
//! Chain layout: site 0 is the system, bin `n` sits at site `n + 1`.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ProtocolParams;
use crate::linalg;
use crate::mps::{guarded_inverse, MpsError, MpsSegment, MpsState, Tensor3};

/// Tolerance on `Σ|f|² = 1` and `|c0|² + |c1|² = 1`.
pub const NORM_TOL: f64 = 1e-10;

/// Schmidt weights below this fraction of the largest are rounding noise and
/// are dropped from the segment bonds.
const WEIGHT_FLOOR: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum StatePrepError {
    #[error("mode window [{start}, {end}) does not fit in {n_bins} bins")]
    OutOfRange { start: isize, end: isize, n_bins: usize },
    #[error("mode window [{start}, {end}) overlaps another mode")]
    Overlap { start: usize, end: usize },
    #[error("mode is empty or has zero norm")]
    EmptyMode,
    #[error("input is not normalized (norm² = {0})")]
    NotNormalized(f64),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

pub type PrepResult<T> = Result<T, StatePrepError>;

/// Single-photon wavepacket `Σ f_n c†_n` over bins `start_bin..start_bin + len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalMode {
    pub start_bin: usize,
    pub amplitudes: Vec<C64>,
    pub center_time: f64,
    pub tau: f64,
}

impl TemporalMode {
    /// Mode from raw amplitudes, normalized.
    pub fn from_amplitudes(start_bin: usize, amplitudes: Vec<C64>, dt: f64) -> PrepResult<Self> {
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if amplitudes.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(StatePrepError::EmptyMode);
        }
        let len = amplitudes.len();
        let amplitudes = amplitudes.into_iter().map(|z| z / norm).collect();
        Ok(Self {
            start_bin,
            amplitudes,
            center_time: (start_bin as f64 + len as f64 / 2.0) * dt,
            tau: len as f64 * dt,
        })
    }

    /// One past the last bin.
    pub fn end_bin(&self) -> usize {
        self.start_bin + self.amplitudes.len()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn bins(&self) -> std::ops::Range<usize> {
        self.start_bin..self.end_bin()
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    fn overlaps(&self, other: &TemporalMode) -> bool {
        self.start_bin < other.end_bin() && other.start_bin < self.end_bin()
    }

    /// CSV with header `bin_index,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_index,re,im")?;
        for (k, z) in self.amplitudes.iter().enumerate() {
            writeln!(w, "{},{},{}", self.start_bin + k, z.re, z.im)?;
        }
        Ok(())
    }
}

/// Time-bin discretization of the feedback waveguide and the photon modes
/// placed in it. Bin `n` covers `[n dt, (n + 1) dt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveguideLayout {
    pub n_bins: usize,
    pub dt: f64,
    pub bin_dim: usize,
    pub modes: Vec<TemporalMode>,
}

impl WaveguideLayout {
    /// Empty waveguide of `n_bins` bins.
    pub fn new(n_bins: usize, dt: f64, bin_dim: usize) -> PrepResult<Self> {
        if n_bins == 0 || dt <= 0.0 || !dt.is_finite() || bin_dim < 2 {
            return Err(StatePrepError::Layout(format!(
                "need n_bins > 0, dt > 0, bin_dim >= 2 (got {n_bins}, {dt}, {bin_dim})"
            )));
        }
        Ok(Self { n_bins, dt, bin_dim, modes: Vec::new() })
    }

    /// The protocol layout: a half mechanical period of bins, with two
    /// Gaussian modes centred at `3τ/2` and `3τ/2 + T_m/4`.
    pub fn protocol(params: &ProtocolParams) -> PrepResult<Self> {
        if params.omega_m <= 0.0 {
            return Err(StatePrepError::Layout("omega_m must be positive".into()));
        }
        let mut layout = Self::new(params.n_bins(), params.dt, params.bin_dim)?;
        let first = 1.5 * params.tau;
        let second = first + PI / (2.0 * params.omega_m);
        for center in [first, second] {
            let mode = gaussian_mode(center, params.tau, &layout)?;
            layout.push_mode(mode)?;
        }
        Ok(layout)
    }

    /// Add a mode after checking that it fits and is disjoint from the others.
    pub fn push_mode(&mut self, mode: TemporalMode) -> PrepResult<()> {
        if mode.is_empty() {
            return Err(StatePrepError::EmptyMode);
        }
        if mode.end_bin() > self.n_bins {
            return Err(StatePrepError::OutOfRange {
                start: mode.start_bin as isize,
                end: mode.end_bin() as isize,
                n_bins: self.n_bins,
            });
        }
        if self.modes.iter().any(|m| m.overlaps(&mode)) {
            return Err(StatePrepError::Overlap { start: mode.start_bin, end: mode.end_bin() });
        }
        self.modes.push(mode);
        Ok(())
    }

    /// Bin index containing each mode centre.
    pub fn mode_centers(&self) -> Vec<usize> {
        self.modes.iter().map(|m| (m.center_time / self.dt).floor().max(0.0) as usize).collect()
    }

    /// Number of chain sites including the system.
    pub fn n_sites(&self) -> usize {
        self.n_bins + 1
    }

    /// Bond midway between the first two modes, used for the photon-photon
    /// entropy. Bond `b` separates sites `0..=b` from the rest.
    pub fn inter_mode_bond(&self) -> PrepResult<usize> {
        let mut modes: Vec<&TemporalMode> = self.modes.iter().collect();
        modes.sort_by_key(|m| m.start_bin);
        if modes.len() < 2 {
            return Err(StatePrepError::Layout("need two modes for a photon-photon bond".into()));
        }
        // left side of bond b holds the system and bins 0..b
        Ok((modes[0].end_bin() + modes[1].start_bin) / 2)
    }
}

/// Gaussian envelope `exp(-(t - c)²/(2 s²))` with `s = τ/4`, sampled at bin
/// centres `(n + 1/2) dt` over the window `t - c ∈ [-τ/2, τ/2)`, normalized.
pub fn gaussian_mode(center_time: f64, tau: f64, layout: &WaveguideLayout) -> PrepResult<TemporalMode> {
    if !(tau > 0.0) || !center_time.is_finite() {
        return Err(StatePrepError::EmptyMode);
    }
    let dt = layout.dt;
    let s = tau / 4.0;
    // bins with (n + 1/2) dt - c in [-τ/2, τ/2)
    let lo = ((center_time - tau / 2.0) / dt - 0.5).ceil();
    let hi = ((center_time + tau / 2.0) / dt - 0.5).ceil();
    if lo < 0.0 || hi > layout.n_bins as f64 {
        return Err(StatePrepError::OutOfRange { start: lo as isize, end: hi as isize, n_bins: layout.n_bins });
    }
    let (start, end) = (lo as usize, hi as usize);
    if end <= start {
        return Err(StatePrepError::EmptyMode);
    }
    let amps: Vec<C64> = (start..end)
        .map(|n| {
            let t = (n as f64 + 0.5) * dt - center_time;
            C64::new((-t * t / (2.0 * s * s)).exp(), 0.0)
        })
        .collect();
    let mut mode = TemporalMode::from_amplitudes(start, amps, dt)?;
    mode.center_time = center_time;
    mode.tau = tau;
    if layout.modes.iter().any(|m| m.overlaps(&mode)) {
        return Err(StatePrepError::Overlap { start, end });
    }
    Ok(mode)
}

/// Canonical segment for `c0 |0…0> + c1 Σ f_n c†_n |0…0>` over the mode's bins.
///
/// Built site by site from the Schmidt decomposition at each bond in the
/// two-dimensional bases `{|0_L>, |ψ̂_L>}`, where `|ψ̂_L>` is the
/// normalized single-photon part supported on the block. Bond dimension is
/// at most two.
pub fn decompose_mode_state(mode: &TemporalMode, c0: C64, c1: C64, bin_dim: usize) -> PrepResult<MpsSegment> {
    let cn = c0.norm_sqr() + c1.norm_sqr();
    if (cn - 1.0).abs() > NORM_TOL {
        return Err(StatePrepError::NotNormalized(cn));
    }
    let fnorm = mode.norm_squared();
    if (fnorm - 1.0).abs() > NORM_TOL {
        return Err(StatePrepError::NotNormalized(fnorm));
    }
    if bin_dim < 2 {
        return Err(StatePrepError::Layout("bin_dim must be at least 2".into()));
    }
    let f = &mode.amplitudes;
    let len = f.len();
    // prefix[k] = Σ_{n<k} |f_n|², suffix[k] = Σ_{n>=k} |f_n|²
    let mut prefix = vec![0.0; len + 1];
    for k in 0..len {
        prefix[k + 1] = prefix[k] + f[k].norm_sqr();
    }
    let mut suffix = vec![0.0; len + 1];
    for k in (0..len).rev() {
        suffix[k] = suffix[k + 1] + f[k].norm_sqr();
    }

    // u[k]: 2 x χ_k, Schmidt vectors of bond k (after site k) in the
    // {|0_L>, |ψ̂_L>} basis. Bond "-1" is the empty block.
    let mut us: Vec<[Vec<C64>; 2]> = Vec::with_capacity(len);
    let mut lambdas: Vec<Vec<f64>> = Vec::with_capacity(len.saturating_sub(1));
    for k in 0..len.saturating_sub(1) {
        let p_l = prefix[k + 1];
        let p_r = suffix[k + 1];
        // coefficients in {|0_L>, |ψ̂_L>} x {|0_R>, |ψ̂_R>}; an SVD keeps small
        // Schmidt values accurate where eigenvalues of M M† would not
        let m = faer::Mat::from_fn(2, 2, |r, c| match (r, c) {
            (0, 0) => c0,
            (0, 1) => c1 * p_r.sqrt(),
            (1, 0) => c1 * p_l.sqrt(),
            _ => C64::new(0.0, 0.0),
        });
        let svd = linalg::thin_svd(m.as_ref()).map_err(MpsError::from)?;
        let smax = svd.s[0];
        let mut col0 = Vec::new();
        let mut col1 = Vec::new();
        let mut lam = Vec::new();
        for (idx, &sv) in svd.s.iter().enumerate() {
            if sv * sv > WEIGHT_FLOOR * smax * smax {
                lam.push(sv);
                col0.push(svd.u[(0, idx)]);
                col1.push(svd.u[(1, idx)]);
            }
        }
        let total: f64 = lam.iter().map(|x| x * x).sum::<f64>().sqrt();
        lambdas.push(lam.into_iter().map(|x| x / total).collect());
        us.push([col0, col1]);
    }
    // whole segment: the state itself
    us.push([vec![c0], vec![c1]]);

    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let mut gammas = Vec::with_capacity(len);
    for k in 0..len {
        let (prev0, prev1): (Vec<C64>, Vec<C64>) = if k == 0 {
            (vec![one], vec![zero])
        } else {
            (us[k - 1][0].clone(), us[k - 1][1].clone())
        };
        let cur = &us[k];
        let p_prev = prefix[k];
        let p_cur = prefix[k + 1];
        // <b'_{k-1}, i | b_k> in the two-vector bases
        let t0_pp = if p_cur > 0.0 { (p_prev / p_cur).sqrt() } else { 0.0 };
        let t1_0p = if p_cur > 0.0 { f[k] / p_cur.sqrt() } else { zero };
        let chi_l = prev0.len();
        let chi_r = cur[0].len();
        let inv = if k == 0 { vec![1.0] } else { guarded_inverse(&lambdas[k - 1]) };
        let mut g = Tensor3::zeros(chi_l, bin_dim, chi_r);
        for a in 0..chi_l {
            for b in 0..chi_r {
                let a0 = prev0[a].conj() * cur[0][b] + prev1[a].conj() * t0_pp * cur[1][b];
                let a1 = prev0[a].conj() * t1_0p * cur[1][b];
                g.set(a, 0, b, a0 * inv[a]);
                g.set(a, 1, b, a1 * inv[a]);
            }
        }
        gammas.push(g);
    }
    Ok(MpsSegment { gammas, lambdas })
}

fn vacuum_segment(n: usize, bin_dim: usize) -> MpsSegment {
    let mut v = vec![C64::new(0.0, 0.0); bin_dim];
    v[0] = C64::new(1.0, 0.0);
    MpsSegment::product(&vec![v; n])
}

/// Full chain with the system in `|0>_o|0>_m` and each layout mode in
/// `coeffs[m].0 |0> + coeffs[m].1 |1>`.
pub fn assemble_state(params: &ProtocolParams, layout: &WaveguideLayout, coeffs: &[(C64, C64)]) -> PrepResult<MpsState> {
    if coeffs.len() != layout.modes.len() {
        return Err(StatePrepError::Layout(format!(
            "{} mode coefficients for {} modes",
            coeffs.len(),
            layout.modes.len()
        )));
    }
    if params.bin_dim != layout.bin_dim {
        return Err(StatePrepError::Layout("bin_dim differs between params and layout".into()));
    }
    let d_sys = params.d_cav * params.d_mech;
    let mut sys = vec![C64::new(0.0, 0.0); d_sys];
    sys[0] = C64::new(1.0, 0.0);
    let mut segments = vec![MpsSegment::product(&[sys])];

    let mut order: Vec<usize> = (0..layout.modes.len()).collect();
    order.sort_by_key(|&m| layout.modes[m].start_bin);
    let mut cursor = 0;
    for m in order {
        let mode = &layout.modes[m];
        segments.push(vacuum_segment(mode.start_bin - cursor, layout.bin_dim));
        let (c0, c1) = coeffs[m];
        segments.push(decompose_mode_state(mode, c0, c1, layout.bin_dim)?);
        cursor = mode.end_bin();
    }
    segments.push(vacuum_segment(layout.n_bins - cursor, layout.bin_dim));
    Ok(MpsState::from_segments(segments, Some(0))?)
}

/// `(1 + A†_1)(1 + A†_2)|vac>|0>_o|0>_m / 2`.
pub fn assemble_initial_state(params: &ProtocolParams, layout: &WaveguideLayout) -> PrepResult<MpsState> {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    assemble_state(params, layout, &vec![(h, h); layout.modes.len()])
}

/// `|jk> = A†_1^j A†_2^k |vac>|0>_o|0>_m`.
pub fn reference_basis_state(j: usize, k: usize, params: &ProtocolParams, layout: &WaveguideLayout) -> PrepResult<MpsState> {
    if j > 1 || k > 1 || layout.modes.len() != 2 {
        return Err(StatePrepError::Layout("reference states need two modes and j, k in {0, 1}".into()));
    }
    let pick = |x: usize| {
        if x == 1 {
            (C64::new(0.0, 0.0), C64::new(1.0, 0.0))
        } else {
            (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
        }
    };
    assemble_state(params, layout, &[pick(j), pick(k)])
}
