//! Exact state-vector evolution for small chains, used to check the MPS code.
//!
//! Amplitudes are stored in canonical order: the system first, then bins
//! `0..N`, row-major (last bin fastest). Instead of swapping, the closed-loop
//! schedule applies the gate directly to (system, bin `t mod N`).

use faer::MatRef;
use num_complex::Complex64 as C64;
use thiserror::Error;

use rand::Rng;

use crate::dynamics::{self, ProtocolParams};
use crate::mps::{MpsError, MpsState, Tensor3, TwoSiteGate, Truncation};
use crate::state_prep::{self, TemporalMode, WaveguideLayout};

/// Default cap on the number of bins a dense state may hold.
pub const DEFAULT_MAX_BINS: usize = 10;
/// Hard cap on the amplitude count.
pub const MAX_AMPLITUDES: usize = 1 << 26;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dense state of {0} amplitudes is too large")]
    TooLarge(u128),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("case setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

pub type DenseResult<T> = Result<T, DenseError>;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub amplitudes: Vec<C64>,
    pub dims: Vec<usize>,
}

fn checked_size(dims: &[usize]) -> DenseResult<usize> {
    let total: u128 = dims.iter().map(|&d| d as u128).product();
    if total > MAX_AMPLITUDES as u128 {
        return Err(DenseError::TooLarge(total));
    }
    Ok(total as usize)
}

impl DenseState {
    pub fn new(amplitudes: Vec<C64>, dims: Vec<usize>) -> DenseResult<Self> {
        let n = checked_size(&dims)?;
        if amplitudes.len() != n {
            return Err(DenseError::Dimension(format!("{} amplitudes for dims {dims:?}", amplitudes.len())));
        }
        Ok(Self { amplitudes, dims })
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &DenseState) -> DenseResult<C64> {
        if self.dims != other.dims {
            return Err(DenseError::Dimension("inner product of different layouts".into()));
        }
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum())
    }

    /// Largest `|a_i - b_i|`.
    pub fn max_deviation(&self, other: &DenseState) -> DenseResult<f64> {
        if self.dims != other.dims {
            return Err(DenseError::Dimension("comparison of different layouts".into()));
        }
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    /// Apply `gate` to subsystems `(p, q)`, in that order, which need not be
    /// adjacent.
    pub fn apply_gate(&mut self, p: usize, q: usize, gate: MatRef<'_, C64>) -> DenseResult<()> {
        let n = self.dims.len();
        if p >= n || q >= n || p == q {
            return Err(DenseError::Dimension(format!("bad subsystem pair ({p}, {q})")));
        }
        let (dp, dq) = (self.dims[p], self.dims[q]);
        if gate.nrows() != dp * dq || gate.ncols() != dp * dq {
            return Err(DenseError::Dimension(format!("gate {}x{} on {dp}x{dq}", gate.nrows(), gate.ncols())));
        }
        let strides = self.strides();
        let (sp, sq) = (strides[p], strides[q]);
        let dim = dp * dq;
        let mut buf = vec![C64::new(0.0, 0.0); dim];
        let mut out = vec![C64::new(0.0, 0.0); dim];
        for base in 0..self.amplitudes.len() {
            if (base / sp) % dp != 0 || (base / sq) % dq != 0 {
                continue;
            }
            for ip in 0..dp {
                for iq in 0..dq {
                    buf[ip * dq + iq] = self.amplitudes[base + ip * sp + iq * sq];
                }
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o = (0..dim).map(|c| gate[(r, c)] * buf[c]).sum();
            }
            for ip in 0..dp {
                for iq in 0..dq {
                    self.amplitudes[base + ip * sp + iq * sq] = out[ip * dq + iq];
                }
            }
        }
        Ok(())
    }

    /// Reorder subsystems so that new subsystem `k` is old subsystem `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> DenseResult<DenseState> {
        let n = self.dims.len();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(DenseError::Dimension(format!("{order:?} is not a permutation")));
        }
        let old_strides = self.strides();
        let dims: Vec<usize> = order.iter().map(|&o| self.dims[o]).collect();
        let mut out = vec![C64::new(0.0, 0.0); self.amplitudes.len()];
        let mut digits = vec![0usize; n];
        for (idx, slot) in out.iter_mut().enumerate() {
            let mut rem = idx;
            for k in (0..n).rev() {
                digits[k] = rem % dims[k];
                rem /= dims[k];
            }
            let old: usize = (0..n).map(|k| digits[k] * old_strides[order[k]]).sum();
            *slot = self.amplitudes[old];
        }
        Ok(DenseState { amplitudes: out, dims })
    }

    /// Expectation of the number operator summed over `sites`, with each
    /// site's level `i` counted as `count(site, i)` excitations.
    pub fn number_expectation(&self, count: impl Fn(usize, usize) -> usize) -> f64 {
        let strides = self.strides();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(idx, z)| {
                let n: usize = (0..self.dims.len()).map(|k| count(k, (idx / strides[k]) % self.dims[k])).sum();
                n as f64 * z.norm_sqr()
            })
            .sum()
    }
}

/// Contract an MPS to amplitudes in chain order.
pub fn contract_chain(state: &MpsState) -> DenseResult<DenseState> {
    let dims = state.site_dims().to_vec();
    checked_size(&dims)?;
    // rows: physical configurations so far; cols: current right bond
    let mut acc: Vec<C64> = vec![C64::new(1.0, 0.0)];
    let mut cols = 1;
    for (k, g) in state.gammas().iter().enumerate() {
        let (l, d, r) = g.shape();
        let lam = if k + 1 < state.len() { state.lambdas()[k].clone() } else { vec![1.0] };
        let rows = acc.len() / cols;
        let mut next = vec![C64::new(0.0, 0.0); rows * d * r];
        for row in 0..rows {
            for a in 0..l {
                let x = acc[row * cols + a];
                if x == C64::new(0.0, 0.0) {
                    continue;
                }
                for i in 0..d {
                    for b in 0..r {
                        next[(row * d + i) * r + b] += x * g.get(a, i, b) * lam[b];
                    }
                }
            }
        }
        acc = next;
        cols = r;
    }
    DenseState::new(acc, dims)
}

/// Contract an MPS into canonical order (system first, bins in order).
pub fn dense_from_mps(state: &MpsState) -> DenseResult<DenseState> {
    let chain = contract_chain(state)?;
    match state.system_site_index() {
        Some(s) if s != 0 => {
            let mut order = vec![s];
            order.extend((0..state.len()).filter(|&k| k != s));
            chain.permuted(&order)
        }
        _ => Ok(chain),
    }
}

/// Exact MPS of a dense state (chain order = storage order), in canonical
/// form. The first site is tagged as the system when `system_first`.
pub fn mps_from_dense(dense: &DenseState, system_first: bool) -> DenseResult<MpsState> {
    let n = dense.dims.len();
    if n == 0 {
        return Err(DenseError::Dimension("empty state".into()));
    }
    // Left-orthonormal factors by successive SVD; the remainder is carried right.
    let mut gammas = Vec::with_capacity(n);
    let mut lambdas = Vec::with_capacity(n.saturating_sub(1));
    let mut rest = dense.amplitudes.clone();
    let mut chi = 1;
    for k in 0..n {
        let d = dense.dims[k];
        let cols = rest.len() / (chi * d);
        if k + 1 == n {
            gammas.push(Tensor3::from_vec(chi, d, 1, rest.clone())?);
            break;
        }
        let m = faer::Mat::from_fn(chi * d, cols, |r, c| rest[r * cols + c]);
        let svd = crate::linalg::thin_svd(m.as_ref()).map_err(MpsError::from)?;
        let keep = svd.s.iter().filter(|&&s| s > 0.0).count().max(1);
        let mut data = Vec::with_capacity(chi * d * keep);
        for r in 0..chi * d {
            for al in 0..keep {
                data.push(svd.u[(r, al)]);
            }
        }
        gammas.push(Tensor3::from_vec(chi, d, keep, data)?);
        lambdas.push(vec![1.0; keep]);
        rest = (0..keep)
            .flat_map(|al| (0..cols).map(move |c| (al, c)))
            .map(|(al, c)| svd.v[(c, al)].conj() * svd.s[al])
            .collect();
        chi = keep;
    }
    let mut state = MpsState::from_parts(gammas, lambdas, system_first.then_some(0))?;
    state.canonicalize(&Truncation::exact())?;
    Ok(state)
}

/// Apply `n_steps` time steps of the closed-loop schedule to a canonical
/// state whose subsystem 0 is the system and `1..=n_bins` are the bins.
pub fn dense_evolve(state: &mut DenseState, gate: &TwoSiteGate, n_steps: usize) -> DenseResult<()> {
    let n_bins = state.dims.len() - 1;
    if n_bins == 0 {
        return Err(DenseError::Dimension("no bins".into()));
    }
    if n_bins > DEFAULT_MAX_BINS {
        return Err(DenseError::TooLarge(state.amplitudes.len() as u128));
    }
    for t in 0..n_steps {
        state.apply_gate(0, 1 + t % n_bins, gate.matrix())?;
    }
    Ok(())
}

/// Small randomized protocol instance for checking the MPS pipeline against
/// the dense schedule.
#[derive(Clone, Debug)]
pub struct ToyCase {
    pub params: ProtocolParams,
    pub layout: WaveguideLayout,
    pub coeffs: Vec<(C64, C64)>,
}

impl ToyCase {
    /// Up to `max_bins` bins, `d_mech <= 4`, one or two random modes with
    /// random 0/1 superposition coefficients, threshold 0.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_bins: usize) -> Self {
        let n_bins = rng.random_range(2..=max_bins.max(2));
        let params = ProtocolParams {
            g0: rng.random_range(0.0..0.5),
            omega_m: rng.random_range(0.0..0.5),
            dt: rng.random_range(0.1..0.5),
            d_cav: 2,
            d_mech: rng.random_range(2..=4),
            bin_dim: 2,
            svd_threshold: 0.0,
            max_bond: usize::MAX,
            n_rep: 2,
            ..ProtocolParams::default()
        };
        let mut layout = WaveguideLayout::new(n_bins, params.dt, 2).expect("valid toy layout");
        let n_modes = rng.random_range(1..=2);
        let split = if n_modes == 2 { rng.random_range(1..n_bins) } else { n_bins };
        let mut coeffs = Vec::new();
        for (lo, hi) in [(0, split), (split, n_bins)].into_iter().take(n_modes) {
            let start = rng.random_range(lo..hi);
            let end = rng.random_range(start + 1..=hi);
            let amps: Vec<C64> =
                (start..end).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mode = TemporalMode::from_amplitudes(start, amps, params.dt)
                .unwrap_or_else(|_| TemporalMode::from_amplitudes(start, vec![C64::new(1.0, 0.0)], params.dt).unwrap());
            layout.push_mode(mode).expect("disjoint toy modes");
            let theta: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            coeffs.push((C64::new(theta.cos(), 0.0), C64::from_polar(theta.sin(), phase)));
        }
        Self { params, layout, coeffs }
    }

    /// Largest amplitude deviation between the MPS pipeline and the dense
    /// schedule, checked after every half repetition for `n_half_reps`.
    pub fn max_deviation(&self, n_half_reps: usize) -> DenseResult<f64> {
        let setup = |e: &dyn std::fmt::Display| DenseError::Setup(e.to_string());
        let mut mps = state_prep::assemble_state(&self.params, &self.layout, &self.coeffs).map_err(|e| setup(&e))?;
        let gate = dynamics::build_time_bin_unitary(&self.params).map_err(|e| setup(&e))?;
        let mut dense = dense_from_mps(&mps)?;
        let trunc = Truncation::exact();
        let n_bins = self.layout.n_bins;
        let mut worst = 0.0_f64;
        for _ in 0..n_half_reps {
            dynamics::sweep_forward(&mut mps, &gate, &trunc).map_err(|e| setup(&e))?;
            dense_evolve(&mut dense, &gate, n_bins)?;
            worst = worst.max(dense_from_mps(&mps)?.max_deviation(&dense)?);
            dynamics::swap_back(&mut mps, &trunc).map_err(|e| setup(&e))?;
            worst = worst.max(dense_from_mps(&mps)?.max_deviation(&dense)?);
        }
        Ok(worst)
    }
}
