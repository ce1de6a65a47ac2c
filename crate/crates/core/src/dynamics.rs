//! System Hamiltonian, the per-bin system-waveguide unitary and the sweeps
//! that carry the system through the feedback loop.
//!
//! All dynamics are in the frame rotating at the cavity frequency, in units
//! where `κ = 1`. A forward sweep lasts `N Δt = T_m / 2`; the swap back to
//! the chain start is instantaneous.

use std::fmt;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::mps::{MpsError, MpsState, TwoSiteGate, Truncation};

/// Population of the highest retained phonon level above which the
/// mechanical cutoff is reported as too small.
pub const MECH_TAIL_WARN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("system must be at site {expected}, found {found:?}")]
    SystemPosition { expected: usize, found: Option<usize> },
    #[error("discarded weight {discarded:.3e} exceeds budget {budget:.3e}")]
    BudgetExceeded { discarded: f64, budget: f64 },
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type DynResult<T> = Result<T, DynamicsError>;

/// Physical and numerical parameters, in units of `κ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub g0: f64,
    pub omega_m: f64,
    pub kappa: f64,
    pub dt: f64,
    pub tau: f64,
    pub n_rep: usize,
    pub d_cav: usize,
    pub d_mech: usize,
    pub bin_dim: usize,
    pub svd_threshold: f64,
    pub max_bond: usize,
    pub strict_bond: bool,
    /// Abort once the accumulated discarded weight exceeds this.
    pub discard_budget: Option<f64>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            g0: 0.1,
            omega_m: 1e-3,
            kappa: 1.0,
            dt: 0.5,
            tau: 200.0,
            n_rep: 1,
            d_cav: 2,
            d_mech: 15,
            bin_dim: 2,
            svd_threshold: 1e-4,
            max_bond: 64,
            strict_bond: false,
            discard_budget: None,
        }
    }
}

/// Parameter combination outside the regime where the gate is expected to
/// work well. Not an error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ParamWarning {
    CoarseTimeStep { dt_kappa: f64 },
    SlowPhoton { omega_m_tau: f64 },
    ShortPhoton { kappa_tau: f64 },
}

impl fmt::Display for ParamWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CoarseTimeStep { dt_kappa } => write!(f, "dt*kappa = {dt_kappa} exceeds 0.5"),
            Self::SlowPhoton { omega_m_tau } => write!(f, "omega_m*tau = {omega_m_tau} is not below 0.3"),
            Self::ShortPhoton { kappa_tau } => write!(f, "kappa*tau = {kappa_tau} is not above 200"),
        }
    }
}

impl ProtocolParams {
    /// Hard errors for unusable parameters; soft warnings for the regime bounds.
    pub fn validate(&self) -> DynResult<Vec<ParamWarning>> {
        let finite = [self.g0, self.omega_m, self.dt, self.tau, self.svd_threshold]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(DynamicsError::Params("non-finite parameter".into()));
        }
        if self.kappa != 1.0 {
            return Err(DynamicsError::Params("kappa is the unit of frequency and must be 1".into()));
        }
        if self.d_cav < 2 || self.d_mech < 2 || self.bin_dim < 2 {
            return Err(DynamicsError::Params("d_cav, d_mech and bin_dim must be at least 2".into()));
        }
        if self.dt <= 0.0 || self.tau <= 0.0 || self.omega_m < 0.0 || self.g0 < 0.0 {
            return Err(DynamicsError::Params("dt and tau must be positive, omega_m and g0 nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.svd_threshold) || self.max_bond == 0 {
            return Err(DynamicsError::Params("svd_threshold must be in [0, 1) and max_bond positive".into()));
        }
        let mut warnings = Vec::new();
        if self.dt * self.kappa > 0.5 {
            warnings.push(ParamWarning::CoarseTimeStep { dt_kappa: self.dt * self.kappa });
        }
        if self.omega_m * self.tau >= 0.3 {
            warnings.push(ParamWarning::SlowPhoton { omega_m_tau: self.omega_m * self.tau });
        }
        if self.kappa * self.tau <= 200.0 {
            warnings.push(ParamWarning::ShortPhoton { kappa_tau: self.kappa * self.tau });
        }
        Ok(warnings)
    }

    pub fn d_sys(&self) -> usize {
        self.d_cav * self.d_mech
    }

    /// Bins in the feedback loop: one round trip of `T_m / 2`.
    pub fn n_bins(&self) -> usize {
        (std::f64::consts::PI / (self.omega_m * self.dt)).round() as usize
    }

    pub fn truncation(&self) -> Truncation {
        Truncation {
            svd_threshold: self.svd_threshold,
            max_bond: self.max_bond,
            strict: self.strict_bond,
            renormalize: true,
        }
    }

    pub fn with_g0(&self, g0: f64) -> Self {
        Self { g0, ..self.clone() }
    }
}

/// Operators on the composite system site, index `n_cav * d_mech + n_mech`.
#[derive(Clone, Debug)]
pub struct SystemOperators {
    pub h_sys: Mat<C64>,
    pub a_op: Mat<C64>,
    pub b_op: Mat<C64>,
}

/// Truncated annihilation operator on `d` Fock levels.
pub fn annihilation(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |r, c| if c == r + 1 { C64::new((c as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) })
}

fn kron(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ra * rb, ca * cb, |r, c| a[(r / rb, c / cb)] * b[(r % rb, c % cb)])
}

fn identity(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |r, c| if r == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

impl SystemOperators {
    /// `H_S = ω_m b†b + g0 a†a (b + b†)`.
    pub fn new(params: &ProtocolParams) -> Self {
        let a = kron(&annihilation(params.d_cav), &identity(params.d_mech));
        let b = kron(&identity(params.d_cav), &annihilation(params.d_mech));
        let ad = a.adjoint().to_owned();
        let bd = b.adjoint().to_owned();
        let n_a = &ad * &a;
        let n_b = &bd * &b;
        let x = &b + &bd;
        let h_sys = params.omega_m * n_b + params.g0 * (&n_a * &x);
        Self { h_sys, a_op: a, b_op: b }
    }
}

/// `exp(-i H_S Δt + √(κΔt)(a c† - a† c))` on system ⊗ bin, index
/// `sys * bin_dim + bin`.
pub fn build_time_bin_unitary(params: &ProtocolParams) -> DynResult<TwoSiteGate> {
    let ops = SystemOperators::new(params);
    let d_sys = params.d_sys();
    let id_bin = identity(params.bin_dim);
    let c = annihilation(params.bin_dim);
    let a = &ops.a_op;
    let coupling = (params.kappa * params.dt).sqrt();
    let a_cd = kron(a, &c.adjoint().to_owned());
    let ad_c = kron(&a.adjoint().to_owned(), &c);
    let h = kron(&ops.h_sys, &id_bin);
    let dim = d_sys * params.bin_dim;
    let minus_i_dt = C64::new(0.0, -params.dt);
    let g = Mat::from_fn(dim, dim, |r, col| minus_i_dt * h[(r, col)] + coupling * (a_cd[(r, col)] - ad_c[(r, col)]));
    let u = linalg::expm_anti_hermitian(g.as_ref())?;
    Ok(TwoSiteGate::new(u, d_sys, params.bin_dim)?)
}

/// Progress of a sweep, reported through `log` at debug level.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub bins_done: usize,
    pub max_bond: usize,
    pub discarded_weight: f64,
}

fn expect_system_at(state: &MpsState, site: usize) -> DynResult<()> {
    if state.system_site_index() != Some(site) {
        return Err(DynamicsError::SystemPosition { expected: site, found: state.system_site_index() });
    }
    Ok(())
}

/// Interact with every bin in turn, moving the system one site to the right
/// after each interaction. Ends with the system at the last site.
pub fn sweep_forward(state: &mut MpsState, gate: &TwoSiteGate, trunc: &Truncation) -> DynResult<()> {
    expect_system_at(state, 0)?;
    let n_bins = state.len() - 1;
    for k in 0..n_bins {
        state.apply_gate_then_swap(k, gate, trunc)?;
    }
    log::debug!(
        "{:?}",
        Progress { bins_done: n_bins, max_bond: state.max_bond_dim(), discarded_weight: state.discarded_weight() }
    );
    Ok(())
}

/// Move the system from the last site back to site 0. No time elapses.
pub fn swap_back(state: &mut MpsState, trunc: &Truncation) -> DynResult<()> {
    let last = state.len() - 1;
    expect_system_at(state, last)?;
    for k in (0..last).rev() {
        state.swap_adjacent(k, trunc)?;
    }
    Ok(())
}

/// One half repetition: a forward sweep followed by the swap back.
pub fn half_repetition(state: &mut MpsState, gate: &TwoSiteGate, trunc: &Truncation) -> DynResult<()> {
    sweep_forward(state, gate, trunc)?;
    swap_back(state, trunc)
}

fn check_budget(state: &MpsState, budget: Option<f64>) -> DynResult<()> {
    if let Some(budget) = budget {
        if state.discarded_weight() > budget {
            return Err(DynamicsError::BudgetExceeded { discarded: state.discarded_weight(), budget });
        }
    }
    Ok(())
}

/// Run `2 n_rep` half repetitions, calling `snapshot(half_rep, state)` on the
/// initial state and after every half repetition.
pub fn evolve_repetitions<F>(state: &mut MpsState, gate: &TwoSiteGate, params: &ProtocolParams, mut snapshot: F) -> DynResult<()>
where
    F: FnMut(usize, &MpsState) -> DynResult<()>,
{
    let trunc = params.truncation();
    snapshot(0, state)?;
    for half in 1..=2 * params.n_rep {
        half_repetition(state, gate, &trunc)?;
        check_budget(state, params.discard_budget)?;
        snapshot(half, state)?;
    }
    Ok(())
}

/// Phonon-number distribution of the system site.
pub fn mechanical_populations(state: &MpsState, params: &ProtocolParams) -> DynResult<Vec<f64>> {
    let site = state.system_site_index().ok_or(DynamicsError::SystemPosition { expected: 0, found: None })?;
    let pops = state.local_populations(site)?;
    let mut mech = vec![0.0; params.d_mech];
    for (i, p) in pops.iter().enumerate() {
        mech[i % params.d_mech] += p;
    }
    Ok(mech)
}

/// Populations of the highest phonon level, warning when it is not negligible.
pub fn check_mechanical_cutoff(state: &MpsState, params: &ProtocolParams) -> DynResult<f64> {
    let tail = *mechanical_populations(state, params)?.last().unwrap_or(&0.0);
    if tail > MECH_TAIL_WARN {
        log::warn!("phonon level {} holds population {tail:.3e}; raise d_mech", params.d_mech - 1);
    }
    Ok(tail)
}

/// `<a†a + Σ_n c†_n c_n>`, conserved by the dynamics.
pub fn total_excitations(state: &MpsState, params: &ProtocolParams) -> DynResult<f64> {
    let sys = state.system_site_index();
    let mut total = 0.0;
    for site in 0..state.len() {
        let pops = state.local_populations(site)?;
        total += pops
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = if Some(site) == sys { i / params.d_mech } else { i };
                n as f64 * p
            })
            .sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_prep::{assemble_state, TemporalMode, WaveguideLayout};

    fn small() -> ProtocolParams {
        ProtocolParams { d_mech: 4, ..ProtocolParams::default() }
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let ops = SystemOperators::new(&small());
        let h = &ops.h_sys;
        for r in 0..h.nrows() {
            for c in 0..h.ncols() {
                assert!((h[(r, c)] - h[(c, r)].conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn ladder_operators_commute_across_subsystems() {
        let ops = SystemOperators::new(&small());
        let ab = &ops.a_op * &ops.b_op;
        let ba = &ops.b_op * &ops.a_op;
        assert!((ab - ba).norm_l2() < 1e-14);
    }

    #[test]
    fn zero_generator_gives_identity() {
        let p = ProtocolParams { g0: 0.0, omega_m: 0.0, dt: 1e-300, ..small() };
        let g = build_time_bin_unitary(&p).unwrap();
        let m = g.matrix();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((m[(r, c)] - C64::new(want, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn full_scale_gate_is_unitary() {
        let p = ProtocolParams { g0: 0.1, omega_m: 1.5e-4, ..ProtocolParams::default() };
        assert!(build_time_bin_unitary(&p).unwrap().unitarity_defect() < 1e-12);
    }

    #[test]
    fn photon_transfer_is_first_order_in_coupling() {
        let dt = 1e-4;
        let p = ProtocolParams { g0: 0.0, omega_m: 0.0, dt, ..small() };
        let g = build_time_bin_unitary(&p).unwrap();
        // |cav 0, mech 0, bin 1> -> |cav 1, mech 0, bin 0>
        let d_mech = p.d_mech;
        let from = 1;
        let to = (d_mech) * p.bin_dim;
        let amp = g.matrix()[(to, from)];
        // -a† c carries the photon in with a minus sign
        assert!((amp.norm() - dt.sqrt()).abs() < dt, "{amp}");
        assert!(amp.re < 0.0);
    }

    #[test]
    fn vacuum_is_stationary() {
        let p = small();
        let layout = WaveguideLayout::new(5, p.dt, 2).unwrap();
        let mut s = assemble_state(&p, &layout, &[]).unwrap();
        let before = s.clone();
        let gate = build_time_bin_unitary(&p).unwrap();
        half_repetition(&mut s, &gate, &Truncation::exact()).unwrap();
        assert!((s.overlap(&before).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert_eq!(s.max_bond_dim(), 1);
    }

    #[test]
    fn sweep_requires_system_at_start() {
        let p = small();
        let layout = WaveguideLayout::new(3, p.dt, 2).unwrap();
        let mut s = assemble_state(&p, &layout, &[]).unwrap();
        let gate = build_time_bin_unitary(&p).unwrap();
        sweep_forward(&mut s, &gate, &Truncation::exact()).unwrap();
        assert_eq!(s.system_site_index(), Some(3));
        assert!(matches!(
            sweep_forward(&mut s, &gate, &Truncation::exact()),
            Err(DynamicsError::SystemPosition { .. })
        ));
        swap_back(&mut s, &Truncation::exact()).unwrap();
        assert_eq!(s.system_site_index(), Some(0));
    }

    #[test]
    fn excitations_conserved_over_a_sweep() {
        let p = ProtocolParams { g0: 0.3, omega_m: 0.2, ..small() };
        let mut layout = WaveguideLayout::new(6, p.dt, 2).unwrap();
        let f = vec![C64::new(0.5, 0.0), C64::new(0.7, 0.2), C64::new(0.3, -0.1)];
        layout.push_mode(TemporalMode::from_amplitudes(1, f, p.dt).unwrap()).unwrap();
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut s = assemble_state(&p, &layout, &[(h, h)]).unwrap();
        let n0 = total_excitations(&s, &p).unwrap();
        assert!((n0 - 0.5).abs() < 1e-12);
        let gate = build_time_bin_unitary(&p).unwrap();
        let trunc = Truncation::exact();
        for _ in 0..2 {
            sweep_forward(&mut s, &gate, &trunc).unwrap();
            assert!((total_excitations(&s, &p).unwrap() - n0).abs() < 1e-8);
            assert!((s.norm_squared() - 1.0).abs() < 1e-8);
            swap_back(&mut s, &trunc).unwrap();
        }
    }

    #[test]
    fn warnings_follow_regime_bounds() {
        let p = ProtocolParams { omega_m: 2.5e-3, tau: 200.0, ..ProtocolParams::default() };
        let w = p.validate().unwrap();
        assert!(w.iter().any(|w| matches!(w, ParamWarning::SlowPhoton { .. })));
        assert!(w.iter().any(|w| matches!(w, ParamWarning::ShortPhoton { .. })));
        let full = ProtocolParams { omega_m: 1.5e-4, tau: 1000.0, ..ProtocolParams::default() };
        assert!(full.validate().unwrap().is_empty());
        assert!(ProtocolParams { d_mech: 1, ..full }.validate().is_err());
    }
}
