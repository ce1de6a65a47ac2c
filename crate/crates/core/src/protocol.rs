//! The CPHASE protocol: evolve the two-mode superposition together with four
//! `g0 = 0` reference states and read out entropies, the conditional phase
//! and the modal overlaps after every half repetition.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, ProtocolParams};
use crate::mps::{MpsError, MpsState, TwoSiteGate};
use crate::semiclassical;
use crate::state_prep::{self, StatePrepError, WaveguideLayout};

/// Overlaps smaller than this leave the phase undefined.
pub const MIN_OVERLAP: f64 = 1e-6;

/// Reference order used for overlaps and fidelities.
pub const REFERENCE_LABELS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("overlap {index} has magnitude {magnitude:.3e}; phase undefined")]
    VanishingOverlap { index: usize, magnitude: f64 },
    #[error("no bracket for phase {target} at n_rep = {n_rep} (largest phase found {best:.4})")]
    BracketFailure { n_rep: usize, target: f64, best: f64 },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    StatePrep(#[from] StatePrepError),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

pub type ProtocolResult<T> = Result<T, ProtocolError>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableRecord {
    /// Number of completed forward sweeps.
    pub half_rep: usize,
    /// `half_rep / 2`.
    pub rep_index: f64,
    pub entropy_profile: Vec<f64>,
    pub s_oo: f64,
    pub s_om: f64,
    /// Conditional phase, continued across records.
    pub phase: f64,
    /// `<jk_ref|Ψ>` in the order of [`REFERENCE_LABELS`].
    pub overlaps: [C64; 4],
    pub fidelity_f: f64,
    pub discarded_weight: f64,
    pub max_bond: usize,
    /// Population of the highest retained phonon level.
    pub mech_tail: f64,
}

impl ObservableRecord {
    pub fn fidelities(&self) -> [f64; 4] {
        self.overlaps.map(|z| z.norm_sqr())
    }
}

/// `arg<11> - arg<10> - arg<01> + arg<00>`, in `(-π, π]`.
pub fn conditional_phase(overlaps: &[C64; 4]) -> ProtocolResult<f64> {
    for (index, z) in overlaps.iter().enumerate() {
        if z.norm() < MIN_OVERLAP {
            return Err(ProtocolError::VanishingOverlap { index, magnitude: z.norm() });
        }
    }
    let [o00, o01, o10, o11] = *overlaps;
    Ok((o11 * o00 * (o10 * o01).conj()).arg())
}

/// Branch of `raw + 2πk` closest to `previous`.
pub fn unwrap_near(raw: f64, previous: f64) -> f64 {
    raw + 2.0 * PI * ((previous - raw) / (2.0 * PI)).round()
}

/// Photon-photon entropy of `(|00> + |01> + |10> + e^{iφ}|11>)/2`.
pub fn entropy_from_phase(phi: f64) -> f64 {
    let c = (phi / 2.0).cos();
    let xlog = |x: f64| if x <= 0.0 { 0.0 } else { x * x.log2() };
    1.0 - (xlog(1.0 + c) + xlog(1.0 - c)) / 2.0
}

/// `(s_oo bond, s_om bond)` for a state whose system sits at site 0.
pub fn bipartition_labels(layout: &WaveguideLayout, state: &MpsState) -> ProtocolResult<(usize, usize)> {
    if state.system_site_index() != Some(0) {
        return Err(ProtocolError::Layout("system must be at site 0".into()));
    }
    if state.len() != layout.n_sites() {
        return Err(ProtocolError::Layout(format!("{} sites for {} bins", state.len(), layout.n_bins)));
    }
    Ok((layout.inter_mode_bond()?, 0))
}

fn make_record(
    half_rep: usize,
    state: &MpsState,
    refs: &[MpsState],
    layout: &WaveguideLayout,
    params: &ProtocolParams,
    previous_phase: f64,
) -> ProtocolResult<ObservableRecord> {
    let (oo_bond, om_bond) = bipartition_labels(layout, state)?;
    let entropy_profile = state.entropy_profile();
    let mut overlaps = [C64::new(0.0, 0.0); 4];
    for (o, r) in overlaps.iter_mut().zip(refs) {
        *o = r.overlap(state)?;
    }
    let phase = unwrap_near(conditional_phase(&overlaps)?, previous_phase);
    Ok(ObservableRecord {
        half_rep,
        rep_index: half_rep as f64 / 2.0,
        s_oo: entropy_profile[oo_bond],
        s_om: entropy_profile[om_bond],
        entropy_profile,
        phase,
        overlaps,
        fidelity_f: overlaps[3].norm_sqr(),
        discarded_weight: state.discarded_weight(),
        max_bond: state.max_bond_dim(),
        mech_tail: dynamics::check_mechanical_cutoff(state, params)?,
    })
}

/// Run the protocol on `layout`, calling `observe` with every record and the
/// physical state it was taken from.
pub fn run_protocol_with<F>(params: &ProtocolParams, layout: &WaveguideLayout, mut observe: F) -> ProtocolResult<Vec<ObservableRecord>>
where
    F: FnMut(&ObservableRecord, &MpsState),
{
    for w in params.validate()? {
        log::warn!("{w}");
    }
    if layout.modes.len() != 2 {
        return Err(ProtocolError::Layout("the protocol needs exactly two modes".into()));
    }
    let gate = dynamics::build_time_bin_unitary(params)?;
    let ref_gate = dynamics::build_time_bin_unitary(&params.with_g0(0.0))?;
    let mut states = vec![state_prep::assemble_initial_state(params, layout)?];
    for (j, k) in REFERENCE_LABELS {
        states.push(state_prep::reference_basis_state(j, k, params, layout)?);
    }
    let gates: Vec<&TwoSiteGate> = std::iter::once(&gate).chain(std::iter::repeat(&ref_gate).take(4)).collect();
    let trunc = params.truncation();

    let mut records = Vec::with_capacity(2 * params.n_rep + 1);
    let first = make_record(0, &states[0], &states[1..], layout, params, 0.0)?;
    observe(&first, &states[0]);
    records.push(first);
    for half in 1..=2 * params.n_rep {
        states
            .par_iter_mut()
            .zip(gates.par_iter())
            .map(|(s, g)| dynamics::half_repetition(s, g, &trunc))
            .collect::<Result<Vec<()>, DynamicsError>>()?;
        if let Some(budget) = params.discard_budget {
            if let Some(s) = states.iter().find(|s| s.discarded_weight() > budget) {
                return Err(DynamicsError::BudgetExceeded { discarded: s.discarded_weight(), budget }.into());
            }
        }
        let prev = records.last().map_or(0.0, |r: &ObservableRecord| r.phase);
        let rec = make_record(half, &states[0], &states[1..], layout, params, prev)?;
        log::info!(
            "half-rep {half}: phase {:.6}, 4F {:.6}, S_om {:.2e}, S_oo {:.4}, bond {}",
            rec.phase,
            4.0 * rec.fidelity_f,
            rec.s_om,
            rec.s_oo,
            rec.max_bond
        );
        observe(&rec, &states[0]);
        records.push(rec);
    }
    Ok(records)
}

pub fn run_protocol(params: &ProtocolParams, layout: &WaveguideLayout) -> ProtocolResult<Vec<ObservableRecord>> {
    run_protocol_with(params, layout, |_, _| {})
}

/// Phase and gate fidelity `4F` reached after `n_rep` runs at coupling `g0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub phase: f64,
    pub fidelity4: f64,
}

pub trait PhaseModel {
    fn evaluate(&self, g0: f64, n_rep: usize) -> ProtocolResult<PhasePoint>;
}

/// Saturating-kick semiclassical model; the fidelity is `e^{-|β|²}` of the
/// `|11>` branch.
#[derive(Clone, Copy, Debug, Default)]
pub struct SemiclassicalModel;

impl PhaseModel for SemiclassicalModel {
    fn evaluate(&self, g0: f64, n_rep: usize) -> ProtocolResult<PhasePoint> {
        let beta = semiclassical::run_semiclassical_protocol(true, true, g0, n_rep).beta;
        Ok(PhasePoint {
            phase: semiclassical::semiclassical_conditional_phase(g0, n_rep),
            fidelity4: semiclassical::semiclassical_fidelity(beta),
        })
    }
}

/// Full MPS simulation on a fixed layout.
#[derive(Clone, Debug)]
pub struct QuantumModel {
    pub params: ProtocolParams,
    pub layout: WaveguideLayout,
}

impl PhaseModel for QuantumModel {
    fn evaluate(&self, g0: f64, n_rep: usize) -> ProtocolResult<PhasePoint> {
        let params = ProtocolParams { g0, n_rep, ..self.params.clone() };
        let records = run_protocol(&params, &self.layout)?;
        let last = records.last().expect("protocol emits the initial record");
        Ok(PhasePoint { phase: last.phase, fidelity4: 4.0 * last.fidelity_f })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PiPoint {
    pub n_rep: usize,
    pub g0: f64,
    pub phase: f64,
    pub fidelity4: f64,
}

/// Settings for [`pi_gate_search`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiSearch {
    pub target: f64,
    pub tolerance: f64,
    /// Upper end of the bracket scan, as a multiple of the seed coupling.
    pub max_factor: f64,
    pub scan_steps: usize,
    pub max_bisections: usize,
}

impl Default for PiSearch {
    fn default() -> Self {
        Self { target: PI, tolerance: 1e-6, max_factor: 4.0, scan_steps: 60, max_bisections: 80 }
    }
}

/// Coupling at which the idealized phase `N_rep · 32 g0²` equals `target`.
pub fn seed_coupling(target: f64, n_rep: usize) -> f64 {
    (target / (32.0 * n_rep as f64)).sqrt()
}

/// Smallest `g0` whose phase after `n_rep` runs reaches `target`.
///
/// Scans upward from `g0 = 0` to `max_factor` times the idealized seed for a
/// sign change, then bisects.
pub fn pi_gate_point<M: PhaseModel + ?Sized>(model: &M, n_rep: usize, search: &PiSearch) -> ProtocolResult<PiPoint> {
    let seed = seed_coupling(search.target, n_rep);
    let hi_limit = search.max_factor * seed;
    let mut lo = 0.0;
    let mut best = f64::NEG_INFINITY;
    let mut bracket = None;
    for step in 1..=search.scan_steps {
        let g = hi_limit * step as f64 / search.scan_steps as f64;
        let p = model.evaluate(g, n_rep)?;
        best = best.max(p.phase);
        if p.phase >= search.target {
            bracket = Some((lo, g, p));
            break;
        }
        lo = g;
    }
    let (mut lo, mut hi, mut at_hi) =
        bracket.ok_or(ProtocolError::BracketFailure { n_rep, target: search.target, best })?;
    for _ in 0..search.max_bisections {
        if (at_hi.phase - search.target).abs() <= search.tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let p = model.evaluate(mid, n_rep)?;
        if p.phase >= search.target {
            hi = mid;
            at_hi = p;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(PiPoint { n_rep, g0: hi, phase: at_hi.phase, fidelity4: at_hi.fidelity4 })
}

/// [`pi_gate_point`] for each entry of `n_reps`.
pub fn pi_gate_search<M: PhaseModel + Sync + ?Sized>(
    model: &M,
    n_reps: &[usize],
    search: &PiSearch,
) -> Vec<(usize, ProtocolResult<PiPoint>)> {
    n_reps.par_iter().map(|&n| (n, pi_gate_point(model, n, search))).collect()
}
