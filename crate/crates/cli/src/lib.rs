//! Command implementations for the `cphase-mps` binary.

pub mod config;
pub mod output;

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cphase_mps::checkpoint::write_checkpoint;
use cphase_mps::dense::ToyCase;
use cphase_mps::dynamics::ProtocolParams;
use cphase_mps::mps::MpsState;
use cphase_mps::protocol::{
    self, pi_gate_search, ObservableRecord, PhaseModel, PiPoint, PiSearch, QuantumModel, SemiclassicalModel,
};
use cphase_mps::semiclassical::{self, loss_penalty, parasitic_dephasing_fidelity, phi1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use config::{PhaseModelKind, Resolved};
use output::{Manifest, OutputDir};

/// Version of the CSV column sets and JSON layouts written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Rough cost of one gate application on one state, from desk measurements.
const SECONDS_PER_BIN_STATE: f64 = 36e-6;

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("building thread pool")
}

#[derive(Clone, Debug, Serialize)]
struct PointSpec {
    index: usize,
    g0: f64,
    n_rep: usize,
}

struct PointResult {
    records: Vec<ObservableRecord>,
    final_state: Option<MpsState>,
}

#[derive(Serialize)]
struct RecordRow {
    rep: f64,
    half_rep: usize,
    s_oo: f64,
    s_om: f64,
    phase: f64,
    #[serde(rename = "F00")]
    f00: f64,
    #[serde(rename = "F01")]
    f01: f64,
    #[serde(rename = "F10")]
    f10: f64,
    #[serde(rename = "F11")]
    f11: f64,
    discarded_weight: f64,
    max_bond: usize,
    mech_tail: f64,
}

#[derive(Serialize)]
struct EntropyRow {
    bond_index: usize,
    #[serde(rename = "S")]
    s: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    point: usize,
    g0: f64,
    n_rep: usize,
    phase: f64,
    semiclassical_phase: f64,
    phi1_times_n: f64,
    fidelity4: f64,
    s_oo: f64,
    s_om: f64,
    discarded_weight: f64,
    max_bond: usize,
}

/// Options of `run` that only affect what gets written.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub checkpoint: bool,
}

/// Protocol simulation over the `g0 × n_rep` grid.
pub fn run(cfg: &Resolved, opts: RunOptions) -> Result<()> {
    cfg.check_long_run()?;
    let points: Vec<PointSpec> = cfg
        .g0
        .iter()
        .flat_map(|&g0| cfg.n_rep.iter().map(move |&n_rep| (g0, n_rep)))
        .enumerate()
        .map(|(index, (g0, n_rep))| PointSpec { index, g0, n_rep })
        .collect();
    let out = OutputDir::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new("run", cfg);
    if points.is_empty() {
        log::info!("empty sweep, writing manifest only");
        return out.finish(manifest);
    }

    let pool = thread_pool(cfg.threads)?;
    let results: Vec<Result<PointResult>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let params = ProtocolParams { g0: p.g0, n_rep: p.n_rep, ..cfg.params.clone() };
                let layout = cfg.build_layout(&params)?;
                let mut final_state = None;
                let last = 2 * p.n_rep;
                let records = protocol::run_protocol_with(&params, &layout, |rec, state| {
                    if opts.checkpoint && rec.half_rep == last {
                        final_state = Some(state.clone());
                    }
                })
                .with_context(|| format!("point {} (g0 = {}, n_rep = {})", p.index, p.g0, p.n_rep))?;
                Ok(PointResult { records, final_state })
            })
            .collect()
    });

    // single collector, in point order
    let mut summary = Vec::with_capacity(points.len());
    for (p, result) in points.iter().zip(results) {
        let result = result?;
        let stem = format!("point_{:03}", p.index);
        let rows: Vec<RecordRow> = result
            .records
            .iter()
            .map(|r| {
                let f = r.fidelities();
                RecordRow {
                    rep: r.rep_index,
                    half_rep: r.half_rep,
                    s_oo: r.s_oo,
                    s_om: r.s_om,
                    phase: r.phase,
                    f00: f[0],
                    f01: f[1],
                    f10: f[2],
                    f11: f[3],
                    discarded_weight: r.discarded_weight,
                    max_bond: r.max_bond,
                    mech_tail: r.mech_tail,
                }
            })
            .collect();
        out.write_csv(&mut manifest, &format!("{stem}_records.csv"), &rows, Some(p))?;
        for r in &result.records {
            let rows: Vec<EntropyRow> =
                r.entropy_profile.iter().enumerate().map(|(bond_index, &s)| EntropyRow { bond_index, s }).collect();
            out.write_csv(&mut manifest, &format!("{stem}_entropy_h{:03}.csv", r.half_rep), &rows, Some(p))?;
        }
        if let Some(state) = &result.final_state {
            let name = format!("{stem}_final.mpsckpt");
            let mut w = out.create_file(&name)?;
            write_checkpoint(state, &mut w)?;
            w.flush()?;
            manifest.add(&name, Some(p));
        }
        let last = result.records.last().context("protocol returned no records")?;
        summary.push(SummaryRow {
            point: p.index,
            g0: p.g0,
            n_rep: p.n_rep,
            phase: last.phase,
            semiclassical_phase: semiclassical::semiclassical_conditional_phase(p.g0 / cfg.params.kappa, p.n_rep),
            phi1_times_n: p.n_rep as f64 * phi1(p.g0 / cfg.params.kappa),
            fidelity4: 4.0 * last.fidelity_f,
            s_oo: last.s_oo,
            s_om: last.s_om,
            discarded_weight: last.discarded_weight,
            max_bond: last.max_bond,
        });
    }
    // mode envelopes depend on the layout only, which is shared by all points
    let layout = cfg.build_layout(&cfg.params)?;
    for (i, mode) in layout.modes.iter().enumerate() {
        let name = format!("mode_{i}.csv");
        let mut w = out.create_file(&name)?;
        mode.write_csv(&mut w)?;
        manifest.add::<()>(&name, None);
    }
    out.write_csv(&mut manifest, "summary.csv", &summary, None::<&()>)?;
    out.finish(manifest)
}

#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub n_bins: usize,
    pub n_sites: usize,
    pub n_points: usize,
    pub warnings: Vec<String>,
    pub requires_long_run: bool,
    /// Upper bound from `max_bond` for all five states.
    pub memory_bytes_bound: u64,
    pub runtime_seconds_estimate: f64,
}

pub fn validate(cfg: &Resolved) -> Result<ValidationReport> {
    let params = &cfg.params;
    let mut warnings: Vec<String> = params.validate()?.iter().map(|w| w.to_string()).collect();
    for &g0 in &cfg.g0 {
        for w in params.with_g0(g0).validate()? {
            let w = w.to_string();
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    }
    let layout = cfg.build_layout(params)?;
    let n_bins = layout.n_bins;
    if layout.modes.len() != 2 {
        warnings.push(format!("layout has {} modes; the protocol needs two", layout.modes.len()));
    }
    let chi = params.max_bond.min(1 << 20) as u64;
    let per_site = chi * chi * params.bin_dim.max(params.d_sys()) as u64 * 16;
    let memory_bytes_bound = 5 * per_site * (n_bins as u64 + 1);
    let half_reps: usize = cfg.n_rep.iter().map(|n| 2 * n).sum();
    let runtime_seconds_estimate = SECONDS_PER_BIN_STATE * 5.0 * (n_bins * half_reps * cfg.g0.len()) as f64
        / rayon::current_num_threads().max(1).min(5) as f64;
    Ok(ValidationReport {
        schema_version: SCHEMA_VERSION,
        n_bins,
        n_sites: layout.n_sites(),
        n_points: cfg.g0.len() * cfg.n_rep.len(),
        warnings,
        requires_long_run: n_bins > config::LONG_RUN_BINS,
        memory_bytes_bound,
        runtime_seconds_estimate,
    })
}

#[derive(Serialize)]
struct OracleRow {
    case: usize,
    n_bins: usize,
    d_mech: usize,
    n_modes: usize,
    g0: f64,
    omega_m: f64,
    dt: f64,
    max_deviation: f64,
}

/// Compare the MPS pipeline against the dense schedule on random toy cases.
/// Returns the worst deviation; fails when it exceeds the tolerance.
pub fn verify_oracle(cfg: &Resolved) -> Result<f64> {
    let o = &cfg.oracle;
    if o.max_bins > cphase_mps::dense::DEFAULT_MAX_BINS {
        bail!("oracle max_bins {} exceeds the dense cap {}", o.max_bins, cphase_mps::dense::DEFAULT_MAX_BINS);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cases: Vec<ToyCase> = (0..o.cases).map(|_| ToyCase::random(&mut rng, o.max_bins)).collect();
    let pool = thread_pool(cfg.threads)?;
    let devs: Vec<f64> = pool.install(|| {
        cases.par_iter().map(|c| c.max_deviation(o.half_reps)).collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<OracleRow> = cases
        .iter()
        .zip(&devs)
        .enumerate()
        .map(|(case, (c, &max_deviation))| OracleRow {
            case,
            n_bins: c.layout.n_bins,
            d_mech: c.params.d_mech,
            n_modes: c.layout.modes.len(),
            g0: c.params.g0,
            omega_m: c.params.omega_m,
            dt: c.params.dt,
            max_deviation,
        })
        .collect();
    let out = OutputDir::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new("verify-oracle", cfg);
    out.write_csv(&mut manifest, "oracle.csv", &rows, None::<&()>)?;
    out.finish(manifest)?;
    let worst = devs.iter().copied().fold(0.0, f64::max);
    if !(worst <= o.tolerance) {
        bail!("oracle deviation {worst:e} exceeds {:e}", o.tolerance);
    }
    Ok(worst)
}

#[derive(Debug, Serialize)]
struct PiRow {
    n_rep: usize,
    #[serde(flatten)]
    outcome: PiOutcome,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum PiOutcome {
    Found {
        g0: f64,
        phase: f64,
        fidelity4: f64,
        /// `(eta, fidelity4 · eta^n_rep)` pairs
        penalized: Vec<(f64, f64)>,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Serialize)]
struct BestRow {
    eta: f64,
    n_rep: usize,
    penalized_fidelity: f64,
}

#[derive(Debug, Serialize)]
struct PiReport<'a> {
    schema_version: u32,
    model: PhaseModelKind,
    target: f64,
    points: &'a [PiRow],
    best: Vec<BestRow>,
}

/// π-gate coupling for each `n_rep`, with loss-penalized fidelities.
pub fn pi_search(cfg: &Resolved) -> Result<()> {
    let s = &cfg.pi_search;
    let search = PiSearch {
        target: s.target,
        tolerance: s.tolerance,
        max_factor: s.max_factor,
        scan_steps: s.scan_steps,
        ..PiSearch::default()
    };
    let model: Box<dyn PhaseModel + Sync> = match s.model {
        PhaseModelKind::Semiclassical => Box::new(SemiclassicalModel),
        PhaseModelKind::Quantum => {
            cfg.check_long_run()?;
            Box::new(QuantumModel { params: cfg.params.clone(), layout: cfg.build_layout(&cfg.params)? })
        }
    };
    let pool = thread_pool(cfg.threads)?;
    let found = pool.install(|| pi_gate_search(model.as_ref(), &cfg.n_rep, &search));
    let points: Vec<PiRow> = found
        .into_iter()
        .map(|(n_rep, r)| {
            let outcome = match r {
                Ok(PiPoint { g0, phase, fidelity4, .. }) => PiOutcome::Found {
                    g0,
                    phase,
                    fidelity4,
                    penalized: cfg.eta.iter().map(|&e| Ok((e, loss_penalty(fidelity4, e, n_rep)?))).collect::<Result<_>>()?,
                },
                Err(e) => PiOutcome::Failed { error: e.to_string() },
            };
            Ok(PiRow { n_rep, outcome })
        })
        .collect::<Result<_>>()?;
    let best = cfg
        .eta
        .iter()
        .enumerate()
        .filter_map(|(i, &eta)| {
            points
                .iter()
                .filter_map(|p| match &p.outcome {
                    PiOutcome::Found { penalized, .. } => Some((p.n_rep, penalized[i].1)),
                    PiOutcome::Failed { .. } => None,
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(n_rep, penalized_fidelity)| BestRow { eta, n_rep, penalized_fidelity })
        })
        .collect();
    let report = PiReport { schema_version: SCHEMA_VERSION, model: s.model, target: s.target, points: &points, best };
    let out = OutputDir::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new("pi-search", cfg);
    out.write_json(&mut manifest, "pi_search.json", &report)?;
    out.finish(manifest)
}

#[derive(Serialize)]
struct SemiclassicalRow {
    g0: f64,
    n_rep: usize,
    phi1_times_n: f64,
    phase: f64,
    beta_r_sq: f64,
    fidelity: f64,
}

#[derive(Serialize)]
struct DephasingRow {
    sigma: f64,
    n_samples: usize,
    monte_carlo: f64,
    standard_error: f64,
    closed_form: f64,
}

/// Semiclassical phase and residual-displacement tables plus the parasitic
/// dephasing estimate.
pub fn semiclassical_tables(cfg: &Resolved) -> Result<()> {
    let kappa = cfg.params.kappa;
    let mut rows = Vec::new();
    for &g0 in &cfg.g0 {
        for &n_rep in &cfg.n_rep {
            let g = g0 / kappa;
            let beta = semiclassical::run_semiclassical_protocol(true, true, g, n_rep).beta;
            rows.push(SemiclassicalRow {
                g0,
                n_rep,
                phi1_times_n: n_rep as f64 * phi1(g),
                phase: semiclassical::semiclassical_conditional_phase(g, n_rep),
                beta_r_sq: beta.norm_sqr(),
                fidelity: semiclassical::semiclassical_fidelity(beta),
            });
        }
    }
    let pool = thread_pool(cfg.threads)?;
    let n = cfg.semiclassical.mc_samples;
    let dephasing: Vec<DephasingRow> = pool.install(|| {
        cfg.sigma
            .iter()
            .map(|&sigma| {
                let e = parasitic_dephasing_fidelity(sigma / kappa, n, cfg.seed)?;
                Ok(DephasingRow {
                    sigma,
                    n_samples: n,
                    monte_carlo: e.monte_carlo,
                    standard_error: e.standard_error,
                    closed_form: e.closed_form,
                })
            })
            .collect::<Result<_>>()
    })?;
    let out = OutputDir::create(&cfg.output_dir)?;
    let mut manifest = Manifest::new("semiclassical", cfg);
    if !rows.is_empty() {
        out.write_csv(&mut manifest, "semiclassical.csv", &rows, None::<&()>)?;
    }
    if !dephasing.is_empty() {
        out.write_csv(&mut manifest, "dephasing.csv", &dephasing, None::<&()>)?;
    }
    out.finish(manifest)
}

/// Load a config file (if any) and apply command-line overrides.
pub fn load(path: Option<&Path>, overrides: config::Overrides) -> Result<Resolved> {
    let file = match path {
        Some(p) => config::load_config(p)?,
        None => config::RunConfig::default(),
    };
    config::resolve(file, overrides)
}
