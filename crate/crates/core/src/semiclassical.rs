//! Semiclassical model of the gate: the mechanics is a coherent state `|β>`
//! that each reflected photon displaces by a momentum kick, and that rotates
//! by a quarter turn between photon interactions.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Samples per independent random substream in the dephasing Monte Carlo.
const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Error, PartialEq)]
pub enum SemiclassicalError {
    #[error("sigma must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
    #[error("need at least one sample")]
    NoSamples,
    #[error("eta must lie in [0, 1], got {0}")]
    InvalidEta(f64),
}

/// Idealized single-run conditional phase `32 (g0/κ)²`.
pub fn phi1(g0_over_kappa: f64) -> f64 {
    32.0 * g0_over_kappa * g0_over_kappa
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SemiclassicalState {
    pub beta: C64,
    pub phase: f64,
    pub r: f64,
}

impl SemiclassicalState {
    pub fn ground(g0_over_kappa: f64) -> Self {
        Self { beta: C64::new(0.0, 0.0), phase: 0.0, r: 4.0 * g0_over_kappa }
    }
}

/// Displacement `α = -i r / (1 + (r²/4)(β + β*)²)` applied to `|β>` when a
/// photon is present, with the composition phase `Im(α β*)`.
pub fn photon_kick(state: SemiclassicalState, photon_present: bool) -> SemiclassicalState {
    if !photon_present {
        return state;
    }
    let x = 2.0 * state.beta.re;
    let alpha = C64::new(0.0, -state.r / (1.0 + 0.25 * state.r * state.r * x * x));
    SemiclassicalState {
        beta: state.beta + alpha,
        phase: state.phase + (alpha * state.beta.conj()).im,
        r: state.r,
    }
}

/// Free evolution over `T_m / 4`: `β -> -i β`.
pub fn quarter_period(state: SemiclassicalState) -> SemiclassicalState {
    SemiclassicalState { beta: C64::new(state.beta.im, -state.beta.re), ..state }
}

/// Accumulated phase and final amplitude for photon numbers `(j, k)` after
/// `n_rep` runs of kick(j), T/4, kick(k), T/4, kick(j), T/4, kick(k), T/4.
pub fn run_semiclassical_protocol(j: bool, k: bool, g0_over_kappa: f64, n_rep: usize) -> SemiclassicalState {
    let mut s = SemiclassicalState::ground(g0_over_kappa);
    for _ in 0..n_rep {
        for photon in [j, k, j, k] {
            s = quarter_period(photon_kick(s, photon));
        }
    }
    s
}

/// `φ11 - φ10 - φ01 + φ00` of the semiclassical model.
pub fn semiclassical_conditional_phase(g0_over_kappa: f64, n_rep: usize) -> f64 {
    let p = |j, k| run_semiclassical_protocol(j, k, g0_over_kappa, n_rep).phase;
    p(true, true) - p(true, false) - p(false, true) + p(false, false)
}

/// Closed-form residual amplitude after one run, taken before the final
/// quarter-period rotation.
pub fn beta_r_closed_form(r: f64) -> C64 {
    let r4 = r.powi(4);
    let re = r.powi(5) / ((1.0 + r4).powi(2) + r4);
    let im = r * (1.0 / (1.0 + r4) - 1.0 / (1.0 + r * r * re * re));
    C64::new(re, im)
}

/// `|<0|β>|² = exp(-|β|²)`.
pub fn semiclassical_fidelity(beta: C64) -> f64 {
    (-beta.norm_sqr()).exp()
}

/// `fidelity · η^n_rep`.
pub fn loss_penalty(fidelity: f64, eta: f64, n_rep: usize) -> Result<f64, SemiclassicalError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(SemiclassicalError::InvalidEta(eta));
    }
    Ok(fidelity * eta.powi(n_rep as i32))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DephasingEstimate {
    pub monte_carlo: f64,
    pub standard_error: f64,
    pub closed_form: f64,
}

/// Average of `(1 + cos θ)/2` over `θ = (4/κ)(ξ1 + ξ3 - ξ2 - ξ4)` with
/// `ξ_i ~ N(0, σ²)`, together with the closed form `(1 + e^{-32σ²})/2`.
///
/// Samples are drawn in fixed-size chunks, each from its own stream of the
/// seeded generator, so the result does not depend on the thread count.
pub fn parasitic_dephasing_fidelity(sigma_over_kappa: f64, n_samples: usize, seed: u64) -> Result<DephasingEstimate, SemiclassicalError> {
    if !sigma_over_kappa.is_finite() || sigma_over_kappa < 0.0 {
        return Err(SemiclassicalError::InvalidSigma(sigma_over_kappa));
    }
    if n_samples == 0 {
        return Err(SemiclassicalError::NoSamples);
    }
    let closed_form = 0.5 * (1.0 + (-32.0 * sigma_over_kappa * sigma_over_kappa).exp());
    let normal = Normal::new(0.0, sigma_over_kappa).map_err(|_| SemiclassicalError::InvalidSigma(sigma_over_kappa))?;
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                let xi: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut rng));
                let theta = 4.0 * (xi[0] + xi[2] - xi[1] - xi[3]);
                let f = 0.5 * (1.0 + theta.cos());
                sum += f;
                sum_sq += f * f;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(DephasingEstimate { monte_carlo: mean, standard_error: (var / n).sqrt(), closed_form })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi1_values() {
        assert!((phi1(0.1) - 0.32).abs() < 1e-15);
        assert_eq!(phi1(0.0), 0.0);
        assert!((phi1(0.05) - 0.08).abs() < 1e-15);
    }

    #[test]
    fn kick_checkpoints() {
        let g = 0.1;
        let r = 0.4;
        let s = photon_kick(SemiclassicalState::ground(g), true);
        assert!((s.beta - C64::new(0.0, -r)).norm() < 1e-15);
        assert_eq!(s.phase, 0.0);
        let s = quarter_period(s);
        assert!((s.beta - C64::new(-r, 0.0)).norm() < 1e-15);
        let s2 = photon_kick(s, true);
        let r4 = r.powi(4);
        assert!((s2.beta - C64::new(-r, -r / (1.0 + r4))).norm() < 1e-15);
        assert!((s2.phase - r * r / (1.0 + r4)).abs() < 1e-15);
        assert_eq!(photon_kick(s, false), s);
    }

    #[test]
    fn quarter_period_has_period_four() {
        let mut s = SemiclassicalState { beta: C64::new(0.3, -0.7), phase: 0.0, r: 0.1 };
        let start = s;
        for _ in 0..4 {
            s = quarter_period(s);
        }
        assert!((s.beta - start.beta).norm() < 1e-15);
        assert_eq!(quarter_period(SemiclassicalState::ground(0.1)).beta, C64::new(0.0, 0.0));
    }

    #[test]
    fn vacuum_input_is_trivial() {
        let s = run_semiclassical_protocol(false, false, 0.2, 3);
        assert_eq!(s.phase, 0.0);
        assert_eq!(s.beta, C64::new(0.0, 0.0));
    }

    #[test]
    fn single_photon_inputs_acquire_no_phase() {
        for (j, k) in [(true, false), (false, true)] {
            let s = run_semiclassical_protocol(j, k, 0.05, 2);
            assert!(s.phase.abs() < 1e-15);
            assert!(s.beta.norm() < 1e-15);
        }
    }

    #[test]
    fn leading_order_phase_is_phi1() {
        for g in [0.001, 0.002, 0.004] {
            let rel = semiclassical_conditional_phase(g, 1) / phi1(g) - 1.0;
            // next order is r⁴
            assert!(rel.abs() < 4.0 * (4.0 * g as f64).powi(4) + 1e-12, "g={g} rel={rel}");
        }
    }

    #[test]
    fn runner_matches_closed_form_before_last_rotation() {
        for r in [0.01, 0.1, 0.4, 0.8] {
            let s = run_semiclassical_protocol(true, true, r / 4.0, 1);
            // undo the final -i rotation
            let before = s.beta * C64::new(0.0, 1.0);
            assert!((before - beta_r_closed_form(r)).norm() < 1e-12 * r.max(1e-3), "r={r}");
        }
    }

    #[test]
    fn residual_amplitude_is_fifth_order() {
        for r in [0.01_f64, 0.02, 0.04] {
            let s = run_semiclassical_protocol(true, true, r / 4.0, 1);
            let want = -r.powi(5) * C64::new(1.0, 1.0);
            // relative correction ≈ √10 r⁴, plus cancellation noise at tiny r
            assert!(((s.beta - want) / r.powi(5)).norm() < 4.0 * r.powi(4) + 1e-6);
        }
    }

    #[test]
    fn fidelity_and_loss() {
        assert_eq!(semiclassical_fidelity(C64::new(0.0, 0.0)), 1.0);
        assert!(semiclassical_fidelity(C64::new(0.1, 0.0)) > semiclassical_fidelity(C64::new(0.2, 0.0)));
        let b = beta_r_closed_form(0.4);
        assert!((semiclassical_fidelity(b) - (-b.norm_sqr()).exp()).abs() < 1e-15);
        assert_eq!(loss_penalty(0.7, 1.0, 5).unwrap(), 0.7);
        assert!((loss_penalty(1.0, 0.99, 10).unwrap() - 0.904_382_075_008_804_5).abs() < 1e-12);
        assert!(loss_penalty(1.0, 1.5, 1).is_err());
    }

    #[test]
    fn dephasing_closed_form_and_zero_sigma() {
        let e = parasitic_dephasing_fidelity(0.0, 10, 1).unwrap();
        assert_eq!(e.monte_carlo, 1.0);
        assert_eq!(e.closed_form, 1.0);
        let e = parasitic_dephasing_fidelity(0.1, 1000, 1).unwrap();
        assert!((e.closed_form - 0.5 * (1.0 + (-0.32f64).exp())).abs() < 1e-15);
        assert!((e.closed_form - 0.8631).abs() < 1e-4);
        assert!(parasitic_dephasing_fidelity(-1.0, 10, 1).is_err());
        assert!(parasitic_dephasing_fidelity(0.1, 0, 1).is_err());
    }

    #[test]
    fn dephasing_is_deterministic_across_pools() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| parasitic_dephasing_fidelity(0.1, 200_000, 7).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
