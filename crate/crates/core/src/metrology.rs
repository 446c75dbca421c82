//! Estimation figures of merit: classical and quantum Fisher information,
//! signal-to-noise ratio, the Poissonian approximation, and the search for the
//! displacement that maximizes the counting Fisher information.

use faer::{c64, Mat, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::counting::{self, CountDistribution};
use crate::error::{Error, Result};
use crate::fock::{self, Operator, Support};
use crate::liouvillian::{ModelConfig, Theta};
use crate::steady::StationarySolution;

/// Terms with `p` and `|∂p|` both below this are dropped as 0/0 noise.
pub const PROBABILITY_FLOOR: f64 = 1e-14;
/// A vanishing `p` paired with a derivative above this is inconsistent.
pub const DERIVATIVE_CEILING: f64 = 1e-12;
/// Slightly negative probabilities down to this are treated as zero.
pub const NEGATIVE_SLACK: f64 = 1e-10;
/// Eigenvalue pairs with `λᵢ + λⱼ` below this are skipped in the QFI.
pub const QFI_EIGEN_CUT: f64 = 1e-12;

/// `Σ (∂p)² / p` over the outcomes of a counting distribution.
pub fn classical_fisher(dist: &CountDistribution) -> Result<f64> {
    fisher_sum(&dist.probs, &dist.dprobs)
}

fn fisher_sum(probs: &[f64], dprobs: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (index, (&p, &dp)) in probs.iter().zip(dprobs).enumerate() {
        if p < PROBABILITY_FLOOR {
            if dp.abs() < PROBABILITY_FLOOR {
                continue;
            }
            if dp.abs() >= DERIVATIVE_CEILING || p < -NEGATIVE_SLACK {
                return Err(Error::TruncationInconsistency { index, p, dp });
            }
            // between the two floors: too small to matter, too large to be 0/0
            continue;
        }
        total += dp * dp / p;
    }
    Ok(total)
}

/// Sum of the marginal Fisher informations of a joint two-sensor distribution.
pub fn uncorrelated_fisher(dist: &CountDistribution) -> Result<f64> {
    if dist.num_sensors() != 2 {
        return Err(Error::InvalidConfig(
            "uncorrelated Fisher information needs a joint two-sensor distribution".into(),
        ));
    }
    Ok(classical_fisher(&dist.marginal(0)?)? + classical_fisher(&dist.marginal(1)?)?)
}

/// Quantum Fisher information from the spectral form of the symmetric
/// logarithmic derivative.
pub fn quantum_fisher(rho: &Operator, drho: &Operator) -> Result<f64> {
    if rho.dim() != drho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: drho.dim(),
        });
    }
    for op in [rho, drho] {
        let deviation = op.hermiticity_defect();
        if deviation > 1e-8 * op.max_abs().max(1.0) {
            return Err(Error::NonHermitian { deviation });
        }
    }
    let rho_h = rho.hermitian_part();
    let evd = rho_h
        .matrix()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let u = evd.U();
    let lambda: Vec<f64> = evd.S().column_vector().iter().map(|v| v.re).collect();
    let drho_h = drho.hermitian_part();
    let m: Mat<c64> = u.adjoint() * drho_h.matrix() * u;
    let d = lambda.len();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let s = lambda[i] + lambda[j];
            if s < QFI_EIGEN_CUT {
                continue;
            }
            total += 2.0 * m[(i, j)].norm_sqr() / s;
        }
    }
    Ok(total)
}

/// QFI of the sensor-reduced stationary state.
pub fn sensor_quantum_fisher(sol: &StationarySolution) -> Result<f64> {
    let (rho, drho) = counting::sensor_states(sol)?;
    quantum_fisher(&rho, &drho)
}

/// Total sensor photon number `Σᵢ ξᵢ†ξᵢ` on the full space.
pub fn photon_number(sol: &StationarySolution) -> Result<Operator> {
    let spec = &sol.spec;
    let mut total = Operator::zeros(spec, Support::Full);
    for i in 0..spec.num_sensors() {
        let a = fock::annihilation(spec, i)?;
        total = total.add(&a.adjoint().mul(&a)?)?;
    }
    Ok(total)
}

/// `(∂⟨O⟩)² / Var(O)` for a Hermitian observable on the full or sensor space.
pub fn snr(sol: &StationarySolution, observable: &Operator) -> Result<f64> {
    let deviation = observable.hermiticity_defect();
    if deviation > 1e-10 * observable.max_abs().max(1.0) {
        return Err(Error::NonHermitian { deviation });
    }
    let (rho, drho) = match observable.support() {
        Support::Full => (sol.rho_ss.clone(), sol.drho_ss.clone()),
        Support::Sensors => counting::sensor_states(sol)?,
    };
    let mean = observable.expectation(&rho)?.re;
    let dmean = observable.expectation(&drho)?.re;
    let second = observable.mul(observable)?.expectation(&rho)?.re;
    let variance = second - mean * mean;
    if variance <= PROBABILITY_FLOOR {
        return Err(Error::Undefined("signal-to-noise ratio (zero variance)"));
    }
    Ok(dmean * dmean / variance)
}

/// SNR of the total photon number.
pub fn photon_snr(sol: &StationarySolution) -> Result<f64> {
    snr(sol, &photon_number(sol)?)
}

/// `(∂⟨n⟩)² / ⟨n⟩`, the Fisher information of Poissonian counts with the
/// same mean.
pub fn poissonian_fisher(sol: &StationarySolution) -> Result<f64> {
    let n = photon_number(sol)?;
    let mean = n.expectation(&sol.rho_ss)?.re;
    let dmean = n.expectation(&sol.drho_ss)?.re;
    if mean <= PROBABILITY_FLOOR {
        return Err(Error::Undefined("Poissonian Fisher information (zero population)"));
    }
    Ok(dmean * dmean / mean)
}

/// Displacement that cancels the coherent part of sensor `index`.
pub fn alpha_fluct(config: &ModelConfig, index: usize) -> Result<c64> {
    config.validate()?;
    let g = config.cascade_coupling(index)?;
    let s = config.sensors[index];
    Ok(g * config.source.coherence() / c64::new(0.5 * s.linewidth, s.delta_s))
}

pub fn alpha_fluct_all(config: &ModelConfig) -> Result<Vec<c64>> {
    (0..config.num_sensors()).map(|i| alpha_fluct(config, i)).collect()
}

/// Counting Fisher information at the given displacements.
pub fn fisher_at(sol: &StationarySolution, alphas: &[c64]) -> Result<f64> {
    classical_fisher(&counting::distribution(sol, alphas)?)
}

/// Quantity used to judge truncation convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FigureOfMerit {
    #[default]
    Cfi,
    CfiAlphaFluct,
    Qfi,
    Population,
}

impl FigureOfMerit {
    pub fn evaluate(&self, config: &ModelConfig, sol: &StationarySolution) -> Result<f64> {
        match self {
            FigureOfMerit::Cfi => fisher_at(sol, &vec![c64::new(0.0, 0.0); config.num_sensors()]),
            FigureOfMerit::CfiAlphaFluct => fisher_at(sol, &alpha_fluct_all(config)?),
            FigureOfMerit::Qfi => sensor_quantum_fisher(sol),
            FigureOfMerit::Population => Ok(counting::populations(sol)?.iter().map(|p| p.0).sum()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `1 − Σp` of the counting distribution.
    pub truncation_leak: f64,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub condition: f64,
    pub warnings: Vec<String>,
}

/// Every figure of merit at one operating point. Quantities that are
/// undefined there (e.g. an SNR with zero variance) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetrologyReport {
    pub theta: Theta,
    #[serde(with = "crate::complex_serde::vec")]
    pub alphas: Vec<c64>,
    pub cfi: f64,
    pub qfi: f64,
    pub snr: Option<f64>,
    pub pfi: Option<f64>,
    pub cfi_uncorrelated: Option<f64>,
    pub diagnostics: Diagnostics,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn report(config: &ModelConfig, sol: &StationarySolution, alphas: &[c64]) -> Result<MetrologyReport> {
    let dist = counting::distribution(sol, alphas)?;
    let cfi = classical_fisher(&dist)?;
    let cfi_uncorrelated = if config.num_sensors() == 2 {
        Some(uncorrelated_fisher(&dist)?)
    } else {
        None
    };
    Ok(MetrologyReport {
        theta: config.theta,
        alphas: alphas.to_vec(),
        cfi,
        qfi: sensor_quantum_fisher(sol)?,
        snr: defined(photon_snr(sol))?,
        pfi: defined(poissonian_fisher(sol))?,
        cfi_uncorrelated,
        diagnostics: Diagnostics {
            truncation_leak: 1.0 - dist.total(),
            residual: sol.residual,
            min_eigenvalue: sol.min_eigenvalue,
            condition: sol.condition,
            warnings: dist.warnings,
        },
    })
}

/// Settings of the displacement search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    /// Grid points per real axis.
    pub grid_points: usize,
    /// Simplex evaluation budget.
    pub max_evaluations: usize,
    /// Relative spread of simplex values at which refinement stops.
    pub ftol: f64,
    /// Simplex diameter at which refinement stops.
    pub xtol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_points: 21,
            max_evaluations: 600,
            ftol: 1e-10,
            xtol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPoint {
    pub stage: &'static str,
    #[serde(with = "crate::complex_serde::vec")]
    pub alphas: Vec<c64>,
    pub cfi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaOptimum {
    #[serde(with = "crate::complex_serde::vec")]
    pub alphas: Vec<c64>,
    pub cfi: f64,
    #[serde(with = "crate::complex_serde::vec")]
    pub alpha_fluct: Vec<c64>,
    pub half_widths: Vec<f64>,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    pub trace: Vec<SearchPoint>,
}

struct Search<'a> {
    sol: &'a StationarySolution,
    trace: Vec<SearchPoint>,
    best: Option<(Vec<c64>, f64)>,
}

impl Search<'_> {
    fn record(&mut self, stage: &'static str, alphas: Vec<c64>, r: Result<f64>) -> f64 {
        let (cfi, error) = match r {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(v) = cfi {
            if self.best.as_ref().is_none_or(|(_, b)| v > *b) {
                self.best = Some((alphas.clone(), v));
            }
        }
        self.trace.push(SearchPoint {
            stage,
            alphas,
            cfi,
            error,
        });
        cfi.unwrap_or(f64::NEG_INFINITY)
    }

    fn eval(&mut self, stage: &'static str, alphas: Vec<c64>) -> f64 {
        let r = fisher_at(self.sol, &alphas);
        self.record(stage, alphas, r)
    }

    /// Evaluate a batch in parallel, logging in input order.
    fn eval_batch(&mut self, stage: &'static str, batch: Vec<Vec<c64>>) -> Vec<f64> {
        let sol = self.sol;
        let results: Vec<Result<f64>> = batch.par_iter().map(|a| fisher_at(sol, a)).collect();
        batch
            .into_iter()
            .zip(results)
            .map(|(a, r)| self.record(stage, a, r))
            .collect()
    }
}

fn grid_axis(half_width: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| -half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
        .collect()
}

/// Grid-then-simplex maximization of the counting Fisher information over
/// the displacements of every sensor.
pub fn optimize_alpha(
    config: &ModelConfig,
    sol: &StationarySolution,
    options: &SearchOptions,
) -> Result<AlphaOptimum> {
    if options.grid_points < 2 {
        return Err(Error::InvalidConfig("search grid needs at least 2 points per axis".into()));
    }
    let fluct = alpha_fluct_all(config)?;
    let half_widths: Vec<f64> = fluct.iter().map(|a| (3.0 * a.norm()).max(2.0)).collect();
    let sensors = fluct.len();
    let mut search = Search {
        sol,
        trace: Vec::new(),
        best: None,
    };
    search.eval("seed", vec![c64::new(0.0, 0.0); sensors]);
    search.eval("seed", fluct.clone());

    // one sensor at a time, the others held at their current best
    let mut current = fluct.clone();
    for i in 0..sensors {
        let axis = grid_axis(half_widths[i], options.grid_points);
        let batch: Vec<Vec<c64>> = axis
            .iter()
            .flat_map(|&re| axis.iter().map(move |&im| c64::new(re, im)))
            .map(|z| {
                let mut a = current.clone();
                a[i] = z;
                a
            })
            .collect();
        search.eval_batch("grid", batch);
        if let Some((best, _)) = &search.best {
            current[i] = best[i];
        }
    }
    let (start, _) = search
        .best
        .clone()
        .ok_or(Error::Undefined("Fisher information at every sampled displacement"))?;

    let x0: Vec<f64> = start.iter().flat_map(|z| [z.re, z.im]).collect();
    let step: Vec<f64> = half_widths
        .iter()
        .flat_map(|&w| {
            let s = 2.0 * w / (options.grid_points - 1) as f64;
            [s, s]
        })
        .collect();
    // The counting information can keep growing towards the homodyne limit
    // as |α| → ∞, so refinement stays inside the search box.
    let to_alphas = |x: &[f64]| -> Vec<c64> {
        x.chunks(2)
            .zip(&half_widths)
            .map(|(c, &w)| c64::new(c[0].clamp(-w, w), c[1].clamp(-w, w)))
            .collect()
    };
    let outcome = nelder_mead(
        |x| -search.eval("simplex", to_alphas(x)),
        &x0,
        &step,
        options.max_evaluations,
        options.ftol,
        options.xtol,
    );
    let (alphas, cfi) = search.best.clone().expect("seeded above");
    Ok(AlphaOptimum {
        alphas,
        cfi,
        alpha_fluct: fluct,
        half_widths,
        evaluations: search.trace.len(),
        budget_exhausted: !outcome.converged,
        trace: search.trace,
    })
}

/// Result of a simplex minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead minimization with standard coefficients. Deterministic:
/// ties are broken by vertex order.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    max_evaluations: usize,
    ftol: f64,
    xtol: f64,
) -> SimplexOutcome {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    while evals < max_evaluations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fbest, fworst) = (simplex[0].1, simplex[n].1);
        let spread = (fworst - fbest).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= ftol * fbest.abs().max(1e-300) && diameter <= xtol.max(1e-12 * fbest.abs()) || diameter < 1e-14 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < fbest {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fworst {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fr.min(fworst) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    let v = eval(&x, &mut evals);
                    *vertex = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexOutcome {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::HilbertSpec;

    fn dist(probs: Vec<f64>, dprobs: Vec<f64>) -> CountDistribution {
        CountDistribution {
            shape: vec![probs.len()],
            probs,
            dprobs,
            alphas: vec![c64::new(0.0, 0.0)],
            spec: HilbertSpec::one_sensor(1).unwrap(),
            warnings: vec![],
        }
    }

    #[test]
    fn poisson_family_fisher() {
        let (nbar, dn): (f64, f64) = (0.3, 0.7);
        let mut probs = Vec::new();
        let mut dprobs = Vec::new();
        let mut fact = 1.0;
        for n in 0..60 {
            if n > 0 {
                fact *= n as f64;
            }
            let p = (-nbar).exp() * nbar.powi(n) / fact;
            probs.push(p);
            dprobs.push(p * (n as f64 / nbar - 1.0) * dn);
        }
        let f = classical_fisher(&dist(probs, dprobs)).unwrap();
        assert!((f - 49.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn floor_rules() {
        assert_eq!(classical_fisher(&dist(vec![0.5, 0.5], vec![0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(classical_fisher(&dist(vec![1.0, 1e-16], vec![0.0, 1e-15])).unwrap(), 0.0);
        assert!(matches!(
            classical_fisher(&dist(vec![1.0, 1e-16], vec![0.0, 1e-9])),
            Err(Error::TruncationInconsistency { index: 1, .. })
        ));
    }

    #[test]
    fn pure_rotation_qfi_is_four() {
        let spec = HilbertSpec::one_sensor(1).unwrap();
        for theta in [0.0f64, 0.3, 1.1] {
            let (c, s) = (theta.cos(), theta.sin());
            let psi = [c, s];
            let dpsi = [-s, c];
            let rho = Mat::from_fn(2, 2, |i, j| c64::new(psi[i] * psi[j], 0.0));
            let drho = Mat::from_fn(2, 2, |i, j| c64::new(dpsi[i] * psi[j] + psi[i] * dpsi[j], 0.0));
            let q = quantum_fisher(
                &Operator::new(rho, spec.clone(), Support::Sensors).unwrap(),
                &Operator::new(drho, spec.clone(), Support::Sensors).unwrap(),
            )
            .unwrap();
            assert!((q - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn qfi_rejects_non_hermitian_input() {
        let spec = HilbertSpec::one_sensor(1).unwrap();
        let rho = Operator::identity(&spec, Support::Sensors).scale(c64::new(0.5, 0.0));
        let bad = Mat::from_fn(2, 2, |i, j| if i == 0 && j == 1 { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) });
        let bad = Operator::new(bad, spec, Support::Sensors).unwrap();
        assert!(matches!(quantum_fisher(&rho, &bad), Err(Error::NonHermitian { .. })));
    }

    #[test]
    fn simplex_finds_quadratic_minimum() {
        let out = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5,
            &[0.0, 0.0],
            &[0.5, 0.5],
            2000,
            1e-14,
            1e-9,
        );
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] + 2.0).abs() < 1e-6);
    }
}
