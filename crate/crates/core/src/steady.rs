//! Stationary states of a Liouvillian and their parameter derivatives.
//!
//! The generator is singular, so its first row is overwritten with the trace
//! functional and the system `L_eff vec(ρ) = e₀` is solved with a sparse LU
//! factorization. The same factorization serves the derivative solve.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, NumericLu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Conj, Mat, MatMut, Par, Side};

use crate::error::{Error, Result};
use crate::fock::{HilbertSpec, Operator, Support};
use crate::liouvillian::{self, unvectorize, vectorize, ModelConfig, SuperOperator};

/// Condition estimates above this flag a degenerate stationary manifold.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Most negative eigenvalue tolerated before a state is declared unphysical.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-9;
/// Largest accepted `‖L vec(ρ)‖∞`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

/// `L` with its first row replaced by the trace functional, factorized once.
pub struct EffectiveLiouvillian {
    matrix: SparseColMat<usize, c64>,
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, c64>,
    spec: HilbertSpec,
}

impl std::fmt::Debug for EffectiveLiouvillian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EffectiveLiouvillian")
            .field("size", &self.matrix.nrows())
            .field("nnz", &self.matrix.compute_nnz())
            .finish()
    }
}

fn lu_error(e: LuError) -> Error {
    match e {
        LuError::SymbolicSingular { .. } => Error::DegenerateSteadyState {
            condition: f64::INFINITY,
        },
        LuError::Generic(e) => Error::LinearAlgebra(format!("{e:?}")),
    }
}

impl EffectiveLiouvillian {
    pub fn new(l: &SuperOperator) -> Result<Self> {
        let d = l.hilbert_dim();
        let n = d * d;
        let m = l.matrix();
        let mut entries = Vec::with_capacity(m.compute_nnz() + d);
        for j in 0..n {
            for (&i, &v) in m.row_idx_of_col_raw(j).iter().zip(m.val_of_col(j)) {
                if i != 0 {
                    entries.push(Triplet::new(i, j, v));
                }
            }
        }
        for a in 0..d {
            entries.push(Triplet::new(0, a * (d + 1), c64::new(1.0, 0.0)));
        }
        let matrix = SparseColMat::try_new_from_triplets(n, n, &entries)
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;

        let symbolic = factorize_symbolic_lu(matrix.symbolic(), Default::default())
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let mut numeric = NumericLu::new();
        let mut buf = MemBuffer::try_new(
            symbolic.factorize_numeric_lu_scratch::<c64>(Par::Seq, Default::default()),
        )
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        symbolic
            .factorize_numeric_lu(
                &mut numeric,
                matrix.as_ref(),
                Par::Seq,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(lu_error)?;
        Ok(Self {
            matrix,
            symbolic,
            numeric,
            spec: l.spec().clone(),
        })
    }

    pub fn spec(&self) -> &HilbertSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    fn lu(&self) -> LuRef<'_, usize, c64> {
        LuRef::new_unchecked(&self.symbolic, &self.numeric)
    }

    fn solve_with(&self, rhs: &mut [c64], transpose: bool) {
        let n = self.size();
        let lu = self.lu();
        let req = self.symbolic.solve_in_place_scratch::<c64>(1, Par::Seq);
        let mut buf = MemBuffer::new(req);
        let stack = MemStack::new(&mut buf);
        let rhs = MatMut::from_column_major_slice_mut(rhs, n, 1);
        if transpose {
            lu.solve_transpose_in_place_with_conj(Conj::Yes, rhs, Par::Seq, stack);
        } else {
            lu.solve_in_place_with_conj(Conj::No, rhs, Par::Seq, stack);
        }
    }

    fn apply(&self, x: &[c64]) -> Vec<c64> {
        let mut y = vec![ZERO; self.size()];
        for (j, &xj) in x.iter().enumerate() {
            for (&i, &v) in self.matrix.row_idx_of_col_raw(j).iter().zip(self.matrix.val_of_col(j)) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// Solve `L_eff x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        assert_eq!(b.len(), self.size());
        let mut x = b.to_vec();
        self.solve_with(&mut x, false);
        let ax = self.apply(&x);
        let mut r: Vec<c64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        self.solve_with(&mut r, false);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
        x
    }

    fn solve_adjoint(&self, b: &[c64]) -> Vec<c64> {
        let mut x = b.to_vec();
        self.solve_with(&mut x, true);
        x
    }

    fn norm1(&self) -> f64 {
        (0..self.size())
            .map(|j| self.matrix.val_of_col(j).iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// One-norm condition estimate (Hager's method with Higham's safeguard).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.size();
        let norm_a = self.norm1();
        let mut x = vec![c64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve_plain(&x);
            let new_est: f64 = y.iter().map(|v| v.norm()).sum();
            if !new_est.is_finite() {
                return f64::INFINITY;
            }
            if new_est <= est {
                break;
            }
            est = new_est;
            let xi: Vec<c64> = y
                .iter()
                .map(|v| if v.norm() > 0.0 { v / v.norm() } else { c64::new(1.0, 0.0) })
                .collect();
            let z = self.solve_adjoint(&xi);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.norm()))
                .fold((0, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            let ztx: c64 = z.iter().zip(&x).map(|(zi, xi)| zi.conj() * xi).sum();
            if zmax <= ztx.re || j == last_j {
                break;
            }
            last_j = j;
            x = vec![ZERO; n];
            x[j] = c64::new(1.0, 0.0);
        }
        // Higham's alternating-sign test vector guards against underestimates.
        let alt: Vec<c64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                c64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
            })
            .collect();
        let y = self.solve_plain(&alt);
        let alt_est = 2.0 * y.iter().map(|v| v.norm()).sum::<f64>() / (3.0 * n as f64);
        norm_a * est.max(alt_est)
    }

    fn solve_plain(&self, b: &[c64]) -> Vec<c64> {
        let mut x = b.to_vec();
        self.solve_with(&mut x, false);
        x
    }
}

/// Stationary state of one generator, with the factorization kept for
/// derivative solves.
#[derive(Debug)]
pub struct SteadyState {
    pub rho_ss: Operator,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub condition: f64,
    pub l_eff: EffectiveLiouvillian,
}

/// Stationary state and its derivative with respect to the estimated parameter.
#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub rho_ss: Operator,
    pub drho_ss: Operator,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub condition: f64,
    pub spec: HilbertSpec,
}

fn min_eigenvalue(m: &Mat<c64>) -> Result<f64> {
    let ev = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    Ok(ev.into_iter().fold(f64::INFINITY, f64::min))
}

fn symmetrize(m: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// Solve `L ρ = 0, Tr ρ = 1`.
pub fn steady_state(l: &SuperOperator) -> Result<SteadyState> {
    let d = l.hilbert_dim();
    let l_eff = EffectiveLiouvillian::new(l)?;
    let condition = l_eff.condition_estimate();
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::DegenerateSteadyState { condition });
    }
    let mut rhs = vec![ZERO; d * d];
    rhs[0] = c64::new(1.0, 0.0);
    let x = l_eff.solve(&rhs);
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::DegenerateSteadyState {
            condition: f64::INFINITY,
        });
    }
    let rho = symmetrize(&unvectorize(&x, d));
    let residual = l
        .apply_vec(&vectorize(&rho))
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if residual.is_nan() || residual >= RESIDUAL_TOLERANCE {
        return Err(Error::Residual { residual });
    }
    let min_eigenvalue = min_eigenvalue(&rho)?;
    if min_eigenvalue < -NEGATIVITY_TOLERANCE {
        return Err(Error::Unphysical { min_eigenvalue });
    }
    Ok(SteadyState {
        rho_ss: Operator::new(rho, l.spec().clone(), Support::Full)?,
        residual,
        min_eigenvalue,
        condition,
        l_eff,
    })
}

/// `∂ρ = −L_eff⁻¹ (∂L_eff) ρ`, where `∂L_eff` is `dl` with its first row
/// removed because the trace functional does not depend on the parameter.
pub fn steady_state_derivative(
    l_eff: &EffectiveLiouvillian,
    dl: &SuperOperator,
    rho_ss: &Operator,
) -> Result<Operator> {
    let d = l_eff.spec().total_dim();
    for found in [dl.hilbert_dim(), rho_ss.dim()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    let mut rhs = dl.apply_vec(&vectorize(rho_ss.matrix()));
    rhs[0] = ZERO;
    for v in rhs.iter_mut() {
        *v = -*v;
    }
    let x = l_eff.solve(&rhs);
    let drho = symmetrize(&unvectorize(&x, d));
    Operator::new(drho, l_eff.spec().clone(), Support::Full)
}

impl SteadyState {
    pub fn derivative(&self, dl: &SuperOperator) -> Result<Operator> {
        steady_state_derivative(&self.l_eff, dl, &self.rho_ss)
    }
}

/// Build, solve and differentiate in one go.
pub fn solve(config: &ModelConfig) -> Result<StationarySolution> {
    let l = liouvillian::build(config)?;
    let dl = liouvillian::param_derivative(config)?;
    let ss = steady_state(&l)?;
    let drho_ss = ss.derivative(&dl)?;
    Ok(StationarySolution {
        drho_ss,
        residual: ss.residual,
        min_eigenvalue: ss.min_eigenvalue,
        condition: ss.condition,
        spec: config.spec.clone(),
        rho_ss: ss.rho_ss,
    })
}

/// Default ceiling for the truncation ladder.
pub const DEFAULT_TRUNCATION_CAP: usize = 12;

/// One rung of a truncation ladder.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceStep {
    pub n_exc: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceReport {
    pub n_exc: usize,
    pub value: f64,
    pub rel_tol: f64,
    pub trace: Vec<ConvergenceStep>,
}

fn agree(a: f64, b: f64, rel_tol: f64) -> bool {
    (a - b).abs() <= rel_tol * a.abs().max(b.abs())
}

/// Raise every sensor's truncation by one until `figure_of_merit` agrees
/// between consecutive rungs to `rel_tol`; the lower rung is returned.
pub fn converge_truncation<F>(
    config: &ModelConfig,
    figure_of_merit: F,
    rel_tol: f64,
    start: usize,
    cap: usize,
) -> Result<ConvergenceReport>
where
    F: Fn(&ModelConfig, &StationarySolution) -> Result<f64>,
{
    if rel_tol.is_nan() || rel_tol <= 0.0 {
        return Err(Error::InvalidConfig("rel_tol must be positive".into()));
    }
    if start == 0 || start > cap {
        return Err(Error::InvalidConfig(format!(
            "truncation ladder needs 1 <= start <= cap, got start {start}, cap {cap}"
        )));
    }
    let mut trace: Vec<ConvergenceStep> = Vec::new();
    for n in start..=cap {
        let cfg = config.with_truncation(n)?;
        let sol = solve(&cfg)?;
        let value = figure_of_merit(&cfg, &sol)?;
        if let Some(prev) = trace.last() {
            if agree(prev.value, value, rel_tol) {
                let (n_exc, converged) = (prev.n_exc, prev.value);
                trace.push(ConvergenceStep { n_exc: n, value });
                return Ok(ConvergenceReport {
                    n_exc,
                    value: converged,
                    rel_tol,
                    trace,
                });
            }
        }
        trace.push(ConvergenceStep { n_exc: n, value });
    }
    Err(Error::NotConverged {
        cap,
        trace: trace.into_iter().map(|s| (s.n_exc, s.value)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock;
    use crate::liouvillian::{build_source, SensorParams, SourceParams, Theta};

    #[test]
    fn bare_emitter_matches_bloch_solution() {
        let src = SourceParams::new(0.0, 1.0, 1.0);
        let ss = steady_state(&build_source(&src).unwrap()).unwrap();
        let sigma = fock::lowering_qubit(&HilbertSpec::qubit_only());
        let coh = sigma.expectation(&ss.rho_ss).unwrap();
        assert!((coh - c64::new(0.0, -2.0 / 9.0)).norm() < 1e-12);
        let pe = sigma.adjoint().mul(&sigma).unwrap().expectation(&ss.rho_ss).unwrap();
        assert!((pe.re - 4.0 / 9.0).abs() < 1e-12);
        assert!((ss.rho_ss.trace() - c64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn undriven_emitter_relaxes_to_ground() {
        let cfg = ModelConfig::one_sensor(
            SourceParams::new(0.3, 0.0, 1.0),
            SensorParams::new(0.2, 0.5),
            0.7,
            3,
            Theta::Delta,
        )
        .unwrap();
        let sol = solve(&cfg).unwrap();
        assert!((sol.rho_ss.matrix()[(0, 0)] - c64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(sol.rho_ss.frobenius_norm() - 1.0 < 1e-12);
    }

    #[test]
    fn zero_derivative_gives_zero() {
        let src = SourceParams::new(0.3, 0.8, 1.0);
        let l = build_source(&src).unwrap();
        let ss = steady_state(&l).unwrap();
        let d = ss.derivative(&SuperOperator::zeros(l.spec().clone())).unwrap();
        assert_eq!(d.max_abs(), 0.0);
    }

    #[test]
    fn degenerate_generator_is_reported() {
        // a purely Hamiltonian generator conserves every energy population
        let spec = HilbertSpec::qubit_only();
        let s = fock::lowering_qubit(&spec);
        let n = s.adjoint().mul(&s).unwrap();
        let l = liouvillian::hamiltonian_generator(&n);
        match steady_state(&l) {
            Err(Error::DegenerateSteadyState { .. }) => {}
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn repeated_solves_are_bit_identical() {
        let cfg = ModelConfig::two_sensor(
            SourceParams::new(0.4, 1.3, 1.0),
            [SensorParams::new(-0.5, 0.6), SensorParams::new(1.1, 0.6)],
            0.5,
            2,
            Theta::Omega,
        )
        .unwrap();
        let a = solve(&cfg).unwrap();
        let b = solve(&cfg).unwrap();
        assert_eq!(a.rho_ss.matrix(), b.rho_ss.matrix());
        assert_eq!(a.drho_ss.matrix(), b.drho_ss.matrix());
    }

    #[test]
    fn ladder_stops_immediately_when_flat() {
        let cfg = ModelConfig::one_sensor(
            SourceParams::new(0.0, 1.0, 1.0),
            SensorParams::new(0.0, 0.5),
            0.0,
            1,
            Theta::Delta,
        )
        .unwrap();
        let rep = converge_truncation(&cfg, |_, _| Ok(2.5), 1e-6, 1, 5).unwrap();
        assert_eq!(rep.n_exc, 1);
        assert_eq!(rep.trace.len(), 2);
        let err = converge_truncation(&cfg, |c, _| Ok(c.spec.sensor_truncations()[0] as f64), 1e-6, 1, 3);
        assert!(matches!(err, Err(Error::NotConverged { cap: 3, .. })));

        let rung = |c: &ModelConfig, _: &StationarySolution| {
            let n = c.spec.sensor_truncations()[0] as f64;
            Ok(if n < 3.0 { n } else { 1.0 + 1e-9 * n })
        };
        let rep = converge_truncation(&cfg, rung, 1e-6, 1, 6).unwrap();
        assert_eq!(rep.n_exc, 3);
        assert_eq!(rep.value, 1.0 + 3e-9);
        let last = rep.trace.last().unwrap();
        assert_eq!((last.n_exc, last.value), (4, 1.0 + 4e-9));
    }
}
