//! Liouvillian superoperators of the driven emitter and its cascaded sensors.
//!
//! Density matrices are vectorized by stacking columns: `ρ_ij` sits at
//! index `i + d·j`, so `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)` and the commutator
//! `[H, ρ]` maps to `(I ⊗ H − Hᵀ ⊗ I) vec(ρ)`.
//!
//! All rates are plain numbers; callers conventionally measure them in units
//! of the emitter decay rate γ.

use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, HilbertSpec, Operator, Support};

/// Emitter parameters: laser detuning Δ, Rabi frequency Ω and decay rate γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub delta: f64,
    pub omega: f64,
    #[serde(default = "unit_gamma")]
    pub gamma: f64,
}

fn unit_gamma() -> f64 {
    1.0
}

impl SourceParams {
    pub fn new(delta: f64, omega: f64, gamma: f64) -> Self {
        Self { delta, omega, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.omega.is_finite() && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig("source parameters must be finite".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "decay rate gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Closed-form stationary coherence `⟨σ⟩` of the bare emitter.
    pub fn coherence(&self) -> c64 {
        let (d, o, g) = (self.delta, self.omega, self.gamma);
        let den = g * g + 4.0 * d * d + 8.0 * o * o;
        -c64::new(4.0 * d * o, 2.0 * g * o) / den
    }

    /// Closed-form stationary excited-state population.
    pub fn excited_population(&self) -> f64 {
        let (d, o, g) = (self.delta, self.omega, self.gamma);
        4.0 * o * o / (g * g + 4.0 * d * d + 8.0 * o * o)
    }

    /// Dressed-state splitting `2√(Ω² + Δ²/4)`.
    pub fn dressed_splitting(&self) -> f64 {
        2.0 * (self.omega * self.omega + 0.25 * self.delta * self.delta).sqrt()
    }
}

/// A Lorentzian filter: detuning from the laser and linewidth Γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorParams {
    pub delta_s: f64,
    pub linewidth: f64,
}

impl SensorParams {
    pub fn new(delta_s: f64, linewidth: f64) -> Self {
        Self { delta_s, linewidth }
    }
}

/// The source parameter being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Theta {
    #[serde(alias = "delta")]
    Delta,
    #[serde(alias = "omega")]
    Omega,
    #[serde(alias = "gamma", alias = "Gamma")]
    GammaDecay,
}

impl Theta {
    pub fn name(&self) -> &'static str {
        match self {
            Theta::Delta => "Delta",
            Theta::Omega => "Omega",
            Theta::GammaDecay => "GammaDecay",
        }
    }
}

/// Default truncation for one-sensor models.
pub const DEFAULT_ONE_SENSOR_TRUNCATION: usize = 4;
/// Default per-sensor truncation for two-sensor models.
pub const DEFAULT_TWO_SENSOR_TRUNCATION: usize = 3;

/// Full physical model plus truncation and estimation target.
///
/// In serialized form `spec` may be omitted, in which case the default
/// truncation for the sensor count is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelConfig")]
pub struct ModelConfig {
    pub source: SourceParams,
    pub sensors: Vec<SensorParams>,
    pub epsilon: f64,
    pub spec: HilbertSpec,
    pub theta: Theta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelConfig {
    source: SourceParams,
    sensors: Vec<SensorParams>,
    epsilon: f64,
    #[serde(default)]
    spec: Option<HilbertSpec>,
    theta: Theta,
}

impl TryFrom<RawModelConfig> for ModelConfig {
    type Error = Error;

    fn try_from(raw: RawModelConfig) -> Result<Self> {
        let spec = match raw.spec {
            Some(spec) => spec,
            None => match raw.sensors.len() {
                1 => HilbertSpec::one_sensor(DEFAULT_ONE_SENSOR_TRUNCATION)?,
                2 => HilbertSpec::two_sensor(DEFAULT_TWO_SENSOR_TRUNCATION)?,
                n => return Err(Error::InvalidConfig(format!("unsupported sensor count {n}"))),
            },
        };
        let cfg = ModelConfig {
            source: raw.source,
            sensors: raw.sensors,
            epsilon: raw.epsilon,
            spec,
            theta: raw.theta,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ModelConfig {
    pub fn one_sensor(
        source: SourceParams,
        sensor: SensorParams,
        epsilon: f64,
        n_exc: usize,
        theta: Theta,
    ) -> Result<Self> {
        let cfg = Self {
            source,
            sensors: vec![sensor],
            epsilon,
            spec: HilbertSpec::one_sensor(n_exc)?,
            theta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn two_sensor(
        source: SourceParams,
        sensors: [SensorParams; 2],
        epsilon: f64,
        n_exc: usize,
        theta: Theta,
    ) -> Result<Self> {
        let cfg = Self {
            source,
            sensors: sensors.to_vec(),
            epsilon,
            spec: HilbertSpec::two_sensor(n_exc)?,
            theta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if self.sensors.len() != self.spec.num_sensors() {
            return Err(Error::InvalidConfig(format!(
                "{} sensor(s) configured but the Hilbert space has {}",
                self.sensors.len(),
                self.spec.num_sensors()
            )));
        }
        for s in &self.sensors {
            if !(s.delta_s.is_finite() && s.linewidth.is_finite()) {
                return Err(Error::InvalidConfig("sensor parameters must be finite".into()));
            }
            if s.linewidth <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "sensor linewidth must be positive, got {}",
                    s.linewidth
                )));
            }
        }
        Ok(())
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// Same model at a different truncation (every sensor set to `n_exc`).
    pub fn with_truncation(&self, n_exc: usize) -> Result<Self> {
        let mut out = self.clone();
        out.spec = self.spec.with_truncation(n_exc)?;
        Ok(out)
    }

    /// Same model with the estimated parameter shifted by `h`.
    pub fn shifted(&self, h: f64) -> Self {
        let mut out = self.clone();
        match self.theta {
            Theta::Delta => out.source.delta += h,
            Theta::Omega => out.source.omega += h,
            Theta::GammaDecay => out.source.gamma += h,
        }
        out
    }

    /// Cascade coupling `√(εγΓ)` of sensor `index`; the beam-split
    /// two-sensor layout carries an extra `1/√2`.
    pub fn cascade_coupling(&self, index: usize) -> Result<f64> {
        let sensor = self.sensors.get(index).ok_or(Error::SensorIndex {
            index,
            sensors: self.sensors.len(),
        })?;
        let split = if self.sensors.len() == 2 { 0.5 } else { 1.0 };
        Ok((self.epsilon * self.source.gamma * sensor.linewidth * split).sqrt())
    }
}

/// Sparse matrix acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    matrix: SparseColMat<usize, c64>,
    spec: HilbertSpec,
}

impl SuperOperator {
    /// The zero map on `spec`.
    pub fn zeros(spec: HilbertSpec) -> Self {
        let n = spec.total_dim() * spec.total_dim();
        let matrix = SparseColMat::try_new_from_triplets(n, n, &[]).expect("empty pattern");
        Self { matrix, spec }
    }

    pub fn matrix(&self) -> &SparseColMat<usize, c64> {
        &self.matrix
    }

    pub fn spec(&self) -> &HilbertSpec {
        &self.spec
    }

    /// Hilbert-space dimension `d`; the matrix is `d² × d²`.
    pub fn hilbert_dim(&self) -> usize {
        self.spec.total_dim()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.compute_nnz()
    }

    pub fn to_dense(&self) -> Mat<c64> {
        self.matrix.to_dense()
    }

    /// Matrix–vector product on a vectorized density matrix.
    pub fn apply_vec(&self, x: &[c64]) -> Vec<c64> {
        let n = self.matrix.ncols();
        assert_eq!(x.len(), n, "vector length must match superoperator size");
        let mut y = vec![c64::new(0.0, 0.0); self.matrix.nrows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj == c64::new(0.0, 0.0) {
                continue;
            }
            let rows = self.matrix.row_idx_of_col_raw(j);
            let vals = self.matrix.val_of_col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// `L(ρ)` as an operator.
    pub fn apply(&self, rho: &Operator) -> Result<Operator> {
        if rho.support() != Support::Full || rho.dim() != self.hilbert_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hilbert_dim(),
                found: rho.dim(),
            });
        }
        let y = self.apply_vec(&vectorize(rho.matrix()));
        Operator::new(unvectorize(&y, self.hilbert_dim()), self.spec.clone(), Support::Full)
    }

    /// Row vector `vec(I)ᵀ · L`, which vanishes for a trace-preserving generator.
    pub fn trace_row_product(&self) -> Vec<c64> {
        let d = self.hilbert_dim();
        let n = self.matrix.ncols();
        (0..n)
            .map(|j| {
                self.matrix
                    .row_idx_of_col_raw(j)
                    .iter()
                    .zip(self.matrix.val_of_col(j))
                    .filter(|(&i, _)| i % (d + 1) == 0)
                    .map(|(_, &v)| v)
                    .sum()
            })
            .collect()
    }
}

/// Column-stacking vectorization.
pub fn vectorize(m: &Mat<c64>) -> Vec<c64> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unvectorize(v: &[c64], d: usize) -> Mat<c64> {
    Mat::from_fn(d, d, |i, j| v[i + d * j])
}

/// Triplet accumulator for superoperators built from left/right products.
struct Assembler {
    d: usize,
    entries: Vec<Triplet<usize, usize, c64>>,
}

fn nonzeros(m: &Mat<c64>) -> Vec<(usize, usize, c64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != c64::new(0.0, 0.0) {
                out.push((i, j, v));
            }
        }
    }
    out
}

impl Assembler {
    fn new(d: usize) -> Self {
        Self {
            d,
            entries: Vec::new(),
        }
    }

    /// ρ ↦ c·Aρ
    fn left(&mut self, a: &Operator, c: c64) {
        let d = self.d;
        for (i, k, v) in nonzeros(a.matrix()) {
            for j in 0..d {
                self.entries.push(Triplet::new(i + d * j, k + d * j, c * v));
            }
        }
    }

    /// ρ ↦ c·ρB
    fn right(&mut self, b: &Operator, c: c64) {
        let d = self.d;
        for (k, j, v) in nonzeros(b.matrix()) {
            for i in 0..d {
                self.entries.push(Triplet::new(i + d * j, i + d * k, c * v));
            }
        }
    }

    /// ρ ↦ c·AρB
    fn sandwich(&mut self, a: &Operator, b: &Operator, c: c64) {
        let d = self.d;
        let bnz = nonzeros(b.matrix());
        for (i, k, av) in nonzeros(a.matrix()) {
            for &(l, j, bv) in &bnz {
                self.entries.push(Triplet::new(i + d * j, k + d * l, c * av * bv));
            }
        }
    }

    /// ρ ↦ −i c [H, ρ]
    fn hamiltonian(&mut self, h: &Operator, c: f64) {
        self.left(h, c64::new(0.0, -c));
        self.right(h, c64::new(0.0, c));
    }

    /// ρ ↦ (rate/2) D[X]ρ with D[X]ρ = 2XρX† − {X†X, ρ}
    fn dissipator(&mut self, x: &Operator, rate: f64) {
        let xd = x.adjoint();
        let n = xd.mul(x).expect("same space");
        self.sandwich(x, &xd, c64::new(rate, 0.0));
        self.left(&n, c64::new(-0.5 * rate, 0.0));
        self.right(&n, c64::new(-0.5 * rate, 0.0));
    }

    /// ρ ↦ −g([ξ†, σρ] + [ρσ†, ξ])
    fn cascade(&mut self, sigma: &Operator, xi: &Operator, g: f64) {
        let sd = sigma.adjoint();
        let xd = xi.adjoint();
        let c = c64::new(g, 0.0);
        self.left(&xd.mul(sigma).expect("same space"), -c);
        self.sandwich(sigma, &xd, c);
        self.right(&sd.mul(xi).expect("same space"), -c);
        self.sandwich(xi, &sd, c);
    }

    fn finish(self, spec: HilbertSpec) -> Result<SuperOperator> {
        let n = self.d * self.d;
        let matrix = SparseColMat::try_new_from_triplets(n, n, &self.entries)
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        Ok(SuperOperator { matrix, spec })
    }
}

fn source_hamiltonian(spec: &HilbertSpec, source: &SourceParams) -> Operator {
    let sigma = fock::lowering_qubit(spec);
    let sd = sigma.adjoint();
    let n = sd.mul(&sigma).expect("same space");
    let drive = sigma.add(&sd).expect("same space");
    n.scale(c64::new(source.delta, 0.0))
        .add(&drive.scale(c64::new(source.omega, 0.0)))
        .expect("same space")
}

/// Closed evolution `ρ ↦ −i[H, ρ]` under an arbitrary Hamiltonian.
pub fn hamiltonian_generator(h: &Operator) -> SuperOperator {
    let mut asm = Assembler::new(h.dim());
    asm.hamiltonian(h, 1.0);
    asm.finish(h.spec().clone()).expect("valid triplets")
}

/// Liouvillian of the bare driven emitter on its two-dimensional space.
pub fn build_source(source: &SourceParams) -> Result<SuperOperator> {
    source.validate()?;
    let spec = HilbertSpec::qubit_only();
    let mut asm = Assembler::new(spec.total_dim());
    asm.hamiltonian(&source_hamiltonian(&spec, source), 1.0);
    asm.dissipator(&fock::lowering_qubit(&spec), source.gamma);
    asm.finish(spec)
}

fn build_cascaded(config: &ModelConfig) -> Result<SuperOperator> {
    config.validate()?;
    let spec = &config.spec;
    let sigma = fock::lowering_qubit(spec);
    let mut asm = Assembler::new(spec.total_dim());
    asm.hamiltonian(&source_hamiltonian(spec, &config.source), 1.0);
    asm.dissipator(&sigma, config.source.gamma);
    for (i, sensor) in config.sensors.iter().enumerate() {
        let xi = fock::annihilation(spec, i)?;
        let n = xi.adjoint().mul(&xi)?;
        asm.hamiltonian(&n, sensor.delta_s);
        asm.dissipator(&xi, sensor.linewidth);
        let g = config.cascade_coupling(i)?;
        if g != 0.0 {
            asm.cascade(&sigma, &xi, g);
        }
    }
    asm.finish(spec.clone())
}

/// Emitter plus a single cascaded sensor.
pub fn build_one_sensor(config: &ModelConfig) -> Result<SuperOperator> {
    if config.num_sensors() != 1 {
        return Err(Error::InvalidConfig(format!(
            "one-sensor build needs exactly one sensor, got {}",
            config.num_sensors()
        )));
    }
    build_cascaded(config)
}

/// Emitter whose output is split on a balanced beam splitter and filtered by
/// two sensors.
pub fn build_two_sensor(config: &ModelConfig) -> Result<SuperOperator> {
    if config.num_sensors() != 2 {
        return Err(Error::InvalidConfig(format!(
            "two-sensor build needs exactly two sensors, got {}",
            config.num_sensors()
        )));
    }
    build_cascaded(config)
}

/// Dispatch on the number of sensors.
pub fn build(config: &ModelConfig) -> Result<SuperOperator> {
    match config.num_sensors() {
        1 => build_one_sensor(config),
        2 => build_two_sensor(config),
        n => Err(Error::InvalidConfig(format!("unsupported sensor count {n}"))),
    }
}

/// Analytic `∂L/∂θ` for the configured estimation target.
pub fn param_derivative(config: &ModelConfig) -> Result<SuperOperator> {
    config.validate()?;
    let spec = &config.spec;
    let sigma = fock::lowering_qubit(spec);
    let mut asm = Assembler::new(spec.total_dim());
    match config.theta {
        Theta::Delta => {
            let n = sigma.adjoint().mul(&sigma)?;
            asm.hamiltonian(&n, 1.0);
        }
        Theta::Omega => {
            let drive = sigma.add(&sigma.adjoint())?;
            asm.hamiltonian(&drive, 1.0);
        }
        Theta::GammaDecay => {
            let gamma = config.source.gamma;
            if gamma <= 0.0 {
                return Err(Error::InvalidConfig("gamma must be positive".into()));
            }
            asm.dissipator(&sigma, 1.0);
            for i in 0..config.num_sensors() {
                // ∂γ √(εγΓ·s) = √(εγΓ·s) / (2γ)
                let dg = config.cascade_coupling(i)? / (2.0 * gamma);
                if dg != 0.0 {
                    let xi = fock::annihilation(spec, i)?;
                    asm.cascade(&sigma, &xi, dg);
                }
            }
        }
    }
    asm.finish(spec.clone())
}
