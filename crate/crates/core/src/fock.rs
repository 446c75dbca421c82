//! Operators on the truncated emitter ⊗ sensor Hilbert space.
//!
//! The emitter is a two-level system with basis `{|g⟩, |e⟩}` (indices 0 and
//! 1). Each sensor is a bosonic mode truncated at `n_exc` excitations, i.e.
//! `n_exc + 1` Fock levels. Composite indices are row-major in the slot
//! order `qubit, sensor 1, sensor 2`.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of the factorized Hilbert space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct HilbertSpec {
    sensor_truncations: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    sensor_truncations: Vec<usize>,
}

impl TryFrom<RawSpec> for HilbertSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(&raw.sensor_truncations)
    }
}

impl HilbertSpec {
    /// Qubit plus one or two sensors, each truncated at `n_exc ≥ 1`.
    pub fn new(sensor_truncations: &[usize]) -> Result<Self> {
        if sensor_truncations.is_empty() || sensor_truncations.len() > 2 {
            return Err(Error::InvalidSpec(format!(
                "expected one or two sensors, got {}",
                sensor_truncations.len()
            )));
        }
        if let Some(bad) = sensor_truncations.iter().find(|&&n| n == 0) {
            return Err(Error::InvalidSpec(format!(
                "sensor truncation must be at least 1, got {bad}"
            )));
        }
        Ok(Self {
            sensor_truncations: sensor_truncations.to_vec(),
        })
    }

    pub fn one_sensor(n_exc: usize) -> Result<Self> {
        Self::new(&[n_exc])
    }

    pub fn two_sensor(n_exc: usize) -> Result<Self> {
        Self::new(&[n_exc, n_exc])
    }

    /// The bare emitter with no sensor attached.
    pub fn qubit_only() -> Self {
        Self {
            sensor_truncations: Vec::new(),
        }
    }

    pub fn sensor_truncations(&self) -> &[usize] {
        &self.sensor_truncations
    }

    pub fn num_sensors(&self) -> usize {
        self.sensor_truncations.len()
    }

    /// Number of Fock levels kept for sensor `index`.
    pub fn levels(&self, index: usize) -> Result<usize> {
        self.sensor_truncations
            .get(index)
            .map(|n| n + 1)
            .ok_or(Error::SensorIndex {
                index,
                sensors: self.num_sensors(),
            })
    }

    /// Dimension of the sensor factor alone.
    pub fn sensor_dim(&self) -> usize {
        self.sensor_truncations.iter().map(|n| n + 1).product()
    }

    pub fn total_dim(&self) -> usize {
        2 * self.sensor_dim()
    }

    /// Same layout with every truncation replaced by `n_exc`.
    pub fn with_truncation(&self, n_exc: usize) -> Result<Self> {
        Self::new(&vec![n_exc; self.num_sensors()])
    }

    pub(crate) fn check_sensor(&self, index: usize) -> Result<()> {
        self.levels(index).map(|_| ())
    }
}

/// Which factors an [`Operator`] acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    /// Qubit ⊗ sensors.
    Full,
    /// Sensors only (qubit traced out).
    Sensors,
}

/// Dense complex matrix tied to a Hilbert space layout.
#[derive(Debug, Clone)]
pub struct Operator {
    matrix: Mat<c64>,
    spec: HilbertSpec,
    support: Support,
}

impl Operator {
    pub fn new(matrix: Mat<c64>, spec: HilbertSpec, support: Support) -> Result<Self> {
        let dim = support_dim(&spec, support);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self {
            matrix,
            spec,
            support,
        })
    }

    pub fn identity(spec: &HilbertSpec, support: Support) -> Self {
        let dim = support_dim(spec, support);
        Self {
            matrix: Mat::identity(dim, dim),
            spec: spec.clone(),
            support,
        }
    }

    pub fn zeros(spec: &HilbertSpec, support: Support) -> Self {
        let dim = support_dim(spec, support);
        Self {
            matrix: Mat::zeros(dim, dim),
            spec: spec.clone(),
            support,
        }
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    pub fn spec(&self) -> &HilbertSpec {
        &self.spec
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> c64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)]).sum()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint().to_owned(),
            spec: self.spec.clone(),
            support: self.support,
        }
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        let mut out = self.clone();
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                out.matrix[(i, j)] = (self.matrix[(i, j)] + self.matrix[(j, i)].conj()) * 0.5;
            }
        }
        out
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// `Tr[self · rho]`.
    pub fn expectation(&self, rho: &Operator) -> Result<c64> {
        self.check_compatible(rho)?;
        let n = self.dim();
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += self.matrix[(i, k)] * rho.matrix[(k, i)];
            }
        }
        Ok(acc)
    }

    pub fn mul(&self, rhs: &Operator) -> Result<Operator> {
        self.check_compatible(rhs)?;
        Ok(Self {
            matrix: &self.matrix * &rhs.matrix,
            spec: self.spec.clone(),
            support: self.support,
        })
    }

    pub fn add(&self, rhs: &Operator) -> Result<Operator> {
        self.check_compatible(rhs)?;
        Ok(Self {
            matrix: &self.matrix + &rhs.matrix,
            spec: self.spec.clone(),
            support: self.support,
        })
    }

    pub fn scale(&self, factor: c64) -> Operator {
        let mut out = self.clone();
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                out.matrix[(i, j)] *= factor;
            }
        }
        out
    }

    /// Integer power by repeated multiplication.
    pub fn pow(&self, k: usize) -> Operator {
        let mut out = Operator::identity(&self.spec, self.support);
        for _ in 0..k {
            out.matrix = &out.matrix * &self.matrix;
        }
        out
    }

    /// Real diagonal in the computational basis.
    pub fn diagonal_real(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    /// `[A, B] = AB − BA`.
    pub fn commutator(&self, rhs: &Operator) -> Result<Operator> {
        self.check_compatible(rhs)?;
        Ok(Self {
            matrix: &self.matrix * &rhs.matrix - &rhs.matrix * &self.matrix,
            spec: self.spec.clone(),
            support: self.support,
        })
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max(self.matrix[(i, j)].norm());
            }
        }
        worst
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm_l2()
    }

    fn check_compatible(&self, other: &Operator) -> Result<()> {
        if self.support != other.support || self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

fn support_dim(spec: &HilbertSpec, support: Support) -> usize {
    match support {
        Support::Full => spec.total_dim(),
        Support::Sensors => spec.sensor_dim(),
    }
}

/// Kronecker product of two dense matrices.
pub(crate) fn kron(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Truncated single-mode annihilation matrix with `levels` Fock states.
pub(crate) fn slot_annihilation(levels: usize) -> Mat<c64> {
    Mat::from_fn(levels, levels, |i, j| {
        if j == i + 1 {
            c64::new((j as f64).sqrt(), 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

fn qubit_lowering_slot() -> Mat<c64> {
    // σ = |g⟩⟨e|
    Mat::from_fn(2, 2, |i, j| {
        if i == 0 && j == 1 {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

/// Embed one single-slot matrix into the product space, identity elsewhere.
/// `slot` counts the qubit as slot 0 when `support` is `Full`.
fn embed(spec: &HilbertSpec, support: Support, slot: usize, local: &Mat<c64>) -> Mat<c64> {
    let mut dims: Vec<usize> = Vec::with_capacity(3);
    if support == Support::Full {
        dims.push(2);
    }
    dims.extend(spec.sensor_truncations.iter().map(|n| n + 1));
    let mut out = Mat::<c64>::identity(1, 1);
    for (k, &d) in dims.iter().enumerate() {
        let factor = if k == slot {
            local.clone()
        } else {
            Mat::identity(d, d)
        };
        out = kron(&out, &factor);
    }
    out
}

/// The emitter lowering operator σ = |g⟩⟨e| on the full space.
pub fn lowering_qubit(spec: &HilbertSpec) -> Operator {
    Operator {
        matrix: embed(spec, Support::Full, 0, &qubit_lowering_slot()),
        spec: spec.clone(),
        support: Support::Full,
    }
}

/// Truncated annihilation operator of sensor `sensor_index` on the full space.
pub fn annihilation(spec: &HilbertSpec, sensor_index: usize) -> Result<Operator> {
    let levels = spec.levels(sensor_index)?;
    Ok(Operator {
        matrix: embed(spec, Support::Full, sensor_index + 1, &slot_annihilation(levels)),
        spec: spec.clone(),
        support: Support::Full,
    })
}

/// Truncated annihilation operator of sensor `sensor_index` on the sensor factor.
pub fn sensor_annihilation(spec: &HilbertSpec, sensor_index: usize) -> Result<Operator> {
    let levels = spec.levels(sensor_index)?;
    Ok(Operator {
        matrix: embed(spec, Support::Sensors, sensor_index, &slot_annihilation(levels)),
        spec: spec.clone(),
        support: Support::Sensors,
    })
}

/// Trace out the emitter, keeping the sensor factor(s).
pub fn partial_trace_to_sensors(rho: &Operator) -> Result<Operator> {
    if rho.support != Support::Full {
        return Err(Error::DimensionMismatch {
            expected: rho.spec.total_dim(),
            found: rho.dim(),
        });
    }
    let s = rho.spec.sensor_dim();
    let m = &rho.matrix;
    let reduced = Mat::from_fn(s, s, |i, j| m[(i, j)] + m[(s + i, s + j)]);
    Ok(Operator {
        matrix: reduced,
        spec: rho.spec.clone(),
        support: Support::Sensors,
    })
}

/// Reduce a two-sensor state on the sensor factor to the single mode
/// `keep`. Returns the matrix on `n_exc + 1` levels.
pub fn reduce_to_sensor(rho_sensors: &Operator, keep: usize) -> Result<Mat<c64>> {
    if rho_sensors.support != Support::Sensors {
        return Err(Error::DimensionMismatch {
            expected: rho_sensors.spec.sensor_dim(),
            found: rho_sensors.dim(),
        });
    }
    let spec = &rho_sensors.spec;
    spec.check_sensor(keep)?;
    let m = &rho_sensors.matrix;
    if spec.num_sensors() == 1 {
        return Ok(m.clone());
    }
    let l1 = spec.levels(0)?;
    let l2 = spec.levels(1)?;
    Ok(if keep == 0 {
        Mat::from_fn(l1, l1, |a, b| (0..l2).map(|k| m[(a * l2 + k, b * l2 + k)]).sum())
    } else {
        Mat::from_fn(l2, l2, |a, b| (0..l1).map(|k| m[(k * l2 + a, k * l2 + b)]).sum())
    })
}

/// Generalized Laguerre polynomial `L_n^(a)(x)` by the three-term recurrence
/// in the degree.
pub fn laguerre(n: usize, a: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Fock matrix element `⟨m|D(α)|n⟩` of the displacement operator
/// `D(α) = exp(α ξ† − α* ξ)`.
pub fn displacement_element(m: usize, n: usize, alpha: c64) -> c64 {
    if m < n {
        return displacement_element(n, m, -alpha).conj();
    }
    let x = alpha.norm_sqr();
    // √(n!/m!) α^(m−n), accumulated factor by factor.
    let mut coef = c64::new(1.0, 0.0);
    for k in (n + 1)..=m {
        coef *= alpha / (k as f64).sqrt();
    }
    coef * ((-x / 2.0).exp() * laguerre(n, (m - n) as f64, x))
}

/// Rectangular block `⟨m|D(α)|n⟩` with `m < rows`, `n < cols`.
pub fn displacement_block(rows: usize, cols: usize, alpha: c64) -> Mat<c64> {
    Mat::from_fn(rows, cols, |m, n| displacement_element(m, n, alpha))
}

/// Default number of extra Fock levels used when truncating `D(α)`.
pub fn default_pad(alpha: c64) -> usize {
    4.max((2.0 * alpha.norm()).ceil() as usize)
}

/// `D(α)` acting on sensor `sensor_index`, embedded in the full space.
///
/// The slot matrix is assembled on `n_exc + 1 + pad` levels and cropped to
/// the retained `n_exc + 1` levels.
pub fn displacement_operator(
    spec: &HilbertSpec,
    sensor_index: usize,
    alpha: c64,
    pad: usize,
) -> Result<Operator> {
    let levels = spec.levels(sensor_index)?;
    let padded = displacement_block(levels + pad, levels + pad, alpha);
    let cropped = padded.as_ref().submatrix(0, 0, levels, levels).to_owned();
    Ok(Operator {
        matrix: embed(spec, Support::Full, sensor_index + 1, &cropped),
        spec: spec.clone(),
        support: Support::Full,
    })
}
