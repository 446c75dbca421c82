//! Photon-counting statistics of the sensor modes.
//!
//! Displaced distributions are computed by conjugating the reduced sensor
//! state with exact displacement matrix elements, so the displaced output
//! extends past the retained Fock levels until its tail mass is negligible.

use faer::{c64, Mat};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{self, HilbertSpec, Operator, Support};
use crate::steady::StationarySolution;

/// Output levels are trimmed once the remaining displaced mass drops below this.
pub const TAIL_TOLERANCE: f64 = 1e-15;

/// Photon-number distribution of one or two sensors, with its θ-derivative.
///
/// Joint tables are stored row-major: entry `(n₁, n₂)` lives at
/// `n₁·shape[1] + n₂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountDistribution {
    pub shape: Vec<usize>,
    pub probs: Vec<f64>,
    pub dprobs: Vec<f64>,
    #[serde(with = "crate::complex_serde::vec")]
    pub alphas: Vec<c64>,
    #[serde(skip)]
    pub spec: HilbertSpec,
    pub warnings: Vec<String>,
}

impl CountDistribution {
    pub fn num_sensors(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn flat(&self, n: &[usize]) -> Option<usize> {
        if n.len() != self.shape.len() || n.iter().zip(&self.shape).any(|(a, s)| a >= s) {
            return None;
        }
        Some(n.iter().zip(&self.shape).fold(0, |acc, (a, s)| acc * s + a))
    }

    /// `p(n)`, or `p(n₁, n₂)`; zero outside the stored range.
    pub fn prob(&self, n: &[usize]) -> f64 {
        self.flat(n).map_or(0.0, |i| self.probs[i])
    }

    pub fn dprob(&self, n: &[usize]) -> f64 {
        self.flat(n).map_or(0.0, |i| self.dprobs[i])
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Distribution of sensor `index` alone.
    pub fn marginal(&self, index: usize) -> Result<CountDistribution> {
        if index >= self.shape.len() {
            return Err(Error::SensorIndex {
                index,
                sensors: self.shape.len(),
            });
        }
        if self.shape.len() == 1 {
            return Ok(self.clone());
        }
        let (s1, s2) = (self.shape[0], self.shape[1]);
        let len = self.shape[index];
        let mut probs = vec![0.0; len];
        let mut dprobs = vec![0.0; len];
        for a in 0..s1 {
            for b in 0..s2 {
                let k = if index == 0 { a } else { b };
                probs[k] += self.probs[a * s2 + b];
                dprobs[k] += self.dprobs[a * s2 + b];
            }
        }
        let level = self.spec.levels(index)?;
        Ok(CountDistribution {
            shape: vec![len],
            probs,
            dprobs,
            alphas: vec![self.alphas[index]],
            spec: HilbertSpec::one_sensor(level - 1)?,
            warnings: self.warnings.clone(),
        })
    }
}

/// Sensor-reduced steady state and its derivative.
pub fn sensor_states(sol: &StationarySolution) -> Result<(Operator, Operator)> {
    Ok((
        fock::partial_trace_to_sensors(&sol.rho_ss)?,
        fock::partial_trace_to_sensors(&sol.drho_ss)?,
    ))
}

fn mat_real_diag_of_conjugation(d: &Mat<c64>, rho: &Mat<c64>) -> Vec<f64> {
    // diag(D ρ D†)
    let m = d * rho;
    (0..d.nrows())
        .map(|r| (0..d.ncols()).map(|k| (m[(r, k)] * d[(r, k)].conj()).re).sum())
        .collect()
}

/// Number of output levels needed for sensor state `rho` displaced by `alpha`.
fn output_levels(rho: &Mat<c64>, alpha: c64) -> usize {
    let levels = rho.nrows();
    if alpha == c64::new(0.0, 0.0) {
        return levels;
    }
    let a = alpha.norm();
    let nmax = ((levels - 1) as f64).sqrt();
    let reach = a + nmax;
    let rows = levels + (reach * reach + 12.0 * reach + 30.0).ceil() as usize;
    let d = fock::displacement_block(rows, levels, alpha);
    let p = mat_real_diag_of_conjugation(&d, rho);
    let mut tail = 0.0;
    let mut cut = rows;
    for m in (levels..rows).rev() {
        tail += p[m].abs();
        if tail >= TAIL_TOLERANCE {
            break;
        }
        cut = m;
    }
    cut
}

/// Counting distribution `p(n) = ⟨n|D(α) ρ D†(α)|n⟩` of the sensors, with one
/// displacement per sensor.
pub fn distribution(sol: &StationarySolution, alphas: &[c64]) -> Result<CountDistribution> {
    let spec = &sol.spec;
    let sensors = spec.num_sensors();
    if alphas.len() != sensors {
        return Err(Error::DimensionMismatch {
            expected: sensors,
            found: alphas.len(),
        });
    }
    if alphas.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
        return Err(Error::InvalidConfig("displacements must be finite".into()));
    }
    let (rho_s, drho_s) = sensor_states(sol)?;
    let mut warnings = Vec::new();
    let mut blocks = Vec::with_capacity(sensors);
    let mut shape = Vec::with_capacity(sensors);
    for (i, &alpha) in alphas.iter().enumerate() {
        let levels = spec.levels(i)?;
        let n_exc = levels - 1;
        if alpha.norm_sqr() > n_exc as f64 / 2.0 {
            warnings.push(format!(
                "sensor {}: |alpha|^2 = {:.3} exceeds n_exc/2 = {:.1}; check truncation convergence",
                i + 1,
                alpha.norm_sqr(),
                n_exc as f64 / 2.0
            ));
        }
        let reduced = fock::reduce_to_sensor(&rho_s, i)?;
        let rows = output_levels(&reduced, alpha);
        blocks.push(fock::displacement_block(rows, levels, alpha));
        shape.push(rows);
    }
    let d = if sensors == 1 {
        blocks.pop().expect("one block")
    } else {
        fock::kron(&blocks[0], &blocks[1])
    };
    let probs = mat_real_diag_of_conjugation(&d, rho_s.matrix());
    let dprobs = mat_real_diag_of_conjugation(&d, drho_s.matrix());
    Ok(CountDistribution {
        shape,
        probs,
        dprobs,
        alphas: alphas.to_vec(),
        spec: spec.clone(),
        warnings,
    })
}

/// Normally ordered moments `G(k)` or `G(k₁, k₂)` and their θ-derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    /// Highest order per sensor; the table has `orders[i] + 1` entries along axis `i`.
    pub orders: Vec<usize>,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
    /// Largest imaginary part discarded when taking the real moments.
    pub max_imaginary: f64,
    #[serde(skip)]
    pub spec: HilbertSpec,
}

impl MomentTable {
    fn flat(&self, k: &[usize]) -> Option<usize> {
        if k.len() != self.orders.len() || k.iter().zip(&self.orders).any(|(a, o)| a > o) {
            return None;
        }
        Some(k.iter().zip(&self.orders).fold(0, |acc, (a, o)| acc * (o + 1) + a))
    }

    pub fn get(&self, k: &[usize]) -> Option<f64> {
        self.flat(k).map(|i| self.values[i])
    }

    pub fn derivative(&self, k: &[usize]) -> Option<f64> {
        self.flat(k).map(|i| self.derivatives[i])
    }

    /// One-sensor table built from given moments (no derivative information
    /// unless supplied).
    pub fn from_single(values: Vec<f64>, derivatives: Option<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("moment table needs G(0)".into()));
        }
        let order = values.len() - 1;
        let derivatives = derivatives.unwrap_or_else(|| vec![0.0; values.len()]);
        if derivatives.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: derivatives.len(),
            });
        }
        Ok(Self {
            orders: vec![order],
            values,
            derivatives,
            max_imaginary: 0.0,
            spec: HilbertSpec::one_sensor(order.max(1))?,
        })
    }
}

/// Trace of `(A₁^k₁ A₂^k₂)† (A₁^k₁ A₂^k₂) ρ` over all orders up to `orders`.
fn moment_table(rho_s: &Operator, drho_s: &Operator, orders: &[usize]) -> Result<MomentTable> {
    let spec = rho_s.spec().clone();
    let powers: Vec<Vec<Operator>> = (0..orders.len())
        .map(|i| {
            let a = fock::sensor_annihilation(&spec, i)?;
            Ok((0..=orders[i]).map(|k| a.pow(k)).collect())
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::new();
    let mut derivatives = Vec::new();
    let mut max_imaginary: f64 = 0.0;
    let mut push = |op: &Operator| -> Result<()> {
        let n = op.adjoint().mul(op)?;
        let g = n.expectation(rho_s)?;
        let dg = n.expectation(drho_s)?;
        max_imaginary = max_imaginary.max(g.im.abs()).max(dg.im.abs());
        values.push(g.re);
        derivatives.push(dg.re);
        Ok(())
    };
    if orders.len() == 1 {
        for p in &powers[0] {
            push(p)?;
        }
    } else {
        for p1 in &powers[0] {
            for p2 in &powers[1] {
                push(&p1.mul(p2)?)?;
            }
        }
    }
    Ok(MomentTable {
        orders: orders.to_vec(),
        values,
        derivatives,
        max_imaginary,
        spec,
    })
}

/// Normally ordered moments up to `max_order` for every sensor.
pub fn moments(sol: &StationarySolution, max_order: usize) -> Result<MomentTable> {
    let spec = &sol.spec;
    for (i, &n) in spec.sensor_truncations().iter().enumerate() {
        if max_order > n {
            return Err(Error::InvalidConfig(format!(
                "moment order {max_order} exceeds truncation {n} of sensor {}",
                i + 1
            )));
        }
    }
    let (rho_s, drho_s) = sensor_states(sol)?;
    moment_table(&rho_s, &drho_s, &vec![max_order; spec.num_sensors()])
}

/// Moments up to each sensor's own truncation, the complete table.
pub fn full_moments(sol: &StationarySolution) -> Result<MomentTable> {
    let (rho_s, drho_s) = sensor_states(sol)?;
    moment_table(&rho_s, &drho_s, sol.spec.sensor_truncations())
}

/// Moments of an arbitrary sensor-space state, used for injected test states.
pub fn moments_of_state(rho_sensors: &Operator, max_order: usize) -> Result<MomentTable> {
    if rho_sensors.support() != Support::Sensors {
        return Err(Error::DimensionMismatch {
            expected: rho_sensors.spec().sensor_dim(),
            found: rho_sensors.dim(),
        });
    }
    let zero = Operator::zeros(rho_sensors.spec(), Support::Sensors);
    moment_table(rho_sensors, &zero, &vec![max_order; rho_sensors.spec().num_sensors()])
}

/// `(−1)^(n+k) / (n! (k−n)!)`, the weight of `G(k)` in `p(n)`.
pub fn moment_coefficient(n: usize, k: usize) -> f64 {
    if k < n {
        return 0.0;
    }
    let sign = if (n + k).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign / (factorial(n) * factorial(k - n))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Undisplaced counting statistics rebuilt from normally ordered moments.
pub fn distribution_from_moments(table: &MomentTable) -> Result<CountDistribution> {
    let orders = &table.orders;
    let shape: Vec<usize> = orders.iter().map(|o| o + 1).collect();
    let size: usize = shape.iter().product();
    let mut probs = vec![0.0; size];
    let mut dprobs = vec![0.0; size];
    match orders.len() {
        1 => {
            let o = orders[0];
            for n in 0..=o {
                for k in n..=o {
                    let c = moment_coefficient(n, k);
                    probs[n] += c * table.values[k];
                    dprobs[n] += c * table.derivatives[k];
                }
            }
        }
        2 => {
            let (o1, o2) = (orders[0], orders[1]);
            for n1 in 0..=o1 {
                for n2 in 0..=o2 {
                    let (mut p, mut dp) = (0.0, 0.0);
                    for j1 in n1..=o1 {
                        let c1 = moment_coefficient(n1, j1);
                        for j2 in n2..=o2 {
                            let c = c1 * moment_coefficient(n2, j2);
                            let idx = j1 * (o2 + 1) + j2;
                            p += c * table.values[idx];
                            dp += c * table.derivatives[idx];
                        }
                    }
                    probs[n1 * (o2 + 1) + n2] = p;
                    dprobs[n1 * (o2 + 1) + n2] = dp;
                }
            }
        }
        n => return Err(Error::InvalidConfig(format!("unsupported sensor count {n}"))),
    }
    Ok(CountDistribution {
        alphas: vec![c64::new(0.0, 0.0); orders.len()],
        shape,
        probs,
        dprobs,
        spec: table.spec.clone(),
        warnings: Vec::new(),
    })
}

/// Population floor below which `g²` is reported as undefined.
pub const POPULATION_FLOOR: f64 = 1e-14;

fn cross_correlation(rho_s: &Operator) -> Result<f64> {
    let spec = rho_s.spec();
    if spec.num_sensors() != 2 {
        return Err(Error::InvalidConfig("g2 cross-correlation needs two sensors".into()));
    }
    let a1 = fock::sensor_annihilation(spec, 0)?;
    let a2 = fock::sensor_annihilation(spec, 1)?;
    let n1 = a1.adjoint().mul(&a1)?.expectation(rho_s)?.re;
    let n2 = a2.adjoint().mul(&a2)?.expectation(rho_s)?.re;
    if n1 < POPULATION_FLOOR || n2 < POPULATION_FLOOR {
        return Err(Error::Undefined("g2 cross-correlation (vanishing sensor population)"));
    }
    let pair = a1.mul(&a2)?;
    let g = pair.adjoint().mul(&pair)?.expectation(rho_s)?.re;
    Ok(g / (n1 * n2))
}

/// Zero-delay cross-correlation `⟨ξ₁†ξ₂†ξ₁ξ₂⟩ / (⟨ξ₁†ξ₁⟩⟨ξ₂†ξ₂⟩)`.
pub fn g2_cross(sol: &StationarySolution) -> Result<f64> {
    cross_correlation(&fock::partial_trace_to_sensors(&sol.rho_ss)?)
}

/// Same quantity for a given sensor-space state.
pub fn g2_cross_of_state(rho_sensors: &Operator) -> Result<f64> {
    cross_correlation(rho_sensors)
}

/// Mean photon number of each sensor and its θ-derivative.
pub fn populations(sol: &StationarySolution) -> Result<Vec<(f64, f64)>> {
    (0..sol.spec.num_sensors())
        .map(|i| {
            let a = fock::annihilation(&sol.spec, i)?;
            let n = a.adjoint().mul(&a)?;
            Ok((n.expectation(&sol.rho_ss)?.re, n.expectation(&sol.drho_ss)?.re))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coherent(levels: usize, alpha: c64) -> Vec<c64> {
        // truncated coherent amplitudes, renormalized on the retained levels
        let mut v: Vec<c64> = (0..levels).map(|n| fock::displacement_element(n, 0, alpha)).collect();
        let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|c| *c /= norm);
        v
    }

    fn pure(spec: &HilbertSpec, psi: &[c64]) -> Operator {
        let d = psi.len();
        let m = Mat::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
        Operator::new(m, spec.clone(), Support::Sensors).unwrap()
    }

    #[test]
    fn coefficients() {
        assert_eq!(moment_coefficient(0, 0), 1.0);
        assert_eq!(moment_coefficient(0, 1), -1.0);
        assert_eq!(moment_coefficient(1, 3), 0.5);
        assert_eq!(moment_coefficient(2, 1), 0.0);
    }

    #[test]
    fn vacuum_moments() {
        let spec = HilbertSpec::one_sensor(3).unwrap();
        let mut psi = vec![c64::new(0.0, 0.0); 4];
        psi[0] = c64::new(1.0, 0.0);
        let t = moments_of_state(&pure(&spec, &psi), 3).unwrap();
        assert_eq!(t.values, vec![1.0, 0.0, 0.0, 0.0]);
        let d = distribution_from_moments(&t).unwrap();
        assert_eq!(d.probs, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn coherent_moments_factorize() {
        // On a truncated space ⟨ξ†ᵏξᵏ⟩ differs from |α|^(2k) by the missing
        // tail; a deep truncation keeps that below 1e-12.
        let alpha = c64::new(0.3, -0.4);
        let spec = HilbertSpec::one_sensor(30).unwrap();
        let t = moments_of_state(&pure(&spec, &coherent(31, alpha)), 4).unwrap();
        for k in 0..=4 {
            let exact = alpha.norm_sqr().powi(k as i32);
            assert!((t.get(&[k]).unwrap() - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_from_coherent_moments() {
        // Cutting the moment series after order K leaves the remainder
        // n̄^n/n! · Σ_{j>K−n} (−n̄)^j/j!, largest near n = K/2. At K = 8 that is
        // 1.3e-9, so the 1e-9 check needs K = 9; K = 8 is checked against the
        // remainder bound instead.
        let nbar: f64 = 0.25;
        for order in [8usize, 9] {
            let values: Vec<f64> = (0..=order).map(|k| nbar.powi(k as i32)).collect();
            let d = distribution_from_moments(&MomentTable::from_single(values, None).unwrap()).unwrap();
            for (n, p) in d.probs.iter().enumerate() {
                let poisson = (-nbar).exp() * nbar.powi(n as i32) / factorial(n);
                let err = (p - poisson).abs();
                let bound = nbar.powi(order as i32 + 1) / (factorial(n) * factorial(order + 1 - n));
                assert!(err <= bound * 1.0001, "K={order} n={n}");
                if order == 9 {
                    assert!(err < 1e-9, "n={n}");
                }
            }
        }
    }

    #[test]
    fn independent_coherent_states_have_unit_cross_correlation() {
        let spec = HilbertSpec::two_sensor(24).unwrap();
        let a = coherent(25, c64::new(0.5, 0.2));
        let b = coherent(25, c64::new(-0.3, 0.6));
        let psi: Vec<c64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let g2 = g2_cross_of_state(&pure(&spec, &psi)).unwrap();
        assert!((g2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn output_range_captures_displaced_mass() {
        let rho = Mat::from_fn(3, 3, |i, j| if i == j && i == 0 { c64::new(1.0, 0.0) } else { c64::new(0.0, 0.0) });
        let alpha = c64::new(3.0, -1.5);
        let rows = output_levels(&rho, alpha);
        let d = fock::displacement_block(rows, 3, alpha);
        let p = mat_real_diag_of_conjugation(&d, &rho);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert_eq!(output_levels(&rho, c64::new(0.0, 0.0)), 3);
    }
}
