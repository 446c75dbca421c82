//! Parameter sweeps over one or two model parameters with tabular output.

use std::io::Write;
use std::path::PathBuf;

use faer::c64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counting;
use crate::error::{Error, Result};
use crate::liouvillian::ModelConfig;
use crate::metrology::{self, FigureOfMerit, SearchOptions};
use crate::steady::{self, DEFAULT_TRUNCATION_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    DeltaS1,
    DeltaS2,
    Linewidth,
    Omega,
    Delta,
    Epsilon,
    AlphaRe,
    AlphaIm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl Axis {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::InvalidConfig(format!(
                "axis {:?} needs at least 2 points",
                self.name
            )));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(Error::InvalidConfig(format!("axis {:?} has non-finite endpoints", self.name)));
        }
        if self.scale == Scale::Log && !(self.start > 0.0 && self.stop > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "log-scaled axis {:?} needs positive endpoints",
                self.name
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                let t = k as f64 / last;
                if k == 0 {
                    return self.start;
                }
                if k + 1 == self.points {
                    return self.stop;
                }
                match self.scale {
                    Scale::Linear => self.start + t * (self.stop - self.start),
                    Scale::Log => (self.start.ln() + t * (self.stop.ln() - self.start.ln())).exp(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Population,
    Moments,
    G2,
    Cfi,
    CfiUncorrelated,
    Qfi,
    Snr,
    Pfi,
    CfiAlphaFluct,
    CfiAlphaOpt,
}

/// Fixed truncation, or the automatic ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Truncation::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Truncation::Fixed(n)),
            _ => Err(Error::InvalidConfig(format!(
                "truncation must be a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Truncation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Truncation::Auto => s.serialize_str("auto"),
            Truncation::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Truncation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(usize),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(n) if n >= 1 => Ok(Truncation::Fixed(n)),
            Repr::Number(n) => Err(serde::de::Error::custom(format!("truncation must be >= 1, got {n}"))),
            Repr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Settings of the automatic truncation ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSettings {
    pub figure_of_merit: FigureOfMerit,
    pub rel_tol: f64,
    pub start: usize,
    pub cap: usize,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            figure_of_merit: FigureOfMerit::Cfi,
            rel_tol: 1e-6,
            start: 2,
            cap: DEFAULT_TRUNCATION_CAP,
        }
    }
}

fn default_quantities() -> Vec<Quantity> {
    vec![
        Quantity::Population,
        Quantity::Cfi,
        Quantity::Qfi,
        Quantity::Snr,
        Quantity::Pfi,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ModelConfig,
    #[serde(default)]
    pub axes: Vec<Axis>,
    #[serde(default = "default_quantities")]
    pub quantities: Vec<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// `None` keeps the truncation of `base`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<Truncation>,
    /// Displacement per sensor used for `cfi` and `cfi_uncorrelated`; zero if absent.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "optional_alphas")]
    pub alphas: Option<Vec<c64>>,
    #[serde(default)]
    pub convergence: ConvergenceSettings,
}

mod optional_alphas {
    use super::*;

    pub fn serialize<S: serde::Serializer>(v: &Option<Vec<c64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Option<Vec<[f64; 2]>> = v.as_ref().map(|a| a.iter().map(|z| [z.re, z.im]).collect());
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<c64>>, D::Error> {
        let pairs = Option::<Vec<[f64; 2]>>::deserialize(d)?;
        Ok(pairs.map(|p| p.into_iter().map(|[re, im]| c64::new(re, im)).collect()))
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub config: ModelConfig,
    pub alphas: Vec<c64>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_sensors(&self) -> usize {
        self.base.num_sensors()
    }

    fn base_alphas(&self) -> Vec<c64> {
        self.alphas
            .clone()
            .unwrap_or_else(|| vec![c64::new(0.0, 0.0); self.num_sensors()])
    }

    /// Check everything that can be checked without solving anything,
    /// including every grid point's model.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.axes.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "at most 2 sweep axes are supported, got {}",
                self.axes.len()
            )));
        }
        if self.axes.len() == 2 && self.axes[0].name == self.axes[1].name {
            return Err(Error::InvalidConfig("sweep axes must be distinct".into()));
        }
        for axis in &self.axes {
            axis.validate()?;
            if axis.name == AxisName::DeltaS2 && self.num_sensors() < 2 {
                return Err(Error::InvalidConfig("axis delta_s2 needs a two-sensor model".into()));
            }
        }
        if self.quantities.is_empty() {
            return Err(Error::InvalidConfig("no quantities requested".into()));
        }
        for q in &self.quantities {
            if matches!(q, Quantity::G2 | Quantity::CfiUncorrelated) && self.num_sensors() != 2 {
                return Err(Error::InvalidConfig(format!("quantity {q:?} needs a two-sensor model")));
            }
        }
        if let Some(a) = &self.alphas {
            if a.len() != self.num_sensors() {
                return Err(Error::InvalidConfig(format!(
                    "{} displacement(s) given for {} sensor(s)",
                    a.len(),
                    self.num_sensors()
                )));
            }
            if a.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::InvalidConfig("displacements must be finite".into()));
            }
        }
        if let Some(Truncation::Fixed(n)) = self.truncation {
            self.base.with_truncation(n)?;
        }
        let c = &self.convergence;
        if c.rel_tol.is_nan() || c.rel_tol <= 0.0 || c.start == 0 || c.start > c.cap {
            return Err(Error::InvalidConfig(
                "convergence needs rel_tol > 0 and 1 <= start <= cap".into(),
            ));
        }
        for p in self.grid()? {
            p.config.validate()?;
        }
        Ok(())
    }

    /// Grid points in axis-major order (the first axis varies slowest).
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let mut base = self.base.clone();
        if let Some(Truncation::Fixed(n)) = self.truncation {
            base = base.with_truncation(n)?;
        }
        let mut points = vec![GridPoint {
            config: base,
            alphas: self.base_alphas(),
        }];
        for axis in &self.axes {
            let values = axis.values();
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        apply_axis(&mut q, axis.name, v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }

    /// Column names of the output table, provenance first.
    pub fn columns(&self) -> Vec<String> {
        let s = self.num_sensors();
        let mut cols: Vec<String> = ["delta", "omega", "gamma", "epsilon"].map(String::from).to_vec();
        for i in 1..=s {
            cols.push(format!("delta_s{i}"));
            cols.push(format!("linewidth{i}"));
        }
        for i in 1..=s {
            cols.push(format!("n_exc{i}"));
        }
        for i in 1..=s {
            cols.push(format!("alpha{i}_re"));
            cols.push(format!("alpha{i}_im"));
        }
        for q in &self.quantities {
            cols.extend(quantity_columns(*q, s));
        }
        cols.push("error".into());
        cols
    }
}

fn apply_axis(p: &mut GridPoint, name: AxisName, v: f64) {
    let c = &mut p.config;
    match name {
        AxisName::DeltaS1 => c.sensors[0].delta_s = v,
        AxisName::DeltaS2 => c.sensors[1].delta_s = v,
        AxisName::Linewidth => c.sensors.iter_mut().for_each(|s| s.linewidth = v),
        AxisName::Omega => c.source.omega = v,
        AxisName::Delta => c.source.delta = v,
        AxisName::Epsilon => c.epsilon = v,
        AxisName::AlphaRe => p.alphas.iter_mut().for_each(|a| a.re = v),
        AxisName::AlphaIm => p.alphas.iter_mut().for_each(|a| a.im = v),
    }
}

/// Highest moment order reported by the `moments` quantity.
pub const REPORTED_MOMENT_ORDER: usize = 4;

fn quantity_columns(q: Quantity, sensors: usize) -> Vec<String> {
    match q {
        Quantity::Population => (1..=sensors).map(|i| format!("population{i}")).collect(),
        Quantity::Moments => {
            let mut cols: Vec<String> = (1..=sensors)
                .flat_map(|i| (1..=REPORTED_MOMENT_ORDER).map(move |k| format!("G{k}_s{i}")))
                .collect();
            if sensors == 2 {
                cols.push("G11_cross".into());
            }
            cols
        }
        Quantity::G2 => vec!["g2".into()],
        Quantity::Cfi => vec!["cfi".into()],
        Quantity::CfiUncorrelated => vec!["cfi_uncorrelated".into()],
        Quantity::Qfi => vec!["qfi".into()],
        Quantity::Snr => vec!["snr".into()],
        Quantity::Pfi => vec!["pfi".into()],
        Quantity::CfiAlphaFluct => vec!["cfi_alpha_fluct".into()],
        Quantity::CfiAlphaOpt => {
            let mut cols = vec!["cfi_alpha_opt".to_string()];
            for i in 1..=sensors {
                cols.push(format!("alpha_opt{i}_re"));
                cols.push(format!("alpha_opt{i}_im"));
            }
            cols
        }
    }
}

/// One output row: provenance and quantity values, or an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub values: Vec<f64>,
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl SweepTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values.get(idx).copied().unwrap_or(f64::NAN)).collect())
    }
}

fn provenance(p: &GridPoint) -> Vec<f64> {
    let c = &p.config;
    let mut v = vec![c.source.delta, c.source.omega, c.source.gamma, c.epsilon];
    for s in &c.sensors {
        v.push(s.delta_s);
        v.push(s.linewidth);
    }
    for &n in c.spec.sensor_truncations() {
        v.push(n as f64);
    }
    for a in &p.alphas {
        v.push(a.re);
        v.push(a.im);
    }
    v
}

fn undefined_as_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Undefined(_)) => Ok(f64::NAN),
        other => other,
    }
}

fn evaluate_quantities(sweep: &SweepConfig, p: &GridPoint) -> Result<Vec<f64>> {
    let sol = steady::solve(&p.config)?;
    let sensors = p.config.num_sensors();
    let mut out = Vec::new();
    let mut dist_cache = None;
    for q in &sweep.quantities {
        match q {
            Quantity::Population => {
                out.extend(counting::populations(&sol)?.into_iter().map(|(n, _)| n));
            }
            Quantity::Moments => {
                let table = counting::full_moments(&sol)?;
                for i in 0..sensors {
                    for k in 1..=REPORTED_MOMENT_ORDER {
                        let mut idx = vec![0; sensors];
                        idx[i] = k;
                        out.push(table.get(&idx).unwrap_or(f64::NAN));
                    }
                }
                if sensors == 2 {
                    out.push(table.get(&[1, 1]).unwrap_or(f64::NAN));
                }
            }
            Quantity::G2 => out.push(undefined_as_nan(counting::g2_cross(&sol))?),
            Quantity::Cfi | Quantity::CfiUncorrelated => {
                if dist_cache.is_none() {
                    dist_cache = Some(counting::distribution(&sol, &p.alphas)?);
                }
                let dist = dist_cache.as_ref().expect("filled above");
                out.push(if *q == Quantity::Cfi {
                    metrology::classical_fisher(dist)?
                } else {
                    metrology::uncorrelated_fisher(dist)?
                });
            }
            Quantity::Qfi => out.push(metrology::sensor_quantum_fisher(&sol)?),
            Quantity::Snr => out.push(undefined_as_nan(metrology::photon_snr(&sol))?),
            Quantity::Pfi => out.push(undefined_as_nan(metrology::poissonian_fisher(&sol))?),
            Quantity::CfiAlphaFluct => {
                out.push(metrology::fisher_at(&sol, &metrology::alpha_fluct_all(&p.config)?)?)
            }
            Quantity::CfiAlphaOpt => {
                let opt = metrology::optimize_alpha(&p.config, &sol, &SearchOptions::default())?;
                out.push(opt.cfi);
                for a in &opt.alphas {
                    out.push(a.re);
                    out.push(a.im);
                }
            }
        }
    }
    Ok(out)
}

fn evaluate_point(sweep: &SweepConfig, point: &GridPoint, width: usize) -> Row {
    let mut p = point.clone();
    let result = (|| {
        if sweep.truncation == Some(Truncation::Auto) {
            let c = &sweep.convergence;
            let fom = c.figure_of_merit;
            let report = steady::converge_truncation(
                &p.config,
                |cfg, sol| fom.evaluate(cfg, sol),
                c.rel_tol,
                c.start,
                c.cap,
            )?;
            p.config = p.config.with_truncation(report.n_exc)?;
        }
        evaluate_quantities(sweep, &p)
    })();
    let mut values = provenance(&p);
    match result {
        Ok(q) => {
            values.extend(q);
            Row { values, error: None }
        }
        Err(e) => {
            values.resize(width, f64::NAN);
            Row {
                values,
                error: Some(e),
            }
        }
    }
}

/// Run every grid point on a pool of `workers` threads. Rows come back in
/// grid order whatever the schedule.
pub fn run_sweep(sweep: &SweepConfig, workers: usize) -> Result<SweepTable> {
    sweep.validate()?;
    // Parallelism lives at the grid level; nested faer threading would only
    // oversubscribe the pool.
    faer::set_global_parallelism(faer::Par::Seq);
    let columns = sweep.columns();
    let width = columns.len() - 1;
    let points = sweep.grid()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|p| evaluate_point(sweep, p, width))
            .collect()
    });
    Ok(SweepTable { columns, rows })
}

/// Format a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Write the table as CSV behind a `#` header recording the configuration
/// and the library version.
pub fn write_csv<W: Write>(sweep: &SweepConfig, table: &SweepTable, out: W) -> std::io::Result<()> {
    let mut out = out;
    writeln!(out, "# sensor-metrology {}", env!("CARGO_PKG_VERSION"))?;
    let json = serde_json::to_string(sweep).map_err(std::io::Error::other)?;
    writeln!(out, "# config: {json}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.columns)?;
    for row in &table.rows {
        let mut record: Vec<String> = row.values.iter().map(|&v| format_float(v)).collect();
        record.push(match &row.error {
            Some(e) => format!("{}: {e}", e.code()),
            None => String::new(),
        });
        w.write_record(&record)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> SweepConfig {
        SweepConfig::from_json(text).unwrap()
    }

    const BASE: &str = r#""base": {"source": {"delta": 0.0, "omega": 1.0}, "sensors": [{"delta_s": 0.0, "linewidth": 0.5}], "epsilon": 0.0, "theta": "Delta"}"#;

    #[test]
    fn single_point_population_of_decoupled_sensor() {
        let cfg = config(&format!(r#"{{{BASE}, "quantities": ["population"]}}"#));
        let table = run_sweep(&cfg, 1).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!(table.rows[0].error.is_none());
        assert_eq!(table.column("population1").unwrap(), vec![0.0]);
        assert_eq!(table.column("n_exc1").unwrap(), vec![4.0]);
    }

    #[test]
    fn grid_is_axis_major() {
        let cfg = config(&format!(
            r#"{{{BASE}, "axes": [{{"name": "omega", "start": 1, "stop": 2, "points": 2}},
                {{"name": "delta_s1", "start": -1, "stop": 1, "points": 3}}]}}"#
        ));
        let g = cfg.grid().unwrap();
        let pairs: Vec<(f64, f64)> = g.iter().map(|p| (p.config.source.omega, p.config.sensors[0].delta_s)).collect();
        assert_eq!(pairs, vec![(1.0, -1.0), (1.0, 0.0), (1.0, 1.0), (2.0, -1.0), (2.0, 0.0), (2.0, 1.0)]);
    }

    #[test]
    fn log_axis_hits_endpoints() {
        let a = Axis {
            name: AxisName::Linewidth,
            start: 1e-3,
            stop: 10.0,
            points: 5,
            scale: Scale::Log,
        };
        let v = a.values();
        assert_eq!(v[0], 1e-3);
        assert_eq!(v[4], 10.0);
        assert!((v[1] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            format!(r#"{{{BASE}, "axes": [{{"name": "omega", "start": 1, "stop": 2, "points": 1}}]}}"#),
            format!(r#"{{{BASE}, "axes": [{{"name": "linewidth", "start": 0, "stop": 2, "points": 3, "scale": "log"}}]}}"#),
            format!(r#"{{{BASE}, "axes": [{{"name": "epsilon", "start": 0, "stop": 2, "points": 3}}]}}"#),
            format!(r#"{{{BASE}, "quantities": ["g2"]}}"#),
            format!(r#"{{{BASE}, "truncation": "often"}}"#),
            format!(r#"{{{BASE}, "alphas": [[1, 0], [0, 1]]}}"#),
            format!(r#"{{{BASE}, "colour": "blue"}}"#),
        ];
        for text in &bad {
            let err = SweepConfig::from_json(text).unwrap_err();
            assert!(err.is_config_error(), "{text}: {err:?}");
        }
    }

    #[test]
    fn truncation_forms() {
        let a = config(&format!(r#"{{{BASE}, "truncation": "auto"}}"#));
        assert_eq!(a.truncation, Some(Truncation::Auto));
        let b = config(&format!(r#"{{{BASE}, "truncation": 6}}"#));
        assert_eq!(b.grid().unwrap()[0].config.spec.sensor_truncations(), &[6]);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }
}
