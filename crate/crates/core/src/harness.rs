//! Synthetic benchmark runs: simulate a field, sample observations, fit every
//! model, score it, and aggregate over runs.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{phi_from_fraction, CovarianceModel, StationaryParams};
use crate::error::{Error, Result};
use crate::grid::{sample_mask, split_mask, GridField, ObservationMask};
use crate::kriging::{ok_predict_with, KrigingOptions};
use crate::metrics::{mae, mi_discrepancy, rmse, SpatialWeights};
use crate::model::{train_single_field, TrainConfig, TrainReport, UNetConfig};
use crate::rng::{derive_seed, tag};
use crate::simulate::{
    make_param_fields, sample_composite, sample_grf, CompositeMode, Mean, ParamFieldSpec, RampKind,
    SimulationSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    ExponentialNugget,
    Matern,
    Wave,
    Composite,
    Nonstationary,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::ExponentialNugget => "exponential_nugget",
            Family::Matern => "matern",
            Family::Wave => "wave",
            Family::Composite => "composite",
            Family::Nonstationary => "nonstationary",
        }
    }
}

/// Shape of the non-stationary parameter fields, relative to the nominal range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonstationarySpec {
    /// Local range runs over `phi * spread.0 ..= phi * spread.1`.
    pub phi_spread: (f64, f64),
    pub anis_ratio_range: (f64, f64),
    pub tilt_range: (f64, f64),
    pub mean_amplitude: f64,
    pub ramp: RampKind,
}

impl Default for NonstationarySpec {
    fn default() -> Self {
        NonstationarySpec {
            phi_spread: (0.5, 1.5),
            anis_ratio_range: (0.5, 1.0),
            tilt_range: (0.0, PI / 2.0),
            mean_amplitude: 1.0,
            ramp: RampKind::Bilinear,
        }
    }
}

/// Covariance family with its fixed parameters; the range is supplied per
/// experiment cell as a fraction of the grid side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    pub family: Family,
    pub sigma2: f64,
    /// Nugget of `exponential_nugget`; 0.3 when unset.
    pub tau2: Option<f64>,
    pub nu: f64,
    pub wave_sigma2: f64,
    /// Range of the wave component; the cell's range when unset.
    pub wave_phi_fraction: Option<f64>,
    pub composite: CompositeMode,
    pub nonstationary: NonstationarySpec,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            family: Family::Exponential,
            sigma2: 1.0,
            tau2: None,
            nu: 0.5,
            wave_sigma2: 1.0,
            wave_phi_fraction: None,
            composite: CompositeMode::Product,
            nonstationary: NonstationarySpec::default(),
        }
    }
}

/// One simulated truth together with the covariance models used to krige it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: GridField,
    pub jitter: f64,
    /// Model used by plain kriging (stationary Exponential for
    /// non-stationary fields).
    pub stationary: CovarianceModel,
    /// Correctly specified model.
    pub true_model: CovarianceModel,
}

impl FamilySpec {
    pub fn tau2(&self) -> f64 {
        match self.family {
            Family::ExponentialNugget => self.tau2.unwrap_or(0.3),
            _ => self.tau2.unwrap_or(0.0),
        }
    }

    /// Covariance models for a range given as a fraction of the grid side.
    pub fn models(
        &self,
        phi_fraction: f64,
        h: usize,
        w: usize,
    ) -> Result<(CovarianceModel, CovarianceModel)> {
        let phi = phi_from_fraction(phi_fraction, h, w);
        let base = StationaryParams::new(self.sigma2, phi);
        let model = match self.family {
            Family::Exponential => CovarianceModel::Exponential(base),
            Family::ExponentialNugget => {
                CovarianceModel::ExponentialNugget(base.with_nugget(self.tau2()))
            }
            Family::Matern => CovarianceModel::Matern(base.with_nu(self.nu)),
            Family::Wave => CovarianceModel::Wave(base),
            Family::Composite => {
                let wphi = phi_from_fraction(self.wave_phi_fraction.unwrap_or(phi_fraction), h, w);
                CovarianceModel::ProductExpWave {
                    exp: base,
                    wave: StationaryParams::new(self.wave_sigma2, wphi),
                }
            }
            Family::Nonstationary => {
                let ns = &self.nonstationary;
                let spec = ParamFieldSpec {
                    phi_range: (phi * ns.phi_spread.0, phi * ns.phi_spread.1),
                    anis_ratio_range: ns.anis_ratio_range,
                    tilt_range: ns.tilt_range,
                    mean_amplitude: ns.mean_amplitude,
                    sigma: self.sigma2.sqrt(),
                    nu: self.nu,
                    ramp: ns.ramp,
                };
                let field = make_param_fields(&spec, h, w)?;
                let stationary = CovarianceModel::Exponential(base);
                return Ok((
                    stationary,
                    CovarianceModel::NonstationaryMatern(Arc::new(field)),
                ));
            }
        };
        model.validate()?;
        Ok((model.clone(), model))
    }

    pub fn simulate(&self, phi_fraction: f64, h: usize, w: usize, seed: u64) -> Result<Scenario> {
        let (stationary, true_model) = self.models(phi_fraction, h, w)?;
        let sim = match (&true_model, self.family) {
            (CovarianceModel::ProductExpWave { exp, wave }, Family::Composite) => {
                sample_composite(*exp, *wave, h, w, seed, self.composite)?
            }
            (CovarianceModel::NonstationaryMatern(f), _) => sample_grf(&SimulationSpec {
                height: h,
                width: w,
                covariance: true_model.clone(),
                mean: Mean::Field(GridField::new(h, w, f.mean.clone())?),
                seed,
            })?,
            _ => sample_grf(&SimulationSpec {
                height: h,
                width: w,
                covariance: true_model.clone(),
                mean: Mean::Constant(0.0),
                seed,
            })?,
        };
        Ok(Scenario {
            truth: sim.field,
            jitter: sim.jitter,
            stationary,
            true_model,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Kriging,
    KrigingNs,
    MlBase,
    MlVsl,
}

impl ModelName {
    pub fn name(self) -> &'static str {
        match self {
            ModelName::Kriging => "kriging",
            ModelName::KrigingNs => "kriging_ns",
            ModelName::MlBase => "ml_base",
            ModelName::MlVsl => "ml_vsl",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelName::Kriging => "Kriging",
            ModelName::KrigingNs => "Kriging NS",
            ModelName::MlBase => "ML Base",
            ModelName::MlVsl => "ML VSL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Rmse,
    MiRmse,
    Mae,
}

impl MetricName {
    pub fn name(self) -> &'static str {
        match self {
            MetricName::Rmse => "rmse",
            MetricName::MiRmse => "mi_rmse",
            MetricName::Mae => "mae",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MetricName::Rmse => "RMSE",
            MetricName::MiRmse => "MI-RMSE",
            MetricName::Mae => "MAE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum EvalMode {
    /// Fit on all sampled cells, score on the cells never observed.
    #[default]
    Unobserved,
    /// Fit on a random share of the sampled cells, score on the rest.
    Holdout { train_fraction: f64 },
}

/// Network and optimiser settings shared by the two learned models.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnedModels {
    pub vsl: UNetConfig,
    pub base: UNetConfig,
    pub vsl_train: TrainConfig,
    pub base_train: TrainConfig,
}

impl LearnedModels {
    pub fn reference() -> Self {
        LearnedModels {
            vsl: UNetConfig::ml_vsl(),
            base: UNetConfig::ml_base(),
            vsl_train: TrainConfig::default(),
            base_train: TrainConfig::ml_base(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub family: FamilySpec,
    pub phi_fractions: Vec<f64>,
    pub observed_fractions: Vec<f64>,
    pub models: Vec<ModelName>,
    pub metrics: Vec<MetricName>,
    pub runs: usize,
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
    pub eval: EvalMode,
    pub weights: SpatialWeights,
    pub krige: KrigingOptions,
    pub learned: LearnedModels,
}

impl ExperimentPlan {
    /// Kriging-only plan on a 32×32 grid.
    pub fn new(
        family: FamilySpec,
        phi_fraction: f64,
        observed_fractions: Vec<f64>,
        runs: usize,
        base_seed: u64,
    ) -> Self {
        ExperimentPlan {
            family,
            phi_fractions: vec![phi_fraction],
            observed_fractions,
            models: vec![ModelName::Kriging],
            metrics: vec![MetricName::Rmse, MetricName::MiRmse],
            runs,
            height: 32,
            width: 32,
            base_seed,
            eval: EvalMode::Unobserved,
            weights: SpatialWeights::default(),
            krige: KrigingOptions::default(),
            learned: LearnedModels::reference(),
        }
    }

    /// Seed of run `run` in cell `(phi_fraction, observed_fraction)`.
    pub fn run_seed(&self, phi_fraction: f64, observed_fraction: f64, run: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &[
                tag(self.family.family.name()),
                phi_fraction.to_bits(),
                observed_fraction.to_bits(),
                run as u64,
            ],
        )
    }

    pub fn jobs(&self) -> Vec<RunKey> {
        let mut out = Vec::new();
        for &phi in &self.phi_fractions {
            for &p in &self.observed_fractions {
                for run in 0..self.runs {
                    out.push(RunKey {
                        phi_fraction: phi,
                        observed_fraction: p,
                        run,
                        seed: self.run_seed(phi, p, run),
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return cfg("plan.runs must be at least 1".into());
        }
        if self.phi_fractions.is_empty()
            || self.observed_fractions.is_empty()
            || self.models.is_empty()
        {
            return cfg("plan needs at least one range, observed fraction and model".into());
        }
        if self.metrics.is_empty() {
            return cfg("plan needs at least one metric".into());
        }
        if let Some(f) = self
            .phi_fractions
            .iter()
            .find(|f| !(**f > 0.0 && f.is_finite()))
        {
            return cfg(format!("range fractions must be positive, got {f}"));
        }
        if let Some(f) = self
            .observed_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f < 1.0))
        {
            return cfg(format!("observed fractions must lie in (0, 1), got {f}"));
        }
        if let EvalMode::Holdout { train_fraction } = self.eval {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return cfg(format!(
                    "holdout train fraction must lie in (0, 1), got {train_fraction}"
                ));
            }
        }
        let dup = |v: &[f64]| v.iter().enumerate().any(|(i, a)| v[..i].contains(a));
        if dup(&self.phi_fractions) || dup(&self.observed_fractions) {
            return cfg("duplicate range or observed fraction in plan".into());
        }
        let mut seen = HashSet::new();
        for k in self.jobs() {
            if !seen.insert(k.seed) {
                return cfg(format!(
                    "seed collision at range {}, observed {}, run {}",
                    k.phi_fraction, k.observed_fraction, k.run
                ));
            }
        }
        self.family
            .models(self.phi_fractions[0], self.height, self.width)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.learned
            .vsl_train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.learned
            .vsl
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunKey {
    pub phi_fraction: f64,
    pub observed_fraction: f64,
    pub run: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: ModelName,
    pub metric: MetricName,
    pub phi_fraction: f64,
    pub observed_fraction: f64,
    pub run: usize,
    pub seed: u64,
    /// `None` marks a failed run; `error` says why.
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// Facts about one training session that the acceptance checks need
/// without keeping the whole loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    pub model: ModelName,
    pub key: RunKey,
    pub iterations: usize,
    pub max_ledger_error: f64,
    pub omega_start: f64,
    pub omega_end: f64,
    pub omega0: f64,
    pub early_median_masked: f64,
    pub late_median_masked: f64,
    pub wall_time_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl TrainSummary {
    pub fn new(model: ModelName, key: RunKey, cfg: &TrainConfig, r: &TrainReport) -> Self {
        let t = r.records.len();
        let tail = |lo: f64, hi: f64| {
            let (a, b) = (
                (lo * t as f64).floor() as usize,
                ((hi * t as f64).ceil() as usize).min(t),
            );
            median(
                r.records[a..b.max(a + 1).min(t)]
                    .iter()
                    .map(|x| x.masked)
                    .collect(),
            )
        };
        TrainSummary {
            model,
            key,
            iterations: t,
            max_ledger_error: r
                .records
                .iter()
                .map(|x| (x.total - x.recombine(cfg.lambda_l)).abs())
                .fold(0.0, f64::max),
            omega_start: r.records.first().map_or(f64::NAN, |x| x.omega),
            omega_end: r.omega_at_end,
            omega0: cfg.omega0,
            early_median_masked: tail(0.0, 0.1),
            late_median_masked: tail(0.9, 1.0),
            wall_time_s: r.wall_time_s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub key: RunKey,
    /// Diagonal jitter the simulation needed.
    pub jitter: f64,
    pub rows: Vec<ResultRow>,
    pub training: Vec<TrainSummary>,
}

fn score(
    plan: &ExperimentPlan,
    pred: &GridField,
    truth: &GridField,
    eval: &ObservationMask,
    metric: MetricName,
) -> Result<f64> {
    match metric {
        MetricName::Rmse => rmse(pred, truth, eval),
        MetricName::Mae => mae(pred, truth, eval),
        MetricName::MiRmse => mi_discrepancy(pred, truth, &plan.weights),
    }
}

fn describe(e: &Error) -> String {
    format!("{}: {e}", e.category())
}

/// Simulates, fits and scores one run of one cell.
pub fn run_single(plan: &ExperimentPlan, key: RunKey) -> RunOutcome {
    let field_seed = derive_seed(key.seed, &[tag("field")]);
    let mask_seed = derive_seed(key.seed, &[tag("mask")]);
    let split_seed = derive_seed(key.seed, &[tag("split")]);
    let train_seed = derive_seed(key.seed, &[tag("train")]);
    let (h, w) = (plan.height, plan.width);
    let mut training = Vec::new();

    let setup = || -> Result<(Scenario, ObservationMask, ObservationMask)> {
        let sc = plan.family.simulate(key.phi_fraction, h, w, field_seed)?;
        let sampled = sample_mask(h, w, key.observed_fraction, mask_seed)?;
        let (fit, eval) = match plan.eval {
            EvalMode::Unobserved => (sampled.clone(), sampled.complement()),
            EvalMode::Holdout { train_fraction } => {
                split_mask(&sampled, train_fraction, split_seed)?
            }
        };
        Ok((sc, fit, eval))
    };
    let setup = setup().map_err(|e| describe(&e));

    let mut rows = Vec::new();
    for &model in &plan.models {
        let pred = setup
            .as_ref()
            .map_err(Clone::clone)
            .and_then(|(sc, fit, _)| {
                let fitted = match model {
                    ModelName::Kriging => {
                        ok_predict_with(&sc.truth, fit, &sc.stationary, &plan.krige)
                            .map(|p| p.field)
                    }
                    ModelName::KrigingNs => {
                        ok_predict_with(&sc.truth, fit, &sc.true_model, &plan.krige)
                            .map(|p| p.field)
                    }
                    ModelName::MlBase | ModelName::MlVsl => {
                        let (unet, cfg) = if model == ModelName::MlVsl {
                            (plan.learned.vsl, plan.learned.vsl_train)
                        } else {
                            (plan.learned.base, plan.learned.base_train)
                        };
                        let cfg = TrainConfig {
                            seed: train_seed,
                            ..cfg
                        };
                        train_single_field(&sc.truth, fit, &unet, &cfg).map(|report| {
                            training.push(TrainSummary::new(model, key, &cfg, &report));
                            report.prediction
                        })
                    }
                };
                fitted.map_err(|e| describe(&e))
            });
        for &metric in &plan.metrics {
            let value = pred.as_ref().map_err(Clone::clone).and_then(|p| {
                let (sc, _, eval) = setup.as_ref().expect("prediction implies setup");
                score(plan, p, &sc.truth, eval, metric).map_err(|e| describe(&e))
            });
            rows.push(ResultRow {
                model,
                metric,
                phi_fraction: key.phi_fraction,
                observed_fraction: key.observed_fraction,
                run: key.run,
                seed: key.seed,
                error: value.as_ref().err().cloned(),
                value: value.ok(),
            });
        }
    }
    RunOutcome {
        key,
        jitter: setup.as_ref().map_or(0.0, |(sc, _, _)| sc.jitter),
        rows,
        training,
    }
}

/// Runs every `(cell, run)` of the plan on `jobs` threads. Outcomes come back
/// in plan order whatever the scheduling.
pub fn run_plan_with(
    plan: &ExperimentPlan,
    jobs: usize,
    progress: &(dyn Fn(&RunOutcome) + Sync),
) -> Result<Vec<RunOutcome>> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let keys = plan.jobs();
    Ok(pool.install(|| {
        keys.par_iter()
            .map(|&k| {
                let out = run_single(plan, k);
                progress(&out);
                out
            })
            .collect()
    }))
}

pub fn run_plan(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<ResultRow>> {
    Ok(run_plan_with(plan, jobs, &|_| {})?
        .into_iter()
        .flat_map(|o| o.rows)
        .collect())
}

fn fmt_fraction(f: f64) -> String {
    format!("{f:?}")
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("model,metric,phi_fraction,observed_fraction,run,seed,value,error\n");
    for r in rows {
        let value = r.value.map(|v| format!("{v:?}")).unwrap_or_default();
        let error = r
            .error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "\"\"")))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.model.name(),
            r.metric.name(),
            fmt_fraction(r.phi_fraction),
            fmt_fraction(r.observed_fraction),
            r.run,
            r.seed,
            value,
            error
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub n: usize,
    pub failures: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl CellStats {
    pub fn formatted(&self) -> String {
        if self.n == 0 {
            format!("— ({} failed)", self.failures)
        } else {
            format_mean_std(self.mean, self.std)
        }
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.2}")
}

/// `(model, metric, phi bits, observed bits)`; positive fractions order
/// the same as their bit patterns.
pub type CellKey = (ModelName, MetricName, u64, u64);

pub fn aggregate(rows: &[ResultRow]) -> BTreeMap<CellKey, CellStats> {
    let mut groups: BTreeMap<CellKey, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((
                r.model,
                r.metric,
                r.phi_fraction.to_bits(),
                r.observed_fraction.to_bits(),
            ))
            .or_default();
        match r.value {
            Some(v) => g.0.push(v),
            None => g.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(k, (mut v, failures))| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / n as f64
            };
            let std = if n < 2 {
                0.0
            } else {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            (
                k,
                CellStats {
                    n,
                    failures,
                    mean,
                    std,
                },
            )
        })
        .collect()
}

pub fn table_csv(stats: &BTreeMap<CellKey, CellStats>) -> String {
    let mut s =
        String::from("model,metric,phi_fraction,observed_fraction,n,failures,mean,std,formatted\n");
    for (&(m, metric, phi, p), c) in stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:?},{:?},{}",
            m.name(),
            metric.name(),
            fmt_fraction(f64::from_bits(phi)),
            fmt_fraction(f64::from_bits(p)),
            c.n,
            c.failures,
            c.mean,
            c.std,
            c.formatted()
        );
    }
    s
}

/// One markdown table per range: models and metrics down, observed
/// percentages across.
pub fn table_markdown(stats: &BTreeMap<CellKey, CellStats>, title: &str) -> String {
    let mut phis: Vec<u64> = stats.keys().map(|k| k.2).collect();
    phis.dedup();
    phis.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    phis.dedup();
    let mut s = format!("# {title}\n");
    for phi in phis {
        let mut ps: Vec<u64> = stats.keys().filter(|k| k.2 == phi).map(|k| k.3).collect();
        ps.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
        ps.dedup();
        let _ = writeln!(s, "\n## Range {}% of grid side\n", pct(f64::from_bits(phi)));
        let _ = write!(s, "| Model | Metric |");
        for p in &ps {
            let _ = write!(s, " {}% |", pct(f64::from_bits(*p)));
        }
        let _ = write!(s, "\n|---|---|");
        for _ in &ps {
            s.push_str("---|");
        }
        s.push('\n');
        let mut lines: Vec<(ModelName, MetricName)> = stats
            .keys()
            .filter(|k| k.2 == phi)
            .map(|k| (k.0, k.1))
            .collect();
        lines.dedup();
        for (m, metric) in lines {
            let _ = write!(s, "| {} | {} |", m.label(), metric.label());
            for p in &ps {
                let cell = stats
                    .get(&(m, metric, phi, *p))
                    .map_or_else(|| "".to_string(), CellStats::formatted);
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
    }
    s.push_str("\nValues are mean ± sample standard deviation (n − 1 denominator) over runs.\n");
    s
}

fn pct(f: f64) -> String {
    let v = f * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(runs: usize) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(FamilySpec::default(), 0.1, vec![0.5], runs, 7);
        p.height = 8;
        p.width = 8;
        p
    }

    #[test]
    fn one_run_two_rows() {
        let rows = run_plan(&plan(1), 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].metric, MetricName::Rmse);
        assert_eq!(rows[1].metric, MetricName::MiRmse);
        assert!(rows.iter().all(|r| r.value.is_some()));
    }

    #[test]
    fn identical_plans_identical_bytes() {
        let mut p = plan(3);
        p.observed_fractions = vec![0.2, 0.8];
        let a = results_csv(&run_plan(&p, 1).unwrap());
        let b = results_csv(&run_plan(&p, 2).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_unique_across_cells() {
        let mut p = plan(50);
        p.observed_fractions = vec![0.2, 0.3, 0.5];
        p.phi_fractions = vec![0.1, 0.2];
        let seeds: HashSet<u64> = p.jobs().iter().map(|k| k.seed).collect();
        assert_eq!(seeds.len(), 300);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn failures_are_recorded() {
        // a single observed cell cannot be kriged
        let mut p = plan(1);
        p.observed_fractions = vec![0.01];
        let rows = run_plan(&p, 1).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.value.is_none()
                && r.error.as_deref().unwrap().starts_with("insufficient_data")));
    }

    #[test]
    fn aggregate_format() {
        let row = |v: f64, run| ResultRow {
            model: ModelName::Kriging,
            metric: MetricName::Rmse,
            phi_fraction: 0.1,
            observed_fraction: 0.5,
            run,
            seed: 0,
            value: Some(v),
            error: None,
        };
        let stats = aggregate(&[row(1.0, 0), row(3.0, 1)]);
        let c = stats.values().next().unwrap();
        assert_eq!(c.formatted(), "2.000 ± 1.41");
        let single = aggregate(&[row(0.585, 0)]);
        assert_eq!(single.values().next().unwrap().formatted(), "0.585 ± 0.00");
        assert_eq!(format_mean_std(0.585, 0.04), "0.585 ± 0.04");
        let mut failed = row(0.0, 2);
        failed.value = None;
        let all_failed = aggregate(&[failed]);
        assert_eq!(
            all_failed.values().next().unwrap().formatted(),
            "— (1 failed)"
        );
    }

    #[test]
    fn aggregate_order_independent() {
        let rows = run_plan(&plan(4), 1).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(
            table_markdown(&aggregate(&rows), "t"),
            table_markdown(&aggregate(&rev), "t")
        );
    }

    #[test]
    fn family_models() {
        for family in [
            Family::Exponential,
            Family::ExponentialNugget,
            Family::Matern,
            Family::Wave,
            Family::Composite,
            Family::Nonstationary,
        ] {
            let spec = FamilySpec {
                family,
                ..FamilySpec::default()
            };
            let sc = spec.simulate(0.2, 8, 8, 1).unwrap();
            assert_eq!(sc.truth.dims(), (8, 8));
            assert_eq!(
                matches!(sc.true_model, CovarianceModel::NonstationaryMatern(_)),
                family == Family::Nonstationary
            );
        }
        assert_eq!(
            FamilySpec {
                family: Family::ExponentialNugget,
                ..FamilySpec::default()
            }
            .tau2(),
            0.3
        );
    }

    #[test]
    fn holdout_scores_held_out_cells() {
        let mut p = plan(1);
        p.eval = EvalMode::Holdout {
            train_fraction: 0.8,
        };
        assert!(run_plan(&p, 1).unwrap().iter().all(|r| r.value.is_some()));
        p.eval = EvalMode::Holdout {
            train_fraction: 1.5,
        };
        assert!(matches!(run_plan(&p, 1), Err(Error::Config(_))));
    }
}
