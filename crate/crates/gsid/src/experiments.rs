//! Repeated-trial identification studies: recovery probability over
//! re-simulated noise, coefficient-error scoring against the generating
//! system, the five-regime chaotic benchmark, and switching-trajectory
//! segmentation. All runs are deterministic functions of the config and its
//! base seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{self, build_dictionary, enumerate_monomials, DictionarySpec};
use crate::differentiate::{add_noise_with, central_difference};
use crate::error::{Error, Result};
use crate::model::{assemble_model, CoefficientMatrix, IdentifiedModel, RegressionProblem};
use crate::solver::{self, SolverConfig, SolverTrace, Variant};
use crate::systems::{
    duffing, logistic, lorenz, simulate_switching, split_into_segments, OdeSystem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Logistic,
    Lorenz,
    Duffing,
    Switching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    /// Start from the zero matrix; the first support comes from thresholding
    /// the pure gradient. Robust when the full dictionary is too
    /// ill-conditioned for a least-squares warm start.
    Zero,
    /// Start from the per-source unpenalized least-squares solution. The
    /// right choice when coefficients are large relative to the threshold.
    #[default]
    LeastSquares,
}

/// One simulated data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    /// Velocity noise as a fraction of each component's RMS (0.005 = 0.5%).
    #[serde(default)]
    pub noise: f64,
}

/// A single trajectory whose parameter jumps at t_switch, analyzed by
/// splitting into `segments` sub-trajectories treated as sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingConfig {
    pub alpha_before: f64,
    pub alpha_after: f64,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub t_switch: f64,
    pub t_final: f64,
    pub segments: usize,
    #[serde(default)]
    pub noise: f64,
}

impl Default for SwitchingConfig {
    fn default() -> Self {
        SwitchingConfig {
            alpha_before: -1.0,
            alpha_after: 6.6,
            x0: vec![-8.0, 7.0, 27.0],
            dt: 0.005,
            t_switch: 33.0,
            t_final: 64.0,
            segments: 32,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemKind,
    /// Dictionary degree p.
    pub degree: u32,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Keep per-iteration solver traces in the trial records.
    #[serde(default)]
    pub emit_traces: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, rename = "source", skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switching: Option<SwitchingConfig>,
}

fn default_trials() -> usize {
    1
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::GroupL20]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("degree: must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials: must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config(
                "variants: must list at least one solver variant".into(),
            ));
        }
        for &variant in &self.variants {
            SolverConfig {
                variant,
                ..self.solver
            }
            .validate()?;
        }
        if self.system == SystemKind::Switching {
            if !self.sources.is_empty() {
                return Err(Error::Config(
                    "source: switching experiments take a [switching] section, not [[source]] entries".into(),
                ));
            }
            let Some(sw) = &self.switching else {
                return Err(Error::Config(
                    "switching: section required when system = \"switching\"".into(),
                ));
            };
            if sw.x0.len() != 3 {
                return Err(Error::Config(format!(
                    "switching.x0: expected 3 entries, got {}",
                    sw.x0.len()
                )));
            }
            if sw.dt.is_nan() || sw.dt <= 0.0 {
                return Err(Error::Config(format!(
                    "switching.dt: must be positive, got {}",
                    sw.dt
                )));
            }
            if !(sw.t_switch > 0.0 && sw.t_switch < sw.t_final) {
                return Err(Error::Config(format!(
                    "switching.t_switch: must lie strictly inside (0, t_final = {}), got {}",
                    sw.t_final, sw.t_switch
                )));
            }
            if sw.segments < 2 {
                return Err(Error::Config(format!(
                    "switching.segments: need at least 2, got {}",
                    sw.segments
                )));
            }
            if !(sw.noise >= 0.0 && sw.noise.is_finite()) {
                return Err(Error::Config(format!(
                    "switching.noise: must be finite and nonnegative, got {}",
                    sw.noise
                )));
            }
            return Ok(());
        }
        if self.switching.is_some() {
            return Err(Error::Config(
                "switching: section only valid when system = \"switching\"".into(),
            ));
        }
        if self.sources.is_empty() {
            return Err(Error::Config(
                "source: at least one [[source]] entry required".into(),
            ));
        }
        for (i, src) in self.sources.iter().enumerate() {
            let path = format!("source[{}]", i + 1);
            let system = src.build_system(self.system, &path)?;
            if src.x0.len() != system.dim() {
                return Err(Error::Config(format!(
                    "{path}.x0: {} needs {} entries, got {}",
                    system.name(),
                    system.dim(),
                    src.x0.len()
                )));
            }
            if !(src.dt > 0.0 && src.dt.is_finite()) {
                return Err(Error::Config(format!(
                    "{path}.dt: must be positive, got {}",
                    src.dt
                )));
            }
            if src.t_final < 3.0 * src.dt {
                return Err(Error::Config(format!(
                    "{path}.t_final: need at least three samples, got t_final = {} with dt = {}",
                    src.t_final, src.dt
                )));
            }
            if !(src.noise >= 0.0 && src.noise.is_finite()) {
                return Err(Error::Config(format!(
                    "{path}.noise: must be finite and nonnegative, got {}",
                    src.noise
                )));
            }
        }
        Ok(())
    }

    /// The generating system of each source.
    pub fn build_systems(&self) -> Result<Vec<OdeSystem>> {
        self.sources
            .iter()
            .enumerate()
            .map(|(i, src)| src.build_system(self.system, &format!("source[{}]", i + 1)))
            .collect()
    }
}

impl SourceConfig {
    fn build_system(&self, kind: SystemKind, path: &str) -> Result<OdeSystem> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("{path}.{name}: required for this system")))
        };
        match kind {
            SystemKind::Logistic => Ok(logistic(need(self.alpha, "alpha")?)),
            SystemKind::Lorenz => Ok(lorenz(need(self.alpha, "alpha")?)),
            SystemKind::Duffing => Ok(duffing(
                need(self.beta, "beta")?,
                need(self.delta, "delta")?,
            )),
            SystemKind::Switching => Err(Error::Config(format!(
                "{path}: switching experiments do not take sources"
            ))),
        }
    }
}

/// The two-source logistic benchmark configuration.
pub fn logistic_default_config() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemKind::Logistic,
        degree: 6,
        trials: 100,
        base_seed: 2024,
        init: InitPolicy::Zero,
        variants: vec![Variant::GroupL20, Variant::PerSourceL0],
        emit_traces: false,
        solver: SolverConfig {
            threshold: 0.0018,
            ..Default::default()
        },
        sources: [(0.05, 0.0005), (0.23, 0.0001)]
            .into_iter()
            .map(|(alpha, noise)| SourceConfig {
                alpha: Some(alpha),
                beta: None,
                delta: None,
                x0: vec![0.01],
                dt: 0.005,
                t_final: 50.0,
                noise,
            })
            .collect(),
        switching: None,
    }
}

/// The five-regime chaotic benchmark configuration.
pub fn lorenz_default_config() -> ExperimentConfig {
    let regimes: [(f64, [f64; 3], f64); 5] = [
        (-1.0, [-8.0, 7.0, 27.0], 7.5),
        (4.7, [0.0, -0.01, 9.0], 12.5),
        (6.9, [1.0, 2.0, 1.0], 50.0),
        (7.075, [1.0, 1.0, 2.0], 15.0),
        (7.73, [2.0, 1.0, -5.0], 10.0),
    ];
    ExperimentConfig {
        system: SystemKind::Lorenz,
        degree: 4,
        trials: 100,
        base_seed: 2024,
        init: InitPolicy::LeastSquares,
        variants: vec![Variant::GroupL20],
        emit_traces: false,
        solver: SolverConfig {
            threshold: 1.7,
            ..Default::default()
        },
        sources: regimes
            .into_iter()
            .map(|(alpha, x0, t_final)| SourceConfig {
                alpha: Some(alpha),
                beta: None,
                delta: None,
                x0: x0.to_vec(),
                dt: 0.005,
                t_final,
                noise: 0.005,
            })
            .collect(),
        switching: None,
    }
}

/// The regime-switching segmentation configuration.
pub fn switching_default_config() -> ExperimentConfig {
    ExperimentConfig {
        system: SystemKind::Switching,
        degree: 4,
        trials: 1,
        base_seed: 2024,
        init: InitPolicy::LeastSquares,
        variants: vec![Variant::GroupL20],
        emit_traces: false,
        solver: SolverConfig {
            threshold: 2.5,
            ..Default::default()
        },
        sources: Vec::new(),
        switching: Some(SwitchingConfig::default()),
    }
}

// ---------------------------------------------------------------------------
// Scoring

/// Mean of |ĉ_k − c_k|/|c_k| over the true-support entries, in percent.
/// Spurious terms outside the truth support do not enter (support matching
/// covers those).
pub fn relative_error(estimated: &[f64], truth: &[(usize, f64)]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Config(
            "relative error needs a nonempty truth support".into(),
        ));
    }
    let mut total = 0.0;
    for &(k, value) in truth {
        if value == 0.0 {
            return Err(Error::Config(format!(
                "true coefficient at term {k} is zero on its own support"
            )));
        }
        let Some(&est) = estimated.get(k) else {
            return Err(Error::Dimension(format!(
                "truth term {k} outside the {}-term estimate",
                estimated.len()
            )));
        };
        total += (est - value).abs() / value.abs();
    }
    Ok(total / truth.len() as f64 * 100.0)
}

/// [source][component] list of (dictionary column, true value) pairs.
type TruthTables = Vec<Vec<Vec<(usize, f64)>>>;

fn truth_tables(systems: &[OdeSystem], spec: &DictionarySpec) -> Result<TruthTables> {
    systems
        .iter()
        .map(|sys| {
            sys.true_coefficients()
                .into_iter()
                .map(|component| {
                    component
                        .into_iter()
                        .map(|(mi, value)| {
                            let col = spec.index_of(&mi).ok_or_else(|| {
                                Error::Config(format!(
                                    "true model term {mi:?} of {} exceeds dictionary degree {}",
                                    sys.name(),
                                    spec.p
                                ))
                            })?;
                            Ok((col, value))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// True iff every component's estimated (shared) support equals the union of
/// the sources' true supports exactly.
pub fn support_match(model: &IdentifiedModel, systems: &[OdeSystem]) -> Result<bool> {
    for (j, component) in model.components.iter().enumerate() {
        let mut union: Vec<usize> = Vec::new();
        for sys in systems {
            union.extend_from_slice(&sys.true_support(&model.spec)?[j]);
        }
        union.sort_unstable();
        union.dedup();
        if component.support != union {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Per-source matching for the entrywise-ℓ⁰ baseline: every source's own
/// nonzero set must equal that source's true support in every component.
fn per_source_match(model: &IdentifiedModel, systems: &[OdeSystem]) -> Result<bool> {
    for (j, component) in model.components.iter().enumerate() {
        for (i, sys) in systems.iter().enumerate() {
            let estimated: Vec<usize> = component
                .support
                .iter()
                .zip(&component.coefficients[i])
                .filter(|&(_, &v)| v != 0.0)
                .map(|(&k, _)| k)
                .collect();
            if estimated != sys.true_support(&model.spec)?[j] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn per_source_errors(model: &IdentifiedModel, truths: &TruthTables) -> Vec<f64> {
    let m = model.n_sources;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for j in 0..model.components.len() {
        let expanded = model.expand(j);
        for (i, truth) in truths.iter().enumerate() {
            for &(k, value) in &truth[j] {
                sums[i] += (expanded.values()[(k, i)] - value).abs() / value.abs();
                counts[i] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 * 100.0 })
        .collect()
}

// ---------------------------------------------------------------------------
// Trial runner

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Simulation blew up; the trial counts against P but its (absent)
    /// errors are excluded from the means.
    pub failed: bool,
    pub matched: bool,
    /// Estimated shared support per component.
    pub supports: Vec<Vec<usize>>,
    pub per_source_error_pct: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<SolverTrace>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    /// Fraction of trials (failed ones included in the denominator) whose
    /// supports matched the truth exactly.
    pub probability: f64,
    /// Per-source mean relative coefficient error over non-failed trials
    /// (empty when every trial failed).
    pub mean_error_pct: Vec<f64>,
    pub failed_trials: usize,
    pub trials: Vec<TrialRecord>,
    /// The model identified in trial 1, kept for figure/table emission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_trial_model: Option<IdentifiedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_trials: usize,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn empty(config: ExperimentConfig) -> Self {
        ExperimentReport {
            config,
            n_trials: 0,
            variants: Vec::new(),
        }
    }
}

/// Cached thin SVD of one scaled dictionary block, for cheap per-trial
/// least-squares warm starts.
struct CachedLs {
    u: DMatrix<f64>,
    /// V·Σ⁻¹ restricted to singular values above the rank cutoff.
    w: DMatrix<f64>,
}

impl CachedLs {
    fn new(d: &DMatrix<f64>) -> Self {
        let svd = d.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let eps = 1e-10 * s_max;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&r| svd.singular_values[r] > eps)
            .collect();
        let u = svd.u.expect("requested").select_columns(keep.iter());
        let mut w = svd
            .v_t
            .expect("requested")
            .select_rows(keep.iter())
            .transpose();
        for (c, &r) in keep.iter().enumerate() {
            w.column_mut(c).scale_mut(1.0 / svd.singular_values[r]);
        }
        CachedLs { u, w }
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.w * (self.u.transpose() * v)
    }
}

struct TrialOutput {
    records: Vec<TrialRecord>,
    /// Identified models per variant, only kept for trial 1.
    models: Option<Vec<IdentifiedModel>>,
}

/// Run `config.trials` independent noise re-simulations (trial t uses seed
/// base_seed + t) of every requested variant and aggregate recovery
/// probability and coefficient errors.
pub fn run_trials(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.system == SystemKind::Switching {
        return Err(Error::Config(
            "system = \"switching\" is handled by switching_experiment, not run_trials".into(),
        ));
    }
    let systems = config.build_systems()?;
    let spec = Arc::new(enumerate_monomials(systems[0].dim(), config.degree));

    // The states are noise-free (noise enters the velocity measurements), so
    // simulation, differentiation, and dictionary assembly happen once.
    let mut dicts = Vec::with_capacity(config.sources.len());
    let mut clean_vels = Vec::with_capacity(config.sources.len());
    for (src, system) in config.sources.iter().zip(&systems) {
        let series = match crate::systems::integrate(system, &src.x0, src.dt, src.t_final) {
            Ok(series) => series,
            Err(Error::BlowUp { .. }) => return Ok(all_failed_report(config)),
            Err(e) => return Err(e),
        };
        let (states, velocities) = central_difference(&series);
        dicts.push(build_dictionary(&states, &spec)?);
        clean_vels.push(velocities);
    }
    let (scaled, scale) = dictionary::rescale(&dicts)?;
    let scaled = Arc::new(scaled);
    let ls_cache: Option<Vec<CachedLs>> = (config.init == InitPolicy::LeastSquares)
        .then(|| scaled.iter().map(CachedLs::new).collect());
    let truths = truth_tables(&systems, &spec)?;
    let sigmas: Vec<f64> = config.sources.iter().map(|s| s.noise).collect();
    let m = config.sources.len();

    let outputs: Result<Vec<TrialOutput>> = (1..=config.trials)
        .into_par_iter()
        .map(|t| {
            let seed = config.base_seed + t as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<DMatrix<f64>> = clean_vels
                .iter()
                .zip(&sigmas)
                .map(|(v, &sigma)| add_noise_with(v, sigma, &mut rng))
                .collect();
            let problems = RegressionProblem::per_component_scaled(
                Arc::clone(&scaled),
                scale,
                &noisy,
                Arc::clone(&spec),
            )?;
            let inits: Option<Vec<DMatrix<f64>>> = ls_cache.as_ref().map(|cache| {
                problems
                    .iter()
                    .map(|p| {
                        let mut c0 = DMatrix::zeros(p.n_terms(), m);
                        for (i, ls) in cache.iter().enumerate() {
                            c0.set_column(i, &ls.solve(p.velocity(i)));
                        }
                        c0
                    })
                    .collect()
            });
            let mut records = Vec::with_capacity(config.variants.len());
            let mut models = Vec::with_capacity(config.variants.len());
            for &variant in &config.variants {
                let solver_cfg = SolverConfig {
                    variant,
                    ..config.solver
                };
                let mut parts: Vec<(CoefficientMatrix, SolverTrace)> =
                    Vec::with_capacity(problems.len());
                for (j, problem) in problems.iter().enumerate() {
                    parts.push(solver::solve(
                        problem,
                        &solver_cfg,
                        inits.as_ref().map(|v| &v[j]),
                    )?);
                }
                let model = assemble_model(&spec, m, &parts);
                let matched = match variant {
                    Variant::PerSourceL0 => per_source_match(&model, &systems)?,
                    _ => support_match(&model, &systems)?,
                };
                records.push(TrialRecord {
                    trial: t,
                    seed,
                    failed: false,
                    matched,
                    supports: model.components.iter().map(|c| c.support.clone()).collect(),
                    per_source_error_pct: per_source_errors(&model, &truths),
                    traces: config
                        .emit_traces
                        .then(|| parts.iter().map(|(_, trace)| trace.clone()).collect()),
                });
                models.push(model);
            }
            Ok(TrialOutput {
                records,
                models: (t == 1).then_some(models),
            })
        })
        .collect();
    let outputs = outputs?;

    let mut first_models = outputs.first().and_then(|o| o.models.clone());
    let variants = config
        .variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| {
            let trials: Vec<TrialRecord> = outputs.iter().map(|o| o.records[vi].clone()).collect();
            aggregate_variant(
                variant,
                trials,
                m,
                first_models.as_mut().map(|ms| ms[vi].clone()),
            )
        })
        .collect();
    Ok(ExperimentReport {
        config: config.clone(),
        n_trials: config.trials,
        variants,
    })
}

fn aggregate_variant(
    variant: Variant,
    trials: Vec<TrialRecord>,
    n_sources: usize,
    first_trial_model: Option<IdentifiedModel>,
) -> VariantReport {
    let n = trials.len();
    let matches = trials.iter().filter(|r| r.matched).count();
    let valid: Vec<&TrialRecord> = trials.iter().filter(|r| !r.failed).collect();
    let mean_error_pct = if valid.is_empty() {
        Vec::new()
    } else {
        (0..n_sources)
            .map(|i| {
                valid.iter().map(|r| r.per_source_error_pct[i]).sum::<f64>() / valid.len() as f64
            })
            .collect()
    };
    VariantReport {
        variant,
        probability: matches as f64 / n as f64,
        mean_error_pct,
        failed_trials: n - valid.len(),
        trials,
        first_trial_model,
    }
}

fn all_failed_report(config: &ExperimentConfig) -> ExperimentReport {
    let variants = config
        .variants
        .iter()
        .map(|&variant| {
            let trials = (1..=config.trials)
                .map(|t| TrialRecord {
                    trial: t,
                    seed: config.base_seed + t as u64,
                    failed: true,
                    matched: false,
                    supports: Vec::new(),
                    per_source_error_pct: Vec::new(),
                    traces: None,
                })
                .collect();
            aggregate_variant(variant, trials, config.sources.len(), None)
        })
        .collect();
    ExperimentReport {
        config: config.clone(),
        n_trials: config.trials,
        variants,
    }
}

// ---------------------------------------------------------------------------
// Five-regime benchmark table

/// Recovered coefficients of one component for every set (source), shaped
/// like the paper's comparison table: one row per dictionary term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub component: usize,
    pub term_names: Vec<String>,
    pub set_labels: Vec<String>,
    /// values[k][i] = coefficient of term k in set i.
    pub values: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn from_model(model: &IdentifiedModel, component: usize) -> Self {
        let expanded = model.expand(component);
        CoefficientTable {
            component: component + 1,
            term_names: model.spec.term_names(),
            set_labels: (1..=model.n_sources).map(|i| format!("set{i}")).collect(),
            values: (0..expanded.n_terms())
                .map(|k| {
                    (0..model.n_sources)
                        .map(|i| expanded.values()[(k, i)])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("term");
        for label in &self.set_labels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (name, row) in self.term_names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Run the five-regime benchmark and extract the first trial's component-2
/// coefficient table (None when the first trial failed).
pub fn lorenz_regimes_experiment(
    config: &ExperimentConfig,
) -> Result<(ExperimentReport, Option<CoefficientTable>)> {
    if config.system != SystemKind::Lorenz {
        return Err(Error::Config(format!(
            "the regime benchmark needs system = \"lorenz\", got {:?}",
            config.system
        )));
    }
    let report = run_trials(config)?;
    let table = report
        .variants
        .first()
        .and_then(|v| v.first_trial_model.as_ref())
        .map(|model| CoefficientTable::from_model(model, 1));
    Ok((report, table))
}

// ---------------------------------------------------------------------------
// Switching segmentation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingReport {
    pub config: ExperimentConfig,
    pub model: IdentifiedModel,
    /// Physical per-segment misfit: √(Σ_j ‖D⁽ⁱ⁾c_j⁽ⁱ⁾ − V_j⁽ⁱ⁾‖²)/√ℓᵢ.
    pub segment_residuals: Vec<f64>,
    /// 1-based segment with the largest residual.
    pub switch_segment: usize,
    /// 1-based segment containing the switch time.
    pub expected_segment: usize,
}

/// Index (1-based) of the segment holding global sample `k`, given the
/// segment lengths in order.
fn segment_of_sample(lengths: &[usize], k: usize) -> usize {
    let mut cumulative = 0usize;
    for (i, &len) in lengths.iter().enumerate() {
        cumulative += len;
        if k < cumulative {
            return i + 1;
        }
    }
    lengths.len()
}

/// Split the switching trajectory into segments, identify one shared-support
/// model across them, and locate the anomalous segment by residual.
pub fn switching_experiment(config: &ExperimentConfig) -> Result<SwitchingReport> {
    config.validate()?;
    let Some(sw) = &config.switching else {
        return Err(Error::Config("switching: section required".into()));
    };
    let series = simulate_switching(
        sw.alpha_before,
        sw.alpha_after,
        &sw.x0,
        sw.dt,
        sw.t_switch,
        sw.t_final,
    )?;
    let segments = split_into_segments(&series, sw.segments)?;
    let spec = Arc::new(enumerate_monomials(3, config.degree));

    let mut dicts = Vec::with_capacity(segments.len());
    let mut vels = Vec::with_capacity(segments.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed + 1);
    for segment in &segments {
        let (states, velocities) = central_difference(segment);
        dicts.push(build_dictionary(&states, &spec)?);
        vels.push(add_noise_with(&velocities, sw.noise, &mut rng));
    }
    let (scaled, scale) = dictionary::rescale(&dicts)?;
    let problems =
        RegressionProblem::per_component_scaled(Arc::new(scaled), scale, &vels, Arc::clone(&spec))?;

    let variant = config.variants[0];
    let solver_cfg = SolverConfig {
        variant,
        ..config.solver
    };
    let mut parts = Vec::with_capacity(problems.len());
    for problem in &problems {
        let init = match config.init {
            InitPolicy::Zero => None,
            InitPolicy::LeastSquares => Some(solver::least_squares_init(problem)),
        };
        parts.push(solver::solve(problem, &solver_cfg, init.as_ref())?);
    }
    let model = assemble_model(&spec, segments.len(), &parts);

    let mut residuals = vec![0.0f64; segments.len()];
    for (j, problem) in problems.iter().enumerate() {
        let expanded = model.expand(j);
        for (i, r) in residuals.iter_mut().enumerate() {
            let d = problem.dictionary(i) / scale;
            let v = problem.unscaled_velocity(i);
            let coeffs = DVector::from_iterator(
                expanded.n_terms(),
                expanded.values().column(i).iter().copied(),
            );
            *r += (d * coeffs - v).norm_squared();
        }
    }
    let lengths: Vec<usize> = segments.iter().map(|s| s.len()).collect();
    for (r, &len) in residuals.iter_mut().zip(&lengths) {
        // Interior rows only; normalize by the segment's sample count so
        // unequal segment lengths compare fairly.
        *r = (*r / (len - 2) as f64).sqrt();
    }
    let switch_segment = residuals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i + 1)
        .expect("at least two segments");
    let k_switch = (sw.t_switch / sw.dt + 1e-9).floor() as usize;
    let expected_segment = segment_of_sample(&lengths, k_switch);
    Ok(SwitchingReport {
        config: config.clone(),
        model,
        segment_residuals: residuals,
        switch_segment,
        expected_segment,
    })
}

// ---------------------------------------------------------------------------
// Report emission

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn velocities_csv(times: &[f64], velocities: &DMatrix<f64>) -> String {
    let mut out = String::from("t");
    for j in 1..=velocities.ncols() {
        out.push_str(&format!(",v{j}"));
    }
    out.push('\n');
    for (r, t) in times.iter().enumerate() {
        out.push_str(&format!("{t:.16e}"));
        for c in 0..velocities.ncols() {
            out.push_str(&format!(",{:.16e}", velocities[(r, c)]));
        }
        out.push('\n');
    }
    out
}

fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("variant,P,mean_rel_err_pct\n");
    for v in &report.variants {
        let mean = if v.mean_error_pct.is_empty() {
            String::new()
        } else {
            format!(
                "{}",
                v.mean_error_pct.iter().sum::<f64>() / v.mean_error_pct.len() as f64
            )
        };
        out.push_str(&format!(
            "{},{},{}\n",
            v.variant.label(),
            v.probability,
            mean
        ));
    }
    out
}

/// Write report.json, summary.csv, and per-source figure-data CSVs (clean
/// states plus the trial-1 noisy velocities) into `dir`. Returns the paths
/// written.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    write_text(&json_path, &(json + "\n"))?;
    written.push(json_path);

    let summary_path = dir.join("summary.csv");
    write_text(&summary_path, &summary_csv(report))?;
    written.push(summary_path);

    // Figure data: the source trajectories and the velocities the first
    // trial actually fit (same seed stream as run_trials' trial 1).
    if report.config.system != SystemKind::Switching && !report.config.sources.is_empty() {
        if let Ok(systems) = report.config.build_systems() {
            let mut rng = ChaCha8Rng::seed_from_u64(report.config.base_seed + 1);
            for (i, (src, system)) in report.config.sources.iter().zip(&systems).enumerate() {
                let Ok(series) = crate::systems::integrate(system, &src.x0, src.dt, src.t_final)
                else {
                    continue; // blown-up configs still get report.json/summary.csv
                };
                let states_path = dir.join(format!("figure_source{}_states.csv", i + 1));
                series.write_csv(&states_path)?;
                written.push(states_path);
                let (_, velocities) = central_difference(&series);
                let noisy = add_noise_with(&velocities, src.noise, &mut rng);
                let interior = &series.times()[1..series.len() - 1];
                let vel_path = dir.join(format!("figure_source{}_velocities.csv", i + 1));
                write_text(&vel_path, &velocities_csv(interior, &noisy))?;
                written.push(vel_path);
            }
        }
    }
    Ok(written)
}

/// Write the segmentation artifacts: report.json, the per-segment residual
/// CSV, the segment-by-term coefficient map, and the raw trajectory.
pub fn emit_switching_report(report: &SwitchingReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    write_text(&json_path, &(json + "\n"))?;
    written.push(json_path);

    let mut residuals = String::from("segment,residual,is_switch\n");
    for (i, r) in report.segment_residuals.iter().enumerate() {
        residuals.push_str(&format!(
            "{},{:.16e},{}\n",
            i + 1,
            r,
            u8::from(i + 1 == report.switch_segment)
        ));
    }
    let residuals_path = dir.join("segment_residuals.csv");
    write_text(&residuals_path, &residuals)?;
    written.push(residuals_path);

    let mut coeffs = String::from("component,segment,term_index,term_name,coefficient\n");
    for (j, component) in report.model.components.iter().enumerate() {
        for i in 0..report.model.n_sources {
            for (k, (&col, name)) in component
                .support
                .iter()
                .zip(&component.term_names)
                .enumerate()
            {
                coeffs.push_str(&format!(
                    "{},{},{},{},{:.16e}\n",
                    j + 1,
                    i + 1,
                    col + 1,
                    name,
                    component.coefficients[i][k]
                ));
            }
        }
    }
    let coeffs_path = dir.join("segment_coefficients.csv");
    write_text(&coeffs_path, &coeffs)?;
    written.push(coeffs_path);

    if let Some(sw) = &report.config.switching {
        if let Ok(series) = simulate_switching(
            sw.alpha_before,
            sw.alpha_after,
            &sw.x0,
            sw.dt,
            sw.t_switch,
            sw.t_final,
        ) {
            let traj_path = dir.join("trajectory_states.csv");
            series.write_csv(&traj_path)?;
            written.push(traj_path);
        }
    }
    Ok(written)
}
