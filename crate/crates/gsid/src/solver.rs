//! Group hard-iterative thresholding for the joint sparse regression, plus
//! the per-source entrywise-ℓ⁰ baseline and the rank-selection (`ks`-rows)
//! variant.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nonzero_rows, CoefficientMatrix, RegressionProblem};

/// Which support-selection rule the solver iterates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Row-wise thresholding: a term is kept or dropped for all sources at
    /// once (the shared-support penalty).
    GroupL20,
    /// Entry-wise thresholding: every source keeps its own support. The
    /// comparison baseline.
    PerSourceL0,
    /// Keep the ⌈k_factor·s⌉ largest rows of the gradient step each
    /// iteration and exactly `s` rows at the final one. No threshold is
    /// used; `s` is the target sparsity and `k_factor` must exceed 1.
    KsRows { s: usize, k_factor: f64 },
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::GroupL20 => "group-l20",
            Variant::PerSourceL0 => "per-source-l0",
            Variant::KsRows { .. } => "ks-rows",
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Variant::KsRows { s, k_factor } => {
                use serde::ser::SerializeStruct;
                let mut st = serializer.serialize_struct("Variant", 3)?;
                st.serialize_field("name", "ks-rows")?;
                st.serialize_field("s", &s)?;
                st.serialize_field("k_factor", &k_factor)?;
                st.end()
            }
            _ => serializer.serialize_str(self.label()),
        }
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Table {
                name: String,
                s: usize,
                k_factor: f64,
            },
        }
        match Repr::deserialize(deserializer)? {
            Repr::Name(name) => match name.as_str() {
                "group-l20" => Ok(Variant::GroupL20),
                "per-source-l0" => Ok(Variant::PerSourceL0),
                "ks-rows" => Err(serde::de::Error::custom(
                    "variant \"ks-rows\" needs fields `s` and `k_factor`, e.g. { name = \"ks-rows\", s = 3, k_factor = 2.0 }",
                )),
                other => Err(serde::de::Error::custom(format!(
                    "unknown variant {other:?}; expected \"group-l20\", \"per-source-l0\", or a ks-rows table"
                ))),
            },
            Repr::Table { name, s, k_factor } => {
                if name == "ks-rows" {
                    Ok(Variant::KsRows { s, k_factor })
                } else {
                    Err(serde::de::Error::custom(format!(
                        "unknown variant table {name:?}; only \"ks-rows\" takes parameters"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// The thresholding level a (the penalty weight is γ = a²).
    pub threshold: f64,
    /// Stop when the entry-wise max |ΔC| drops to this.
    pub tol: f64,
    pub max_iter: usize,
    pub variant: Variant,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            threshold: 0.0,
            tol: 1e-8,
            max_iter: 500,
            variant: Variant::GroupL20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be a finite nonnegative number, got {}",
                self.threshold
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!(
                "tol must be a finite positive number, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if let Variant::KsRows { s, k_factor } = self.variant {
            if s == 0 {
                return Err(Error::Config(
                    "ks-rows target sparsity s must be at least 1".into(),
                ));
            }
            if !(k_factor > 1.0 && k_factor.is_finite()) {
                return Err(Error::Config(format!(
                    "ks-rows k_factor must exceed 1, got {k_factor}"
                )));
            }
        }
        Ok(())
    }
}

/// Iteration history on the scaled problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    /// Objective values: entry 0 is for the initial matrix, then one per
    /// iteration. Non-increasing (within 1e-9) for the thresholding
    /// variants; the ks-rows value is the plain residual.
    pub objectives: Vec<f64>,
    /// Selected support after each iteration (for the per-source baseline,
    /// the union over sources).
    pub supports: Vec<Vec<usize>>,
    pub iterations: usize,
    pub converged: bool,
    pub rank_warnings: usize,
}

impl SolverTrace {
    /// `iteration,F,support_size` rows; iteration 0 is the initial matrix
    /// (its support size is left blank).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,F,support_size\n");
        out.push_str(&format!("0,{:.16e},\n", self.objectives[0]));
        for (k, sup) in self.supports.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.16e},{}\n",
                k + 1,
                self.objectives[k + 1],
                sup.len()
            ));
        }
        out
    }
}

/// Zero every row whose ℓ² norm is ≤ a (boundary inclusive); leave the rest.
pub fn group_threshold(c: &DMatrix<f64>, a: f64) -> DMatrix<f64> {
    let mut out = c.clone();
    for k in 0..out.nrows() {
        if out.row(k).norm() <= a {
            out.row_mut(k).fill(0.0);
        }
    }
    out
}

/// Zero every entry with |value| ≤ a (boundary inclusive); leave the rest.
pub fn entrywise_threshold(c: &DMatrix<f64>, a: f64) -> DMatrix<f64> {
    c.map(|v| if v.abs() <= a { 0.0 } else { v })
}

/// One explicit gradient step on each source's residual:
/// column i of the result is c⁽ⁱ⁾ + (D⁽ⁱ⁾)ᵀ(V⁽ⁱ⁾ − D⁽ⁱ⁾c⁽ⁱ⁾).
pub fn gradient_step(problem: &RegressionProblem, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != problem.n_terms() || c.ncols() != problem.n_sources() {
        return Err(Error::Dimension(format!(
            "coefficients are {}x{} but the problem needs {}x{}",
            c.nrows(),
            c.ncols(),
            problem.n_terms(),
            problem.n_sources()
        )));
    }
    let mut out = c.clone();
    for i in 0..problem.n_sources() {
        let d = problem.dictionary(i);
        let residual = problem.velocity(i) - d * c.column(i);
        let mut col = out.column_mut(i);
        col += d.transpose() * residual;
    }
    Ok(out)
}

/// Least squares on an explicit column block. Well-conditioned systems
/// (σ_min/σ_max ≥ 1e-10 and at least as many rows as columns) go through QR;
/// anything rank-deficient falls back to the minimum-norm SVD solution and
/// raises the warning flag.
fn least_squares_on_columns(cols: &DMatrix<f64>, v: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = cols.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if cols.nrows() >= cols.ncols() && s_max > 0.0 && s_min / s_max >= 1e-10 {
        let qr = cols.clone().qr();
        let rhs = qr.q().transpose() * v;
        if let Some(u) = qr.r().solve_upper_triangular(&rhs) {
            return (u, false);
        }
    }
    let eps = 1e-10 * s_max;
    let u = svd
        .solve(v, eps)
        .expect("SVD::solve cannot fail once U and Vᵀ are computed");
    (u, true)
}

/// Minimize ‖D_S u − V‖₂ over vectors supported on `support`; entries off the
/// support are zero. An empty support yields the zero vector. The boolean is
/// the rank warning from the restricted block.
pub fn restricted_least_squares(
    d: &DMatrix<f64>,
    v: &DVector<f64>,
    support: &[usize],
) -> Result<(DVector<f64>, bool)> {
    if v.len() != d.nrows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but the velocity has {} entries",
            d.nrows(),
            v.len()
        )));
    }
    let mut out = DVector::zeros(d.ncols());
    if support.is_empty() {
        return Ok((out, false));
    }
    for &j in support {
        if j >= d.ncols() {
            return Err(Error::Dimension(format!(
                "support index {j} out of range for {} dictionary columns",
                d.ncols()
            )));
        }
    }
    let cols = d.select_columns(support.iter());
    let (u, warn) = least_squares_on_columns(&cols, v);
    for (k, &j) in support.iter().enumerate() {
        out[j] = u[k];
    }
    Ok((out, warn))
}

/// Per-source unpenalized least squares on the full dictionary; the usual
/// warm start when the data are well conditioned.
pub fn least_squares_init(problem: &RegressionProblem) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(problem.n_terms(), problem.n_sources());
    for i in 0..problem.n_sources() {
        let (u, _) = least_squares_on_columns(problem.dictionary(i), problem.velocity(i));
        c.set_column(i, &u);
    }
    c
}

/// Indices of the `keep` largest rows by ℓ² norm, ascending; on ties the
/// lower row index wins.
fn largest_rows(c: &DMatrix<f64>, keep: usize) -> Vec<usize> {
    let mut norms: Vec<(usize, f64)> = (0..c.nrows()).map(|k| (k, c.row(k).norm())).collect();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut idx: Vec<usize> = norms
        .iter()
        .take(keep.min(c.nrows()))
        .map(|&(k, _)| k)
        .collect();
    idx.sort_unstable();
    idx
}

fn residual_sum(problem: &RegressionProblem, c: &DMatrix<f64>) -> f64 {
    (0..problem.n_sources())
        .map(|i| (problem.dictionary(i) * c.column(i) - problem.velocity(i)).norm_squared())
        .sum()
}

fn trace_objective(problem: &RegressionProblem, c: &DMatrix<f64>, config: &SolverConfig) -> f64 {
    let gamma = config.threshold * config.threshold;
    match config.variant {
        Variant::GroupL20 => residual_sum(problem, c) + gamma * nonzero_rows(c).len() as f64,
        Variant::PerSourceL0 => {
            let nnz = c.iter().filter(|&&v| v != 0.0).count();
            residual_sum(problem, c) + gamma * nnz as f64
        }
        Variant::KsRows { .. } => residual_sum(problem, c),
    }
}

/// Run the two-step iteration (gradient step, support selection, restricted
/// least squares per source) from `c0` (zero matrix when `None`) until the
/// entry-wise change drops to `tol` or `max_iter` is hit. The returned
/// coefficients are refit on the unscaled dictionaries over the final
/// support, so they are in physical units; the trace stays on the scaled
/// problem.
pub fn solve(
    problem: &RegressionProblem,
    config: &SolverConfig,
    c0: Option<&DMatrix<f64>>,
) -> Result<(CoefficientMatrix, SolverTrace)> {
    config.validate()?;
    let n_terms = problem.n_terms();
    let m = problem.n_sources();
    let mut c = match c0 {
        Some(c0) => {
            if c0.nrows() != n_terms || c0.ncols() != m {
                return Err(Error::Dimension(format!(
                    "initial matrix is {}x{} but the problem needs {n_terms}x{m}",
                    c0.nrows(),
                    c0.ncols()
                )));
            }
            c0.clone()
        }
        None => DMatrix::zeros(n_terms, m),
    };
    let a = config.threshold;

    let mut objectives = vec![trace_objective(problem, &c, config)];
    let mut supports: Vec<Vec<usize>> = Vec::new();
    // Per-source supports; identical to the shared support except for the
    // per-source baseline, where each column keeps its own.
    let mut col_supports: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut rank_warnings = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    for iter in 1..=config.max_iter {
        let g = gradient_step(problem, &c)?;
        let mut new_c = DMatrix::zeros(n_terms, m);
        let support = match config.variant {
            Variant::GroupL20 => nonzero_rows(&group_threshold(&g, a)),
            Variant::PerSourceL0 => {
                let mut any = vec![false; n_terms];
                for i in 0..m {
                    col_supports[i] = (0..n_terms).filter(|&k| g[(k, i)].abs() > a).collect();
                    for &k in &col_supports[i] {
                        any[k] = true;
                    }
                }
                (0..n_terms).filter(|&k| any[k]).collect()
            }
            Variant::KsRows { s, k_factor } => {
                largest_rows(&g, (k_factor * s as f64).ceil() as usize)
            }
        };
        if !matches!(config.variant, Variant::PerSourceL0) {
            for cs in col_supports.iter_mut() {
                cs.clone_from(&support);
            }
        }
        for (i, cols) in col_supports.iter().enumerate() {
            let (u, warn) =
                restricted_least_squares(problem.dictionary(i), problem.velocity(i), cols)?;
            rank_warnings += usize::from(warn);
            new_c.set_column(i, &u);
        }
        let delta = (&new_c - &c).amax();
        c = new_c;
        objectives.push(trace_objective(problem, &c, config));
        supports.push(support);
        iterations = iter;
        if !matches!(config.variant, Variant::KsRows { .. }) {
            debug_assert!(
                objectives[iterations] <= objectives[iterations - 1] + 1e-9,
                "objective increased at iteration {iterations}: {} -> {}",
                objectives[iterations - 1],
                objectives[iterations]
            );
        }
        if delta <= config.tol {
            converged = true;
            break;
        }
    }

    // The rank-selection variant tightens to exactly s rows at the end.
    if let Variant::KsRows { s, .. } = config.variant {
        let support = largest_rows(&c, s);
        let mut new_c = DMatrix::zeros(n_terms, m);
        for i in 0..m {
            let (u, warn) =
                restricted_least_squares(problem.dictionary(i), problem.velocity(i), &support)?;
            rank_warnings += usize::from(warn);
            new_c.set_column(i, &u);
        }
        c = new_c;
        objectives.push(trace_objective(problem, &c, config));
        for cs in col_supports.iter_mut() {
            cs.clone_from(&support);
        }
        supports.push(support);
        iterations += 1;
    }

    // Refit on the unscaled dictionaries so reported values are physical.
    let mut physical = DMatrix::zeros(n_terms, m);
    for i in 0..m {
        if col_supports[i].is_empty() {
            continue;
        }
        let cols = problem.unscaled_columns(i, &col_supports[i]);
        let v = problem.unscaled_velocity(i);
        let (u, warn) = least_squares_on_columns(&cols, &v);
        rank_warnings += usize::from(warn);
        for (k, &j) in col_supports[i].iter().enumerate() {
            physical[(j, i)] = u[k];
        }
    }

    let trace = SolverTrace {
        objectives,
        supports,
        iterations,
        converged,
        rank_warnings,
    };
    Ok((CoefficientMatrix::new(physical), trace))
}
