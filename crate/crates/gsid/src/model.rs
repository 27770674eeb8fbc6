use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{self, DictionarySpec};
use crate::error::{Error, Result};

/// Indices of rows with nonzero ℓ² norm, in ascending order.
pub(crate) fn nonzero_rows(values: &DMatrix<f64>) -> Vec<usize> {
    (0..values.nrows())
        .filter(|&k| values.row(k).iter().any(|&v| v != 0.0))
        .collect()
}

/// An n̄×m coefficient matrix whose columns are per-source coefficient vectors
/// and whose nonzero rows form the shared support. The support is computed
/// from the stored values, so it can never go stale.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    support: Vec<usize>,
}

impl CoefficientMatrix {
    pub fn new(values: DMatrix<f64>) -> Self {
        let support = nonzero_rows(&values);
        CoefficientMatrix { values, support }
    }

    pub fn zeros(n_terms: usize, n_sources: usize) -> Self {
        CoefficientMatrix::new(DMatrix::zeros(n_terms, n_sources))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Row indices with nonzero ℓ² norm, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn n_sources(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_terms(&self) -> usize {
        self.values.nrows()
    }
}

/// Number of rows with nonzero ℓ² norm (the ℓ²,⁰ penalty value).
pub fn l20_norm(c: &CoefficientMatrix) -> usize {
    c.support().len()
}

/// Scaled dictionary blocks, scaled velocity vectors, and the shared scale.
type ScaledBlocks = (Arc<Vec<DMatrix<f64>>>, Vec<DVector<f64>>, f64);

/// The per-component regression data: one dictionary block and one velocity
/// column per source, jointly rescaled so the largest dictionary spectral
/// norm is 1. Dictionary blocks are shared (per-component problems of the
/// same experiment point at the same scaled blocks).
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    dictionaries: Arc<Vec<DMatrix<f64>>>,
    velocities: Vec<DVector<f64>>,
    spec: Arc<DictionarySpec>,
    scale_factor: f64,
}

impl RegressionProblem {
    /// Build a single-component problem from raw (unscaled) blocks. Both the
    /// dictionaries and the velocities are multiplied by the common scale
    /// factor 1 / maxᵢ‖D⁽ⁱ⁾‖₂, which leaves least-squares solutions on any
    /// fixed support unchanged.
    pub fn new(
        dictionaries: Vec<DMatrix<f64>>,
        velocities: Vec<DVector<f64>>,
        spec: DictionarySpec,
    ) -> Result<Self> {
        let scaled = Self::scale_blocks(&dictionaries, &velocities, &spec)?;
        let mut problems = Self::from_scaled(scaled.0, scaled.2, vec![scaled.1], spec);
        Ok(problems.pop().expect("one component requested"))
    }

    /// Build one problem per state component from shared raw dictionaries and
    /// per-source raw velocity matrices (ℓᵢ×n), rescaling once.
    pub fn per_component(
        dictionaries: Vec<DMatrix<f64>>,
        velocities: &[DMatrix<f64>],
        spec: DictionarySpec,
    ) -> Result<Vec<Self>> {
        if velocities.len() != dictionaries.len() {
            return Err(Error::Dimension(format!(
                "{} dictionaries but {} velocity blocks",
                dictionaries.len(),
                velocities.len()
            )));
        }
        let n = spec.n;
        for (i, (d, v)) in dictionaries.iter().zip(velocities).enumerate() {
            if v.nrows() != d.nrows() {
                return Err(Error::Dimension(format!(
                    "source {}: dictionary has {} rows but velocities have {}",
                    i + 1,
                    d.nrows(),
                    v.nrows()
                )));
            }
            if v.ncols() != n {
                return Err(Error::Dimension(format!(
                    "source {}: velocities have {} components, expected {n}",
                    i + 1,
                    v.ncols()
                )));
            }
        }
        let (scaled_dicts, scale) = dictionary::rescale(&dictionaries)?;
        Self::check_columns(&scaled_dicts, &spec)?;
        let shared = Arc::new(scaled_dicts);
        let spec = Arc::new(spec);
        Ok((0..n)
            .map(|j| {
                let vel = velocities
                    .iter()
                    .map(|v| {
                        DVector::from_iterator(v.nrows(), v.column(j).iter().map(|x| x * scale))
                    })
                    .collect();
                RegressionProblem {
                    dictionaries: Arc::clone(&shared),
                    velocities: vel,
                    spec: Arc::clone(&spec),
                    scale_factor: scale,
                }
            })
            .collect())
    }

    /// Assemble per-component problems from blocks already scaled by
    /// `scale_factor` (as produced by [`dictionary::rescale`]). Lets
    /// repeated-trial workflows rescale once and share the dictionaries
    /// across trials that differ only in their velocity noise.
    pub fn per_component_scaled(
        scaled: Arc<Vec<DMatrix<f64>>>,
        scale_factor: f64,
        raw_velocities: &[DMatrix<f64>],
        spec: Arc<DictionarySpec>,
    ) -> Result<Vec<Self>> {
        if raw_velocities.len() != scaled.len() {
            return Err(Error::Dimension(format!(
                "{} dictionaries but {} velocity blocks",
                scaled.len(),
                raw_velocities.len()
            )));
        }
        if !(scale_factor > 0.0 && scale_factor.is_finite()) {
            return Err(Error::Config(format!(
                "scale factor must be finite and positive, got {scale_factor}"
            )));
        }
        Self::check_columns(&scaled, &spec)?;
        let n = spec.n;
        for (i, (d, v)) in scaled.iter().zip(raw_velocities).enumerate() {
            if v.nrows() != d.nrows() || v.ncols() != n {
                return Err(Error::Dimension(format!(
                    "source {}: velocities are {}x{}, expected {}x{n}",
                    i + 1,
                    v.nrows(),
                    v.ncols(),
                    d.nrows()
                )));
            }
        }
        Ok((0..n)
            .map(|j| {
                let vel = raw_velocities
                    .iter()
                    .map(|v| {
                        DVector::from_iterator(
                            v.nrows(),
                            v.column(j).iter().map(|x| x * scale_factor),
                        )
                    })
                    .collect();
                RegressionProblem {
                    dictionaries: Arc::clone(&scaled),
                    velocities: vel,
                    spec: Arc::clone(&spec),
                    scale_factor,
                }
            })
            .collect())
    }

    fn scale_blocks(
        dictionaries: &[DMatrix<f64>],
        velocities: &[DVector<f64>],
        spec: &DictionarySpec,
    ) -> Result<ScaledBlocks> {
        if velocities.len() != dictionaries.len() {
            return Err(Error::Dimension(format!(
                "{} dictionaries but {} velocity vectors",
                dictionaries.len(),
                velocities.len()
            )));
        }
        for (i, (d, v)) in dictionaries.iter().zip(velocities).enumerate() {
            if v.len() != d.nrows() {
                return Err(Error::Dimension(format!(
                    "source {}: dictionary has {} rows but velocity has {} entries",
                    i + 1,
                    d.nrows(),
                    v.len()
                )));
            }
        }
        let (scaled, scale) = dictionary::rescale(dictionaries)?;
        Self::check_columns(&scaled, spec)?;
        let velocities = velocities.iter().map(|v| v * scale).collect();
        Ok((Arc::new(scaled), velocities, scale))
    }

    fn from_scaled(
        dictionaries: Arc<Vec<DMatrix<f64>>>,
        scale: f64,
        velocities: Vec<Vec<DVector<f64>>>,
        spec: DictionarySpec,
    ) -> Vec<Self> {
        let spec = Arc::new(spec);
        velocities
            .into_iter()
            .map(|vel| RegressionProblem {
                dictionaries: Arc::clone(&dictionaries),
                velocities: vel,
                spec: Arc::clone(&spec),
                scale_factor: scale,
            })
            .collect()
    }

    fn check_columns(dictionaries: &[DMatrix<f64>], spec: &DictionarySpec) -> Result<()> {
        for (i, d) in dictionaries.iter().enumerate() {
            if d.ncols() != spec.n_terms() {
                return Err(Error::Dimension(format!(
                    "source {}: dictionary has {} columns, expected n̄ = {}",
                    i + 1,
                    d.ncols(),
                    spec.n_terms()
                )));
            }
        }
        Ok(())
    }

    pub fn n_sources(&self) -> usize {
        self.dictionaries.len()
    }

    pub fn n_terms(&self) -> usize {
        self.spec.n_terms()
    }

    /// Scaled dictionary block of source `i`.
    pub fn dictionary(&self, i: usize) -> &DMatrix<f64> {
        &self.dictionaries[i]
    }

    /// Scaled velocity column of source `i`.
    pub fn velocity(&self, i: usize) -> &DVector<f64> {
        &self.velocities[i]
    }

    pub fn spec(&self) -> &DictionarySpec {
        &self.spec
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    /// Unscaled (physical) dictionary columns of source `i` restricted to
    /// `support`, for the final refit.
    pub fn unscaled_columns(&self, i: usize, support: &[usize]) -> DMatrix<f64> {
        let d = &self.dictionaries[i];
        let mut out = DMatrix::zeros(d.nrows(), support.len());
        for (c, &j) in support.iter().enumerate() {
            for r in 0..d.nrows() {
                out[(r, c)] = d[(r, j)] / self.scale_factor;
            }
        }
        out
    }

    /// Unscaled (physical) velocity vector of source `i`.
    pub fn unscaled_velocity(&self, i: usize) -> DVector<f64> {
        &self.velocities[i] / self.scale_factor
    }
}

/// Σᵢ‖D⁽ⁱ⁾c⁽ⁱ⁾ − V⁽ⁱ⁾‖₂² + γ·(number of nonzero rows), on the problem's
/// (scaled) blocks.
pub fn objective(problem: &RegressionProblem, c: &CoefficientMatrix, gamma: f64) -> Result<f64> {
    if c.n_sources() != problem.n_sources() || c.n_terms() != problem.n_terms() {
        return Err(Error::Dimension(format!(
            "coefficients are {}x{} but the problem needs {}x{}",
            c.n_terms(),
            c.n_sources(),
            problem.n_terms(),
            problem.n_sources()
        )));
    }
    Ok(objective_matrix(problem, c.values(), gamma))
}

pub(crate) fn objective_matrix(problem: &RegressionProblem, c: &DMatrix<f64>, gamma: f64) -> f64 {
    let residual: f64 = (0..problem.n_sources())
        .map(|i| {
            let r = problem.dictionary(i) * c.column(i) - problem.velocity(i);
            r.norm_squared()
        })
        .sum();
    residual + gamma * nonzero_rows(c).len() as f64
}

/// One recovered component: the shared support with names, and the per-source
/// coefficient values restricted to it (physical units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub support: Vec<usize>,
    pub multi_indices: Vec<Vec<u32>>,
    pub term_names: Vec<String>,
    /// coefficients[i][k] is source i's value for support entry k.
    pub coefficients: Vec<Vec<f64>>,
    /// Objective values per iteration (scaled problem).
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rank_warnings: usize,
}

impl ComponentModel {
    pub fn zero_support(&self) -> bool {
        self.support.is_empty()
    }
}

/// The full identified model: one [`ComponentModel`] per state dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub spec: DictionarySpec,
    pub n_sources: usize,
    pub components: Vec<ComponentModel>,
}

/// Combine per-component solver outputs (in component order) into an
/// [`IdentifiedModel`].
pub fn assemble_model(
    spec: &DictionarySpec,
    n_sources: usize,
    parts: &[(CoefficientMatrix, crate::solver::SolverTrace)],
) -> IdentifiedModel {
    let names = spec.term_names();
    let components = parts
        .iter()
        .map(|(c, trace)| {
            let support = c.support().to_vec();
            ComponentModel {
                multi_indices: support
                    .iter()
                    .map(|&k| spec.multi_indices[k].clone())
                    .collect(),
                term_names: support.iter().map(|&k| names[k].clone()).collect(),
                coefficients: (0..n_sources)
                    .map(|i| support.iter().map(|&k| c.values()[(k, i)]).collect())
                    .collect(),
                objective_trace: trace.objectives.clone(),
                iterations: trace.iterations,
                converged: trace.converged,
                rank_warnings: trace.rank_warnings,
                support,
            }
        })
        .collect();
    IdentifiedModel {
        spec: spec.clone(),
        n_sources,
        components,
    }
}

impl IdentifiedModel {
    /// Expand component `j` back into a full n̄×m coefficient matrix.
    pub fn expand(&self, j: usize) -> CoefficientMatrix {
        let comp = &self.components[j];
        let mut values = DMatrix::zeros(self.spec.n_terms(), self.n_sources);
        for (k, &row) in comp.support.iter().enumerate() {
            for i in 0..self.n_sources {
                values[(row, i)] = comp.coefficients[i][k];
            }
        }
        CoefficientMatrix::new(values)
    }

    /// Human-readable equation string for component `j` of source `i`,
    /// e.g. `dx2/dt = 28.02*x1 - 1.01*x2 - 1.00*x1*x3`.
    pub fn equation_string(&self, j: usize, i: usize) -> String {
        let comp = &self.components[j];
        let mut eq = format!("dx{}/dt = ", j + 1);
        if comp.support.is_empty() {
            eq.push('0');
            return eq;
        }
        for (k, name) in comp.term_names.iter().enumerate() {
            let v = comp.coefficients[i][k];
            let magnitude = if name == "1" {
                format!("{:.2}", v.abs())
            } else {
                format!("{:.2}*{name}", v.abs())
            };
            if k == 0 {
                if v < 0.0 {
                    eq.push_str(&format!("-{magnitude}"));
                } else {
                    eq.push_str(&magnitude);
                }
            } else if v < 0.0 {
                eq.push_str(&format!(" - {magnitude}"));
            } else {
                eq.push_str(&format!(" + {magnitude}"));
            }
        }
        eq
    }
}
