use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layout of a polynomial dictionary: which monomials appear and in what order.
///
/// Columns are ordered by ascending total degree; within a degree, exponent
/// vectors are ordered lexicographically with the first state variable most
/// significant (so for n = 3, degree 1 runs x1, x2, x3 and the final degree-p
/// column is x_n^p). Index 0 is always the constant term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub n: usize,
    pub p: u32,
    pub multi_indices: Vec<Vec<u32>>,
}

impl DictionarySpec {
    /// Number of dictionary columns (monomials up to degree `p` in `n` variables).
    pub fn n_terms(&self) -> usize {
        self.multi_indices.len()
    }

    /// Total degree of each column.
    pub fn degrees(&self) -> Vec<u32> {
        self.multi_indices
            .iter()
            .map(|mi| mi.iter().sum())
            .collect()
    }

    /// Column index of an exponent vector, if present.
    pub fn index_of(&self, multi_index: &[u32]) -> Option<usize> {
        self.multi_indices.iter().position(|mi| mi == multi_index)
    }

    /// Human-readable name of each column.
    pub fn term_names(&self) -> Vec<String> {
        self.multi_indices.iter().map(|mi| term_name(mi)).collect()
    }
}

/// All monomials in `n` variables up to total degree `p`, in canonical order.
pub fn enumerate_monomials(n: usize, p: u32) -> DictionarySpec {
    assert!(n >= 1, "state dimension must be at least 1");
    let mut multi_indices = Vec::with_capacity(binomial(n + p as usize, n));
    let mut prefix = Vec::with_capacity(n);
    for degree in 0..=p {
        push_degree(&mut prefix, n, degree, &mut multi_indices);
    }
    DictionarySpec {
        n,
        p,
        multi_indices,
    }
}

fn push_degree(prefix: &mut Vec<u32>, dims_left: usize, degree_left: u32, out: &mut Vec<Vec<u32>>) {
    if dims_left == 1 {
        prefix.push(degree_left);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=degree_left).rev() {
        prefix.push(e);
        push_degree(prefix, dims_left - 1, degree_left - e, out);
        prefix.pop();
    }
}

/// Binomial coefficient, exact for the small arguments used here.
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Evaluate every monomial of `spec` on each row of `states` (one sample per row).
pub fn build_dictionary(states: &DMatrix<f64>, spec: &DictionarySpec) -> Result<DMatrix<f64>> {
    if states.ncols() != spec.n {
        return Err(Error::Dimension(format!(
            "states have {} columns but the dictionary expects n = {}",
            states.ncols(),
            spec.n
        )));
    }
    let rows = states.nrows();
    let mut d = DMatrix::zeros(rows, spec.n_terms());
    for k in 0..rows {
        for (j, mi) in spec.multi_indices.iter().enumerate() {
            let mut v = 1.0;
            for (dim, &e) in mi.iter().enumerate() {
                v *= states[(k, dim)].powi(e as i32);
            }
            d[(k, j)] = v;
        }
    }
    Ok(d)
}

/// Canonical display name of a monomial, e.g. `(2,0,1)` -> `"x1^2*x3"`.
pub fn term_name(multi_index: &[u32]) -> String {
    let mut parts = Vec::new();
    for (dim, &e) in multi_index.iter().enumerate() {
        match e {
            0 => {}
            1 => parts.push(format!("x{}", dim + 1)),
            _ => parts.push(format!("x{}^{}", dim + 1, e)),
        }
    }
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Largest singular value, computed by power iteration on the Gram operator
/// u -> Dᵀ(Du) to relative tolerance 1e-10.
pub fn spectral_norm(d: &DMatrix<f64>) -> f64 {
    let ncols = d.ncols();
    if ncols == 0 || d.nrows() == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_element(ncols, 1.0 / (ncols as f64).sqrt());
    // A start vector orthogonal to the range collapses immediately; fall back
    // to canonical basis vectors, and to 0 if the matrix itself is zero.
    if (d * &v).norm() == 0.0 {
        match (0..ncols)
            .map(|j| {
                let mut e = nalgebra::DVector::zeros(ncols);
                e[j] = 1.0;
                e
            })
            .find(|e| (d * e).norm() > 0.0)
        {
            Some(e) => v = e,
            None => return 0.0,
        }
    }
    let mut lambda = 0.0_f64;
    for _ in 0..100_000 {
        let w = d.transpose() * (d * &v);
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (rayleigh - lambda).abs() <= 1e-10 * rayleigh.abs() {
            return rayleigh.sqrt();
        }
        lambda = rayleigh;
    }
    lambda.sqrt()
}

/// Scale all dictionary blocks by a single factor so the largest spectral norm
/// becomes exactly 1; returns the scaled blocks and the factor.
pub fn rescale(dictionaries: &[DMatrix<f64>]) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let max_norm = dictionaries
        .iter()
        .map(spectral_norm)
        .fold(0.0_f64, f64::max);
    if max_norm == 0.0 {
        return Err(Error::ZeroDictionary);
    }
    let scale = 1.0 / max_norm;
    Ok((dictionaries.iter().map(|d| d * scale).collect(), scale))
}
