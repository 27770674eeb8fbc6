//! Well-posedness checks for identification data: full-rank and
//! sparse-coercivity estimates of dictionary blocks, and a warning for data
//! lying near a low-degree algebraic hypersurface (the failure mode of
//! limit-cycle trajectories).

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dictionary::DictionarySpec;
use crate::error::{Error, Result};
use crate::model::RegressionProblem;

/// Cap on enumerated column subsets before [`sparse_coercivity`] switches to
/// uniform sampling.
pub const DEFAULT_MAX_SUBSETS: usize = 100_000;

/// Default flagging tolerance for [`degeneracy_warning`] ratios. The scan
/// normalizes columns, so healthy trajectory data sits well above this while
/// near-hypersurface data falls orders of magnitude below.
pub const DEFAULT_DEGENERACY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// σ_min/σ_max (0 when the matrix is all zero).
    pub ratio: f64,
    /// True when there are at least as many rows as columns and the ratio
    /// clears 1e-10.
    pub full_rank: bool,
}

/// Smallest/largest singular values of a dictionary block and the scale-free
/// full-rank verdict.
pub fn full_rank_check(d: &DMatrix<f64>) -> RankReport {
    debug_assert!(d.ncols() >= 1, "rank check needs at least one column");
    let sv = d.clone().svd(false, false).singular_values;
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    let ratio = if sigma_max > 0.0 {
        sigma_min / sigma_max
    } else {
        0.0
    };
    RankReport {
        sigma_min,
        sigma_max,
        ratio,
        full_rank: d.nrows() >= d.ncols() && ratio > 1e-10,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityEstimate {
    /// min σ_min(D_S) over the visited size-s column subsets.
    pub delta: f64,
    /// False when the subset count exceeded the cap and the minimum is only
    /// a sampled upper estimate of the true coercivity constant.
    pub exhaustive: bool,
    pub subsets_checked: usize,
}

/// Visit every k-subset of {0..n-1} in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn subset_sigma_min_sq(gram: &DMatrix<f64>, subset: &[usize]) -> f64 {
    let sub = gram
        .select_rows(subset.iter())
        .select_columns(subset.iter());
    sub.symmetric_eigenvalues().min().max(0.0)
}

/// C(n, k), exact up to `cap` and clamped to cap + 1 beyond it (partial
/// binomials are nondecreasing for k ≤ n/2, so the early exit is sound).
fn subset_count_capped(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap {
            return cap + 1;
        }
    }
    acc
}

/// Minimum σ_min over size-`s` column subsets of `d`: exhaustive while the
/// subset count stays within `max_subsets`, otherwise estimated from
/// `max_subsets` uniformly random subsets (drawn from a fixed internal seed
/// so repeated runs agree) and marked non-exhaustive.
pub fn sparse_coercivity(
    d: &DMatrix<f64>,
    s: usize,
    max_subsets: usize,
) -> Result<CoercivityEstimate> {
    if s == 0 || s > d.ncols() {
        return Err(Error::Config(format!(
            "subset size s = {s} must be between 1 and the {} dictionary columns",
            d.ncols()
        )));
    }
    if max_subsets == 0 {
        return Err(Error::Config("max_subsets must be at least 1".into()));
    }
    let gram = d.transpose() * d;
    let total = subset_count_capped(d.ncols(), s, max_subsets as u128);
    let mut min_sq = f64::INFINITY;
    let mut checked = 0usize;
    if total <= max_subsets as u128 {
        for_each_combination(d.ncols(), s, |subset| {
            min_sq = min_sq.min(subset_sigma_min_sq(&gram, subset));
            checked += 1;
        });
        Ok(CoercivityEstimate {
            delta: min_sq.sqrt(),
            exhaustive: true,
            subsets_checked: checked,
        })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0e2);
        for _ in 0..max_subsets {
            let subset = rand::seq::index::sample(&mut rng, d.ncols(), s).into_vec();
            min_sq = min_sq.min(subset_sigma_min_sq(&gram, &subset));
            checked += 1;
        }
        Ok(CoercivityEstimate {
            delta: min_sq.sqrt(),
            exhaustive: false,
            subsets_checked: checked,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeFlag {
    pub degree: u32,
    /// σ_min/σ_max of the column-normalized sub-dictionary up to this degree.
    pub ratio: f64,
}

/// Conditioning summary of one source's dictionary block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceDiagnostics {
    /// 1-based position of the source in the input list.
    pub source: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub ratio: f64,
    /// Degrees q whose normalized sub-dictionary ratio fell below the
    /// tolerance, i.e. the data lie near an algebraic hypersurface of
    /// degree q.
    pub flags: Vec<DegreeFlag>,
}

fn normalized_ratio(sub: &DMatrix<f64>) -> f64 {
    let mut normalized = sub.clone();
    for mut col in normalized.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = normalized.svd(false, false).singular_values;
    let max = sv.max();
    if max > 0.0 {
        sv.min() / max
    } else {
        0.0
    }
}

/// Scan each source's dictionary for near-degeneracy: for every degree
/// q ≤ p, the sub-dictionary of all terms up to degree q is column-normalized
/// and its σ_min/σ_max compared against `tolerance`. Normalizing removes the
/// raw dynamic range of monomial magnitudes, so a small ratio really means an
/// (approximate) algebraic relation among the data, not just mismatched
/// units.
pub fn degeneracy_warning(
    dictionaries: &[DMatrix<f64>],
    spec: &DictionarySpec,
    tolerance: f64,
) -> Result<Vec<SourceDiagnostics>> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::Config(format!(
            "tolerance must be a finite positive number, got {tolerance}"
        )));
    }
    let degrees = spec.degrees();
    let mut out = Vec::with_capacity(dictionaries.len());
    for (i, d) in dictionaries.iter().enumerate() {
        if d.ncols() != spec.n_terms() {
            return Err(Error::Dimension(format!(
                "source {}: dictionary has {} columns, expected {}",
                i + 1,
                d.ncols(),
                spec.n_terms()
            )));
        }
        let report = full_rank_check(d);
        let mut flags = Vec::new();
        for q in 1..=spec.p {
            // Terms are ordered by ascending total degree, so the degree-q
            // sub-dictionary is a column prefix.
            let cols = degrees.iter().take_while(|&&dg| dg <= q).count();
            let ratio = normalized_ratio(&d.columns(0, cols).into_owned());
            if ratio < tolerance {
                flags.push(DegreeFlag { degree: q, ratio });
            }
        }
        out.push(SourceDiagnostics {
            source: i + 1,
            sigma_min: report.sigma_min,
            sigma_max: report.sigma_max,
            ratio: report.ratio,
            flags,
        });
    }
    Ok(out)
}

/// [`degeneracy_warning`] on an assembled problem's blocks. The normalized
/// per-degree ratios are unaffected by the joint rescaling; the reported
/// singular values are mapped back to physical scale.
pub fn degeneracy_warning_problem(
    problem: &RegressionProblem,
    tolerance: f64,
) -> Result<Vec<SourceDiagnostics>> {
    let dicts: Vec<DMatrix<f64>> = (0..problem.n_sources())
        .map(|i| problem.dictionary(i) / problem.scale_factor())
        .collect();
    degeneracy_warning(&dicts, problem.spec(), tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, enumerate_monomials};
    use crate::differentiate::central_difference;
    use crate::systems::{integrate, logistic};
    use rand::prelude::*;

    fn vandermonde(points: &[f64], p: u32) -> DMatrix<f64> {
        let spec = enumerate_monomials(1, p);
        let states = DMatrix::from_column_slice(points.len(), 1, points);
        build_dictionary(&states, &spec).unwrap()
    }

    #[test]
    fn identity_is_full_rank_with_unit_sigma() {
        let r = full_rank_check(&DMatrix::identity(4, 4));
        assert_eq!(r.sigma_min, 1.0);
        assert_eq!(r.sigma_max, 1.0);
        assert!(r.full_rank);
    }

    #[test]
    fn vandermonde_distinct_points_full_rank() {
        let d = vandermonde(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], 6);
        assert!(full_rank_check(&d).full_rank);
    }

    #[test]
    fn vandermonde_repeated_point_fails_rank() {
        let d = vandermonde(&[0.1, 0.2, 0.2, 0.4, 0.5, 0.6, 0.7], 6);
        let r = full_rank_check(&d);
        assert!(!r.full_rank);
        assert!(r.ratio <= 1e-10, "ratio {}", r.ratio);
    }

    #[test]
    fn wide_matrices_cannot_be_full_rank() {
        let d = DMatrix::<f64>::identity(2, 3);
        assert!(!full_rank_check(&d).full_rank);
    }

    #[test]
    fn rank_check_agrees_with_exact_integer_rank() {
        // Fraction-free (Bareiss) elimination over i128 as the exact oracle.
        fn exact_rank(mut a: Vec<Vec<i128>>) -> usize {
            let rows = a.len();
            let cols = a[0].len();
            let mut rank = 0;
            let mut prev = 1i128;
            let mut row = 0;
            for col in 0..cols {
                let Some(p) = (row..rows).find(|&r| a[r][col] != 0) else {
                    continue;
                };
                a.swap(row, p);
                for r in row + 1..rows {
                    for c2 in col + 1..cols {
                        a[r][c2] = (a[r][c2] * a[row][col] - a[r][col] * a[row][c2]) / prev;
                    }
                    a[r][col] = 0;
                }
                prev = a[row][col];
                rank += 1;
                row += 1;
                if row == rows {
                    break;
                }
            }
            rank
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..40 {
            let rows = rng.gen_range(3..=10);
            let cols = rng.gen_range(3..=rows); // square or tall
            let mut a: Vec<Vec<i128>> = (0..rows)
                .map(|_| (0..cols).map(|_| rng.gen_range(-3..=3)).collect())
                .collect();
            if trial % 2 == 0 && cols >= 2 {
                // Force a rank deficiency by duplicating a column.
                for row in a.iter_mut() {
                    row[cols - 1] = row[0];
                }
            }
            let d = DMatrix::from_fn(rows, cols, |r, c| a[r][c] as f64);
            let oracle_full = exact_rank(a) == cols;
            let report = full_rank_check(&d);
            assert_eq!(
                report.full_rank, oracle_full,
                "trial {trial}: {rows}x{cols} ratio {}",
                report.ratio
            );
        }
    }

    #[test]
    fn coercivity_of_orthonormal_columns_is_one() {
        for s in 1..=4 {
            let est = sparse_coercivity(&DMatrix::identity(6, 6), s, DEFAULT_MAX_SUBSETS).unwrap();
            assert!(est.exhaustive);
            assert!(
                (est.delta - 1.0).abs() < 1e-12,
                "s = {s}: delta {}",
                est.delta
            );
        }
    }

    #[test]
    fn coercivity_positive_on_distinct_positive_points() {
        // s distinct positive points, all size-s column subsets of the
        // univariate dictionary: generalized Vandermonde, hence invertible.
        let d = vandermonde(&[0.5, 1.0, 1.5], 4);
        let est = sparse_coercivity(&d, 3, DEFAULT_MAX_SUBSETS).unwrap();
        assert!(est.exhaustive);
        assert_eq!(est.subsets_checked, 10); // C(5,3)
        assert!(est.delta > 0.0);
    }

    #[test]
    fn coercivity_zero_with_zero_column() {
        let mut d = DMatrix::identity(4, 5);
        d.column_mut(4).fill(0.0);
        for s in 1..=2 {
            let est = sparse_coercivity(&d, s, DEFAULT_MAX_SUBSETS).unwrap();
            assert!(est.delta.abs() < 1e-12, "s = {s}: delta {}", est.delta);
        }
    }

    #[test]
    fn coercivity_monotone_in_subset_size() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let d = DMatrix::from_fn(10, 6, |_, _| rng.gen_range(-1.0..1.0));
        let mut prev = f64::INFINITY;
        for s in 1..=4 {
            let est = sparse_coercivity(&d, s, DEFAULT_MAX_SUBSETS).unwrap();
            assert!(est.exhaustive);
            assert!(est.delta <= prev + 1e-12, "delta rose at s = {s}");
            prev = est.delta;
        }
    }

    #[test]
    fn coercivity_sampling_kicks_in_past_the_cap() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let d = DMatrix::from_fn(12, 30, |_, _| rng.gen_range(-1.0..1.0));
        let sampled = sparse_coercivity(&d, 3, 100).unwrap();
        assert!(!sampled.exhaustive);
        assert_eq!(sampled.subsets_checked, 100);
        let exact = sparse_coercivity(&d, 3, 100_000).unwrap();
        assert!(exact.exhaustive);
        assert_eq!(exact.subsets_checked, 4060); // C(30,3)
        assert!(sampled.delta >= exact.delta - 1e-12);
        // Fixed internal seed: repeated sampled runs agree bit for bit.
        let again = sparse_coercivity(&d, 3, 100).unwrap();
        assert_eq!(again.delta.to_bits(), sampled.delta.to_bits());
    }

    #[test]
    fn coercivity_rejects_bad_subset_sizes() {
        let d = DMatrix::identity(3, 3);
        assert!(sparse_coercivity(&d, 0, 10).is_err());
        assert!(sparse_coercivity(&d, 4, 10).is_err());
    }

    #[test]
    fn circle_data_flag_an_exact_degree_two_relation() {
        // Points exactly on the unit circle satisfy x₁² + x₂² − 1 = 0.
        let states = DMatrix::from_fn(100, 2, |k, j| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / 100.0;
            if j == 0 {
                theta.cos()
            } else {
                theta.sin()
            }
        });
        let spec = enumerate_monomials(2, 3);
        let d = build_dictionary(&states, &spec).unwrap();
        let reports = degeneracy_warning(&[d], &spec, DEFAULT_DEGENERACY_TOLERANCE).unwrap();
        let flags = &reports[0].flags;
        let deg2 = flags.iter().find(|f| f.degree == 2).expect("degree-2 flag");
        assert!(
            deg2.ratio <= 1e-12,
            "exact relation, got ratio {}",
            deg2.ratio
        );
        assert!(
            flags.iter().all(|f| f.degree != 1),
            "no linear relation on a circle"
        );
    }

    #[test]
    fn logistic_growth_data_are_clear_of_flags() {
        let series = integrate(&logistic(0.23), &[0.01], 0.005, 50.0).unwrap();
        let (states, _) = central_difference(&series);
        let spec = enumerate_monomials(1, 3);
        let d = build_dictionary(&states, &spec).unwrap();
        let reports = degeneracy_warning(&[d], &spec, DEFAULT_DEGENERACY_TOLERANCE).unwrap();
        assert!(
            reports[0].flags.is_empty(),
            "unexpected flags: {:?}",
            reports[0].flags
        );
        assert!(reports[0].ratio > 0.0);
    }

    #[test]
    fn problem_wrapper_reports_physical_sigmas() {
        let spec = enumerate_monomials(1, 2);
        let states = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let d = build_dictionary(&states, &spec).unwrap();
        let vel = DMatrix::from_element(5, 1, 1.0);
        let problems = RegressionProblem::per_component(
            vec![d.clone()],
            std::slice::from_ref(&vel),
            spec.clone(),
        )
        .unwrap();
        let from_problem = degeneracy_warning_problem(&problems[0], 1e-3).unwrap();
        let from_raw = degeneracy_warning(&[d], &spec, 1e-3).unwrap();
        assert!(
            (from_problem[0].sigma_max - from_raw[0].sigma_max).abs()
                < 1e-9 * from_raw[0].sigma_max
        );
        assert!((from_problem[0].ratio - from_raw[0].ratio).abs() < 1e-12);
    }

    #[test]
    fn combination_enumeration_is_complete_and_ordered() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 10);
        assert_eq!(seen.first().unwrap(), &vec![0, 1, 2]);
        assert_eq!(seen.last().unwrap(), &vec![2, 3, 4]);
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, seen, "lexicographic and duplicate-free");
    }
}
