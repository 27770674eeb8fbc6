use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::DictionarySpec;
use crate::error::{Error, Result};
use crate::series::SourceSeries;

/// A polynomial ODE with known ground-truth coefficients, used both to
/// generate data and to score identification results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OdeSystem {
    /// ẋ = αx(1−x)
    Logistic { alpha: f64 },
    /// ẋ₁ = 10(x₂−x₁); ẋ₂ = (24−4α)x₁ + αx₂ − x₁x₃; ẋ₃ = x₁x₂ − (8/3)x₃
    Lorenz { alpha: f64 },
    /// ẋ₁ = x₂; ẋ₂ = βx₁ − δx₂ − x₁³
    Duffing { beta: f64, delta: f64 },
}

/// ẋ = αx(1−x).
pub fn logistic(alpha: f64) -> OdeSystem {
    OdeSystem::Logistic { alpha }
}

/// Lorenz family parameterized by a single bifurcation parameter α.
pub fn lorenz(alpha: f64) -> OdeSystem {
    OdeSystem::Lorenz { alpha }
}

/// Unforced Duffing oscillator as a first-order system (demo).
pub fn duffing(beta: f64, delta: f64) -> OdeSystem {
    OdeSystem::Duffing { beta, delta }
}

impl OdeSystem {
    pub fn dim(&self) -> usize {
        match self {
            OdeSystem::Logistic { .. } => 1,
            OdeSystem::Lorenz { .. } => 3,
            OdeSystem::Duffing { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OdeSystem::Logistic { .. } => "logistic",
            OdeSystem::Lorenz { .. } => "lorenz",
            OdeSystem::Duffing { .. } => "duffing",
        }
    }

    /// Named parameters, for reports.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            OdeSystem::Logistic { alpha } => vec![("alpha", alpha)],
            OdeSystem::Lorenz { alpha } => vec![("alpha", alpha)],
            OdeSystem::Duffing { beta, delta } => vec![("beta", beta), ("delta", delta)],
        }
    }

    /// Evaluate the right-hand side into `out`.
    pub fn rhs(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            OdeSystem::Logistic { alpha } => {
                out[0] = alpha * x[0] * (1.0 - x[0]);
            }
            OdeSystem::Lorenz { alpha } => {
                out[0] = 10.0 * (x[1] - x[0]);
                out[1] = (24.0 - 4.0 * alpha) * x[0] + alpha * x[1] - x[0] * x[2];
                out[2] = x[0] * x[1] - 8.0 / 3.0 * x[2];
            }
            OdeSystem::Duffing { beta, delta } => {
                out[0] = x[1];
                out[1] = beta * x[0] - delta * x[1] - x[0] * x[0] * x[0];
            }
        }
    }

    /// Ground-truth coefficient table: per component, the nonzero monomial
    /// coefficients as (exponent vector, value) pairs. Coefficients that are
    /// exactly zero for the given parameters are omitted, so the table's keys
    /// are the true support.
    pub fn true_coefficients(&self) -> Vec<Vec<(Vec<u32>, f64)>> {
        fn keep(entries: Vec<(Vec<u32>, f64)>) -> Vec<(Vec<u32>, f64)> {
            entries.into_iter().filter(|(_, v)| *v != 0.0).collect()
        }
        match *self {
            OdeSystem::Logistic { alpha } => {
                vec![keep(vec![(vec![1], alpha), (vec![2], -alpha)])]
            }
            OdeSystem::Lorenz { alpha } => vec![
                keep(vec![(vec![1, 0, 0], -10.0), (vec![0, 1, 0], 10.0)]),
                keep(vec![
                    (vec![1, 0, 0], 24.0 - 4.0 * alpha),
                    (vec![0, 1, 0], alpha),
                    (vec![1, 0, 1], -1.0),
                ]),
                keep(vec![(vec![1, 1, 0], 1.0), (vec![0, 0, 1], -8.0 / 3.0)]),
            ],
            OdeSystem::Duffing { beta, delta } => vec![
                keep(vec![(vec![0, 1], 1.0)]),
                keep(vec![
                    (vec![1, 0], beta),
                    (vec![0, 1], -delta),
                    (vec![3, 0], -1.0),
                ]),
            ],
        }
    }

    /// Evaluate the ground-truth polynomial (used to validate the coefficient
    /// table against `rhs`).
    pub fn true_polynomial(&self, x: &[f64], out: &mut [f64]) {
        for (j, comp) in self.true_coefficients().iter().enumerate() {
            out[j] = comp
                .iter()
                .map(|(mi, v)| {
                    v * mi
                        .iter()
                        .enumerate()
                        .map(|(d, &e)| x[d].powi(e as i32))
                        .product::<f64>()
                })
                .sum();
        }
    }

    /// True support as sorted dictionary column indices for each component.
    pub fn true_support(&self, spec: &DictionarySpec) -> Result<Vec<Vec<usize>>> {
        self.true_coefficients()
            .iter()
            .map(|comp| {
                let mut idx = comp
                    .iter()
                    .map(|(mi, _)| {
                        spec.index_of(mi).ok_or_else(|| {
                            Error::Config(format!(
                                "true term {mi:?} exceeds dictionary degree p = {}",
                                spec.p
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                idx.sort_unstable();
                Ok(idx)
            })
            .collect()
    }
}

/// Core fixed-step RK4 driver. The right-hand side may depend on the step
/// index, which is how the switching system selects its regime; everything
/// else (step arithmetic, time grid, blow-up checks) is shared so that a
/// step-independent rhs reproduces `integrate` bit for bit.
fn integrate_indexed(
    f: impl Fn(usize, &[f64], &mut [f64]),
    x0: &[f64],
    dt: f64,
    t_final: f64,
    source_id: usize,
) -> Result<SourceSeries> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    if t_final.is_nan() || t_final < dt {
        return Err(Error::Config(format!(
            "t_final = {t_final} is shorter than one step dt = {dt}"
        )));
    }
    let n = x0.len();
    let steps = (t_final / dt + 1e-9).floor() as usize;
    let mut states = DMatrix::zeros(steps + 1, n);
    let mut times = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    times.push(0.0);
    for (j, &v) in x.iter().enumerate() {
        states[(0, j)] = v;
    }
    for i in 0..steps {
        f(i, &x, &mut k1);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k1[j];
        }
        f(i, &tmp, &mut k2);
        for j in 0..n {
            tmp[j] = x[j] + 0.5 * dt * k2[j];
        }
        f(i, &tmp, &mut k3);
        for j in 0..n {
            tmp[j] = x[j] + dt * k3[j];
        }
        f(i, &tmp, &mut k4);
        for j in 0..n {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t = (i + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t });
        }
        times.push(t);
        for (j, &v) in x.iter().enumerate() {
            states[(i + 1, j)] = v;
        }
    }
    SourceSeries::new(dt, times, states, source_id)
}

/// Integrate an arbitrary right-hand side with classical RK4 on the uniform
/// grid t = 0, dt, 2dt, …; the last sample does not exceed `t_final`.
pub fn integrate_with(
    f: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    dt: f64,
    t_final: f64,
    source_id: usize,
) -> Result<SourceSeries> {
    integrate_indexed(|_, x, out| f(x, out), x0, dt, t_final, source_id)
}

/// Integrate an [`OdeSystem`] (see [`integrate_with`] for grid conventions).
pub fn integrate(system: &OdeSystem, x0: &[f64], dt: f64, t_final: f64) -> Result<SourceSeries> {
    if x0.len() != system.dim() {
        return Err(Error::Dimension(format!(
            "{} is {}-dimensional but x0 has {} entries",
            system.name(),
            system.dim(),
            x0.len()
        )));
    }
    integrate_with(|x, out| system.rhs(x, out), x0, dt, t_final, 1)
}

/// Integrate the Lorenz family with parameter `alpha_before` on [0, t_switch]
/// and `alpha_after` afterwards, as one uniformly sampled series.
///
/// The regime changes on the first step starting at or after t_switch (which
/// is rounded down to the sample grid): when t_switch = k·dt exactly, the
/// sample at t_switch itself is still produced by the "before" regime.
pub fn simulate_switching(
    alpha_before: f64,
    alpha_after: f64,
    x0: &[f64],
    dt: f64,
    t_switch: f64,
    t_final: f64,
) -> Result<SourceSeries> {
    if !(t_switch > 0.0 && t_switch < t_final) {
        return Err(Error::Config(format!(
            "t_switch must lie strictly inside (0, t_final); got t_switch = {t_switch}, t_final = {t_final}"
        )));
    }
    let before = lorenz(alpha_before);
    let after = lorenz(alpha_after);
    if x0.len() != before.dim() {
        return Err(Error::Dimension(format!(
            "lorenz is 3-dimensional but x0 has {} entries",
            x0.len()
        )));
    }
    let steps_before = (t_switch / dt + 1e-9).floor() as usize;
    integrate_indexed(
        |step, x, out| {
            if step < steps_before {
                before.rhs(x, out)
            } else {
                after.rhs(x, out)
            }
        },
        x0,
        dt,
        t_final,
        1,
    )
}

/// Split a series into `m` contiguous segments whose lengths differ by at most
/// one (longer segments first); segment source ids run 1..=m.
pub fn split_into_segments(series: &SourceSeries, m: usize) -> Result<Vec<SourceSeries>> {
    if m == 0 {
        return Err(Error::Config("cannot split into zero segments".into()));
    }
    let len = series.len();
    if len < 3 * m {
        return Err(Error::InvalidSeries(format!(
            "{len} samples cannot form {m} segments of at least 3 samples"
        )));
    }
    let base = len / m;
    let rem = len % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for seg in 0..m {
        let seg_len = base + usize::from(seg < rem);
        let times = series.times()[start..start + seg_len].to_vec();
        let states = series.states().rows(start, seg_len).into_owned();
        out.push(SourceSeries::new(series.dt(), times, states, seg + 1)?);
        start += seg_len;
    }
    Ok(out)
}
