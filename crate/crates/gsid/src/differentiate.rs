use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::series::SourceSeries;

/// Approximate velocities by central differences, dropping both endpoints:
/// v_k = (x_{k+1} − x_{k−1}) / (2 dt) for interior samples. Returns the
/// interior states aligned row-for-row with the velocities.
pub fn central_difference(series: &SourceSeries) -> (DMatrix<f64>, DMatrix<f64>) {
    // SourceSeries guarantees at least 3 samples, so the interior is nonempty.
    let states = series.states();
    let (rows, n) = (states.nrows(), states.ncols());
    let interior = states.rows(1, rows - 2).into_owned();
    let half = 0.5 / series.dt();
    let velocities = DMatrix::from_fn(rows - 2, n, |k, j| {
        (states[(k + 2, j)] - states[(k, j)]) * half
    });
    (interior, velocities)
}

/// Add zero-mean Gaussian noise to each velocity column, with standard
/// deviation `sigma_noise` × RMS of that (clean) column. Entries are drawn
/// column-by-column from the provided generator.
pub fn add_noise_with<R: Rng>(
    velocities: &DMatrix<f64>,
    sigma_noise: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    if sigma_noise == 0.0 {
        return velocities.clone();
    }
    let rows = velocities.nrows();
    let mut out = velocities.clone();
    for j in 0..velocities.ncols() {
        let rms = (velocities.column(j).norm_squared() / rows as f64).sqrt();
        let std = sigma_noise * rms;
        for k in 0..rows {
            let z: f64 = rng.sample(StandardNormal);
            out[(k, j)] += std * z;
        }
    }
    out
}

/// Seeded convenience wrapper around [`add_noise_with`]; deterministic for a
/// given seed.
pub fn add_noise(velocities: &DMatrix<f64>, sigma_noise: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with(velocities, sigma_noise, &mut rng)
}
