//! Optimal weighted fusion of the local estimates in the linear minimum
//! variance sense: matrix weights from the joint error covariance, the
//! cheaper vector (diagonal-only) variant, and the cross-covariance
//! recursion that feeds both.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// One step of the cross-covariance recursion between sensors i and j:
/// P^{ij}_k = (I - K^i H^i)(Phi P^{ij}_{k-1} Phi^T + Q)(I - K^j H^j)^T.
pub fn cross_cov_step(
    prev: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    gain_i: &DMatrix<f64>,
    h_i: &DMatrix<f64>,
    gain_j: &DMatrix<f64>,
    h_j: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = phi.nrows();
    let predicted = phi * prev * phi.transpose() + q;
    let left = DMatrix::identity(n, n) - gain_i * h_i;
    let right = DMatrix::identity(n, n) - gain_j * h_j;
    left * predicted * right.transpose()
}

/// Tracks the full joint error covariance of all local estimators. Diagonal
/// blocks are pinned to the filters' own covariances; off-diagonal blocks
/// follow the gain recursion.
#[derive(Debug, Clone)]
pub struct CrossCovTracker {
    pub sensor_count: usize,
    pub state_dim: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl CrossCovTracker {
    /// All blocks start at the shared prior covariance.
    pub fn new(sensor_count: usize, init_cov: &DMatrix<f64>) -> Self {
        Self {
            sensor_count,
            state_dim: init_cov.nrows(),
            blocks: vec![init_cov.clone(); sensor_count * sensor_count],
        }
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i * self.sensor_count + j]
    }

    /// Advance one instant given each sensor's full information-update
    /// factor F^i = I - P^i Omega^i and current filter covariance:
    /// P^{ij}_k = F^i (Phi P^{ij}_{k-1} Phi^T + Q) (F^j)^T. Using the full
    /// factor rather than the own-measurement gain keeps every off-diagonal
    /// block contracted in the directions the filters gained information,
    /// which is what keeps the joint covariance bounded under consensus.
    pub fn step(
        &mut self,
        phi: &DMatrix<f64>,
        q: &DMatrix<f64>,
        factors: &[DMatrix<f64>],
        local_covs: &[&DMatrix<f64>],
    ) -> Result<()> {
        let n = self.sensor_count;
        if factors.len() != n || local_covs.len() != n {
            return Err(Error::Dimension {
                context: "cross-covariance step inputs",
                expected: n,
                got: factors.len().min(local_covs.len()),
            });
        }
        let mut next = self.blocks.clone();
        for i in 0..n {
            for j in i..n {
                let block = if i == j {
                    local_covs[i].clone()
                } else {
                    let predicted = phi * self.block(i, j) * phi.transpose() + q;
                    &factors[i] * predicted * factors[j].transpose()
                };
                next[j * n + i] = block.transpose();
                next[i * n + j] = block;
            }
        }
        self.blocks = next;
        Ok(())
    }

    /// The stacked joint covariance Xi (sensor_count * state_dim square).
    pub fn joint(&self) -> DMatrix<f64> {
        let (n, d) = (self.sensor_count, self.state_dim);
        let mut xi = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            for j in 0..n {
                xi.view_mut((i * d, j * d), (d, d)).copy_from(self.block(i, j));
            }
        }
        linalg::symmetrize(&xi)
    }
}

/// Fusion weights plus the covariance the fused estimate attains.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pub gammas: Vec<DMatrix<f64>>,
    pub fused_cov: DMatrix<f64>,
}

impl FusionWeights {
    /// Sum of the per-sensor weights; the unbiasedness constraint makes this
    /// the identity.
    pub fn weight_sum(&self) -> DMatrix<f64> {
        let d = self.fused_cov.nrows();
        self.gammas
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, g| acc + g)
    }
}

fn stacked_identity(n: usize, d: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n * d, d);
    for i in 0..n {
        e.view_mut((i * d, 0), (d, d)).copy_from(&DMatrix::identity(d, d));
    }
    e
}

/// Optimal matrix weights: Gamma = Xi^{-1} e (e^T Xi^{-1} e)^{-1}, with
/// fused covariance (e^T Xi^{-1} e)^{-1}. The joint covariance is inverted in
/// the pseudo-inverse sense because strongly correlated local estimates drive
/// it towards rank deficiency while the fused solution stays well defined.
pub fn matrix_weights(xi: &DMatrix<f64>, state_dim: usize) -> Result<FusionWeights> {
    let n = xi.nrows() / state_dim;
    if n * state_dim != xi.nrows() || !xi.is_square() {
        return Err(Error::Dimension {
            context: "joint covariance shape",
            expected: n * state_dim,
            got: xi.nrows(),
        });
    }
    let xi_inv = linalg::spd_pseudo_inverse(xi, "joint covariance")?;
    let e = stacked_identity(n, state_dim);
    let denom = linalg::symmetrize(&(e.transpose() * &xi_inv * &e));
    let fused_cov = linalg::spd_inverse(&denom, "fused information")?;
    let full = xi_inv * &e * &fused_cov;
    let gammas = (0..n)
        .map(|i| full.view((i * state_dim, 0), (state_dim, state_dim)).into())
        .collect();
    Ok(FusionWeights { gammas, fused_cov })
}

/// Vector (diagonal-only) weights: the same formula applied to the
/// block-diagonal restriction of Xi, with the attained covariance still
/// evaluated against the full Xi.
pub fn vector_weights(xi: &DMatrix<f64>, state_dim: usize) -> Result<FusionWeights> {
    let n = xi.nrows() / state_dim;
    if n * state_dim != xi.nrows() || !xi.is_square() {
        return Err(Error::Dimension {
            context: "joint covariance shape",
            expected: n * state_dim,
            got: xi.nrows(),
        });
    }
    let mut xi_tilde = DMatrix::zeros(xi.nrows(), xi.ncols());
    for i in 0..n {
        let at = (i * state_dim, i * state_dim);
        let sz = (state_dim, state_dim);
        xi_tilde.view_mut(at, sz).copy_from(&xi.view(at, sz).into_owned());
    }
    let tilde_inv = linalg::spd_inverse(&xi_tilde, "block-diagonal joint covariance")?;
    let e = stacked_identity(n, state_dim);
    let denom = linalg::symmetrize(&(e.transpose() * &tilde_inv * &e));
    let denom_inv = linalg::spd_inverse(&denom, "fused information")?;
    let full = &tilde_inv * &e * &denom_inv;
    // The suboptimal weights, evaluated honestly: P = Gamma^T Xi Gamma.
    let fused_cov = linalg::symmetrize(&(full.transpose() * xi * &full));
    let gammas = (0..n)
        .map(|i| full.view((i * state_dim, 0), (state_dim, state_dim)).into())
        .collect();
    Ok(FusionWeights { gammas, fused_cov })
}

/// Apply fusion weights: x^f = sum_i Gamma_i x^i.
pub fn fuse(states: &[DVector<f64>], weights: &FusionWeights) -> Result<DVector<f64>> {
    if states.len() != weights.gammas.len() {
        return Err(Error::Dimension {
            context: "fuse inputs",
            expected: weights.gammas.len(),
            got: states.len(),
        });
    }
    let d = weights.fused_cov.nrows();
    let mut out = DVector::zeros(d);
    for (g, x) in weights.gammas.iter().zip(states) {
        out += g * x;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn single_sensor_weight_is_identity() {
        let xi = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let w = matrix_weights(&xi, 2).unwrap();
        assert_eq!(w.gammas.len(), 1);
        assert_relative_eq!(w.gammas[0], DMatrix::identity(2, 2), epsilon = 1e-10);
        assert_relative_eq!(w.fused_cov, xi, epsilon = 1e-10);
    }

    #[test]
    fn two_uncorrelated_scalars_inverse_variance() {
        // Variances 1 and 3, no cross term: weights 3/4 and 1/4, fused 3/4.
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let w = matrix_weights(&xi, 1).unwrap();
        assert_relative_eq!(w.gammas[0][(0, 0)], 0.75, epsilon = 1e-12);
        assert_relative_eq!(w.gammas[1][(0, 0)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(w.fused_cov[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn identical_fully_correlated_estimates() {
        // Xi = [[1,1],[1,1]] is singular; nudge the correlation slightly and
        // the fused variance approaches 1 (no information to gain).
        let eps = 1e-6;
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 - eps, 1.0 - eps, 1.0]);
        let w = matrix_weights(&xi, 1).unwrap();
        assert_relative_eq!(w.fused_cov[(0, 0)], 1.0 - eps / 2.0, epsilon = 1e-9);
        assert_relative_eq!(w.weight_sum()[(0, 0)], 1.0, epsilon = 1e-10);
    }

    fn random_joint(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream_rng(seed, &[31]);
        let m = n * d;
        let a = DMatrix::from_fn(m, m, |_, _| rng.gen::<f64>() - 0.5);
        linalg::symmetrize(&(&a * a.transpose())) + DMatrix::identity(m, m) * 0.4
    }

    #[test]
    fn weights_sum_to_identity_and_fused_never_worse() {
        for seed in 0..30u64 {
            let (n, d) = (4, 2);
            let xi = random_joint(n, d, seed);
            let w = matrix_weights(&xi, d).unwrap();
            assert_relative_eq!(w.weight_sum(), DMatrix::identity(d, d), epsilon = 1e-9);
            // P^{ii} - P^f is PSD for every sensor.
            for i in 0..n {
                let pii: DMatrix<f64> = xi.view((i * d, i * d), (d, d)).into();
                let diff = pii - &w.fused_cov;
                assert!(linalg::min_eigenvalue(&diff) >= -1e-9, "seed {seed} sensor {i}");
            }
        }
    }

    #[test]
    fn matrix_weights_are_optimal_among_unbiased_combinations() {
        // Perturb the optimal weights along a sum-zero direction; the attained
        // trace Gamma^T Xi Gamma can only grow.
        let (n, d) = (3, 2);
        let xi = random_joint(n, d, 7);
        let w = matrix_weights(&xi, d).unwrap();
        let base = w.fused_cov.trace();
        let mut rng = crate::rng::stream_rng(3, &[99]);
        for _ in 0..50 {
            let delta = DMatrix::from_fn(d, d, |_, _| 0.05 * (rng.gen::<f64>() - 0.5));
            // Add delta to one sensor, subtract from another: still unbiased.
            let mut gammas = w.gammas.clone();
            gammas[0] += &delta;
            gammas[1] -= &delta;
            let mut full = DMatrix::zeros(n * d, d);
            for (i, g) in gammas.iter().enumerate() {
                full.view_mut((i * d, 0), (d, d)).copy_from(g);
            }
            let attained = (full.transpose() * &xi * &full).trace();
            assert!(attained >= base - 1e-10);
        }
    }

    #[test]
    fn vector_weights_never_beat_matrix_weights() {
        for seed in 0..30u64 {
            let (n, d) = (4, 3);
            let xi = random_joint(n, d, seed + 100);
            let full = matrix_weights(&xi, d).unwrap();
            let diag = vector_weights(&xi, d).unwrap();
            assert_relative_eq!(diag.weight_sum(), DMatrix::identity(d, d), epsilon = 1e-9);
            assert!(
                full.fused_cov.trace() <= diag.fused_cov.trace() + 1e-9,
                "seed {seed}: {} vs {}",
                full.fused_cov.trace(),
                diag.fused_cov.trace()
            );
        }
    }

    #[test]
    fn vector_weights_match_matrix_on_block_diagonal_joint() {
        // With no cross-correlation the two schemes coincide.
        let d = 2;
        let mut xi = DMatrix::zeros(2 * d, 2 * d);
        xi.view_mut((0, 0), (d, d))
            .copy_from(&DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]));
        xi.view_mut((d, d), (d, d))
            .copy_from(&DMatrix::from_row_slice(2, 2, &[3.0, -0.1, -0.1, 0.5]));
        let full = matrix_weights(&xi, d).unwrap();
        let diag = vector_weights(&xi, d).unwrap();
        assert_relative_eq!(full.fused_cov, diag.fused_cov, epsilon = 1e-9);
        for (a, b) in full.gammas.iter().zip(&diag.gammas) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn fuse_applies_weights() {
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let w = matrix_weights(&xi, 1).unwrap();
        let out = fuse(
            &[DVector::from_element(1, 4.0), DVector::from_element(1, 8.0)],
            &w,
        )
        .unwrap();
        assert_relative_eq!(out[0], 0.75 * 4.0 + 0.25 * 8.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_cov_step_scalar_hand_computed() {
        // prev = 1, phi = 1, q = 1 -> predicted 2; K_i H_i = 0.5, K_j H_j = 0.25
        // -> 2 * 0.5 * 0.75 = 0.75.
        let one = DMatrix::from_element(1, 1, 1.0);
        let out = cross_cov_step(
            &one,
            &one,
            &one,
            &DMatrix::from_element(1, 1, 0.5),
            &one,
            &DMatrix::from_element(1, 1, 0.25),
            &one,
        );
        assert_relative_eq!(out[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn tracker_keeps_joint_symmetric_and_blocks_consistent() {
        let d = 2;
        let p0 = DMatrix::identity(d, d);
        let mut tracker = CrossCovTracker::new(3, &p0);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let q = DMatrix::identity(2, 2) * 0.1;
        let h: Vec<DMatrix<f64>> = vec![
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        ];
        let factors: Vec<DMatrix<f64>> = h
            .iter()
            .map(|hi| DMatrix::identity(d, d) - hi.transpose() * 0.3 * hi)
            .collect();
        let covs = [
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.0, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.9]),
        ];
        for _ in 0..5 {
            let local: Vec<&DMatrix<f64>> = covs.iter().collect();
            tracker.step(&phi, &q, &factors, &local).unwrap();
        }
        let xi = tracker.joint();
        assert_relative_eq!(xi.clone(), xi.transpose(), epsilon = 1e-12);
        for (i, cov) in covs.iter().enumerate() {
            assert_relative_eq!(tracker.block(i, i), cov, epsilon = 1e-12);
            for j in 0..3 {
                assert_relative_eq!(
                    tracker.block(i, j).clone(),
                    tracker.block(j, i).transpose(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn identical_sensors_give_equal_weights() {
        // Joint covariance symmetric under swapping the two sensors: the
        // optimal weights must be equal (each 1/2 of the identity's share).
        let d = 2;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]);
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let mut xi = DMatrix::zeros(2 * d, 2 * d);
        xi.view_mut((0, 0), (d, d)).copy_from(&a);
        xi.view_mut((d, d), (d, d)).copy_from(&a);
        xi.view_mut((0, d), (d, d)).copy_from(&c);
        xi.view_mut((d, 0), (d, d)).copy_from(&c.transpose());
        let xi = linalg::symmetrize(&xi);
        let w = matrix_weights(&xi, d).unwrap();
        assert_relative_eq!(w.gammas[0], w.gammas[1], epsilon = 1e-9);
    }
}
