//! Client-side record-level DP release: clip every per-example gradient,
//! sum, add Gaussian noise to the sum, then normalize by the dataset size.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, norm, scale};
use crate::rng::NoiseStream;
use crate::task::{ClientDataset, Objective};

/// Scales `g` onto the `c_g` ball when it lies outside it. Returns whether
/// clipping happened. Vectors already inside the ball are left untouched.
///
/// After scaling, the computed norm is guaranteed `<= c_g`; the scale is
/// nudged down by an ulp when rounding would leave it just above.
pub fn clip_in_place(g: &mut [f64], c_g: f64) -> bool {
    debug_assert!(c_g > 0.0);
    let n = norm(g);
    if n <= c_g {
        return false;
    }
    scale(c_g / n, g);
    while norm(g) > c_g {
        scale(1.0f64.next_down(), g);
    }
    true
}

/// `g · min(1, c_g/||g||)`.
pub fn clip_gradient(g: &[f64], c_g: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, c_g);
    out
}

/// Mechanism parameters shared by every client in a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseParams {
    pub clip_cg: f64,
    pub sigma_g: f64,
    /// Number of clients; enters the noise variance `(C_g σ_g)²/n`.
    pub n: usize,
}

impl ReleaseParams {
    /// Standard deviation of each coordinate of the noise added to the
    /// clipped sum.
    pub fn sum_noise_std(&self) -> f64 {
        self.clip_cg * self.sigma_g / (self.n as f64).sqrt()
    }
}

/// A client's privatized, normalized update for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRelease {
    pub vector: Vec<f64>,
    pub client_id: usize,
    pub round: usize,
}

/// `S = Σ clip(∇l(θ; x))` over the whole local dataset.
pub fn clipped_sum<O: Objective>(
    objective: &O,
    dataset: &ClientDataset<O::Sample>,
    theta: &[f64],
    c_g: f64,
) -> Result<Vec<f64>> {
    check_dim(objective.dim(), theta.len())?;
    let d = objective.dim();
    let mut sum = vec![0.0; d];
    let mut g = vec![0.0; d];
    for s in dataset.samples() {
        objective.check_sample(s)?;
        objective.gradient_into(theta, s, &mut g);
        clip_in_place(&mut g, c_g);
        axpy(1.0, &g, &mut sum);
    }
    Ok(sum)
}

/// `(S + E)/size` with `E ~ N(0, (C_g σ_g)²/n · I)`. No draw is made when
/// `σ_g = 0`.
pub fn release_from_sum(
    mut sum: Vec<f64>,
    size: usize,
    params: &ReleaseParams,
    stream: &mut NoiseStream,
) -> Result<Vec<f64>> {
    if size == 0 {
        return Err(Error::EmptyDataset);
    }
    if params.sigma_g > 0.0 {
        stream.add_gaussian(params.sum_noise_std(), &mut sum);
    }
    scale(1.0 / size as f64, &mut sum);
    Ok(sum)
}

/// Per-example clipping radius used by [`private_release`]: `c_g` shrunk by
/// a first-order bound on the relative rounding error of summing `size`
/// examples, normalizing, averaging `n` releases and taking a norm in `d`
/// dimensions. With it the computed noiseless aggregate never exceeds `c_g`,
/// and the sensitivity only gets smaller.
pub fn release_radius(c_g: f64, size: usize, n: usize, d: usize) -> f64 {
    let terms = (size + n + d + 8) as f64;
    c_g * (1.0 - 2.0 * terms * f64::EPSILON)
}

/// Full client computation for one round.
pub fn private_release<O: Objective>(
    objective: &O,
    dataset: &ClientDataset<O::Sample>,
    theta: &[f64],
    params: &ReleaseParams,
    stream: &mut NoiseStream,
    client_id: usize,
    round: usize,
) -> Result<ClientRelease> {
    let radius = release_radius(params.clip_cg, dataset.size(), params.n, objective.dim());
    let sum = clipped_sum(objective, dataset, theta, radius)?;
    let vector = release_from_sum(sum, dataset.size(), params, stream)?;
    Ok(ClientRelease {
        vector,
        client_id,
        round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, sub};
    use crate::rng::{derive_noise_stream, seeded_rng};
    use crate::task::LinearTask;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noiseless(c_g: f64, n: usize) -> ReleaseParams {
        ReleaseParams {
            clip_cg: c_g,
            sigma_g: 0.0,
            n,
        }
    }

    #[test]
    fn clips_six_eight_to_three_four() {
        let out = clip_gradient(&[6.0, 8.0], 5.0);
        assert!((out[0] - 3.0).abs() < 1e-15 && (out[1] - 4.0).abs() < 1e-15);
        assert!(norm(&out) <= 5.0);
    }

    #[test]
    fn inside_the_ball_is_untouched() {
        assert_eq!(clip_gradient(&[1.0, 0.0], 5.0), vec![1.0, 0.0]);
        assert_eq!(clip_gradient(&[0.0, 0.0], 5.0), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn clip_norm_and_direction(
            g in proptest::collection::vec(-100.0f64..100.0, 1..40),
            c in 0.01f64..50.0,
        ) {
            let out = clip_gradient(&g, c);
            let expected = norm(&g).min(c);
            prop_assert!((norm(&out) - expected).abs() <= 1e-12 * expected.max(1.0));
            prop_assert!(norm(&out) <= c);
            // non-negative multiple of g
            let k = if norm(&g) > 0.0 { norm(&out) / norm(&g) } else { 0.0 };
            for (o, gi) in out.iter().zip(&g) {
                prop_assert!((o - k * gi).abs() <= 1e-12 * gi.abs().max(1.0));
            }
        }
    }

    #[test]
    fn equal_unclipped_gradients_release_exactly() {
        let task = LinearTask { dim: 3 };
        let g = vec![0.25, -0.5, 1.0];
        let data = ClientDataset::new(vec![g.clone(); 7]).unwrap();
        let mut s = derive_noise_stream(0, 0, 0);
        let r = private_release(&task, &data, &[0.0; 3], &noiseless(10.0, 4), &mut s, 0, 0).unwrap();
        for (a, b) in r.vector.iter().zip(&g) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_large_gradient_is_clipped() {
        let task = LinearTask { dim: 2 };
        let data = ClientDataset::new(vec![vec![0.0, 20.0]]).unwrap();
        let mut s = derive_noise_stream(0, 0, 0);
        let r = private_release(&task, &data, &[0.0; 2], &noiseless(10.0, 1), &mut s, 0, 0).unwrap();
        assert_eq!(r.vector[0], 0.0);
        assert!((r.vector[1] - 10.0).abs() < 1e-12 && r.vector[1] <= 10.0);
    }

    #[test]
    fn noiseless_release_norm_is_bounded() {
        let mut rng = seeded_rng(11);
        let task = LinearTask { dim: 6 };
        for _ in 0..500 {
            let m = rng.random_range(1..12);
            let data: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..6).map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let data = ClientDataset::new(data).unwrap();
            let mut s = derive_noise_stream(0, 0, 0);
            let r = private_release(&task, &data, &[0.0; 6], &noiseless(2.0, 3), &mut s, 0, 0).unwrap();
            assert!(norm(&r.vector) <= 2.0);
        }
    }

    #[test]
    fn replace_one_sensitivity_witness() {
        // antipodal max-norm gradients in the swapped record
        let task = LinearTask { dim: 4 };
        let c_g = 3.0;
        let mut base: Vec<Vec<f64>> = (0..9).map(|k| vec![k as f64 * 0.1, 0.2, -0.3, 0.0]).collect();
        let mut neighbour = base.clone();
        base.push(vec![100.0, 0.0, 0.0, 0.0]);
        neighbour.push(vec![-100.0, 0.0, 0.0, 0.0]);
        let (d, dp) = (
            ClientDataset::new(base).unwrap(),
            ClientDataset::new(neighbour).unwrap(),
        );
        let mut s = derive_noise_stream(0, 0, 0);
        let params = noiseless(c_g, 5);
        let a = private_release(&task, &d, &[0.0; 4], &params, &mut s, 0, 0).unwrap();
        let b = private_release(&task, &dp, &[0.0; 4], &params, &mut s, 0, 0).unwrap();
        let diff = norm(&sub(&a.vector, &b.vector));
        let delta = crate::accountant::sensitivity(c_g, 10);
        assert!((diff - delta).abs() < 1e-12, "{diff} vs {delta}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut s = derive_noise_stream(0, 0, 0);
        assert!(release_from_sum(vec![0.0], 0, &noiseless(1.0, 1), &mut s).is_err());
        assert!(ClientDataset::<Vec<f64>>::new(vec![]).is_err());
    }

    #[test]
    fn noise_is_mean_zero_with_the_stated_variance() {
        // σ_g = 2, C_g = 10, n = 4, |D_i| = 10  ⇒  variance 400/(4·100) = 1
        let task = LinearTask { dim: 2 };
        let data = ClientDataset::new(vec![vec![0.3, -0.1]; 10]).unwrap();
        let params = ReleaseParams {
            clip_cg: 10.0,
            sigma_g: 2.0,
            n: 4,
        };
        let exact = clipped_sum(&task, &data, &[0.0; 2], 10.0).unwrap();
        let exact: Vec<f64> = exact.iter().map(|x| x / 10.0).collect();
        let draws = 100_000;
        let mut sum = [0.0; 2];
        let mut sum_sq = [0.0; 2];
        for round in 0..draws {
            let mut s = derive_noise_stream(77, 1, round);
            let r = private_release(&task, &data, &[0.0; 2], &params, &mut s, 1, round).unwrap();
            for k in 0..2 {
                let e = r.vector[k] - exact[k];
                sum[k] += e;
                sum_sq[k] += e * e;
            }
        }
        for k in 0..2 {
            let mean = sum[k] / draws as f64;
            let var = sum_sq[k] / draws as f64 - mean * mean;
            assert!((var - 1.0).abs() <= 0.03, "var {var}");
            let stderr = (1.0 / draws as f64).sqrt();
            assert!(mean.abs() <= 5.0 * stderr, "mean {mean}");
        }
    }
}
