//! Theory-facing measurements over recorded runs.
//!
//! Time-varying combination tensors have backward products that converge to
//! rank one; the row-average of a truncated product estimates the limiting
//! weight vector phi, and the maximum row disagreement quantifies the
//! truncation error. The phi-weighted centroid, the network disagreement
//! around it, and the full-batch gradient norm at it are the quantities the
//! contraction and descent checks are stated in.

use ndarray::Array2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixing::MixingTensor;
use crate::nn::{self, Architecture, LayeredParams};

/// Estimated limiting weight vector for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiEstimate {
    pub weights: Vec<f64>,
    pub horizon_used: usize,
    pub residual: f64,
}

impl PhiEstimate {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::ContractViolation(
                "phi weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ContractViolation(format!(
                "phi weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Uniform weights: the exact limit for static doubly stochastic mixing.
    pub fn uniform(num_agents: usize) -> Self {
        Self {
            weights: vec![1.0 / num_agents as f64; num_agents],
            horizon_used: 0,
            residual: 0.0,
        }
    }
}

fn tensor_at(tensors: &[MixingTensor], iter: usize) -> Result<&MixingTensor> {
    tensors
        .iter()
        .find(|t| t.iteration_index() == iter)
        .ok_or_else(|| Error::DataAvailability(format!("no tensor recorded for iteration {iter}")))
}

/// Transposed product `A_t^T A_(t-1)^T ... A_i^T` for one layer, multiplied
/// out sequentially in exactly that order.
pub fn backward_product(
    tensors: &[MixingTensor],
    layer: usize,
    i: usize,
    t: usize,
) -> Result<Array2<f64>> {
    if i > t {
        return Err(Error::ContractViolation(format!(
            "backward product needs i <= t, got i={i}, t={t}"
        )));
    }
    let first = tensor_at(tensors, t)?;
    if layer >= first.num_layers() {
        return Err(Error::ContractViolation(format!(
            "layer {layer} out of range for {} layers",
            first.num_layers()
        )));
    }
    let mut product = first.layer(layer).t().to_owned();
    for j in (i..t).rev() {
        let a = tensor_at(tensors, j)?;
        product = product.dot(&a.layer(layer).t());
    }
    Ok(product)
}

/// Maximum over row pairs of the infinity-norm row difference: how far the
/// matrix is from rank one.
pub fn row_disagreement(m: &Array2<f64>) -> f64 {
    let k = m.nrows();
    let mut worst = 0.0f64;
    for r in 0..k {
        for s in r + 1..k {
            let mut diff = 0.0f64;
            for c in 0..m.ncols() {
                diff = diff.max((m[[r, c]] - m[[s, c]]).abs());
            }
            worst = worst.max(diff);
        }
    }
    worst
}

/// Estimate phi at iteration `i` for one layer as the row-average of the
/// backward product over `[i, i + horizon]`. Warns on stderr when the
/// product is still far from rank one.
pub fn estimate_phi(
    tensors: &[MixingTensor],
    layer: usize,
    i: usize,
    horizon: usize,
) -> Result<PhiEstimate> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let product = backward_product(tensors, layer, i, i + horizon)?;
    let k = product.nrows();
    let mut weights = vec![0.0; k];
    for c in 0..k {
        let mut sum = 0.0;
        for r in 0..k {
            sum += product[[r, c]];
        }
        weights[c] = sum / k as f64;
    }
    let residual = row_disagreement(&product);
    if residual > 1e-6 {
        eprintln!(
            "warning: phi estimate at iteration {i} layer {layer} has residual {residual:.3e} \
             after horizon {horizon}; treat the weights as approximate"
        );
    }
    let est = PhiEstimate { weights, horizon_used: horizon, residual };
    est.validate()?;
    Ok(est)
}

/// Least-squares fit of `ln y = ln scale + ln ratio * x`. Returns the
/// geometric ratio, the scale, and the R-squared of the log-space fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFit {
    pub ratio: f64,
    pub scale: f64,
    pub r_squared: f64,
}

pub fn geometric_fit(xs: &[f64], ys: &[f64]) -> Result<GeometricFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "geometric fit needs matching samples, at least 2; got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(&bad) = ys.iter().find(|&&y| !(y > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "geometric fit needs positive values, got {bad}"
        )));
    }
    let n = xs.len() as f64;
    let logs: Vec<f64> = ys.iter().map(|&y| y.ln()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(&logs) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("geometric fit needs varying x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(GeometricFit { ratio: slope.exp(), scale: intercept.exp(), r_squared })
}

// ---------------------------------------------------------------------------
// Centroid-based quantities
// ---------------------------------------------------------------------------

/// Per-layer convex combination of agent parameters with that layer's phi
/// weights. `phis` holds one estimate per layer.
pub fn centroid(params: &[LayeredParams], phis: &[PhiEstimate]) -> Result<LayeredParams> {
    let k = params.len();
    if k == 0 {
        return Err(Error::ContractViolation("no agents".into()));
    }
    let num_layers = params[0].num_layers();
    if phis.len() != num_layers {
        return Err(Error::ContractViolation(format!(
            "{} phi estimates for {num_layers} layers",
            phis.len()
        )));
    }
    for phi in phis {
        phi.validate()?;
        if phi.weights.len() != k {
            return Err(Error::ContractViolation(format!(
                "phi has {} weights for {k} agents",
                phi.weights.len()
            )));
        }
    }
    let mut layers = Vec::with_capacity(num_layers);
    for p in 0..num_layers {
        let len = params[0].layers[p].len();
        let mut acc = vec![0.0; len];
        for (agent, w) in params.iter().enumerate() {
            if w.layers.len() != num_layers || w.layers[p].len() != len {
                return Err(Error::ContractViolation(
                    "parameter sets have different layer shapes".into(),
                ));
            }
            let weight = phis[p].weights[agent];
            for (dst, src) in acc.iter_mut().zip(&w.layers[p]) {
                *dst += weight * src;
            }
        }
        layers.push(acc);
    }
    Ok(LayeredParams { layers })
}

/// Sum over agents of the squared distance to the centroid, over all layers.
pub fn network_disagreement(params: &[LayeredParams], center: &LayeredParams) -> f64 {
    let mut total = 0.0;
    for w in params {
        for (layer, c_layer) in w.layers.iter().zip(&center.layers) {
            for (x, c) in layer.iter().zip(c_layer) {
                total += (x - c) * (x - c);
            }
        }
    }
    total
}

/// Euclidean norm of the full-batch gradient of the pooled objective at the
/// given parameters.
pub fn centroid_grad_norm(
    arch: &Architecture,
    params: &LayeredParams,
    dataset: &Dataset,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::ContractViolation("gradient norm needs a nonempty dataset".into()));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let batch = dataset.batch(&all)?;
    let (_, grad) = nn::loss_and_grad(arch, params, &batch)?;
    Ok(grad.layers.iter().flatten().map(|g| g * g).sum::<f64>().sqrt())
}

/// Training accuracy minus test accuracy.
pub fn generalization_gap(train_acc: f64, test_acc: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&train_acc));
    debug_assert!((0.0..=1.0).contains(&test_acc));
    train_acc - test_acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::{build_mixing_tensor, DrtConfig};
    use crate::nn::{init_params, Activation};
    use crate::strategies::combine_drt;
    use crate::topology::{build_ring, metropolis_weights};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn constant_tensors(m: &Array2<f64>, layers: usize, iters: std::ops::Range<usize>) -> Vec<MixingTensor> {
        iters
            .map(|i| MixingTensor::new(vec![m.clone(); layers], i).unwrap())
            .collect()
    }

    fn random_drt_tensors(k: usize, iters: std::ops::Range<usize>) -> Vec<MixingTensor> {
        let topo = build_ring(k).unwrap();
        let base = metropolis_weights(&topo);
        let arch = Architecture::new(vec![2, 3, 2], Activation::Relu, true).unwrap();
        let cfg = DrtConfig::new(1e-8, 2.0 * k as f64).unwrap();
        iters
            .map(|i| {
                let params: Vec<_> =
                    (0..k as u64).map(|a| init_params(&arch, i as u64 * 31 + a)).collect();
                build_mixing_tensor(&params, &base, &topo, &cfg, i).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_matrix_product_is_its_transpose() {
        let m = array![[0.7, 0.2], [0.3, 0.8]];
        let tensors = constant_tensors(&m, 1, 5..6);
        let p = backward_product(&tensors, 0, 5, 5).unwrap();
        assert_eq!(p, m.t().to_owned());
    }

    #[test]
    fn rank_one_matrices_stay_rank_one() {
        let third = Array2::from_elem((3, 3), 1.0 / 3.0);
        let tensors = constant_tensors(&third, 1, 0..4);
        let p = backward_product(&tensors, 0, 0, 3).unwrap();
        for &v in p.iter() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(row_disagreement(&p) < 1e-15);
    }

    #[test]
    fn missing_iteration_is_a_data_availability_error() {
        let m = array![[1.0]];
        let tensors = constant_tensors(&m, 1, 0..2);
        let err = backward_product(&tensors, 0, 0, 5).unwrap_err();
        assert!(matches!(err, Error::DataAvailability(_)), "{err}");
    }

    #[test]
    fn longer_windows_contract_further() {
        let tensors = random_drt_tensors(5, 0..31);
        let short = row_disagreement(&backward_product(&tensors, 0, 0, 10).unwrap());
        let long = row_disagreement(&backward_product(&tensors, 0, 0, 30).unwrap());
        assert!(long < short, "no contraction: {long} vs {short}");
    }

    #[test]
    fn static_doubly_stochastic_mixing_gives_uniform_phi() {
        let base = metropolis_weights(&build_ring(4).unwrap());
        let tensors = constant_tensors(base.matrix(), 2, 0..40);
        let phi = estimate_phi(&tensors, 1, 0, 30).unwrap();
        for &w in &phi.weights {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-9);
        }
        assert!(phi.residual < 1e-6);
        assert_eq!(phi.horizon_used, 30);
    }

    #[test]
    fn single_agent_phi_is_one() {
        let tensors = constant_tensors(&array![[1.0]], 1, 0..5);
        let phi = estimate_phi(&tensors, 0, 0, 4).unwrap();
        assert_eq!(phi.weights, vec![1.0]);
        assert_eq!(phi.residual, 0.0);
    }

    #[test]
    fn phi_weights_are_normalized_and_consistent() {
        let tensors = random_drt_tensors(5, 0..61);
        for p in 0..2 {
            let here = estimate_phi(&tensors, p, 10, 50).unwrap();
            let sum: f64 = here.weights.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            // phi_i from horizon H+1 equals A_i applied to phi_(i+1) from
            // horizon H, up to product re-association.
            let next = estimate_phi(&tensors, p, 11, 49).unwrap();
            let a = tensors.iter().find(|t| t.iteration_index() == 10).unwrap().layer(p);
            for k in 0..5 {
                let mut prop = 0.0;
                for l in 0..5 {
                    prop += a[[k, l]] * next.weights[l];
                }
                assert_abs_diff_eq!(here.weights[k], prop, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn geometric_fit_recovers_exact_series() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * 0.8f64.powf(x)).collect();
        let fit = geometric_fit(&xs, &ys).unwrap();
        assert_abs_diff_eq!(fit.ratio, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.scale, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn geometric_fit_rejects_degenerate_input() {
        assert!(geometric_fit(&[1.0], &[2.0]).is_err());
        assert!(geometric_fit(&[1.0, 2.0], &[1.0, 0.0]).is_err());
        assert!(geometric_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn centroid_of_identical_params_is_unchanged() {
        let arch = Architecture::new(vec![2, 3, 2], Activation::Relu, true).unwrap();
        let w = init_params(&arch, 4);
        let params = vec![w.clone(), w.clone(), w.clone()];
        let phis = vec![PhiEstimate::uniform(3), PhiEstimate::uniform(3)];
        let c = centroid(&params, &phis).unwrap();
        for (x, y) in c.layers.iter().flatten().zip(w.layers.iter().flatten()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_centroid_of_two_agents_is_the_mean() {
        let a = LayeredParams { layers: vec![vec![2.0, -4.0]] };
        let b = LayeredParams { layers: vec![vec![0.0, 10.0]] };
        let c = centroid(&[a, b], &[PhiEstimate::uniform(2)]).unwrap();
        assert_eq!(c.layers[0], vec![1.0, 3.0]);
    }

    #[test]
    fn weighted_centroid_matches_dense_recomputation() {
        let arch = Architecture::new(vec![2, 2, 2], Activation::Identity, false).unwrap();
        let params: Vec<_> = (0..3).map(|s| init_params(&arch, 20 + s)).collect();
        let phis = vec![
            PhiEstimate { weights: vec![0.5, 0.3, 0.2], horizon_used: 1, residual: 0.0 },
            PhiEstimate { weights: vec![0.1, 0.1, 0.8], horizon_used: 1, residual: 0.0 },
        ];
        let c = centroid(&params, &phis).unwrap();
        for p in 0..2 {
            for i in 0..4 {
                let want: f64 =
                    (0..3).map(|k| phis[p].weights[k] * params[k].layers[p][i]).sum();
                assert_abs_diff_eq!(c.layers[p][i], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn centroid_rejects_unnormalized_weights() {
        let a = LayeredParams { layers: vec![vec![1.0]] };
        let bad = PhiEstimate { weights: vec![0.9, 0.3], horizon_used: 1, residual: 0.0 };
        assert!(centroid(&[a.clone(), a], &[bad]).is_err());
    }

    #[test]
    fn disagreement_examples() {
        let v = LayeredParams { layers: vec![vec![1.0, -2.0], vec![0.5]] };
        let minus = LayeredParams { layers: vec![vec![-1.0, 2.0], vec![-0.5]] };
        let zero = LayeredParams { layers: vec![vec![0.0, 0.0], vec![0.0]] };
        assert_eq!(network_disagreement(&[v.clone(), v.clone()], &v), 0.0);
        let norm_sq = 1.0 + 4.0 + 0.25;
        assert_abs_diff_eq!(
            network_disagreement(&[v.clone(), minus], &zero),
            2.0 * norm_sq,
            epsilon = 1e-15
        );
        // Scaling every deviation by s scales the value by s^2.
        let mut scaled = v.clone();
        for l in scaled.layers.iter_mut() {
            for x in l.iter_mut() {
                *x *= 3.0;
            }
        }
        assert_abs_diff_eq!(
            network_disagreement(&[scaled], &zero),
            9.0 * network_disagreement(&[v], &zero),
            epsilon = 1e-12
        );
    }

    #[test]
    fn grad_norm_matches_finite_difference_oracle() {
        let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh, true).unwrap();
        let ds = crate::data::make_gaussian_blobs(2, 2, 10, 0.7, 6).unwrap();
        let w = init_params(&arch, 9);
        let norm = centroid_grad_norm(&arch, &w, &ds).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let batch = ds.batch(&all).unwrap();
        let fd = nn::finite_diff_grad(&arch, &w, &batch, 1e-5).unwrap();
        let fd_norm = fd.layers.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, fd_norm, epsilon = 1e-5);
    }

    #[test]
    fn grad_norm_vanishes_at_an_interpolating_optimum() {
        let ds = crate::data::make_gaussian_blobs(2, 2, 15, 1e-3, 5).unwrap();
        let arch = Architecture::new(vec![2, 2], Activation::Identity, true).unwrap();
        let mut params = init_params(&arch, 0);
        let all: Vec<usize> = (0..ds.len()).collect();
        let batch = ds.batch(&all).unwrap();
        for _ in 0..500 {
            let (_, grad) = nn::loss_and_grad(&arch, &params, &batch).unwrap();
            params.axpy(-0.5, &grad);
        }
        assert!(centroid_grad_norm(&arch, &params, &ds).unwrap() < 1e-2);
    }

    #[test]
    fn gap_is_a_plain_difference() {
        assert_abs_diff_eq!(generalization_gap(0.9, 0.7), 0.2, epsilon = 1e-15);
        assert_eq!(generalization_gap(0.42, 0.42), 0.0);
        assert_abs_diff_eq!(generalization_gap(0.6, 0.65), -0.05, epsilon = 1e-15);
    }

    #[test]
    fn repeated_trust_averaging_contracts_disagreement() {
        // Zero-gradient rounds reduce to pure averaging; rebuilt tensors
        // must still drive the network toward consensus.
        let topo = build_ring(4).unwrap();
        let base = metropolis_weights(&topo);
        let arch = Architecture::new(vec![2, 3, 2], Activation::Relu, true).unwrap();
        let cfg = DrtConfig::new(1e-8, 8.0).unwrap();
        let mut psis: Vec<_> = (0..4).map(|s| init_params(&arch, 60 + s)).collect();
        let phis = vec![PhiEstimate::uniform(4), PhiEstimate::uniform(4)];
        let start = network_disagreement(&psis, &centroid(&psis, &phis).unwrap());
        let mut prev = start;
        for step in 0..10 {
            let (next, _) = combine_drt(&psis, &base, &topo, &cfg, step).unwrap();
            psis = next;
            let d = network_disagreement(&psis, &centroid(&psis, &phis).unwrap());
            assert!(d < prev, "step {step}: disagreement rose from {prev} to {d}");
            prev = d;
        }
        assert!(prev < 0.1 * start, "only contracted from {start} to {prev}");
    }
}
