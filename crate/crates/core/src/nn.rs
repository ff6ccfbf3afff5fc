//! Small layered feed-forward networks with analytic gradients.
//!
//! Parameters are kept per layer as flat vectors (`LayeredParams`): layer `p`
//! holds the weight matrix `d_{p+1} x d_p` in row-major order, with the bias
//! vector appended when biases are enabled. All trust computations downstream
//! treat one layer vector as a single unit, so biases share their layer's
//! norm. The network emits raw logits; softmax lives inside the loss with
//! log-sum-exp max-subtraction.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const TAG_INIT: u64 = 0x494e_4954;

/// Maximum number of weight layers accepted by validation; keeps the
/// `2^(L+1)` factor in the trust weights far from overflow.
pub const MAX_LAYERS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Feed-forward architecture: layer widths, hidden activation, bias switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Architecture {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, bias: bool) -> Result<Self> {
        let arch = Self { layer_dims, activation, bias };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidParameter(
                "architecture needs at least input and output dims".into(),
            ));
        }
        if self.num_layers() > MAX_LAYERS {
            return Err(Error::InvalidParameter(format!(
                "architecture has {} layers, maximum is {MAX_LAYERS}",
                self.num_layers()
            )));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("layer dims must be positive".into()));
        }
        Ok(())
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Flat length of layer `p`: `d_{p+1} * d_p`, plus `d_{p+1}` with bias.
    pub fn layer_len(&self, p: usize) -> usize {
        let inn = self.layer_dims[p];
        let out = self.layer_dims[p + 1];
        out * inn + if self.bias { out } else { 0 }
    }
}

/// Per-layer flat parameter vectors for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    pub layers: Vec<Vec<f64>>,
}

impl LayeredParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: (0..arch.num_layers()).map(|p| vec![0.0; arch.layer_len(p)]).collect(),
        }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.num_layers()
            && self.layers.iter().enumerate().all(|(p, l)| l.len() == arch.layer_len(p))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Euclidean norm of each flat layer vector.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// In-place `self <- self + scale * other`, layer by layer.
    pub fn axpy(&mut self, scale: f64, other: &LayeredParams) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    /// Text checkpoint format: first line `L`, second line the per-layer
    /// lengths, then one line of values per layer.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.layers.len());
        let lens: Vec<String> = self.layers.iter().map(|l| l.len().to_string()).collect();
        let _ = writeln!(s, "{}", lens.join(" "));
        for layer in &self.layers {
            let vals: Vec<String> = layer.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let l: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty params text".into()))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad layer count: {e}")))?;
        let lens: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::Parse("missing layer lengths".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad layer length: {e}"))))
            .collect::<Result<_>>()?;
        if lens.len() != l {
            return Err(Error::Parse(format!("expected {l} layer lengths, got {}", lens.len())));
        }
        let mut layers = Vec::with_capacity(l);
        for (p, &len) in lens.iter().enumerate() {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing values for layer {p}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad value in layer {p}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(Error::Parse(format!(
                    "layer {p} expected {len} values, got {}",
                    vals.len()
                )));
            }
            layers.push(vals);
        }
        Ok(Self { layers })
    }
}

/// One minibatch: inputs `B x d0` and class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::ContractViolation("batch must be non-empty".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::ContractViolation(format!(
                "batch has {} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Initialization and forward pass
// ---------------------------------------------------------------------------

/// Zero-mean Gaussian weights scaled by `gain / sqrt(fan_in)` (He-style gain
/// for relu, Xavier-style otherwise); biases start at zero.
pub fn init_params(arch: &Architecture, seed: u64) -> LayeredParams {
    let mut gen = rng::stream(seed, &[TAG_INIT]);
    let gain = match arch.activation {
        Activation::Relu => std::f64::consts::SQRT_2,
        _ => 1.0,
    };
    let mut layers = Vec::with_capacity(arch.num_layers());
    for p in 0..arch.num_layers() {
        let inn = arch.layer_dims[p];
        let out = arch.layer_dims[p + 1];
        let std = gain / (inn as f64).sqrt();
        let mut layer = Vec::with_capacity(arch.layer_len(p));
        for _ in 0..out * inn {
            let z: f64 = gen.sample(StandardNormal);
            layer.push(z * std);
        }
        if arch.bias {
            layer.extend(std::iter::repeat(0.0).take(out));
        }
        layers.push(layer);
    }
    LayeredParams { layers }
}

fn weight_view<'a>(arch: &Architecture, params: &'a LayeredParams, p: usize) -> ArrayView2<'a, f64> {
    let inn = arch.layer_dims[p];
    let out = arch.layer_dims[p + 1];
    ArrayView2::from_shape((out, inn), &params.layers[p][..out * inn]).unwrap()
}

fn bias_slice<'a>(arch: &Architecture, params: &'a LayeredParams, p: usize) -> Option<&'a [f64]> {
    if !arch.bias {
        return None;
    }
    let inn = arch.layer_dims[p];
    let out = arch.layer_dims[p + 1];
    Some(&params.layers[p][out * inn..out * inn + out])
}

fn apply_activation(z: &mut Array2<f64>, act: Activation) {
    match act {
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Tanh => z.mapv_inplace(f64::tanh),
        Activation::Identity => {}
    }
}

fn check_shapes(arch: &Architecture, params: &LayeredParams, x: &Array2<f64>) -> Result<()> {
    if !params.matches(arch) {
        return Err(Error::ContractViolation("params do not match architecture".into()));
    }
    if x.ncols() != arch.input_dim() {
        return Err(Error::ContractViolation(format!(
            "input has {} columns, architecture expects {}",
            x.ncols(),
            arch.input_dim()
        )));
    }
    Ok(())
}

/// Pre-softmax logits `B x d_L`; activation after every layer except the last.
pub fn forward(arch: &Architecture, params: &LayeredParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    check_shapes(arch, params, x)?;
    let mut a = x.clone();
    for p in 0..arch.num_layers() {
        let mut z = a.dot(&weight_view(arch, params, p).t());
        if let Some(b) = bias_slice(arch, params, p) {
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (zi, bi) in row.iter_mut().zip(b) {
                    *zi += bi;
                }
            }
        }
        if p + 1 < arch.num_layers() {
            apply_activation(&mut z, arch.activation);
        }
        a = z;
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

fn log_sum_exp_rows(logits: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(logits.nrows());
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        out[i] = m + s.ln();
    }
    out
}

fn validate_labels(arch: &Architecture, batch: &Batch) -> Result<()> {
    let c = arch.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::ContractViolation(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch.
pub fn loss(arch: &Architecture, params: &LayeredParams, batch: &Batch) -> Result<f64> {
    validate_labels(arch, batch)?;
    let logits = forward(arch, params, &batch.inputs)?;
    let lse = log_sum_exp_rows(&logits);
    let b = batch.len() as f64;
    let total: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| lse[i] - logits[[i, y]])
        .sum();
    let value = total / b;
    if !value.is_finite() {
        return Err(Error::NumericalFailure("loss is not finite".into()));
    }
    Ok(value)
}

/// Mean softmax cross-entropy and its analytic gradient, layer shapes
/// matching the parameters.
pub fn loss_and_grad(
    arch: &Architecture,
    params: &LayeredParams,
    batch: &Batch,
) -> Result<(f64, LayeredParams)> {
    validate_labels(arch, batch)?;
    check_shapes(arch, params, &batch.inputs)?;
    let l = arch.num_layers();
    let b = batch.len();

    // Forward pass, caching pre-activations and activations per layer.
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(l + 1);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(l);
    acts.push(batch.inputs.clone());
    for p in 0..l {
        let mut z = acts[p].dot(&weight_view(arch, params, p).t());
        if let Some(bias) = bias_slice(arch, params, p) {
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (zi, bi) in row.iter_mut().zip(bias) {
                    *zi += bi;
                }
            }
        }
        pre.push(z.clone());
        if p + 1 < l {
            apply_activation(&mut z, arch.activation);
        }
        acts.push(z);
    }

    let logits = &acts[l];
    let lse = log_sum_exp_rows(logits);
    let total: f64 = batch
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| lse[i] - logits[[i, y]])
        .sum();
    let loss_value = total / b as f64;
    if !loss_value.is_finite() {
        return Err(Error::NumericalFailure("loss is not finite".into()));
    }

    // delta = (softmax - onehot) / B at the output, chained backward.
    let mut delta = Array2::<f64>::zeros(logits.raw_dim());
    for i in 0..b {
        for c in 0..arch.output_dim() {
            delta[[i, c]] = (logits[[i, c]] - lse[i]).exp() / b as f64;
        }
        delta[[i, batch.labels[i]]] -= 1.0 / b as f64;
    }

    let mut grads = vec![Vec::new(); l];
    for p in (0..l).rev() {
        let gw = delta.t().dot(&acts[p]);
        let mut flat: Vec<f64> = gw.iter().cloned().collect();
        if arch.bias {
            flat.extend(delta.sum_axis(Axis(0)).iter());
        }
        grads[p] = flat;
        if p > 0 {
            let mut da = delta.dot(&weight_view(arch, params, p));
            match arch.activation {
                Activation::Relu => {
                    for (d, z) in da.iter_mut().zip(pre[p - 1].iter()) {
                        if *z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (d, z) in da.iter_mut().zip(pre[p - 1].iter()) {
                        let t = z.tanh();
                        *d *= 1.0 - t * t;
                    }
                }
                Activation::Identity => {}
            }
            delta = da;
        }
    }
    Ok((loss_value, LayeredParams { layers: grads }))
}

/// Central finite-difference gradient, coordinate by coordinate (test oracle).
pub fn finite_diff_grad(
    arch: &Architecture,
    params: &LayeredParams,
    batch: &Batch,
    h: f64,
) -> Result<LayeredParams> {
    if h <= 0.0 {
        return Err(Error::InvalidParameter("finite difference step must be positive".into()));
    }
    let mut probe = params.clone();
    let mut grads = Vec::with_capacity(params.layers.len());
    for p in 0..params.layers.len() {
        let mut g = vec![0.0; params.layers[p].len()];
        for i in 0..params.layers[p].len() {
            let orig = probe.layers[p][i];
            probe.layers[p][i] = orig + h;
            let up = loss(arch, &probe, batch)?;
            probe.layers[p][i] = orig - h;
            let down = loss(arch, &probe, batch)?;
            probe.layers[p][i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(LayeredParams { layers: grads })
}

/// Fraction of rows whose argmax logit matches the label (ties break low).
pub fn accuracy(arch: &Architecture, params: &LayeredParams, batch: &Batch) -> Result<f64> {
    let logits = forward(arch, params, &batch.inputs)?;
    let mut correct = 0usize;
    for (i, &y) in batch.labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn arch(dims: &[usize], act: Activation, bias: bool) -> Architecture {
        Architecture::new(dims.to_vec(), act, bias).unwrap()
    }

    fn random_batch(arch: &Architecture, n: usize, seed: u64) -> Batch {
        let mut gen = rng::stream(seed, &[0xBA7C]);
        let inputs = Array2::from_shape_fn((n, arch.input_dim()), |_| {
            gen.sample::<f64, _>(StandardNormal)
        });
        let labels = (0..n).map(|_| gen.gen_range(0..arch.output_dim())).collect();
        Batch::new(inputs, labels).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(&[2, 1], Activation::Identity, false);
        assert_eq!(init_params(&a, 9), init_params(&a, 9));
    }

    #[test]
    fn layer_lengths_without_bias() {
        let a = arch(&[4, 8, 3], Activation::Relu, false);
        let p = init_params(&a, 0);
        assert_eq!(p.layers.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 24]);
    }

    #[test]
    fn layer_length_with_bias() {
        let a = arch(&[2, 2], Activation::Identity, true);
        assert_eq!(a.layer_len(0), 6);
    }

    #[test]
    fn biases_start_zero() {
        let a = arch(&[3, 4], Activation::Tanh, true);
        let p = init_params(&a, 5);
        assert!(p.layers[0][12..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_identity_weights_is_identity() {
        let a = arch(&[3, 3], Activation::Identity, false);
        let mut p = LayeredParams::zeros(&a);
        for i in 0..3 {
            p.layers[0][i * 3 + i] = 1.0;
        }
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -0.25]];
        let y = forward(&a, &p, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_zero_weights_is_zero() {
        let a = arch(&[4, 5, 2], Activation::Relu, true);
        let p = LayeredParams::zeros(&a);
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let y = forward(&a, &p, &x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_composition() {
        // [1, 2] -> relu -> [2, 1]: y = w2 . relu(W1 x).
        let a = arch(&[1, 2, 1], Activation::Relu, false);
        let p = LayeredParams { layers: vec![vec![2.0, -3.0], vec![0.5, 4.0]] };
        let x = array![[1.0], [-1.0]];
        let y = forward(&a, &p, &x).unwrap();
        // x=1: relu([2, -3]) = [2, 0] -> 0.5*2 + 4*0 = 1.0
        // x=-1: relu([-2, 3]) = [0, 3] -> 0.5*0 + 4*3 = 12.0
        assert_abs_diff_eq!(y[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[[1, 0]], 12.0, epsilon = 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let a = arch(&[3, 2], Activation::Identity, false);
        let p = LayeredParams::zeros(&a);
        let x = Array2::zeros((1, 4));
        assert!(forward(&a, &p, &x).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let a = arch(&[5, 4], Activation::Identity, true);
        let p = LayeredParams::zeros(&a);
        let batch = random_batch(&a, 7, 3);
        let (l, _) = loss_and_grad(&a, &p, &batch).unwrap();
        assert_abs_diff_eq!(l, (4.0f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_grad() {
        let a = arch(&[3, 4, 2], Activation::Tanh, true);
        let p = init_params(&a, 11);
        let batch = random_batch(&a, 5, 4);
        let doubled = {
            let mut inputs = Vec::new();
            let mut labels = Vec::new();
            for rep in 0..2 {
                let _ = rep;
                for i in 0..batch.len() {
                    inputs.extend(batch.inputs.row(i).iter());
                    labels.push(batch.labels[i]);
                }
            }
            Batch::new(Array2::from_shape_vec((10, 3), inputs).unwrap(), labels).unwrap()
        };
        let (l1, g1) = loss_and_grad(&a, &p, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&a, &p, &doubled).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-12);
        for (x, y) in g1.layers.iter().flatten().zip(g2.layers.iter().flatten()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let a = arch(&[3, 4, 2], Activation::Relu, true);
        let p = init_params(&a, 13);
        let batch = random_batch(&a, 6, 8);
        let perm = [5usize, 2, 0, 4, 1, 3];
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for &i in &perm {
            inputs.extend(batch.inputs.row(i).iter());
            labels.push(batch.labels[i]);
        }
        let shuffled = Batch::new(Array2::from_shape_vec((6, 3), inputs).unwrap(), labels).unwrap();
        let l1 = loss(&a, &p, &batch).unwrap();
        let l2 = loss(&a, &p, &shuffled).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let a = arch(&[3, 4, 2], Activation::Tanh, true);
        let p = init_params(&a, 17);
        let batch = random_batch(&a, 5, 9);
        let (_, g) = loss_and_grad(&a, &p, &batch).unwrap();
        let fd = finite_diff_grad(&a, &p, &batch, 1e-4).unwrap();
        for (x, y) in g.layers.iter().flatten().zip(fd.layers.iter().flatten()) {
            assert!((x - y).abs() < 1e-5, "analytic {x} vs finite-diff {y}");
        }
    }

    #[test]
    fn finite_difference_steps_agree_on_smooth_net() {
        let a = arch(&[2, 3, 2], Activation::Tanh, false);
        let p = init_params(&a, 23);
        let batch = random_batch(&a, 4, 10);
        let g4 = finite_diff_grad(&a, &p, &batch, 1e-4).unwrap();
        let g5 = finite_diff_grad(&a, &p, &batch, 1e-5).unwrap();
        for (x, y) in g4.layers.iter().flatten().zip(g5.layers.iter().flatten()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norms_examples() {
        let p = LayeredParams { layers: vec![vec![3.0, 4.0], vec![0.0, 0.0], vec![3.0]] };
        let norms = p.layer_norms();
        assert_abs_diff_eq!(norms[0], 5.0, epsilon = 1e-15);
        assert_eq!(norms[1], 0.0);
        assert_eq!(norms[2], 3.0);
    }

    #[test]
    fn params_text_round_trip_is_exact() {
        let a = arch(&[3, 4, 2], Activation::Relu, true);
        let p = init_params(&a, 29);
        let back = LayeredParams::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn params_text_rejects_length_mismatch() {
        assert!(LayeredParams::from_text("1\n3\n1.0 2.0\n").is_err());
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        let a = arch(&[2, 2], Activation::Identity, false);
        let p = LayeredParams { layers: vec![vec![1.0, 0.0, 0.0, 1.0]] };
        let batch = Batch::new(array![[3.0, 1.0], [0.0, 2.0], [5.0, 9.0]], vec![0, 1, 0]).unwrap();
        assert_abs_diff_eq!(accuracy(&a, &p, &batch).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn gradient_check_across_seeds(seed in 0u64..1000) {
            let a = arch(&[3, 4, 2], Activation::Tanh, true);
            let p = init_params(&a, seed);
            let batch = random_batch(&a, 5, seed.wrapping_add(1));
            let (_, g) = loss_and_grad(&a, &p, &batch).unwrap();
            let fd = finite_diff_grad(&a, &p, &batch, 1e-4).unwrap();
            for (x, y) in g.layers.iter().flatten().zip(fd.layers.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
