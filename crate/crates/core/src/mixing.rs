//! Trust-based combination weights and relative-distance bounds.
//!
//! The raw trust an agent k places in a neighbor l for layer p* is
//!
//! ```text
//! a~(p*, l, k) = c_lk * 2^(L+1) * prod_p (1 + |wk_p - wl_p|^2 / (|wl_p|^2 + kappa))
//!                ----------------------------------------------------------------
//!                       |wl_p*|^2 + |wk_p* - wl_p*|^2 + kappa
//! ```
//!
//! with Frobenius norms over the flat layer vectors. Per column the raw
//! values are clipped at `clip_n` times the smallest positive raw value, the
//! self weight absorbs `c_kk / (n_k - 1)` times the clipped sum, and the
//! column is normalized. Clipping keeps every positive entry of the
//! normalized tensor at or above `1 / ((K - 1) * clip_n + 1)`, which is what
//! makes the time-varying consensus products contract.
//!
//! Column construction is deliberately sequential per column: sums run in
//! neighbor order, so rebuilding a tensor is bitwise reproducible at any
//! parallelization degree.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{self, Architecture, LayeredParams};
use crate::topology::{BaseWeights, Topology};

/// Default stabilizer for near-zero layer norms.
pub const DEFAULT_KAPPA: f64 = 1e-8;

/// Stabilizer and clip factor for the trust-weight construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrtConfig {
    pub kappa: f64,
    pub clip_n: f64,
}

impl DrtConfig {
    pub fn new(kappa: f64, clip_n: f64) -> Result<Self> {
        let cfg = Self { kappa, clip_n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kappa must be finite and nonnegative, got {}",
                self.kappa
            )));
        }
        if !self.clip_n.is_finite() || self.clip_n < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "clip factor must be finite and at least 1, got {}",
                self.clip_n
            )));
        }
        Ok(())
    }
}

/// Per-layer column-stochastic weight matrices for one consensus step.
///
/// Entry `(l, k)` of layer `p` is the weight agent `k` assigns to agent `l`
/// when averaging layer `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingTensor {
    per_layer: Vec<Array2<f64>>,
    iteration_index: usize,
}

impl MixingTensor {
    pub fn new(per_layer: Vec<Array2<f64>>, iteration_index: usize) -> Result<Self> {
        let t = Self { per_layer, iteration_index };
        t.validate()?;
        Ok(t)
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn num_agents(&self) -> usize {
        self.per_layer.first().map_or(0, Array2::nrows)
    }

    pub fn iteration_index(&self) -> usize {
        self.iteration_index
    }

    pub fn layer(&self, p: usize) -> &Array2<f64> {
        &self.per_layer[p]
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.per_layer
    }

    /// Column sums equal 1 within 1e-12, all entries nonnegative, all layer
    /// matrices square with one shared agent count.
    pub fn validate(&self) -> Result<()> {
        if self.per_layer.is_empty() {
            return Err(Error::ContractViolation("mixing tensor has no layers".into()));
        }
        let k = self.per_layer[0].nrows();
        for (p, m) in self.per_layer.iter().enumerate() {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::ContractViolation(format!(
                    "layer {p} matrix is {}x{}, expected {k}x{k}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for col in 0..k {
                let mut sum = 0.0;
                for row in 0..k {
                    let v = m[[row, col]];
                    if !(v >= 0.0) {
                        return Err(Error::ContractViolation(format!(
                            "negative or NaN weight {v} at layer {p} entry ({row}, {col})"
                        )));
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::ContractViolation(format!(
                        "layer {p} column {col} sums to {sum}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text dump: per layer a header line `iter p K`, then K rows of K
    /// entries. Values round-trip exactly through shortest-representation
    /// formatting.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let k = self.num_agents();
        let mut s = String::new();
        for (p, m) in self.per_layer.iter().enumerate() {
            let _ = writeln!(s, "{} {} {}", self.iteration_index, p, k);
            for row in 0..k {
                let vals: Vec<String> = (0..k).map(|col| format!("{}", m[[row, col]])).collect();
                let _ = writeln!(s, "{}", vals.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let mut per_layer = Vec::new();
        let mut iter_index = None;
        while lines.peek().is_some() {
            let header = lines.next().unwrap();
            let parts: Vec<usize> = header
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad tensor header: {e}"))))
                .collect::<Result<_>>()?;
            let [it, p, k] = parts[..] else {
                return Err(Error::Parse(format!("tensor header needs 3 fields: {header:?}")));
            };
            match iter_index {
                None => iter_index = Some(it),
                Some(prev) if prev != it => {
                    return Err(Error::Parse(format!(
                        "tensor blocks disagree on iteration: {prev} vs {it}"
                    )));
                }
                _ => {}
            }
            if p != per_layer.len() {
                return Err(Error::Parse(format!(
                    "tensor layer blocks out of order: expected {}, got {p}",
                    per_layer.len()
                )));
            }
            let mut m = Array2::zeros((k, k));
            for row in 0..k {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("tensor layer {p} truncated at row {row}")))?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad tensor value: {e}"))))
                    .collect::<Result<_>>()?;
                if vals.len() != k {
                    return Err(Error::Parse(format!(
                        "tensor layer {p} row {row} has {} entries, expected {k}",
                        vals.len()
                    )));
                }
                for (col, v) in vals.into_iter().enumerate() {
                    m[[row, col]] = v;
                }
            }
            per_layer.push(m);
        }
        let iteration_index =
            iter_index.ok_or_else(|| Error::Parse("empty tensor text".into()))?;
        Ok(Self { per_layer, iteration_index })
    }
}

// ---------------------------------------------------------------------------
// Raw trust weights
// ---------------------------------------------------------------------------

fn layer_sq_norms(params: &LayeredParams) -> Vec<f64> {
    params.layers.iter().map(|l| l.iter().map(|x| x * x).sum()).collect()
}

fn layer_sq_diffs(a: &LayeredParams, b: &LayeredParams) -> Vec<f64> {
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum())
        .collect()
}

fn check_same_shape(wk: &LayeredParams, wl: &LayeredParams) -> Result<()> {
    if wk.layers.len() != wl.layers.len()
        || wk.layers.iter().zip(&wl.layers).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::ContractViolation(
            "parameter sets have different layer shapes".into(),
        ));
    }
    Ok(())
}

/// Raw (unclipped, unnormalized) trust weight that agent k assigns to
/// neighbor l for layer `p_star`, scaled by the base weight `c_lk`.
pub fn drt_raw_weight(
    wk: &LayeredParams,
    wl: &LayeredParams,
    c_lk: f64,
    p_star: usize,
    cfg: &DrtConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_same_shape(wk, wl)?;
    let l = wl.num_layers();
    if p_star >= l {
        return Err(Error::ContractViolation(format!(
            "layer index {p_star} out of range for {l} layers"
        )));
    }
    if !(c_lk > 0.0) {
        return Err(Error::ContractViolation(format!(
            "base weight must be positive, got {c_lk}"
        )));
    }
    let norms = layer_sq_norms(wl);
    let diffs = layer_sq_diffs(wk, wl);
    let mut product = 1.0;
    for p in 0..l {
        let denom = norms[p] + cfg.kappa;
        if denom == 0.0 {
            return Err(Error::Singularity(format!(
                "layer {p} of the reference agent has zero norm; set kappa > 0 to stabilize"
            )));
        }
        product *= 1.0 + diffs[p] / denom;
    }
    let denom_star = norms[p_star] + diffs[p_star] + cfg.kappa;
    if denom_star == 0.0 {
        return Err(Error::Singularity(format!(
            "layer {p_star} denominator is zero for identical zero-norm layers; set kappa > 0 to stabilize"
        )));
    }
    let value = c_lk * (2.0f64).powi(l as i32 + 1) * product / denom_star;
    debug_assert!(value > 0.0);
    Ok(value)
}

// ---------------------------------------------------------------------------
// Tensor construction
// ---------------------------------------------------------------------------

/// Build the per-layer combination weights for one consensus step from the
/// current parameter snapshot of every agent.
///
/// Per layer and column: raw weights for neighbors, clip at `clip_n` times
/// the smallest positive raw value, self weight `c_kk / (n_k - 1)` times the
/// clipped sum, then column normalization. An agent whose neighborhood is
/// only itself gets the unit basis column.
pub fn build_mixing_tensor(
    all_params: &[LayeredParams],
    base: &BaseWeights,
    topo: &Topology,
    cfg: &DrtConfig,
    iter: usize,
) -> Result<MixingTensor> {
    cfg.validate()?;
    let k_agents = topo.num_agents();
    if all_params.len() != k_agents {
        return Err(Error::ContractViolation(format!(
            "{} parameter sets for {k_agents} agents",
            all_params.len()
        )));
    }
    if base.num_agents() != k_agents {
        return Err(Error::ContractViolation(format!(
            "base matrix is for {} agents, topology has {k_agents}",
            base.num_agents()
        )));
    }
    let num_layers = all_params
        .first()
        .map(LayeredParams::num_layers)
        .ok_or_else(|| Error::ContractViolation("no agents".into()))?;
    for w in all_params {
        check_same_shape(w, &all_params[0])?;
    }

    let mut per_layer = vec![Array2::<f64>::zeros((k_agents, k_agents)); num_layers];
    for p in 0..num_layers {
        for k in 0..k_agents {
            let hood = topo.neighborhood(k);
            let mut raws: Vec<(usize, f64)> = Vec::with_capacity(hood.len());
            for &l in &hood {
                if l == k {
                    continue;
                }
                let c_lk = base.get(l, k);
                if c_lk > 0.0 {
                    raws.push((l, drt_raw_weight(&all_params[k], &all_params[l], c_lk, p, cfg)?));
                }
            }
            if raws.is_empty() {
                per_layer[p][[k, k]] = 1.0;
                continue;
            }
            let min_raw = raws.iter().map(|&(_, r)| r).fold(f64::INFINITY, f64::min);
            let cap = cfg.clip_n * min_raw;
            let mut clipped_sum = 0.0;
            for (_, r) in raws.iter_mut() {
                *r = r.min(cap);
                clipped_sum += *r;
            }
            let n_k = topo.degree(k);
            debug_assert!(n_k >= 2);
            let self_weight = base.get(k, k) / (n_k as f64 - 1.0) * clipped_sum;
            let total = clipped_sum + self_weight;
            debug_assert!(total > 0.0);
            for &(l, r) in &raws {
                per_layer[p][[l, k]] = r / total;
            }
            per_layer[p][[k, k]] = self_weight / total;
        }
    }
    let tensor = MixingTensor { per_layer, iteration_index: iter };
    debug_assert!(tensor.validate().is_ok());
    Ok(tensor)
}

// ---------------------------------------------------------------------------
// Relative-distance bounds
// ---------------------------------------------------------------------------

/// Product bound on the relative output distance:
/// `prod_p (1 + |wk_p - wl_p| / |wl_p|) - 1`.
pub fn drt_bound_linear(wk: &LayeredParams, wl: &LayeredParams) -> Result<f64> {
    check_same_shape(wk, wl)?;
    let mut product = 1.0;
    for (p, (norm_sq, diff_sq)) in
        layer_sq_norms(wl).into_iter().zip(layer_sq_diffs(wk, wl)).enumerate()
    {
        if norm_sq == 0.0 {
            return Err(Error::Singularity(format!(
                "layer {p} of the reference agent has zero norm"
            )));
        }
        product *= 1.0 + (diff_sq / norm_sq).sqrt();
    }
    Ok(product - 1.0)
}

/// Quadratic variant of the product bound:
/// `2^(L+1) prod_p (1 + |wk_p - wl_p|^2 / (|wl_p|^2 + kappa)) + 2`.
pub fn drt_bound_quadratic(wk: &LayeredParams, wl: &LayeredParams, kappa: f64) -> Result<f64> {
    check_same_shape(wk, wl)?;
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kappa must be finite and nonnegative, got {kappa}"
        )));
    }
    let l = wl.num_layers();
    let mut product = 1.0;
    for (p, (norm_sq, diff_sq)) in
        layer_sq_norms(wl).into_iter().zip(layer_sq_diffs(wk, wl)).enumerate()
    {
        let denom = norm_sq + kappa;
        if denom == 0.0 {
            return Err(Error::Singularity(format!(
                "layer {p} of the reference agent has zero norm; set kappa > 0 to stabilize"
            )));
        }
        product *= 1.0 + diff_sq / denom;
    }
    Ok((2.0f64).powi(l as i32 + 1) * product + 2.0)
}

/// Maximum over probe inputs of `|f(x; wk) - f(x; wl)|^2 / |f(x; wl)|^2`.
/// Probes where the reference output is exactly zero are skipped.
pub fn relative_output_distance(
    arch: &Architecture,
    wk: &LayeredParams,
    wl: &LayeredParams,
    probe_inputs: &Array2<f64>,
) -> Result<f64> {
    check_same_shape(wk, wl)?;
    let out_k = nn::forward(arch, wk, probe_inputs)?;
    let out_l = nn::forward(arch, wl, probe_inputs)?;
    let mut best: Option<f64> = None;
    for i in 0..probe_inputs.nrows() {
        let ref_sq: f64 = out_l.row(i).iter().map(|v| v * v).sum();
        if ref_sq == 0.0 {
            continue;
        }
        let diff_sq: f64 = out_k
            .row(i)
            .iter()
            .zip(out_l.row(i).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ratio = diff_sq / ref_sq;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
    }
    best.ok_or_else(|| {
        Error::InvalidParameter(
            "degenerate probe inputs: every probe has zero reference output".into(),
        )
    })
}
