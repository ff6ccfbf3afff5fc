//! Decentralized training rounds: local gradient steps, then combination.
//!
//! Rounds are bulk-synchronous. In the adapt phase every agent runs SGD over
//! its own shuffled batches; the phase may run agents in parallel because
//! each agent draws from its own seeded stream and touches only its own
//! state, so parallel and sequential execution are bitwise identical. In the
//! combine phase the committed parameter snapshot is averaged: classical
//! diffusion reuses one static matrix for every layer, trust-based diffusion
//! rebuilds a per-layer tensor at each consensus step (or once per round
//! when frozen). Combination sums run in agent order, never across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::mixing::{build_mixing_tensor, DrtConfig, MixingTensor};
use crate::nn::{self, Architecture, Batch, LayeredParams};
use crate::rng;
use crate::topology::{BaseWeights, Topology};

const TAG_EPOCH: u64 = 0x45504f43;

/// Which combination rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[serde(rename = "classical")]
    ClassicalDiffusion,
    #[serde(rename = "drt")]
    DrtDiffusion,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::ClassicalDiffusion => "classical",
            StrategyKind::DrtDiffusion => "drt",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(StrategyKind::ClassicalDiffusion),
            "drt" => Ok(StrategyKind::DrtDiffusion),
            other => Err(Error::Parse(format!(
                "unknown strategy {other:?}, expected classical or drt"
            ))),
        }
    }
}

/// One agent: id, current parameters, and the seed material from which its
/// per-round batch streams derive. Streams are tagged with (round, agent),
/// so they are independent of execution order and of the strategy in use.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: usize,
    pub params: LayeredParams,
    pub rng_seed: u64,
}

impl AgentState {
    pub fn new(agent_id: usize, params: LayeredParams, master_seed: u64) -> Self {
        Self { agent_id, params, rng_seed: master_seed }
    }

    /// Seed for this agent's batch shuffle in one (round, epoch) slot.
    fn epoch_seed(&self, round: usize, epoch: usize) -> u64 {
        rng::derive_seed(
            self.rng_seed,
            &[TAG_EPOCH, round as u64, self.agent_id as u64, epoch as u64],
        )
    }
}

/// Per-round hyperparameters. `local_steps = None` means one local epoch:
/// ceil(shard size / batch size) steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSpec {
    pub mu: f64,
    pub batch_size: usize,
    pub local_steps: Option<usize>,
    pub consensus_steps: usize,
}

impl RoundSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || self.mu <= 0.0 || self.mu > 0.5 {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 0.5], got {}",
                self.mu
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if self.local_steps == Some(0) {
            return Err(Error::InvalidParameter("local steps must be positive when set".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Single steps
// ---------------------------------------------------------------------------

/// One gradient step `psi = params - mu * grad` on one batch. The state is
/// not mutated; committing the step is the caller's decision.
pub fn adapt_step(
    arch: &Architecture,
    state: &AgentState,
    batch: &Batch,
    mu: f64,
) -> Result<LayeredParams> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step size must be finite and nonnegative, got {mu}"
        )));
    }
    let (_, grad) = nn::loss_and_grad(arch, &state.params, batch)?;
    let mut psi = state.params.clone();
    psi.axpy(-mu, &grad);
    Ok(psi)
}

fn check_psis(psis: &[LayeredParams], k: usize) -> Result<()> {
    if psis.len() != k {
        return Err(Error::ContractViolation(format!(
            "{} parameter sets for {k} agents",
            psis.len()
        )));
    }
    for psi in psis {
        if psi.layers.len() != psis[0].layers.len()
            || psi.layers.iter().zip(&psis[0].layers).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::ContractViolation(
                "parameter sets have different layer shapes".into(),
            ));
        }
    }
    Ok(())
}

/// Static combination: every layer of agent k becomes the column-k weighted
/// sum of neighbors' layers.
pub fn combine_classical(psis: &[LayeredParams], a: &BaseWeights) -> Result<Vec<LayeredParams>> {
    let k = a.num_agents();
    check_psis(psis, k)?;
    for col in 0..k {
        let sum: f64 = (0..k).map(|row| a.get(row, col)).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ContractViolation(format!(
                "base matrix column {col} sums to {sum}, expected 1"
            )));
        }
    }
    let mut out = Vec::with_capacity(k);
    for col in 0..k {
        let mut acc = LayeredParams {
            layers: psis[0].layers.iter().map(|l| vec![0.0; l.len()]).collect(),
        };
        for row in 0..k {
            let w = a.get(row, col);
            if w != 0.0 {
                acc.axpy(w, &psis[row]);
            }
        }
        out.push(acc);
    }
    Ok(out)
}

fn apply_tensor(psis: &[LayeredParams], tensor: &MixingTensor) -> Vec<LayeredParams> {
    let k = tensor.num_agents();
    let mut out = Vec::with_capacity(k);
    for col in 0..k {
        let mut layers = Vec::with_capacity(psis[0].layers.len());
        for (p, layer0) in psis[0].layers.iter().enumerate() {
            let m = tensor.layer(p);
            let mut acc = vec![0.0; layer0.len()];
            for row in 0..k {
                let w = m[[row, col]];
                if w != 0.0 {
                    for (dst, src) in acc.iter_mut().zip(&psis[row].layers[p]) {
                        *dst += w * src;
                    }
                }
            }
            layers.push(acc);
        }
        out.push(LayeredParams { layers });
    }
    out
}

/// Trust-based combination: build the per-layer tensor from the snapshot,
/// then combine layer by layer. Returns the tensor for diagnostics.
pub fn combine_drt(
    psis: &[LayeredParams],
    base: &BaseWeights,
    topo: &Topology,
    cfg: &DrtConfig,
    iter: usize,
) -> Result<(Vec<LayeredParams>, MixingTensor)> {
    check_psis(psis, topo.num_agents())?;
    let tensor = build_mixing_tensor(psis, base, topo, cfg, iter)?;
    let out = apply_tensor(psis, &tensor);
    Ok((out, tensor))
}

// ---------------------------------------------------------------------------
// Full rounds
// ---------------------------------------------------------------------------

/// Immutable inputs shared by every round of a run.
pub struct RoundContext<'a> {
    pub arch: &'a Architecture,
    pub dataset: &'a Dataset,
    pub assignments: &'a [Vec<usize>],
    pub base: &'a BaseWeights,
    pub topology: &'a Topology,
    pub drt: &'a DrtConfig,
    pub spec: &'a RoundSpec,
    pub kind: StrategyKind,
    /// Reuse the first consensus step's tensor for the whole round.
    pub freeze_weights_within_round: bool,
    /// Keep the built tensors in the telemetry.
    pub record_tensors: bool,
}

/// What one round reports back.
#[derive(Debug, Clone)]
pub struct RoundTelemetry {
    /// Mean training loss over each agent's local steps this round.
    pub per_agent_loss: Vec<f64>,
    /// Tensors built this round (trust-based runs with recording on).
    pub tensors: Vec<MixingTensor>,
}

fn adapt_agent(
    ctx: &RoundContext<'_>,
    state: &mut AgentState,
    round: usize,
) -> Result<f64> {
    let shard = &ctx.assignments[state.agent_id];
    if shard.is_empty() {
        return Ok(f64::NAN);
    }
    let steps = ctx
        .spec
        .local_steps
        .unwrap_or_else(|| shard.len().div_ceil(ctx.spec.batch_size));
    let mut loss_sum = 0.0;
    let mut done = 0;
    let mut epoch = 0;
    while done < steps {
        let seq = data::batches(
            ctx.dataset,
            shard,
            ctx.spec.batch_size,
            state.epoch_seed(round, epoch),
        )?;
        for batch in &seq {
            if done == steps {
                break;
            }
            let (loss, grad) = nn::loss_and_grad(ctx.arch, &state.params, batch)?;
            state.params.axpy(-ctx.spec.mu, &grad);
            loss_sum += loss;
            done += 1;
        }
        epoch += 1;
    }
    Ok(loss_sum / steps as f64)
}

/// One bulk-synchronous round: local SGD per agent, then `consensus_steps`
/// combination steps. `first_iter` is the global index of this round's first
/// consensus step (tensors are tagged with it for post-hoc analysis).
pub fn run_round(
    ctx: &RoundContext<'_>,
    states: &mut [AgentState],
    round: usize,
    first_iter: usize,
    parallel: bool,
) -> Result<RoundTelemetry> {
    ctx.spec.validate()?;
    let k = ctx.topology.num_agents();
    if states.len() != k || ctx.assignments.len() != k {
        return Err(Error::ContractViolation(format!(
            "{} states and {} shards for {k} agents",
            states.len(),
            ctx.assignments.len()
        )));
    }

    let per_agent_loss: Vec<f64> = if parallel {
        states
            .par_iter_mut()
            .map(|s| adapt_agent(ctx, s, round))
            .collect::<Result<_>>()?
    } else {
        states
            .iter_mut()
            .map(|s| adapt_agent(ctx, s, round))
            .collect::<Result<_>>()?
    };

    let mut tensors = Vec::new();
    if ctx.spec.consensus_steps > 0 {
        let mut psis: Vec<LayeredParams> = states.iter().map(|s| s.params.clone()).collect();
        match ctx.kind {
            StrategyKind::ClassicalDiffusion => {
                for _ in 0..ctx.spec.consensus_steps {
                    psis = combine_classical(&psis, ctx.base)?;
                }
            }
            StrategyKind::DrtDiffusion => {
                let mut frozen: Option<MixingTensor> = None;
                for step in 0..ctx.spec.consensus_steps {
                    if let (true, Some(t)) = (ctx.freeze_weights_within_round, &frozen) {
                        psis = apply_tensor(&psis, t);
                        continue;
                    }
                    let (next, tensor) =
                        combine_drt(&psis, ctx.base, ctx.topology, ctx.drt, first_iter + step)?;
                    psis = next;
                    if ctx.record_tensors {
                        tensors.push(tensor.clone());
                    }
                    if ctx.freeze_weights_within_round {
                        frozen = Some(tensor);
                    }
                }
            }
        }
        for (state, psi) in states.iter_mut().zip(psis) {
            state.params = psi;
        }
    }
    Ok(RoundTelemetry { per_agent_loss, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_gaussian_blobs;
    use crate::nn::{init_params, Activation};
    use crate::topology::{build_complete, build_ring, metropolis_weights, Topology};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn arch2() -> Architecture {
        Architecture::new(vec![2, 2], Activation::Identity, false).unwrap()
    }

    fn close(a: &LayeredParams, b: &LayeredParams, tol: f64) -> bool {
        a.layers
            .iter()
            .flatten()
            .zip(b.layers.iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_step_size_returns_params() {
        let arch = arch2();
        let state = AgentState::new(0, init_params(&arch, 1), 0);
        let batch = Batch::new(array![[1.0, -0.5]], vec![1]).unwrap();
        let psi = adapt_step(&arch, &state, &batch, 0.0).unwrap();
        assert_eq!(psi, state.params);
    }

    #[test]
    fn canceling_batch_has_zero_gradient() {
        // Two copies of the same input with opposite labels: at zero params
        // the per-sample softmax gradients cancel exactly.
        let arch = arch2();
        let state = AgentState::new(0, LayeredParams::zeros(&arch), 0);
        let batch = Batch::new(array![[1.0, 0.0], [1.0, 0.0]], vec![0, 1]).unwrap();
        let psi = adapt_step(&arch, &state, &batch, 0.3).unwrap();
        assert_eq!(psi, state.params);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // One input x = (1, 0), label 0, linear 2-class net with weights
        // w = [[a, 0], [b, 0]]: logits (a, b), so dL/da = p0 - 1, dL/db = p1.
        let arch = arch2();
        let (a, b) = (0.4, -0.2);
        let params = LayeredParams { layers: vec![vec![a, 0.0, b, 0.0]] };
        let state = AgentState::new(0, params, 0);
        let batch = Batch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        let mu = 0.1;
        let psi = adapt_step(&arch, &state, &batch, mu).unwrap();
        let z = (a - b) as f64;
        let p0 = 1.0 / (1.0 + (-z).exp());
        assert_abs_diff_eq!(psi.layers[0][0], a - mu * (p0 - 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(psi.layers[0][2], b - mu * (1.0 - p0), epsilon = 1e-12);
    }

    #[test]
    fn identity_base_matrix_is_a_no_op() {
        let eye = BaseWeights::from_matrix(Array2::eye(3)).unwrap();
        let arch = arch2();
        let psis: Vec<_> = (0..3).map(|s| init_params(&arch, s)).collect();
        let out = combine_classical(&psis, &eye).unwrap();
        assert_eq!(out, psis);
    }

    #[test]
    fn two_agent_half_weights_average() {
        let base = metropolis_weights(&build_complete(2).unwrap());
        let x = LayeredParams { layers: vec![vec![2.0, 4.0]] };
        let y = LayeredParams { layers: vec![vec![0.0, -2.0]] };
        let out = combine_classical(&[x, y], &base).unwrap();
        for o in &out {
            assert_eq!(o.layers[0], vec![1.0, 1.0]);
        }
    }

    #[test]
    fn non_stochastic_base_is_rejected() {
        let bad = BaseWeights::from_matrix(array![[0.5, 0.5], [0.1, 0.5]]).unwrap();
        let arch = arch2();
        let psis: Vec<_> = (0..2).map(|s| init_params(&arch, s)).collect();
        assert!(combine_classical(&psis, &bad).is_err());
    }

    #[test]
    fn two_agent_trust_combination_preserves_consensus() {
        let topo = build_complete(2).unwrap();
        let base = metropolis_weights(&topo);
        let w = LayeredParams { layers: vec![vec![1.0]] };
        let cfg = DrtConfig::new(0.0, 2.0).unwrap();
        let (out, _) = combine_drt(&[w.clone(), w.clone()], &base, &topo, &cfg, 0).unwrap();
        for o in &out {
            assert!(close(o, &w, 1e-12));
        }
    }

    #[test]
    fn trust_combination_matches_dense_recomputation() {
        let topo = build_ring(4).unwrap();
        let base = metropolis_weights(&topo);
        let arch = Architecture::new(vec![2, 3, 2], Activation::Relu, true).unwrap();
        let psis: Vec<_> = (0..4).map(|s| init_params(&arch, 10 + s)).collect();
        let cfg = DrtConfig::new(1e-8, 8.0).unwrap();
        let (out, tensor) = combine_drt(&psis, &base, &topo, &cfg, 3).unwrap();
        for col in 0..4 {
            for p in 0..2 {
                let m = tensor.layer(p);
                for i in 0..psis[0].layers[p].len() {
                    let mut want = 0.0;
                    for row in 0..4 {
                        want += m[[row, col]] * psis[row].layers[p][i];
                    }
                    assert_abs_diff_eq!(out[col].layers[p][i], want, epsilon = 1e-12);
                }
            }
        }
        assert_eq!(tensor.iteration_index(), 3);
    }

    fn zero_grad_context<'a>(
        arch: &'a Architecture,
        ds: &'a Dataset,
        assigns: &'a [Vec<usize>],
        base: &'a BaseWeights,
        topo: &'a Topology,
        drt: &'a DrtConfig,
        spec: &'a RoundSpec,
        kind: StrategyKind,
    ) -> RoundContext<'a> {
        RoundContext {
            arch,
            dataset: ds,
            assignments: assigns,
            base,
            topology: topo,
            drt,
            spec,
            kind,
            freeze_weights_within_round: false,
            record_tensors: false,
        }
    }

    #[test]
    fn both_strategies_are_fixed_at_consensus_with_zero_gradients() {
        // All agents share params whose two logit rows coincide, and each
        // shard is a canceling label pair on one input. Equal logits give a
        // uniform softmax, the pair's deltas cancel exactly, and neither
        // strategy moves anything.
        let arch = arch2();
        let inputs = Array2::from_shape_vec((8, 2), vec![1.0, 0.0].repeat(8)).unwrap();
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let ds = Dataset::new(inputs, labels, 2).unwrap();
        let assigns: Vec<Vec<usize>> = (0..4).map(|a| vec![2 * a, 2 * a + 1]).collect();
        let topo = build_ring(4).unwrap();
        let base = metropolis_weights(&topo);
        let drt = DrtConfig::new(1e-8, 8.0).unwrap();
        let spec = RoundSpec { mu: 0.05, batch_size: 2, local_steps: None, consensus_steps: 2 };
        let shared = LayeredParams { layers: vec![vec![0.4, -0.3, 0.4, -0.3]] };
        for kind in [StrategyKind::ClassicalDiffusion, StrategyKind::DrtDiffusion] {
            let ctx = zero_grad_context(&arch, &ds, &assigns, &base, &topo, &drt, &spec, kind);
            let mut states: Vec<_> =
                (0..4).map(|a| AgentState::new(a, shared.clone(), 9)).collect();
            run_round(&ctx, &mut states, 1, 0, false).unwrap();
            for s in &states {
                assert!(close(&s.params, &shared, 1e-12), "{kind} moved the consensus");
            }
        }
    }

    #[test]
    fn local_only_round_grows_disagreement() {
        let ds = make_gaussian_blobs(4, 2, 30, 0.5, 3).unwrap();
        let arch = Architecture::new(vec![2, 4], Activation::Identity, true).unwrap();
        // One class per agent: maximally non-IID.
        let assigns: Vec<Vec<usize>> =
            (0..4).map(|c| (0..ds.len()).filter(|&i| ds.labels[i] == c).collect()).collect();
        let topo = build_ring(4).unwrap();
        let base = metropolis_weights(&topo);
        let drt = DrtConfig::new(1e-8, 8.0).unwrap();
        let spec = RoundSpec { mu: 0.05, batch_size: 8, local_steps: None, consensus_steps: 0 };
        let ctx = zero_grad_context(
            &arch,
            &ds,
            &assigns,
            &base,
            &topo,
            &drt,
            &spec,
            StrategyKind::ClassicalDiffusion,
        );
        let shared = init_params(&arch, 5);
        let mut states: Vec<_> = (0..4).map(|a| AgentState::new(a, shared.clone(), 11)).collect();
        run_round(&ctx, &mut states, 1, 0, false).unwrap();
        for s in &states {
            assert!(!close(&s.params, &shared, 1e-9), "agent {} did not move", s.agent_id);
        }
        for a in 0..4 {
            for b in a + 1..4 {
                assert!(!close(&states[a].params, &states[b].params, 1e-9));
            }
        }
    }

    #[test]
    fn parallel_round_is_bitwise_identical_to_serial() {
        let ds = make_gaussian_blobs(3, 2, 20, 0.6, 8).unwrap();
        let arch = Architecture::new(vec![2, 4, 3], Activation::Relu, true).unwrap();
        let topo = build_ring(3).unwrap();
        let base = metropolis_weights(&topo);
        let assigns = crate::data::partition(
            &ds,
            &crate::data::PartitionSpec {
                num_agents: 3,
                classes_per_agent: (1, 1),
                samples_per_agent: (1, 1),
                iid: true,
                seed: 4,
            },
        )
        .unwrap();
        let drt = DrtConfig::new(1e-8, 6.0).unwrap();
        let spec = RoundSpec { mu: 0.05, batch_size: 4, local_steps: None, consensus_steps: 2 };
        let ctx = zero_grad_context(
            &arch,
            &ds,
            &assigns,
            &base,
            &topo,
            &drt,
            &spec,
            StrategyKind::DrtDiffusion,
        );
        let init = init_params(&arch, 2);
        let mut serial: Vec<_> = (0..3).map(|a| AgentState::new(a, init.clone(), 6)).collect();
        let mut par: Vec<_> = (0..3).map(|a| AgentState::new(a, init.clone(), 6)).collect();
        let t1 = run_round(&ctx, &mut serial, 1, 0, false).unwrap();
        let t2 = run_round(&ctx, &mut par, 1, 0, true).unwrap();
        assert_eq!(t1.per_agent_loss, t2.per_agent_loss);
        for (a, b) in serial.iter().zip(&par) {
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn recorded_tensors_carry_consecutive_iteration_indices() {
        let ds = make_gaussian_blobs(3, 2, 20, 0.6, 8).unwrap();
        let arch = Architecture::new(vec![2, 3], Activation::Identity, false).unwrap();
        let topo = build_ring(3).unwrap();
        let base = metropolis_weights(&topo);
        let assigns: Vec<Vec<usize>> = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let drt = DrtConfig::new(1e-8, 6.0).unwrap();
        let spec = RoundSpec { mu: 0.05, batch_size: 2, local_steps: Some(1), consensus_steps: 3 };
        let mut ctx = zero_grad_context(
            &arch,
            &ds,
            &assigns,
            &base,
            &topo,
            &drt,
            &spec,
            StrategyKind::DrtDiffusion,
        );
        ctx.record_tensors = true;
        let mut states: Vec<_> =
            (0..3).map(|a| AgentState::new(a, init_params(&arch, 1), 3)).collect();
        let t = run_round(&ctx, &mut states, 2, 6, false).unwrap();
        let idx: Vec<usize> = t.tensors.iter().map(MixingTensor::iteration_index).collect();
        assert_eq!(idx, vec![6, 7, 8]);

        // Frozen variant: one build, reused for the remaining steps.
        ctx.freeze_weights_within_round = true;
        let mut states: Vec<_> =
            (0..3).map(|a| AgentState::new(a, init_params(&arch, 1), 3)).collect();
        let t = run_round(&ctx, &mut states, 2, 6, false).unwrap();
        assert_eq!(t.tensors.len(), 1);
    }

    #[test]
    fn round_spec_validation_rejects_bad_values() {
        let ok = RoundSpec { mu: 0.05, batch_size: 4, local_steps: None, consensus_steps: 0 };
        assert!(ok.validate().is_ok());
        assert!(RoundSpec { mu: 0.0, ..ok.clone() }.validate().is_err());
        assert!(RoundSpec { mu: 0.7, ..ok.clone() }.validate().is_err());
        assert!(RoundSpec { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(RoundSpec { local_steps: Some(0), ..ok }.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn consensus_is_preserved_by_both_rules(seed in 0u64..300, k in 2usize..6) {
            let topo = build_ring(k.max(2)).unwrap();
            let base = metropolis_weights(&topo);
            let arch = Architecture::new(vec![2, 3, 2], Activation::Relu, true).unwrap();
            let shared = init_params(&arch, seed);
            let psis: Vec<_> = (0..topo.num_agents()).map(|_| shared.clone()).collect();
            let out = combine_classical(&psis, &base).unwrap();
            for o in &out {
                prop_assert!(close(o, &shared, 1e-12));
            }
            let cfg = DrtConfig::new(1e-8, 2.0 * k as f64).unwrap();
            let (out, _) = combine_drt(&psis, &base, &topo, &cfg, 0).unwrap();
            for o in &out {
                prop_assert!(close(o, &shared, 1e-12));
            }
        }

        #[test]
        fn combined_coordinates_stay_in_the_neighborhood_hull(seed in 0u64..300) {
            let topo = build_ring(5).unwrap();
            let base = metropolis_weights(&topo);
            let arch = Architecture::new(vec![2, 2], Activation::Identity, true).unwrap();
            let psis: Vec<_> = (0..5).map(|a| init_params(&arch, seed * 10 + a)).collect();
            let cfg = DrtConfig::new(1e-8, 10.0).unwrap();
            let classical = combine_classical(&psis, &base).unwrap();
            let (trust, _) = combine_drt(&psis, &base, &topo, &cfg, 0).unwrap();
            for k in 0..5 {
                let hood = topo.neighborhood(k);
                for p in 0..psis[0].layers.len() {
                    for i in 0..psis[0].layers[p].len() {
                        let lo = hood.iter().map(|&l| psis[l].layers[p][i]).fold(f64::INFINITY, f64::min);
                        let hi = hood.iter().map(|&l| psis[l].layers[p][i]).fold(f64::NEG_INFINITY, f64::max);
                        for out in [&classical, &trust] {
                            let v = out[k].layers[p][i];
                            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                        }
                    }
                }
            }
        }
    }
}
