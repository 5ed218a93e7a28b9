//! The nested segmentation network: blocks at every plan node, learned
//! up-sampling on every up edge, and a sigmoid 1x1 head per supervised node.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Exec};
use crate::blocks::{
    block_forward, block_param_count, conv, conv_param_count, init_conv, vector_shape, BlockParams, BlockSpec,
    ConvParams, Ctx, Mode,
};
use crate::error::{config_err, shape_err, Result};
use crate::graph::{build_plan, ArchitectureConfig, Edge, GraphPlan, NodeId};
use crate::param::{BufferStore, ParamId, ParamStore, RunningStats, StatUpdate};
use crate::tensor::{Shape, Tensor};

/// Which output a prediction uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictMode {
    /// Mean of all depth heads.
    Ensemble,
    /// The head of the depth-`q` sub-network alone.
    Depth(usize),
}

impl std::str::FromStr for PredictMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("ensemble") {
            return Ok(PredictMode::Ensemble);
        }
        s.strip_prefix(['L', 'l'])
            .and_then(|q| q.parse().ok())
            .filter(|&q| q >= 1)
            .map(PredictMode::Depth)
            .ok_or_else(|| config_err!("unknown prediction mode {s:?}; use ensemble or L1, L2, ..."))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UpParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Node activations, head outputs in plan order, and batch statistics to
/// fold into the running statistics after a training pass.
pub struct ForwardOutput<V> {
    pub nodes: BTreeMap<NodeId, V>,
    pub heads: Vec<(NodeId, V)>,
    pub stat_updates: Vec<StatUpdate>,
}

/// Parameter and buffer values captured for later restore.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub params: Vec<Tensor>,
    pub buffers: Vec<RunningStats>,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: ArchitectureConfig,
    pub plan: GraphPlan,
    pub params: ParamStore,
    pub buffers: BufferStore,
    blocks: BTreeMap<NodeId, BlockParams>,
    ups: BTreeMap<NodeId, UpParams>,
    heads: BTreeMap<NodeId, ConvParams>,
}

fn block_spec(config: &ArchitectureConfig, id: NodeId, edges: &[Edge]) -> BlockSpec {
    let f = &config.filters;
    let in_channels = edges
        .iter()
        .map(|e| match e {
            Edge::Input => config.in_channels,
            Edge::Pool(_) => f[id.m - 1],
            Edge::Same(_) | Edge::Up(_) => f[id.m],
        })
        .sum();
    BlockSpec {
        kind: config.block_kind,
        in_channels,
        out_channels: f[id.m],
        t: config.t,
    }
}

/// Exact trainable-scalar count of the network `config` describes.
pub fn count_parameters(config: &ArchitectureConfig) -> Result<usize> {
    let plan = build_plan(config)?;
    Ok(parameter_breakdown(config, &plan).iter().map(|(_, c)| c).sum())
}

/// Per-component counts: one entry per block (with its up-sampling edge)
/// and one per head, in plan order.
pub fn parameter_breakdown(config: &ArchitectureConfig, plan: &GraphPlan) -> Vec<(String, usize)> {
    let f = &config.filters;
    let mut rows = Vec::new();
    for id in &plan.nodes {
        let edges = &plan.inputs[id];
        let mut count = block_param_count(&block_spec(config, *id, edges));
        if edges.iter().any(|e| matches!(e, Edge::Up(_))) {
            count += 4 * f[id.m + 1] * f[id.m] + f[id.m];
        }
        rows.push((id.to_string(), count));
    }
    for h in &plan.heads {
        rows.push((format!("head {h}"), conv_param_count(f[0], config.num_classes, 1)));
    }
    rows
}

impl Network {
    pub fn new(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        let plan = build_plan(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let mut blocks = BTreeMap::new();
        let mut ups = BTreeMap::new();
        let mut heads = BTreeMap::new();
        let f = &config.filters;
        for id in &plan.nodes {
            let edges = &plan.inputs[id];
            if edges.iter().any(|e| matches!(e, Edge::Up(_))) {
                let (cin, cout) = (f[id.m + 1], f[id.m]);
                let bound = (6.0 / cin as f64).sqrt();
                let weight = params.add(
                    format!("{id}.up.weight"),
                    Tensor::uniform(Shape::new(cin, cout, 2, 2), -bound, bound, &mut rng),
                )?;
                let bias = params.add(format!("{id}.up.bias"), Tensor::zeros(vector_shape(cout)))?;
                ups.insert(*id, UpParams { weight, bias });
            }
            let spec = block_spec(&config, *id, edges);
            let block = BlockParams::init(&spec, &id.to_string(), &mut params, &mut buffers, &mut rng)?;
            blocks.insert(*id, block);
        }
        for h in &plan.heads {
            let head = init_conv(
                &mut params,
                &mut rng,
                &format!("head{}", h.n),
                f[0],
                config.num_classes,
                1,
            )?;
            heads.insert(*h, head);
        }
        Ok(Network {
            config,
            plan,
            params,
            buffers,
            blocks,
            ups,
            heads,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Checks an input shape against the configuration before any compute.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        let k = self.config.spatial_multiple();
        if shape.c != self.config.in_channels {
            return Err(shape_err!(
                "input {shape} has {} channels, network expects {}",
                shape.c,
                self.config.in_channels
            ));
        }
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(k) || !shape.w.is_multiple_of(k) {
            return Err(shape_err!(
                "input {shape} spatial dims must be positive multiples of {k} for depth {}",
                self.config.depth
            ));
        }
        Ok(())
    }

    /// The plan for a prediction mode.
    pub fn plan_for(&self, mode: PredictMode) -> Result<GraphPlan> {
        match mode {
            PredictMode::Ensemble => Ok(self.plan.clone()),
            PredictMode::Depth(q) => self.plan.prune(q),
        }
    }

    /// Evaluates `plan` (the full plan or a pruned one) on `input`.
    pub fn forward<E: Exec>(
        &self,
        exec: &mut E,
        plan: &GraphPlan,
        input: &E::Value,
        mode: Mode,
    ) -> Result<ForwardOutput<E::Value>> {
        self.check_input(exec.tensor(input).shape())?;
        let mut ctx = Ctx::new(&self.params, &self.buffers, mode);
        let mut nodes: BTreeMap<NodeId, E::Value> = BTreeMap::new();
        let fetch = |nodes: &BTreeMap<NodeId, E::Value>, src: NodeId| {
            nodes
                .get(&src)
                .cloned()
                .ok_or_else(|| config_err!("plan reads {src} before computing it"))
        };
        for id in &plan.nodes {
            let block = self
                .blocks
                .get(id)
                .ok_or_else(|| config_err!("plan node {id} is not part of this network"))?;
            let mut feeds = Vec::new();
            for e in &plan.inputs[id] {
                let v = match *e {
                    Edge::Input => input.clone(),
                    Edge::Pool(src) => {
                        let s = fetch(&nodes, src)?;
                        exec.maxpool_2x2(&s)?
                    }
                    Edge::Same(src) => fetch(&nodes, src)?,
                    Edge::Up(src) => {
                        let s = fetch(&nodes, src)?;
                        let up = &self.ups[id];
                        let w = exec.param(&self.params, up.weight);
                        let b = exec.param(&self.params, up.bias);
                        exec.upsample_2x(&s, &w, Some(&b))?
                    }
                };
                feeds.push(v);
            }
            let x = if feeds.len() == 1 {
                feeds.swap_remove(0)
            } else {
                exec.concat(&feeds)?
            };
            let y = block_forward(exec, &mut ctx, block, &x)?;
            nodes.insert(*id, y);
        }
        let mut heads = Vec::with_capacity(plan.heads.len());
        for h in &plan.heads {
            let hp = self
                .heads
                .get(h)
                .ok_or_else(|| config_err!("network has no head at {h}"))?;
            let x = fetch(&nodes, *h)?;
            let logits = conv(exec, &ctx, hp, &x)?;
            heads.push((*h, exec.sigmoid(&logits)));
        }
        Ok(ForwardOutput {
            nodes,
            heads,
            stat_updates: ctx.updates,
        })
    }

    /// Inference-mode outputs of every head of the full plan.
    pub fn head_outputs(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut ex = Eager::new();
        let x = ex.constant(input.clone());
        let out = self.forward(&mut ex, &self.plan, &x, Mode::Infer)?;
        drop(out.nodes);
        Ok(out.heads.into_iter().map(|(_, v)| Arc::unwrap_or_clone(v)).collect())
    }

    /// Inference-mode probability map for a batch.
    pub fn predict(&self, input: &Tensor, mode: PredictMode) -> Result<Tensor> {
        let plan = self.plan_for(mode)?;
        let mut ex = Eager::new();
        let x = ex.constant(input.clone());
        let out = self.forward(&mut ex, &plan, &x, Mode::Infer)?;
        drop(out.nodes);
        let mut heads: Vec<_> = out.heads.into_iter().map(|(_, v)| v).collect();
        let p = if heads.len() == 1 {
            heads.swap_remove(0)
        } else {
            ensemble(&mut ex, &heads)?
        };
        drop(heads);
        Ok(Arc::unwrap_or_clone(p))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            params: self.params.iter().map(|p| (*p.value).clone()).collect(),
            buffers: self.buffers.iter().map(|(_, s)| s.clone()).collect(),
        }
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if snap.params.len() != self.params.len() || snap.buffers.len() != self.buffers.len() {
            return Err(config_err!("snapshot does not match the network layout"));
        }
        for (p, v) in self.params.iter_mut().zip(&snap.params) {
            if p.value.shape() != v.shape() {
                return Err(config_err!(
                    "snapshot shape {} does not match parameter {}",
                    v.shape(),
                    p.name
                ));
            }
            p.value = Arc::new(v.clone());
        }
        for (dst, src) in self.buffers.iter_mut().zip(&snap.buffers) {
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Elementwise mean of the depth heads.
pub fn ensemble<E: Exec>(exec: &mut E, heads: &[E::Value]) -> Result<E::Value> {
    if heads.is_empty() {
        return Err(shape_err!("ensemble of no heads"));
    }
    exec.mean(heads)
}
