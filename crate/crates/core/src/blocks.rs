//! Convolution blocks: the plain two-layer block of U-Net/U-Net++ and the
//! recurrent-residual block built from two recurrent convolution units.
//!
//! A recurrent unit with `t` time steps evaluates
//!
//! ```text
//! o_1 = relu(bn(conv(x, w_f)))
//! o_s = relu(bn(conv(x, w_f) + conv(o_{s-1}, w_r)))   for s = 2..=t
//! ```
//!
//! and returns `o_t`. `w_f`, `w_r` and the batchnorm affine pair are shared by
//! all steps, so the recurrent weights exist only when `t >= 2` and the
//! parameter count does not grow past that. Each step keeps its own running
//! statistics.
//!
//! The recurrent-residual block projects its input to `out_channels` with a
//! 1x1 convolution, runs two recurrent units and adds the projection back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BnMode, Exec};
use crate::error::{config_err, Result};
use crate::param::{BufferId, BufferStore, ParamId, ParamStore, StatUpdate};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Plain,
    Rrcl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Recurrent time steps; ignored for plain blocks.
    pub t: usize,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err!(
                "block channels must be positive, got {} -> {}",
                self.in_channels,
                self.out_channels
            ));
        }
        if self.kind == BlockKind::Rrcl && self.t == 0 {
            return Err(config_err!("recurrent time step t must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Shared state threaded through a forward pass.
pub struct Ctx<'a> {
    pub params: &'a ParamStore,
    pub buffers: &'a BufferStore,
    pub mode: Mode,
    /// Batch statistics gathered in training mode, to be folded into the
    /// running statistics once the pass is done.
    pub updates: Vec<StatUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a ParamStore, buffers: &'a BufferStore, mode: Mode) -> Self {
        Ctx {
            params,
            buffers,
            mode,
            updates: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// One running-statistics slot per time step.
    pub stats: Vec<BufferId>,
}

#[derive(Clone, Debug)]
pub struct RclParams {
    pub wf: ConvParams,
    pub wr: Option<ConvParams>,
    pub bn: BnParams,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub enum BlockParams {
    Plain { convs: [ConvParams; 2], bns: [BnParams; 2] },
    Rrcl { entry: ConvParams, units: [RclParams; 2] },
}

pub(crate) fn vector_shape(len: usize) -> Shape {
    Shape::new(1, len, 1, 1)
}

/// Fan-in scaled uniform weights, zero bias.
pub fn init_conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
) -> Result<ConvParams> {
    let fan_in = (cin * kernel * kernel) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let weight = store.add(
        format!("{name}.weight"),
        Tensor::uniform(Shape::new(cout, cin, kernel, kernel), -bound, bound, rng),
    )?;
    let bias = store.add(format!("{name}.bias"), Tensor::zeros(vector_shape(cout)))?;
    Ok(ConvParams {
        weight,
        bias,
        padding: kernel / 2,
    })
}

pub fn init_bn(
    store: &mut ParamStore,
    buffers: &mut BufferStore,
    name: &str,
    channels: usize,
    steps: usize,
) -> Result<BnParams> {
    let gamma = store.add(format!("{name}.gamma"), Tensor::full(vector_shape(channels), 1.0))?;
    let beta = store.add(format!("{name}.beta"), Tensor::zeros(vector_shape(channels)))?;
    let stats = (1..=steps)
        .map(|s| buffers.add(format!("{name}.stats{s}"), channels))
        .collect::<Result<_>>()?;
    Ok(BnParams { gamma, beta, stats })
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(
        spec: &BlockSpec,
        prefix: &str,
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        match spec.kind {
            BlockKind::Plain => {
                let c1 = init_conv(store, rng, &format!("{prefix}.conv1"), cin, cout, 3)?;
                let b1 = init_bn(store, buffers, &format!("{prefix}.bn1"), cout, 1)?;
                let c2 = init_conv(store, rng, &format!("{prefix}.conv2"), cout, cout, 3)?;
                let b2 = init_bn(store, buffers, &format!("{prefix}.bn2"), cout, 1)?;
                Ok(BlockParams::Plain {
                    convs: [c1, c2],
                    bns: [b1, b2],
                })
            }
            BlockKind::Rrcl => {
                let entry = init_conv(store, rng, &format!("{prefix}.entry"), cin, cout, 1)?;
                let mut unit = |i: usize| -> Result<RclParams> {
                    let name = format!("{prefix}.rcl{i}");
                    let wf = init_conv(store, rng, &format!("{name}.wf"), cout, cout, 3)?;
                    let wr = if spec.t >= 2 {
                        Some(init_conv(store, rng, &format!("{name}.wr"), cout, cout, 3)?)
                    } else {
                        None
                    };
                    let bn = init_bn(store, buffers, &format!("{name}.bn"), cout, spec.t)?;
                    Ok(RclParams {
                        wf,
                        wr,
                        bn,
                        steps: spec.t,
                    })
                };
                let u1 = unit(1)?;
                let u2 = unit(2)?;
                Ok(BlockParams::Rrcl { entry, units: [u1, u2] })
            }
        }
    }
}

pub fn conv<E: Exec>(exec: &mut E, ctx: &Ctx<'_>, p: &ConvParams, x: &E::Value) -> Result<E::Value> {
    let w = exec.param(ctx.params, p.weight);
    let b = exec.param(ctx.params, p.bias);
    exec.conv2d(x, &w, Some(&b), 1, p.padding)
}

/// Batchnorm at time step `step` (1-based) of a site.
pub fn batchnorm<E: Exec>(
    exec: &mut E,
    ctx: &mut Ctx<'_>,
    p: &BnParams,
    step: usize,
    x: &E::Value,
) -> Result<E::Value> {
    let gamma = exec.param(ctx.params, p.gamma);
    let beta = exec.param(ctx.params, p.beta);
    let slot = p.stats[step - 1];
    let mode = match ctx.mode {
        Mode::Train => BnMode::Train,
        Mode::Infer => BnMode::Infer(ctx.buffers.get(slot)),
    };
    let (y, stats) = exec.batchnorm(x, &gamma, &beta, mode)?;
    if let Some((mean, var)) = stats {
        ctx.updates.push(StatUpdate { id: slot, mean, var });
    }
    Ok(y)
}

pub fn rcl_unit<E: Exec>(exec: &mut E, ctx: &mut Ctx<'_>, p: &RclParams, x: &E::Value) -> Result<E::Value> {
    if p.steps == 0 {
        return Err(config_err!("recurrent time step t must be at least 1"));
    }
    let feed = conv(exec, ctx, &p.wf, x)?;
    let pre = batchnorm(exec, ctx, &p.bn, 1, &feed)?;
    let mut out = exec.relu(&pre);
    if p.steps >= 2 {
        let wr =
            p.wr.as_ref()
                .ok_or_else(|| config_err!("recurrent unit with t = {} has no recurrent weights", p.steps))?;
        for step in 2..=p.steps {
            let rec = conv(exec, ctx, wr, &out)?;
            let sum = exec.add(&feed, &rec)?;
            let pre = batchnorm(exec, ctx, &p.bn, step, &sum)?;
            out = exec.relu(&pre);
        }
    }
    Ok(out)
}

pub fn rrcl_block<E: Exec>(
    exec: &mut E,
    ctx: &mut Ctx<'_>,
    entry: &ConvParams,
    units: &[RclParams; 2],
    x: &E::Value,
) -> Result<E::Value> {
    let projected = conv(exec, ctx, entry, x)?;
    let y = rcl_unit(exec, ctx, &units[0], &projected)?;
    let y = rcl_unit(exec, ctx, &units[1], &y)?;
    exec.add(&projected, &y)
}

pub fn plain_block<E: Exec>(
    exec: &mut E,
    ctx: &mut Ctx<'_>,
    convs: &[ConvParams; 2],
    bns: &[BnParams; 2],
    x: &E::Value,
) -> Result<E::Value> {
    let mut y = x.clone();
    for (c, bn) in convs.iter().zip(bns) {
        let z = conv(exec, ctx, c, &y)?;
        let z = batchnorm(exec, ctx, bn, 1, &z)?;
        y = exec.relu(&z);
    }
    Ok(y)
}

pub fn block_forward<E: Exec>(exec: &mut E, ctx: &mut Ctx<'_>, p: &BlockParams, x: &E::Value) -> Result<E::Value> {
    match p {
        BlockParams::Plain { convs, bns } => plain_block(exec, ctx, convs, bns, x),
        BlockParams::Rrcl { entry, units } => rrcl_block(exec, ctx, entry, units, x),
    }
}

/// Scalar count of a `k x k` convolution with bias.
pub const fn conv_param_count(cin: usize, cout: usize, k: usize) -> usize {
    k * k * cin * cout + cout
}

/// Trainable scalars of a block built from `spec`: convolution weights and
/// biases plus batchnorm gamma/beta.
pub fn block_param_count(spec: &BlockSpec) -> usize {
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    match spec.kind {
        BlockKind::Plain => conv_param_count(cin, cout, 3) + conv_param_count(cout, cout, 3) + 2 * (2 * cout),
        BlockKind::Rrcl => {
            let recurrent = if spec.t >= 2 {
                conv_param_count(cout, cout, 3)
            } else {
                0
            };
            let unit = conv_param_count(cout, cout, 3) + recurrent + 2 * cout;
            conv_param_count(cin, cout, 1) + 2 * unit
        }
    }
}
