//! Central finite differences against the tape's reverse sweep.

mod common;

use std::sync::Arc;

use common::*;
use r2upp_core::autodiff::{BnMode, Exec, Tape, Var};
use r2upp_core::blocks::{block_forward, BlockKind, BlockParams, BlockSpec, Ctx, Mode};
use r2upp_core::param::{BufferStore, ParamStore, RunningStats};
use r2upp_core::trainer::supervised_loss;
use r2upp_core::{ArchitectureConfig, Network, Shape, Tensor};
use rand::RngExt;

const TOL: f64 = 1e-4;

fn assert_close(name: &str, err: f64, tol: f64) {
    assert!(err <= tol, "{name}: relative error {err:e} exceeds {tol:e}");
}

#[test]
fn conv2d_gradients() {
    let mut r = rng(1);
    for (k, stride, padding) in [(3, 1, 1), (3, 2, 0), (1, 1, 0), (3, 1, 0)] {
        let x = randn(Shape::new(2, 3, 6, 6), &mut r);
        let w = randn(Shape::new(4, 3, k, k), &mut r);
        let b = randn(Shape::new(1, 4, 1, 1), &mut r);
        let err = max_leaf_error(&[x, w, b], &|t, v| {
            let y = t.conv2d(&v[0], &v[1], Some(&v[2]), stride, padding).unwrap();
            project(t, y, 7)
        });
        assert_close("conv2d", err, TOL);
    }
}

#[test]
fn maxpool_gradients() {
    let mut r = rng(2);
    let x = randn(Shape::new(2, 3, 6, 6), &mut r);
    let err = max_leaf_error(&[x], &|t, v| {
        let y = t.maxpool_2x2(&v[0]).unwrap();
        project(t, y, 3)
    });
    assert_close("maxpool", err, TOL);
}

#[test]
fn upsample_gradients() {
    let mut r = rng(3);
    let x = randn(Shape::new(2, 3, 3, 3), &mut r);
    let w = randn(Shape::new(3, 2, 2, 2), &mut r);
    let b = randn(Shape::new(1, 2, 1, 1), &mut r);
    let err = max_leaf_error(&[x, w, b], &|t, v| {
        let y = t.upsample_2x(&v[0], &v[1], Some(&v[2])).unwrap();
        project(t, y, 4)
    });
    assert_close("upsample", err, TOL);
}

#[test]
fn batchnorm_gradients() {
    let mut r = rng(4);
    let x = randn(Shape::new(2, 3, 4, 4), &mut r);
    let g = Tensor::uniform(Shape::new(1, 3, 1, 1), 0.5, 1.5, &mut r);
    let b = randn(Shape::new(1, 3, 1, 1), &mut r);
    let train = max_leaf_error(&[x.clone(), g.clone(), b.clone()], &|t, v| {
        let (y, _) = t.batchnorm(&v[0], &v[1], &v[2], BnMode::Train).unwrap();
        project(t, y, 5)
    });
    assert_close("batchnorm train", train, TOL);
    let stats = RunningStats {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 1.5, 2.0],
    };
    let infer = max_leaf_error(&[x, g, b], &|t, v| {
        let (y, _) = t.batchnorm(&v[0], &v[1], &v[2], BnMode::Infer(&stats)).unwrap();
        project(t, y, 5)
    });
    assert_close("batchnorm infer", infer, TOL);
}

#[test]
fn activation_gradients() {
    let mut r = rng(5);
    let x = away_from_zero(Shape::new(2, 3, 6, 6), &mut r);
    let relu = max_leaf_error(std::slice::from_ref(&x), &|t, v| {
        let y = t.relu(&v[0]);
        project(t, y, 6)
    });
    assert_close("relu", relu, 1e-6);
    let sig = max_leaf_error(&[x.scale(3.0)], &|t, v| {
        let y = t.sigmoid(&v[0]);
        project(t, y, 6)
    });
    assert_close("sigmoid", sig, 1e-6);
}

#[test]
fn structural_op_gradients() {
    let mut r = rng(6);
    let a = randn(Shape::new(2, 2, 3, 3), &mut r);
    let b = randn(Shape::new(2, 3, 3, 3), &mut r);
    let c = randn(Shape::new(2, 2, 3, 3), &mut r);
    let concat = max_leaf_error(&[a.clone(), b, c.clone()], &|t, v| {
        let y = t.concat(v).unwrap();
        project(t, y, 8)
    });
    assert_close("concat", concat, TOL);
    let add = max_leaf_error(&[a.clone(), c.clone()], &|t, v| {
        let y = t.add(&v[0], &v[1]).unwrap();
        project(t, y, 9)
    });
    assert_close("add", add, TOL);
    let mean = max_leaf_error(&[a, c], &|t, v| {
        let y = t.mean(v).unwrap();
        project(t, y, 10)
    });
    assert_close("mean", mean, TOL);
}

#[test]
fn hybrid_loss_gradients() {
    let mut r = rng(7);
    for c in [1, 2] {
        let shape = Shape::new(2, c, 4, 4);
        let p = Tensor::uniform(shape, 0.05, 0.95, &mut r);
        let y = Arc::new(Tensor::from_fn(shape, |_, _, _, _| {
            f64::from(u8::from(r.random_bool(0.4)))
        }));
        let err = max_leaf_error(&[p], &|t, v| t.hybrid_loss(v[0], Arc::clone(&y)).unwrap());
        assert_close("hybrid loss", err, TOL);
    }
}

#[test]
fn head_gradients() {
    let mut r = rng(8);
    let x = randn(Shape::new(1, 4, 6, 6), &mut r);
    let w = randn(Shape::new(1, 4, 1, 1), &mut r);
    let b = randn(Shape::new(1, 1, 1, 1), &mut r);
    let y = Arc::new(Tensor::from_fn(Shape::new(1, 1, 6, 6), |_, _, i, j| {
        ((i + j) % 2) as f64
    }));
    let err = max_leaf_error(&[x, w, b], &|t, v| {
        let z = t.conv2d(&v[0], &v[1], Some(&v[2]), 1, 0).unwrap();
        let p = t.sigmoid(&z);
        t.hybrid_loss(p, Arc::clone(&y)).unwrap()
    });
    assert_close("head", err, TOL);
}

struct BlockModel {
    params: ParamStore,
    buffers: BufferStore,
    block: BlockParams,
    input: Tensor,
}

impl BlockModel {
    fn new(spec: BlockSpec, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let mut r = rng(seed);
        let block = BlockParams::init(&spec, "b", &mut params, &mut buffers, &mut r).unwrap();
        let input = randn(Shape::new(2, spec.in_channels, 6, 6), &mut r);
        BlockModel {
            params,
            buffers,
            block,
            input,
        }
    }

    fn loss(&self, tape: &mut Tape, x: &Var) -> Var {
        let mut ctx = Ctx::new(&self.params, &self.buffers, Mode::Train);
        let y = block_forward(tape, &mut ctx, &self.block, x).unwrap();
        project(tape, y, 11)
    }
}

fn check_block(kind: BlockKind, t: usize) {
    let spec = BlockSpec {
        kind,
        in_channels: 3,
        out_channels: 4,
        t,
    };
    let mut m = BlockModel::new(spec, 20 + t as u64);
    let (err, name) = param_gradient_error(&mut m, |m| &mut m.params, usize::MAX, &|m, tape| {
        let x = tape.leaf(m.input.clone());
        m.loss(tape, &x)
    });
    assert_close(&format!("{kind:?} t={t} parameter {name}"), err, TOL);
    let input = m.input.clone();
    let err = max_leaf_error(&[input], &|tape, v| m.loss(tape, &v[0]));
    assert_close(&format!("{kind:?} t={t} input"), err, TOL);
}

#[test]
fn rrcl_block_gradients() {
    check_block(BlockKind::Rrcl, 1);
    check_block(BlockKind::Rrcl, 2);
}

#[test]
fn plain_block_gradients() {
    check_block(BlockKind::Plain, 1);
}

#[test]
fn end_to_end_deep_supervised() {
    let cfg = ArchitectureConfig {
        depth: 2,
        filters: vec![4, 8, 12],
        ..Default::default()
    };
    let mut net = Network::new(cfg, 3).unwrap();
    let mut r = rng(30);
    let x = randn(Shape::new(1, 1, 16, 16), &mut r);
    let labels = Arc::new(Tensor::from_fn(Shape::new(1, 1, 16, 16), |_, _, i, j| {
        f64::from(u8::from((i as f64 - 8.0).hypot(j as f64 - 7.0) < 5.0))
    }));
    let loss = |net: &Network, tape: &mut Tape, xv: &Var| {
        let out = net.forward(tape, &net.plan, xv, Mode::Train).unwrap();
        let heads: Vec<Var> = out.heads.iter().map(|(_, v)| *v).collect();
        supervised_loss(tape, &heads, &labels, &[1.0, 1.0]).unwrap()
    };
    let (err, name) = param_gradient_error(&mut net, |n| &mut n.params, 6, &|n, tape| {
        let xv = tape.leaf(x.clone());
        loss(n, tape, &xv)
    });
    assert_close(&format!("network parameter {name}"), err, TOL);
    let err = max_leaf_error(std::slice::from_ref(&x), &|tape, v| loss(&net, tape, &v[0]));
    assert_close("network input", err, TOL);
}
