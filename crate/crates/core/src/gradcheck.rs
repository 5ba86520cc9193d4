//! Finite-difference checks of the tape's analytic gradients.
//!
//! Every check builds a scalar by contracting the op (or network) output with
//! fixed random weights, so that sums that are invariant under the op (e.g.
//! batch norm) still produce informative gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Fpn, NetworkConfig};
use crate::detector::{assign_targets, detection_loss, AnchorSet, BBox, GtBox, Head};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionKind};
use crate::ipg_transform::IpgTransformLevel;
use crate::model::IpgNet;
use crate::nn::Ctx;
use crate::params::{Init, ParamStore};
use crate::pyramid::build_pyramid;
use crate::seed;
use crate::tensor::{ConvGeom, Mode, Shape, Tape, Tensor, Var};

pub const EPS: f64 = 1e-5;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;
/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// The coordinate with the largest relative error.
#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub worst: Option<Worst>,
    pub checked: usize,
    /// Coordinates whose ±ε evaluations switched a ReLU or max-pool branch;
    /// the central difference straddles a kink there and is not compared.
    pub skipped: usize,
}

impl Outcome {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }

    fn record(&mut self, tensor: &str, index: usize, analytic: f64, numeric: f64) {
        let rel_err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
            self.worst = Some(Worst {
                tensor: tensor.to_string(),
                index,
                analytic,
                numeric,
                rel_err,
            });
        }
    }

    fn merge(mut self, other: Outcome) -> Outcome {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_err() > self.max_rel_err() || self.worst.is_none() {
            self.worst = other.worst;
        }
        self
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub seed: u64,
    pub outcome: Outcome,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.outcome.max_rel_err()
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: impl Into<Shape>) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

fn sample_indices(rng: &mut impl Rng, n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|_| rng.random_range(0..n)).collect(),
        _ => (0..n).collect(),
    }
}

/// Five-point central difference with step [`EPS`]; truncation error is
/// O(EPS⁴). `eval(d)` evaluates the scalar with the probed coordinate
/// shifted by `d`. Returns `None` when any probe lands on a different
/// activation pattern than `base`.
fn stencil(base: &[u64], mut eval: impl FnMut(f64) -> Result<(f64, Vec<u64>)>) -> Result<Option<f64>> {
    let mut f = [0.0; 4];
    for (slot, d) in f.iter_mut().zip([2.0 * EPS, EPS, -EPS, -2.0 * EPS]) {
        let (v, pattern) = eval(d)?;
        if pattern != base {
            return Ok(None);
        }
        *slot = v;
    }
    Ok(Some((-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * EPS)))
}

/// Checks `f(inputs)` against finite differences w.r.t. every input.
/// `f` must return a scalar. At most `max_samples` coordinates per input are
/// perturbed (all when `None`).
pub fn check_function(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
    max_samples: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Outcome> {
    let eval = |vals: &[Tensor]| -> Result<(f64, Vec<u64>)> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let out = f(&mut t, &vars)?;
        Ok((t.value(out).item()?, t.activation_pattern()))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let pattern = tape.activation_pattern();

    let mut outcome = Outcome::default();
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*v).unwrap_or(&zero).clone();
        for i in sample_indices(rng, inputs[k].numel(), max_samples) {
            let orig = work[k].data()[i];
            let numeric = stencil(&pattern, |d| {
                work[k].data_mut()[i] = orig + d;
                eval(&work)
            })?;
            work[k].data_mut()[i] = orig;
            let Some(numeric) = numeric else {
                outcome.skipped += 1;
                continue;
            };
            outcome.record(&format!("input{k}"), i, analytic.data()[i], numeric);
        }
    }
    Ok(outcome)
}

/// Checks the gradient of `loss(ctx)` w.r.t. every trainable parameter in
/// `store`, perturbing at most `per_param` coordinates of each.
pub fn check_params(
    store: &mut ParamStore,
    loss: &dyn Fn(&mut Ctx) -> Result<Var>,
    per_param: usize,
    rng: &mut impl Rng,
) -> Result<Outcome> {
    store.zero_grad();
    let pattern = {
        let mut ctx = Ctx::new(store, Mode::Train);
        let l = loss(&mut ctx)?;
        ctx.backward(l)?;
        ctx.tape.activation_pattern()
    };
    let eval = |store: &mut ParamStore| -> Result<(f64, Vec<u64>)> {
        let mut ctx = Ctx::new(store, Mode::Train);
        let l = loss(&mut ctx)?;
        Ok((ctx.value(l).item()?, ctx.tape.activation_pattern()))
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut outcome = Outcome::default();
    for id in ids {
        let n = store.get(id).tensor.numel();
        for i in sample_indices(rng, n, Some(per_param)) {
            let analytic = store.get(id).grad.data()[i];
            let orig = store.get(id).tensor.data()[i];
            let numeric = stencil(&pattern, |d| {
                store.get_mut(id).tensor.data_mut()[i] = orig + d;
                eval(store)
            })?;
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let Some(numeric) = numeric else {
                outcome.skipped += 1;
                continue;
            };
            outcome.record(&store.get(id).name, i, analytic, numeric);
        }
    }
    Ok(outcome)
}

/// Contracts `v` with fixed random weights of RMS about `1/sqrt(numel)`,
/// which keeps the scalar O(1) and the difference quotients well above
/// round-off.
fn project(tape: &mut Tape, v: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = seed::stream(rng_seed, "projection");
    let shape = tape.shape(v);
    let k = (3.0 / shape.numel() as f64).sqrt();
    let w = random_tensor(&mut rng, shape).map(|x| x * k);
    tape.weighted_sum(v, w)
}

/// Adds uniform noise in `[-a, a)` to every trainable parameter. Unlike a
/// full re-draw this keeps batch-norm scales near 1, so no channel collapses
/// to near-zero variance (where finite differences lose all accuracy), while
/// still moving zero-initialised fusion weights off zero.
pub fn jitter(store: &mut ParamStore, rng: &mut impl Rng, a: f64) {
    for p in store.iter_mut().filter(|p| p.trainable) {
        for v in p.tensor.data_mut() {
            *v += rng.random_range(-a..a);
        }
    }
}

fn project_all(tape: &mut Tape, vars: &[Var], rng_seed: u64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, &v) in vars.iter().enumerate() {
        let p = project(tape, v, rng_seed.wrapping_add(i as u64 * 7919))?;
        acc = Some(match acc {
            Some(a) => tape.add(a, p)?,
            None => p,
        });
    }
    acc.ok_or_else(|| Error::Contract("nothing to project".into()))
}

/// Names accepted by [`run_check`].
pub const CHECKS: &[&str] = &[
    "conv2d",
    "maxpool2",
    "relu",
    "add",
    "mul",
    "concat_channels",
    "batch_norm",
    "layer_norm",
    "resize_bilinear",
    "channel_interp",
    "focal_loss",
    "smooth_l1",
    "ipg_transform",
    "fusion_sum",
    "fusion_product",
    "fusion_concat",
    "fpn",
    "head",
    "detection_loss",
    "ipg_net_sum",
    "ipg_net_product",
    "ipg_net_concat",
];

/// Config used for the whole-network checks: 4 stages, `c1 = 8`, fusion at
/// every stage that has a pyramid level.
pub fn small_net_config(kind: FusionKind) -> NetworkConfig {
    NetworkConfig {
        c1: 8,
        n_stages: 4,
        fusion_variant: kind,
        fusion_stages: vec![1, 2, 3, 4],
        fpn_channels: 8,
        ..NetworkConfig::default()
    }
}

fn unary(
    name: &str,
    shape: [usize; 4],
    seed_: u64,
    op: impl Fn(&mut Tape, Var) -> Result<Var> + 'static,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome> {
    let x = random_tensor(rng, shape);
    let s = seed_;
    let _ = name;
    check_function(
        &[x],
        &move |t, v| {
            let y = op(t, v[0])?;
            project(t, y, s)
        },
        None,
        rng,
    )
}

fn network_check(kind: FusionKind, s: u64, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let cfg = small_net_config(kind);
    let mut store = ParamStore::new(s);
    let net = IpgNet::new(&cfg, &mut store)?;
    jitter(&mut store, rng, 0.1);
    let image = random_tensor(rng, [1, 3, 32, 32]);
    let pyramid = build_pyramid(&image, cfg.pyramid_levels)?;
    let loss = move |ctx: &mut Ctx| -> Result<Var> {
        let out = net.forward(ctx, &pyramid)?;
        let mut all = out.fpn.clone();
        for (c, b) in &out.head {
            all.push(*c);
            all.push(*b);
        }
        project_all(&mut ctx.tape, &all, s)
    };
    check_params(&mut store, &loss, 6, rng)
}

/// Runs one named check with the given seed.
pub fn run_check(name: &str, s: u64) -> Result<GradReport> {
    let mut rng = seed::stream(s, &format!("gradcheck:{name}"));
    let rng = &mut rng;
    let outcome = match name {
        "conv2d" => {
            let x = random_tensor(rng, [1, 2, 5, 5]);
            let w = random_tensor(rng, [3, 2, 3, 3]);
            let b = random_tensor(rng, [1, 3, 1, 1]);
            check_function(
                &[x, w, b],
                &move |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(2, 1))?;
                    project(t, y, s)
                },
                None,
                rng,
            )?
        }
        "maxpool2" => unary(name, [1, 3, 6, 6], s, |t, v| t.max_pool2(v), rng)?,
        "relu" => unary(name, [1, 2, 4, 4], s, |t, v| Ok(t.relu(v)), rng)?,
        "add" | "mul" | "concat_channels" => {
            let a = random_tensor(rng, [2, 3, 3, 3]);
            let b = random_tensor(rng, [2, 3, 3, 3]);
            let which = name.to_string();
            check_function(
                &[a, b],
                &move |t, v| {
                    let y = match which.as_str() {
                        "add" => t.add(v[0], v[1])?,
                        "mul" => t.mul(v[0], v[1])?,
                        _ => t.concat_channels(v[0], v[1])?,
                    };
                    project(t, y, s)
                },
                None,
                rng,
            )?
        }
        "batch_norm" => {
            let x = random_tensor(rng, [2, 2, 3, 3]);
            let g = random_tensor(rng, [1, 2, 1, 1]);
            let b = random_tensor(rng, [1, 2, 1, 1]);
            check_function(
                &[x, g, b],
                &move |t, v| {
                    let mut m = Tensor::zeros([1, 2, 1, 1]);
                    let mut var = Tensor::ones([1, 2, 1, 1]);
                    let y = t.batch_norm(v[0], v[1], v[2], &mut m, &mut var, Mode::Train)?;
                    project(t, y, s)
                },
                None,
                rng,
            )?
        }
        "layer_norm" => {
            let x = random_tensor(rng, [2, 4, 3, 3]);
            let g = random_tensor(rng, [1, 4, 1, 1]);
            let b = random_tensor(rng, [1, 4, 1, 1]);
            check_function(
                &[x, g, b],
                &move |t, v| {
                    let y = t.layer_norm(v[0], v[1], v[2])?;
                    project(t, y, s)
                },
                None,
                rng,
            )?
        }
        "resize_bilinear" => {
            let up = unary(name, [1, 2, 4, 6], s, |t, v| t.resize_bilinear(v, 7, 3), rng)?;
            up.merge(unary(name, [1, 2, 8, 8], s, |t, v| t.resize_bilinear(v, 4, 4), rng)?)
        }
        "channel_interp" => unary(name, [1, 4, 2, 2], s, |t, v| t.channel_interp(v, 6), rng)?,
        "focal_loss" => {
            let x = random_tensor(rng, [2, 3, 3, 3]).map(|v| 4.0 * v);
            let targets = Tensor::from_fn([2, 3, 3, 3], |n, c, y, x| ((n + c + y * x) % 3 == 0) as u8 as f64);
            let weights = Tensor::from_fn([2, 3, 3, 3], |_, _, y, x| if y == 1 && x == 2 { 0.0 } else { 1.0 });
            check_function(
                &[x],
                &move |t, v| t.focal_loss(v[0], &targets, &weights, 0.25, 2.0, 3.0),
                None,
                rng,
            )?
        }
        "smooth_l1" => {
            let x = random_tensor(rng, [1, 4, 3, 3]);
            let target = random_tensor(rng, [1, 4, 3, 3]);
            let mask = Tensor::from_fn([1, 4, 3, 3], |_, _, y, _| (y != 0) as u8 as f64);
            check_function(
                &[x],
                &move |t, v| t.smooth_l1(v[0], &target, &mask, 1.0 / 9.0, 2.0),
                None,
                rng,
            )?
        }
        "ipg_transform" => {
            let mut store = ParamStore::new(s);
            let level = IpgTransformLevel::new(&mut store, "ipg.level1", 1, 8)?;
            jitter(&mut store, rng, 0.2);
            let img = random_tensor(rng, [2, 3, 16, 16]);
            let loss = move |ctx: &mut Ctx| {
                let x = ctx.input(img.clone());
                let y = level.forward(ctx, x)?;
                project(&mut ctx.tape, y, s)
            };
            check_params(&mut store, &loss, 8, rng)?
        }
        "fusion_sum" | "fusion_product" | "fusion_concat" => {
            let kind: FusionKind = name.trim_start_matches("fusion_").parse()?;
            let mut store = ParamStore::new(s);
            let fusion = Fusion::new(&mut store, "fusion", kind, 1, 4)?;
            let f = store.add("probe.f", [1, 3, 4, 4], Init::Zeros, true)?;
            let r = store.add("probe.r", [1, 4, 4, 4], Init::Zeros, true)?;
            store.randomize(rng, 0.8);
            let loss = move |ctx: &mut Ctx| {
                let fv = ctx.param(f);
                let rv = ctx.param(r);
                let y = fusion.forward(ctx, fv, rv)?;
                project(&mut ctx.tape, y, s)
            };
            check_params(&mut store, &loss, 16, rng)?
        }
        "fpn" => {
            let mut store = ParamStore::new(s);
            let fpn = Fpn::new(&mut store, &[4, 8, 16], &[1, 2, 3], 4)?;
            store.randomize(rng, 0.5);
            let feats = [
                random_tensor(rng, [1, 4, 8, 8]),
                random_tensor(rng, [1, 8, 4, 4]),
                random_tensor(rng, [1, 16, 2, 2]),
            ];
            let loss = move |ctx: &mut Ctx| {
                let vars: Vec<Var> = feats.iter().map(|f| ctx.input(f.clone())).collect();
                let ps = fpn.forward(ctx, &vars)?;
                project_all(&mut ctx.tape, &ps, s)
            };
            check_params(&mut store, &loss, 16, rng)?
        }
        "head" => {
            let mut store = ParamStore::new(s);
            let head = Head::new(&mut store, 4, 3)?;
            store.randomize(rng, 0.5);
            let feats = [random_tensor(rng, [1, 4, 4, 4]), random_tensor(rng, [1, 4, 2, 2])];
            let loss = move |ctx: &mut Ctx| {
                let vars: Vec<Var> = feats.iter().map(|f| ctx.input(f.clone())).collect();
                let outs = head.forward(ctx, &vars)?;
                let flat: Vec<Var> = outs.iter().flat_map(|&(a, b)| [a, b]).collect();
                project_all(&mut ctx.tape, &flat, s)
            };
            check_params(&mut store, &loss, 16, rng)?
        }
        "detection_loss" => {
            let anchors = AnchorSet::new((16, 16), &[(4, 4), (2, 2)])?;
            let gts = vec![
                vec![GtBox { bounds: BBox::new(1.0, 2.0, 9.0, 11.0), class_idx: 1 }],
                vec![
                    GtBox { bounds: BBox::new(4.0, 4.0, 14.0, 12.0), class_idx: 0 },
                    GtBox { bounds: BBox::new(0.5, 0.5, 4.0, 5.0), class_idx: 2 },
                ],
            ];
            let labels: Vec<_> = gts.iter().map(|g| assign_targets(&anchors, g)).collect();
            let inputs = [
                random_tensor(rng, [2, 3, 4, 4]),
                random_tensor(rng, [2, 4, 4, 4]),
                random_tensor(rng, [2, 3, 2, 2]),
                random_tensor(rng, [2, 4, 2, 2]),
            ];
            check_function(
                &inputs,
                &move |t, v| {
                    let parts = detection_loss(t, &[(v[0], v[1]), (v[2], v[3])], &anchors, &labels, &gts)?;
                    Ok(parts.total)
                },
                None,
                rng,
            )?
        }
        "ipg_net_sum" => network_check(FusionKind::Sum, s, rng)?,
        "ipg_net_product" => network_check(FusionKind::Product, s, rng)?,
        "ipg_net_concat" => network_check(FusionKind::Concat, s, rng)?,
        other => {
            return Err(Error::Usage(format!(
                "unknown gradient check `{other}`; valid: {}",
                CHECKS.join(", ")
            )))
        }
    };
    Ok(GradReport {
        name: name.to_string(),
        seed: s,
        outcome,
    })
}
