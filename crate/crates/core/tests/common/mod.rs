#![allow(dead_code)]

use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svgfont::autodiff::{Graph, ParamId, Params, Var};
use svgfont::codec::SequenceTensor;
use svgfont::svg_decoder::{DecoderConfig, SvgDecoder};
use svgfont::svg_path::{Command, CoordinateMode, Glyph, Point};
use svgfont::vae::{Vae, VaeConfig};

/// Central-difference step for 64-bit checks.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;
/// Relative tolerance the floor is scaled for.
pub const NOISE_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per tensor.
pub const PROBES: usize = 12;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
}

/// Values in `[-hi, -lo] ∪ [lo, hi]`, away from kinks at zero.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let v = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn probe_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Reduces any node to a scalar with a fixed random projection, so every
/// output element contributes a distinct weight.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let w = random_tensor(&shape, -1.0, 1.0, &mut rng);
    let w = g.constant(w).unwrap();
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

/// Worst relative error between backprop and central differences for the
/// gradient of `f` w.r.t. each of `inputs`.
pub fn check_inputs<F>(inputs: &[ArrayD<f64>], f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let eval = |vals: &[ArrayD<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|v| g.constant(v.clone()).unwrap()).collect();
        let loss = f(&mut g, &vars);
        g.scalar(loss)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.variable(v.clone()).unwrap()).collect();
    let loss = f(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(inputs[k].shape()));
        for i in probe_indices(inputs[k].len(), &mut rng) {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[k].as_slice_mut().unwrap()[i] += FD_STEP;
            minus[k].as_slice_mut().unwrap()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic.as_slice().unwrap()[i];
            worst = worst.max(rel_error(a, numeric));
        }
    }
    worst
}

fn nudge(params: &mut Params<f64>, id: ParamId, i: usize, delta: f64) {
    let t = params.get_mut(id);
    let v = Arc::make_mut(&mut t.value);
    v.as_slice_mut().unwrap()[i] += delta;
}

/// Worst relative error over probed coordinates of every parameter tensor.
/// `loss` builds the scalar loss on a graph from a model holding a copy of
/// the given parameters; the model is returned so its gradients can be read.
pub fn check_params<M, F, P>(params: &mut Params<f64>, loss: F, params_of: P) -> f64
where
    F: Fn(&Params<f64>, &mut Graph<f64>) -> (M, Var),
    P: Fn(&mut M) -> &mut Params<f64>,
{
    let mut g = Graph::new();
    let (mut model, l) = loss(params, &mut g);
    let grads = g.backward(l).unwrap();
    let store = params_of(&mut model);
    store.zero_grad();
    grads.accumulate(store);
    let analytic: Vec<(ParamId, ArrayD<f64>)> = store
        .iter()
        .map(|(id, t)| (id, t.grad.clone().unwrap_or_else(|| ArrayD::zeros(t.shape()))))
        .collect();
    let value = |params: &Params<f64>| {
        let mut g = Graph::new();
        let (_, l) = loss(params, &mut g);
        g.scalar(l)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for (id, grad) in analytic {
        for i in probe_indices(grad.len(), &mut rng) {
            let a = grad.as_slice().unwrap()[i];
            let e = kink_aware_error(a, |h| {
                let base = value(params);
                nudge(params, id, i, h);
                let up = value(params);
                nudge(params, id, i, -2.0 * h);
                let down = value(params);
                nudge(params, id, i, h);
                (down, base, up)
            });
            if e > 1e-4 && std::env::var("GRAD_DEBUG").is_ok() {
                eprintln!("{id:?} {:?} [{i}] analytic {a} error {e:e}", grad.shape());
            }
            worst = worst.max(e);
        }
    }
    worst
}

/// Relative error of `analytic` against a central difference. `eval(h)`
/// returns the loss at `x - h`, `x` and `x + h`.
///
/// Large networks have ReLU kinks everywhere; when the two one-sided
/// differences disagree the step straddles one, and it is shrunk (down to
/// 1e-8) until they agree. A loss summed over thousands of terms carries a
/// few ulps of rounding, so the quotient is uncertain by about
/// `4ε·|loss|/h`; the error floor is that noise divided by
/// [`NOISE_TOLERANCE`], so a gradient that is zero up to rounding compares
/// as zero. For losses of order 1 this is just [`REL_FLOOR`].
pub fn kink_aware_error(analytic: f64, mut eval: impl FnMut(f64) -> (f64, f64, f64)) -> f64 {
    let mut h = FD_STEP;
    loop {
        let (down, base, up) = eval(h);
        let noise = 4.0 * f64::EPSILON * base.abs().max(1.0) / h;
        let floor = REL_FLOOR.max(noise / NOISE_TOLERANCE);
        let (fwd, bwd) = ((up - base) / h, (base - down) / h);
        let central = (up - down) / (2.0 * h);
        let smooth = (fwd - bwd).abs() <= 1e-3 * fwd.abs().max(bwd.abs()) + 2.0 * noise;
        if smooth || h <= 1e-8 {
            return (analytic - central).abs() / analytic.abs().max(central.abs()).max(floor);
        }
        h /= 10.0;
    }
}

/// Small soft blobs that keep the VAE's clamps inactive.
pub fn test_images(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let (cx, cy, r) = (
                rng.random_range(0.3..0.7) * size as f64,
                rng.random_range(0.3..0.7) * size as f64,
                rng.random_range(0.15..0.3) * size as f64,
            );
            (0..size * size)
                .map(|p| {
                    let (x, y) = ((p % size) as f64, (p / size) as f64);
                    let d = ((x - cx).hypot(y - cy) - r) / 2.0;
                    (0.05 + 0.9 / (1.0 + d.exp())) as f32
                })
                .collect()
        })
        .collect()
}

/// Worst gradient error of the full VAE training loss on a 2-image batch
/// (reparameterized, free-bits clamp active on some dimensions).
pub fn vae_loss_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vae = Vae::<f64>::new(VaeConfig::small(), &mut rng).unwrap();
    let size = vae.config.image_size;
    let images = test_images(2, size, &mut rng);
    let refs: Vec<&[f32]> = images.iter().map(|v| v.as_slice()).collect();
    let batch = vae.batch_tensor(&refs).unwrap();
    let labels = [3usize, 40];
    let noise = random_tensor(&[2, vae.config.z_dim], -1.5, 1.5, &mut rng);
    let config = vae.config.clone();
    let mut params = std::mem::take(&mut vae.params);
    let worst = check_params(
        &mut params,
        |p, g| {
            let model = Vae {
                config: config.clone(),
                params: p.clone(),
            };
            let x = g.constant(batch.clone()).unwrap();
            let l = model.loss_graph(g, x, &labels, Some(&noise)).unwrap().total;
            (model, l)
        },
        |m| &mut m.params,
    );
    vae.params = params;
    worst
}

/// A 3-step target: moveto, cubic, Eos.
pub fn three_step_sequence() -> SequenceTensor {
    let g = Glyph::new(
        10,
        vec![
            Command::MoveTo(Point::new(0.3, -0.2)),
            Command::CubicBezier(Point::new(0.1, 0.05), Point::new(0.2, 0.3), Point::new(-0.15, 0.25)),
            Command::Eos,
        ],
        CoordinateMode::Relative,
    );
    svgfont::codec::encode_glyph(&g, 3).unwrap()
}

/// Worst gradient error of the teacher-forced decoder loss (with fixed
/// dropout masks) over every decoder parameter.
pub fn decoder_loss_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let config = DecoderConfig {
        hidden_dim: 16,
        num_layers: 2,
        mixture_count: 3,
        z_dim: 4,
        max_len: 3,
        ..DecoderConfig::small()
    };
    let mut dec = SvgDecoder::<f64>::new(config.clone(), &mut rng).unwrap();
    let target = three_step_sequence();
    let z = random_tensor(&[1, config.z_dim], -1.0, 1.0, &mut rng);
    let masks = dec.sample_dropout(1, &mut rng);
    let mut params = std::mem::take(&mut dec.params);
    let worst = check_params(
        &mut params,
        |p, g| {
            let model = SvgDecoder {
                config: config.clone(),
                params: p.clone(),
            };
            let zv = g.constant(z.clone()).unwrap();
            let l = model
                .sequence_loss_graph(g, zv, &[10], &[&target], Some(&masks))
                .unwrap()
                .total;
            (model, l)
        },
        |m| &mut m.params,
    );
    dec.params = params;
    worst
}

/// Every autodiff primitive with its worst relative gradient error.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    let a23 = random_tensor(&[2, 3], -1.0, 1.0, &mut rng);
    let b34 = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
    let b23 = random_tensor(&[2, 3], -1.0, 1.0, &mut rng);
    let bias = random_tensor(&[3], -1.0, 1.0, &mut rng);
    let pos = random_tensor(&[2, 3], 0.2, 2.0, &mut rng);
    let kinked = away_from_zero(&[2, 3], 0.05, 1.0, &mut rng);

    macro_rules! case {
        ($name:expr, $inputs:expr, |$g:ident, $v:ident| $body:expr) => {{
            let inputs: Vec<ArrayD<f64>> = $inputs;
            let err = check_inputs(&inputs, |$g: &mut Graph<f64>, $v: &[Var]| {
                let out = $body;
                project($g, out, 1)
            });
            out.push(($name, err));
        }};
    }

    case!("matmul", vec![a23.clone(), b34.clone()], |g, v| g
        .matmul(v[0], v[1])
        .unwrap());
    case!("add", vec![a23.clone(), b23.clone()], |g, v| g.add(v[0], v[1]).unwrap());
    case!("add_broadcast", vec![a23.clone(), bias.clone()], |g, v| g
        .add(v[0], v[1])
        .unwrap());
    case!("sub", vec![a23.clone(), b23.clone()], |g, v| g.sub(v[0], v[1]).unwrap());
    case!("mul", vec![a23.clone(), b23.clone()], |g, v| g.mul(v[0], v[1]).unwrap());
    case!("affine", vec![a23.clone()], |g, v| g.affine(v[0], 1.7, -0.3).unwrap());
    case!("concat", vec![a23.clone(), b23.clone()], |g, v| g
        .concat(&[v[0], v[1]], 1)
        .unwrap());
    case!("slice", vec![b34.clone()], |g, v| g.slice(v[0], 1, 1, 3).unwrap());
    case!("reshape", vec![a23.clone()], |g, v| g.reshape(v[0], &[3, 2]).unwrap());
    case!("relu", vec![kinked.clone()], |g, v| g.relu(v[0]).unwrap());
    case!("sigmoid", vec![a23.clone()], |g, v| g.sigmoid(v[0]).unwrap());
    case!("tanh", vec![a23.clone()], |g, v| g.tanh(v[0]).unwrap());
    case!("exp", vec![a23.clone()], |g, v| g.exp(v[0]).unwrap());
    case!("log", vec![pos.clone()], |g, v| g.log(v[0]).unwrap());
    case!("softmax", vec![a23.clone()], |g, v| g.softmax(v[0]).unwrap());
    case!("log_softmax", vec![a23.clone()], |g, v| g.log_softmax(v[0]).unwrap());
    case!("logsumexp", vec![a23.clone()], |g, v| g.logsumexp(v[0]).unwrap());
    case!("sum", vec![a23.clone()], |g, v| g.sum(v[0]).unwrap());
    case!("sum_axis", vec![a23.clone()], |g, v| g.sum_axis(v[0], 0).unwrap());
    case!("mean", vec![a23.clone()], |g, v| g.mean(v[0]).unwrap());
    case!("mean_axis", vec![a23.clone()], |g, v| g.mean_axis(v[0], 1).unwrap());
    // bounds at ±0.5 with inputs kept off them
    let off_bounds = a23.mapv(|x| if (x.abs() - 0.5).abs() < 0.05 { x * 0.8 } else { x });
    case!("clamp", vec![off_bounds], |g, v| g.clamp(v[0], -0.5, 0.5).unwrap());
    let mask = ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, 0.0, 1.0]).unwrap();
    case!("dropout", vec![a23.clone()], |g, v| g
        .dropout(v[0], 0.7, &mask)
        .unwrap());
    case!("embedding", vec![b34.clone()], |g, v| g
        .embedding(v[0], &[2, 0, 2])
        .unwrap());

    let x = random_tensor(&[2, 5, 5, 3], -1.0, 1.0, &mut rng);
    let k = random_tensor(&[3, 3, 3, 4], -0.5, 0.5, &mut rng);
    case!("conv2d_s1", vec![x.clone(), k.clone()], |g, v| g
        .conv2d(v[0], v[1], 1)
        .unwrap());
    case!("conv2d_s2", vec![x.clone(), k.clone()], |g, v| g
        .conv2d(v[0], v[1], 2)
        .unwrap());
    let x8 = random_tensor(&[2, 8, 8, 2], -1.0, 1.0, &mut rng);
    let k4 = random_tensor(&[4, 4, 2, 3], -0.5, 0.5, &mut rng);
    let k5 = random_tensor(&[5, 5, 2, 3], -0.5, 0.5, &mut rng);
    case!("conv2d_k4_s2", vec![x8.clone(), k4.clone()], |g, v| g
        .conv2d(v[0], v[1], 2)
        .unwrap());
    case!("conv2d_k5_s2", vec![x8.clone(), k5.clone()], |g, v| g
        .conv2d(v[0], v[1], 2)
        .unwrap());
    case!("conv2d_k5_s1", vec![x8.clone(), k5.clone()], |g, v| g
        .conv2d(v[0], v[1], 1)
        .unwrap());
    let x4 = random_tensor(&[2, 4, 4, 3], -1.0, 1.0, &mut rng);
    let kt5 = random_tensor(&[5, 5, 2, 3], -0.5, 0.5, &mut rng);
    case!("conv_transpose2d_k5", vec![x4, kt5], |g, v| g
        .conv_transpose2d(v[0], v[1], 2)
        .unwrap());
    let xt = random_tensor(&[2, 3, 3, 4], -1.0, 1.0, &mut rng);
    let kt = random_tensor(&[4, 4, 2, 4], -0.5, 0.5, &mut rng);
    case!("conv_transpose2d", vec![xt, kt], |g, v| g
        .conv_transpose2d(v[0], v[1], 2)
        .unwrap());
    let gamma = random_tensor(&[4, 3], 0.5, 1.5, &mut rng);
    let beta = random_tensor(&[4, 3], -0.5, 0.5, &mut rng);
    case!("cond_instance_norm", vec![x.clone(), gamma, beta], |g, v| g
        .cond_instance_norm(v[0], v[1], v[2], &[3, 1])
        .unwrap());

    let (inp, hid) = (3, 4);
    let xs = random_tensor(&[2, inp], -1.0, 1.0, &mut rng);
    let h = random_tensor(&[2, hid], -1.0, 1.0, &mut rng);
    let c = random_tensor(&[2, hid], -1.0, 1.0, &mut rng);
    let w = random_tensor(&[inp + hid, 4 * hid], -0.5, 0.5, &mut rng);
    let b = random_tensor(&[4 * hid], -0.5, 0.5, &mut rng);
    let inputs = vec![xs, h, c, w, b];
    for (name, which) in [("lstm_cell.h", 0usize), ("lstm_cell.c", 1)] {
        let err = check_inputs(&inputs, |g, v| {
            let (h, c) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4]).unwrap();
            project(g, if which == 0 { h } else { c }, 2)
        });
        out.push((name, err));
    }
    out
}

/// Random closed glyph in absolute coordinates: 1–3 contours mixing
/// lines and cubics, possibly open-ended by a closing lineto.
pub fn random_glyph(rng: &mut ChaCha8Rng, label: usize) -> Glyph {
    let mut cmds = Vec::new();
    let contours = rng.random_range(1..=3);
    for _ in 0..contours {
        let cx = rng.random_range(-50.0..50.0);
        let cy = rng.random_range(-50.0..50.0);
        let n = rng.random_range(3..=6);
        let r = rng.random_range(5.0..30.0);
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..0.6)) / n as f64;
                let rr = r * rng.random_range(0.6..1.0);
                Point::new(cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect();
        cmds.push(Command::MoveTo(pts[0]));
        for i in 1..=n {
            let p = pts[i % n];
            if rng.random_bool(0.4) {
                let q = pts[i - 1];
                let c1 = q.lerp(p, 0.33) + Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let c2 = q.lerp(p, 0.66) + Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                cmds.push(Command::CubicBezier(c1, c2, p));
            } else {
                cmds.push(Command::LineTo(p));
            }
        }
    }
    Glyph::new(label, cmds, CoordinateMode::Absolute)
}

/// Random simple-ish polygon (star-shaped around its center).
pub fn random_polygon(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let n = rng.random_range(3..=9);
    let (cx, cy) = (rng.random_range(20.0..44.0), rng.random_range(20.0..44.0));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|a| {
            let r = rng.random_range(4.0..20.0);
            Point::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect()
}

pub fn polygon_glyph(polys: &[Vec<Point>]) -> Glyph {
    let mut cmds = Vec::new();
    for p in polys {
        cmds.push(Command::MoveTo(p[0]));
        for q in &p[1..] {
            cmds.push(Command::LineTo(*q));
        }
        cmds.push(Command::LineTo(p[0]));
    }
    Glyph::new(0, cmds, CoordinateMode::Absolute)
}

/// Nonzero winding number of `p` with respect to the polygons.
pub fn winding(polys: &[Vec<Point>], p: Point) -> i32 {
    let mut w = 0;
    for poly in polys {
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
            if a.y <= p.y && b.y > p.y && cross > 0.0 {
                w += 1;
            } else if a.y > p.y && b.y <= p.y && cross < 0.0 {
                w -= 1;
            }
        }
    }
    w
}

/// Brute-force coverage: a 16×16 grid of point-in-polygon tests per pixel
/// of a 64×64 raster over `[0, 64)²`.
pub fn oracle_coverage(polys: &[Vec<Point>]) -> Vec<f32> {
    const SUB: usize = 16;
    let mut out = vec![0.0f32; 64 * 64];
    for py in 0..64 {
        for px in 0..64 {
            let mut inside = 0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let p = Point::new(
                        px as f64 + (sx as f64 + 0.5) / SUB as f64,
                        py as f64 + (sy as f64 + 0.5) / SUB as f64,
                    );
                    if winding(polys, p) != 0 {
                        inside += 1;
                    }
                }
            }
            out[py * 64 + px] = inside as f32 / (SUB * SUB) as f32;
        }
    }
    out
}

/// Viewbox that holds everything [`random_glyph`] produces.
pub fn random_glyph_viewbox() -> svgfont::raster::Viewbox {
    svgfont::raster::Viewbox::new(-90.0, -90.0, 180.0)
}

/// Checks of the normalization and codec invariants on one glyph; returns
/// the name of the first that fails.
pub fn normalization_failure(g: &Glyph) -> Option<&'static str> {
    use svgfont::codec::{decode_glyph, encode_glyph, DEFAULT_MAX_LEN};
    use svgfont::raster::render;
    use svgfont::svg_path::{normalize, reverse_contours};

    let n = normalize(g).ok()?;
    if normalize(&n).ok().as_ref() != Some(&n) {
        return Some("idempotence");
    }
    if normalize(&reverse_contours(g)).ok().as_ref() != Some(&n) {
        return Some("direction invariance");
    }
    let vb = random_glyph_viewbox();
    let (a, b) = (render(g, &vb).ok()?, render(&n, &vb).ok()?);
    let worst = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    if worst > 1.0 / 255.0 {
        return Some("render invariance");
    }
    let seq = match encode_glyph(&n, DEFAULT_MAX_LEN) {
        Ok(s) => s,
        Err(_) => return Some("encode"),
    };
    if decode_glyph(&seq, g.label).ok().as_ref() != Some(&n) {
        return Some("codec round trip");
    }
    None
}

/// Runs [`normalization_failure`] over `count` seeded random glyphs.
pub fn normalization_suite(count: u64) -> Vec<(u64, &'static str)> {
    (0..count)
        .filter_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let label = rng.random_range(0..62);
            normalization_failure(&random_glyph(&mut rng, label)).map(|f| (seed, f))
        })
        .collect()
}

/// Fraction of pixels within 0.5 of the point-sampling oracle over
/// `count` random polygonal glyphs (1–3 polygons each) plus a square
/// annulus.
pub fn raster_oracle_agreement(count: u64) -> f64 {
    use svgfont::raster::{render, Viewbox};
    let vb = Viewbox::new(0.0, 0.0, 64.0);
    let mut cases: Vec<Vec<Vec<Point>>> = (0..count)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = rng.random_range(1..=3);
            (0..n).map(|_| random_polygon(&mut rng)).collect()
        })
        .collect();
    let square = |lo: f64, hi: f64| {
        vec![
            Point::new(lo, lo),
            Point::new(hi, lo),
            Point::new(hi, hi),
            Point::new(lo, hi),
        ]
    };
    let mut hole = square(22.3, 41.6);
    hole.reverse();
    cases.push(vec![square(8.5, 55.2), hole]);
    let (mut ok, mut total) = (0usize, 0usize);
    for polys in &cases {
        let ours = render(&polygon_glyph(polys), &vb).unwrap();
        let oracle = oracle_coverage(polys);
        for (a, b) in ours.as_slice().iter().zip(&oracle) {
            total += 1;
            if (a - b).abs() <= 0.5 {
                ok += 1;
            }
        }
    }
    ok as f64 / total as f64
}
