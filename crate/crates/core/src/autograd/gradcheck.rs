//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, PlifParams, RunningStats, SurrogateSpec, Var};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Worst disagreement found by [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_error: f64,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn projected(g: &mut Graph, out: Var, proj: &Tensor) -> Result<Var> {
    let p = g.mul_const(out, proj)?;
    Ok(g.sum(p))
}

fn evaluate<F>(inputs: &[Tensor], build: &F, proj: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + ?Sized,
{
    let mut g = Graph::with_smooth_spikes();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let l = projected(&mut g, out, proj)?;
    Ok(g.value(l).data()[0])
}

/// Compare reverse-mode gradients of `sum(build(inputs) * R)` for a fixed
/// random `R` against central differences with step `h`. Spikes use the
/// smooth surrogate primitive so both sides see one function.
pub fn check_gradients<F>(inputs: &[Tensor], build: &F, h: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var> + ?Sized,
{
    if !(h > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let mut g = Graph::with_smooth_spikes();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let proj = Tensor::from_vec(&shape, (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let l = projected(&mut g, out, &proj)?;
    g.backward(l)?;
    let mut worst = GradCheck {
        max_error: 0.0,
        input: 0,
        element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for e in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= h;
            let numeric = (evaluate(&plus, build, &proj)? - evaluate(&minus, build, &proj)?) / (2.0 * h);
            let a = analytic.data()[e];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > worst.max_error || !err.is_finite() {
                worst = GradCheck {
                    max_error: err,
                    input: k,
                    element: e,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One randomized instance of a named op: inputs plus the graph builder.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn case(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Random instances of every differentiable op, one per op per call.
pub fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let s = [2usize, 3];
    let r = |rng: &mut ChaCha8Rng, sh: &[usize]| random(rng, sh, -2.0, 2.0);
    let c = r(rng, &s);
    let c2 = r(rng, &s);
    let mut bn_stats = RunningStats::new(3);
    bn_stats.mean = r(rng, &[3]).into_vec();
    bn_stats.var = random(rng, &[3], 0.5, 2.0).into_vec();
    let spec = SurrogateSpec::default();
    let stride = rng.gen_range(1..=2usize);
    let pad = rng.gen_range(0..=1usize);
    let outpad = rng.gen_range(0..stride);
    vec![
        case("add", vec![r(rng, &s), r(rng, &s)], |g, v| g.add(v[0], v[1])),
        case("sub", vec![r(rng, &s), r(rng, &s)], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![r(rng, &s), r(rng, &s)], |g, v| g.mul(v[0], v[1])),
        case("scale", vec![r(rng, &s)], |g, v| Ok(g.scale(v[0], -1.7))),
        case("add_scalar", vec![r(rng, &s)], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        case("mul_const", vec![r(rng, &s)], move |g, v| g.mul_const(v[0], &c)),
        case("add_const", vec![r(rng, &s)], move |g, v| g.add_const(v[0], &c2)),
        case("scalar_mul", vec![r(rng, &s), r(rng, &[1])], |g, v| g.scalar_mul(v[0], v[1])),
        case("sum", vec![r(rng, &s)], |g, v| Ok(g.sum(v[0]))),
        case("mean", vec![r(rng, &s)], |g, v| Ok(g.mean(v[0]))),
        case("ln", vec![random(rng, &s, 0.2, 3.0)], |g, v| Ok(g.ln(v[0]))),
        case("powf", vec![random(rng, &s, 0.2, 3.0)], |g, v| Ok(g.powf(v[0], 1.7))),
        case("sigmoid", vec![r(rng, &s)], |g, v| Ok(g.sigmoid(v[0]))),
        case("relu", vec![r(rng, &s)], |g, v| Ok(g.relu(v[0]))),
        case("clamp", vec![r(rng, &s)], |g, v| Ok(g.clamp(v[0], -1.0, 1.0))),
        case("smooth_l1", vec![r(rng, &s)], |g, v| Ok(g.smooth_l1(v[0], 1.0 / 9.0))),
        case("softmax", vec![r(rng, &[2, 3, 2])], |g, v| g.softmax(v[0], 1)),
        case("log_softmax", vec![r(rng, &[3, 4])], |g, v| g.log_softmax(v[0], 1)),
        case("reshape", vec![r(rng, &s)], |g, v| g.reshape(v[0], &[3, 2])),
        case("sum_axis", vec![r(rng, &[2, 3, 2])], |g, v| g.sum_axis(v[0], 1)),
        case("concat", vec![r(rng, &[2, 1, 2]), r(rng, &[2, 3, 2])], |g, v| g.concat(v, 1)),
        case("slice", vec![r(rng, &[2, 4, 2])], |g, v| g.slice(v[0], 1, 1, 2)),
        case("head_flatten", vec![r(rng, &[1, 6, 2, 3])], |g, v| g.head_flatten(v[0], 2, 3)),
        case(
            "conv2d",
            vec![r(rng, &[1, 3, 6, 6]), r(rng, &[2, 3, 3, 3]), r(rng, &[2])],
            move |g, v| g.conv2d(v[0], v[1], Some(v[2]), (stride, stride), (pad, pad)),
        ),
        case(
            "conv_transpose2d",
            vec![r(rng, &[1, 2, 3, 3]), r(rng, &[2, 3, 3, 3])],
            move |g, v| g.conv_transpose2d(v[0], v[1], (stride, stride), (pad, pad), (outpad, outpad)),
        ),
        case("linear", vec![r(rng, &[2, 4]), r(rng, &[3, 4]), r(rng, &[3])], |g, v| {
            g.linear(v[0], v[1], Some(v[2]))
        }),
        case("batch_norm_train", vec![r(rng, &[2, 3, 2, 2]), r(rng, &[3]), r(rng, &[3])], |g, v| {
            g.batch_norm(v[0], v[1], v[2], &mut RunningStats::new(3), true, 0.9, 1e-5)
        }),
        case("batch_norm_eval", vec![r(rng, &[2, 3, 2, 2]), r(rng, &[3]), r(rng, &[3])], move |g, v| {
            g.batch_norm(v[0], v[1], v[2], &mut bn_stats.clone(), false, 0.9, 1e-5)
        }),
        case("avg_pool2d", vec![r(rng, &[1, 2, 4, 4])], |g, v| g.avg_pool2d(v[0], 2, 2)),
        case("max_pool2d", vec![r(rng, &[1, 2, 4, 4])], |g, v| g.max_pool2d(v[0], 2, 2)),
        case("global_avg_pool", vec![r(rng, &[2, 3, 2, 2])], |g, v| g.global_avg_pool(v[0])),
        case("spike", vec![r(rng, &s)], move |g, v| Ok(g.spike(v[0], spec))),
        case("plif_sequence", vec![random(rng, &[3 * 2, 3], -0.5, 2.5), r(rng, &[1])], |g, v| {
            Ok(g.plif_sequence(v[0], v[1], 3, None, PlifParams::default())?.spikes)
        }),
    ]
}

/// Three conv-BN-PLIF blocks followed by a mean, over `steps` time steps.
/// Inputs: `[x, (conv_w, gamma, beta, plif_w) x 3]`.
pub fn chain_case(rng: &mut ChaCha8Rng, steps: usize) -> OpCase {
    let mut inputs = vec![random(rng, &[steps, 2, 5, 5], 0.0, 1.0)];
    let chans = [2usize, 3, 3, 2];
    for l in 0..3 {
        inputs.push(random(rng, &[chans[l + 1], chans[l], 3, 3], -0.6, 0.6));
        inputs.push(random(rng, &[chans[l + 1]], 0.8, 1.6));
        inputs.push(random(rng, &[chans[l + 1]], 0.0, 0.6));
        inputs.push(random(rng, &[1], -1.0, 1.0));
    }
    case("conv_bn_plif_chain", inputs, move |g, v| {
        let mut h = v[0];
        for l in 0..3 {
            let p = &v[1 + 4 * l..5 + 4 * l];
            let y = g.conv2d(h, p[0], None, (1, 1), (1, 1))?;
            let c = g.shape(p[1])[0];
            let y = g.batch_norm(y, p[1], p[2], &mut RunningStats::new(c), true, 0.9, 1e-5)?;
            h = g.plif_sequence(y, p[3], steps, None, PlifParams::default())?.spikes;
        }
        Ok(g.mean(h))
    })
}

/// Worst error per op name across `instances` random draws of [`op_cases`].
pub fn op_battery(instances: usize, seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Vec<(&'static str, GradCheck)> = Vec::new();
    for i in 0..instances {
        for (k, c) in op_cases(&mut rng).into_iter().enumerate() {
            let r = check_gradients(&c.inputs, &c.build, 1e-5, seed ^ i as u64)?;
            if i == 0 {
                worst.push((c.name, r));
            } else if r.max_error > worst[k].1.max_error || r.max_error.is_nan() {
                worst[k].1 = r;
            }
        }
    }
    Ok(worst)
}
