//! Central-difference gradient checks for every tape operation.

use maskdiff::nn::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Forward = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
type CaseFn = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Forward)>;

const STEP: f64 = 1e-6;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked activations.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar probe `sum(f(x) * r)` with fixed random `r`.
fn probe(f: &Forward, inputs: &[Tensor], weights: &Tensor) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let loss = if tape.value(out).is_scalar() {
        out
    } else {
        let w = tape.constant(weights.clone().reshape(tape.shape(out)).unwrap());
        let m = tape.mul(out, w).unwrap();
        tape.sum(m)
    };
    let value = tape.value(loss).item();
    let g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|&v| g.wrt(v)).collect())
}

/// Largest relative error between analytic and central-difference
/// gradients over every input element.
pub fn max_relative_error(f: &Forward, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let out_len = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let o = f(&mut tape, &vars);
        tape.value(o).len()
    };
    let weights = uniform(rng, &[out_len], -1.0, 1.0);
    let (_, analytic) = probe(f, inputs, &weights);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric =
                (probe(f, &plus, &weights).0 - probe(f, &minus, &weights).0) / (2.0 * STEP);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs());
            if denom > 1e-7 {
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    worst
}

pub struct Layer {
    pub name: &'static str,
    /// Draws one random case: inputs and the forward function.
    pub case: CaseFn,
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn unary(name: &'static str, op: fn(&mut Tape, Var) -> Var, kinked: bool) -> Layer {
    Layer {
        name,
        case: Box::new(move |rng| {
            let shape = [dims(rng, 1, 4), dims(rng, 1, 5)];
            let x = if kinked {
                off_zero(rng, &shape)
            } else {
                uniform(rng, &shape, -3.0, 3.0)
            };
            (
                vec![x],
                Box::new(move |t: &mut Tape, v: &[Var]| op(t, v[0])),
            )
        }),
    }
}

fn binary(name: &'static str, op: fn(&mut Tape, Var, Var) -> Var) -> Layer {
    Layer {
        name,
        case: Box::new(move |rng| {
            let shape = [dims(rng, 1, 4), dims(rng, 1, 5)];
            (
                vec![
                    uniform(rng, &shape, -2.0, 2.0),
                    uniform(rng, &shape, -2.0, 2.0),
                ],
                Box::new(move |t: &mut Tape, v: &[Var]| op(t, v[0], v[1])),
            )
        }),
    }
}

fn labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..c) as u8).collect()
}

pub fn layers() -> Vec<Layer> {
    vec![
        Layer {
            name: "matmul",
            case: Box::new(|rng| {
                let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 5), dims(rng, 1, 4));
                let a = if rng.random_bool(0.3) {
                    uniform(rng, &[k], -1.0, 1.0)
                } else {
                    uniform(rng, &[m, k], -1.0, 1.0)
                };
                (
                    vec![a, uniform(rng, &[k, n], -1.0, 1.0)],
                    Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]).unwrap()),
                )
            }),
        },
        Layer {
            name: "add_row",
            case: Box::new(|rng| {
                let (m, n) = (dims(rng, 1, 4), dims(rng, 1, 5));
                (
                    vec![
                        uniform(rng, &[m, n], -1.0, 1.0),
                        uniform(rng, &[n], -1.0, 1.0),
                    ],
                    Box::new(|t: &mut Tape, v: &[Var]| t.add_row(v[0], v[1]).unwrap()),
                )
            }),
        },
        Layer {
            name: "dense",
            case: Box::new(|rng| {
                let (m, k, n) = (dims(rng, 1, 4), dims(rng, 1, 5), dims(rng, 1, 4));
                (
                    vec![
                        uniform(rng, &[m, k], -1.0, 1.0),
                        uniform(rng, &[k, n], -1.0, 1.0),
                        uniform(rng, &[n], -1.0, 1.0),
                    ],
                    Box::new(|t: &mut Tape, v: &[Var]| t.dense(v[0], v[1], v[2]).unwrap()),
                )
            }),
        },
        binary("add", |t, a, b| t.add(a, b).unwrap()),
        binary("sub", |t, a, b| t.sub(a, b).unwrap()),
        binary("mul", |t, a, b| t.mul(a, b).unwrap()),
        binary("mse", |t, a, b| t.mse(a, b).unwrap()),
        unary("scale", |t, x| t.scale(x, -1.7), false),
        unary("relu", |t, x| t.relu(x), true),
        unary("silu", |t, x| t.silu(x), false),
        unary("tanh", |t, x| t.tanh(x), false),
        unary("sigmoid", |t, x| t.sigmoid(x), false),
        unary("sum", |t, x| t.sum(x), false),
        unary("mean", |t, x| t.mean(x), false),
        unary("mean_rows", |t, x| t.mean_rows(x).unwrap(), false),
        unary(
            "reshape",
            |t, x| {
                let n = t.value(x).len();
                t.reshape(x, &[n]).unwrap()
            },
            false,
        ),
        Layer {
            name: "conv2d",
            case: Box::new(|rng| {
                let (c, o) = (dims(rng, 1, 3), dims(rng, 1, 3));
                let k = if rng.random_bool(0.5) { 1 } else { 3 };
                let (h, w) = (dims(rng, k, 7), dims(rng, k, 7));
                let stride = dims(rng, 1, 2);
                let pad = dims(rng, 0, 1);
                (
                    vec![
                        uniform(rng, &[c, h, w], -1.0, 1.0),
                        uniform(rng, &[o, c, k, k], -1.0, 1.0),
                        uniform(rng, &[o], -1.0, 1.0),
                    ],
                    Box::new(move |t: &mut Tape, v: &[Var]| {
                        t.conv2d(v[0], v[1], v[2], stride, pad).unwrap()
                    }),
                )
            }),
        },
        Layer {
            name: "upsample2x",
            case: Box::new(|rng| {
                let s = [dims(rng, 1, 3), dims(rng, 1, 4), dims(rng, 1, 4)];
                (
                    vec![uniform(rng, &s, -1.0, 1.0)],
                    Box::new(|t: &mut Tape, v: &[Var]| t.upsample2x(v[0]).unwrap()),
                )
            }),
        },
        Layer {
            name: "softmax_channels",
            case: Box::new(|rng| {
                let s = [dims(rng, 2, 4), dims(rng, 1, 4), dims(rng, 1, 4)];
                (
                    vec![uniform(rng, &s, -2.0, 2.0)],
                    Box::new(|t: &mut Tape, v: &[Var]| t.softmax_channels(v[0]).unwrap()),
                )
            }),
        },
        Layer {
            name: "cross_entropy",
            case: Box::new(|rng| {
                let s = [dims(rng, 2, 4), dims(rng, 1, 4), dims(rng, 1, 4)];
                let l = labels(rng, s[1] * s[2], s[0]);
                (
                    vec![uniform(rng, &s, -2.0, 2.0)],
                    Box::new(move |t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &l).unwrap()),
                )
            }),
        },
        Layer {
            name: "soft_dice_loss",
            case: Box::new(|rng| {
                let s = [dims(rng, 2, 4), dims(rng, 1, 4), dims(rng, 1, 4)];
                let l = labels(rng, s[1] * s[2], s[0]);
                (
                    vec![uniform(rng, &s, 0.01, 1.0)],
                    Box::new(move |t: &mut Tape, v: &[Var]| {
                        t.soft_dice_loss(v[0], &l, 1.0).unwrap()
                    }),
                )
            }),
        },
    ]
}

/// Worst relative error per layer over `cases` random draws.
pub fn run_suite(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers()
        .iter()
        .map(|layer| {
            let mut worst: f64 = 0.0;
            for _ in 0..cases {
                let (inputs, f) = (layer.case)(&mut rng);
                worst = worst.max(max_relative_error(&f, &inputs, &mut rng));
            }
            (layer.name, worst)
        })
        .collect()
}
