//! Gradient-check catalog: every tape op and every loss, on random shapes.
//! Shared by the core gradient tests and the acceptance gate.

use lda_core::gradcheck::{check_gradients, GradCheck};
use lda_core::losses::{self, ClassWeights};
use lda_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 100;

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Normal entries kept at least `gap` away from `kink`.
pub fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kink: f64, gap: f64) -> Tensor {
    let mut t = normal(rng, shape);
    for x in t.data_mut() {
        if (*x - kink).abs() < gap {
            *x = kink + if *x >= kink { gap } else { -gap } * 2.0;
        }
    }
    t
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=5)
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// Reduces any output to a scalar with fixed random coefficients so every
/// entry's gradient is exercised.
pub fn project(tape: &mut Tape, out: Var, coef: &Tensor) -> Result<Var> {
    if tape.value(out).is_scalar() && tape.value(out).shape().is_empty() {
        return Ok(out);
    }
    let c = tape.constant(coef.clone());
    let m = tape.mul(out, c)?;
    Ok(tape.sum(m))
}

pub struct Case {
    pub name: &'static str,
    inputs: Vec<Tensor>,
    coef: Tensor,
    build: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
}

pub fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    coef: Tensor,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        inputs,
        coef,
        build: Box::new(build),
    }
}

pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let (m, k, n) = (dim(r), dim(r), dim(r));
    let c = r.random_range(2..=5);
    let cols = labels(r, m, c);
    let rows: Vec<usize> = {
        let len = r.random_range(1..=4);
        let mut v = labels(r, len, m);
        v.sort_unstable();
        v
    };
    let floor = r.random_range(-0.5..0.5);
    let factor: f64 = r.sample(StandardNormal);
    let offset: f64 = r.sample(StandardNormal);
    let pick_row = r.random_range(0..m);
    vec![
        case("matmul", vec![normal(r, &[m, k]), normal(r, &[k, n])], normal(r, &[m, n]), |t, v| {
            t.matmul(v[0], v[1])
        }),
        case("add", vec![normal(r, &[m, n]), normal(r, &[m, n])], normal(r, &[m, n]), |t, v| {
            t.add(v[0], v[1])
        }),
        case("add_row", vec![normal(r, &[m, n]), normal(r, &[n])], normal(r, &[m, n]), |t, v| {
            t.add(v[0], v[1])
        }),
        case("add_scalar", vec![normal(r, &[m, n]), normal(r, &[])], normal(r, &[m, n]), |t, v| {
            t.add(v[0], v[1])
        }),
        case("sub", vec![normal(r, &[m, n]), normal(r, &[m, n])], normal(r, &[m, n]), |t, v| {
            t.sub(v[0], v[1])
        }),
        case("sub_row", vec![normal(r, &[m, n]), normal(r, &[n])], normal(r, &[m, n]), |t, v| {
            t.sub(v[0], v[1])
        }),
        case("mul", vec![normal(r, &[m, n]), normal(r, &[m, n])], normal(r, &[m, n]), |t, v| {
            t.mul(v[0], v[1])
        }),
        case("mul_row", vec![normal(r, &[m, n]), normal(r, &[n])], normal(r, &[m, n]), |t, v| {
            t.mul(v[0], v[1])
        }),
        case("mul_scalar", vec![normal(r, &[]), normal(r, &[m, n])], normal(r, &[m, n]), |t, v| {
            t.mul(v[0], v[1])
        }),
        case("mul_self", vec![normal(r, &[m, n])], normal(r, &[m, n]), |t, v| t.mul(v[0], v[0])),
        case("scale", vec![normal(r, &[m, n])], normal(r, &[m, n]), move |t, v| {
            Ok(t.scale(v[0], factor))
        }),
        case("shift", vec![normal(r, &[m, n])], normal(r, &[m, n]), move |t, v| {
            Ok(t.shift(v[0], offset))
        }),
        case("relu", vec![away_from(r, &[m, n], 0.0, 1e-3)], normal(r, &[m, n]), |t, v| {
            Ok(t.relu(v[0]))
        }),
        case("exp", vec![normal(r, &[m, n])], normal(r, &[m, n]), |t, v| Ok(t.exp(v[0]))),
        case("log", vec![positive(r, &[m, n])], normal(r, &[m, n]), |t, v| t.log(v[0])),
        case("clamp_min", vec![away_from(r, &[m, n], floor, 1e-3)], normal(r, &[m, n]), move |t, v| {
            Ok(t.clamp_min(v[0], floor))
        }),
        case("sum", vec![normal(r, &[m, n])], normal(r, &[]), |t, v| Ok(t.sum(v[0]))),
        case("mean", vec![normal(r, &[m, n])], normal(r, &[]), |t, v| Ok(t.mean(v[0]))),
        case("mean_exp_log", vec![positive(r, &[m, n])], normal(r, &[]), |t, v| {
            let l = t.log(v[0])?;
            let e = t.exp(l);
            Ok(t.mean(e))
        }),
        case("log_softmax", vec![normal(r, &[m, c])], normal(r, &[m, c]), |t, v| t.log_softmax(v[0])),
        case("cosine", vec![normal(r, &[k]), normal(r, &[k])], normal(r, &[]), |t, v| {
            t.cosine(v[0], v[1])
        }),
        case("cosine_self", vec![normal(r, &[k])], normal(r, &[]), |t, v| t.cosine(v[0], v[0])),
        case("row", vec![normal(r, &[m, n])], normal(r, &[n]), move |t, v| t.row(v[0], pick_row)),
        case("mean_rows", vec![normal(r, &[m, n])], normal(r, &[n]), move |t, v| {
            t.mean_rows(v[0], &rows)
        }),
        case("pick", vec![normal(r, &[m, c])], normal(r, &[m]), move |t, v| t.pick(v[0], &cols)),
        case("stack", vec![normal(r, &[]), normal(r, &[])], normal(r, &[3]), |t, v| {
            let s = t.sum(v[1]);
            t.stack(&[v[0], s, v[0]])
        }),
    ]
}

pub fn random_weights(rng: &mut ChaCha8Rng, c: usize) -> ClassWeights {
    let counts: Vec<usize> = (0..c).map(|_| rng.random_range(1..=60)).collect();
    ClassWeights::from_counts(&counts).unwrap()
}

pub fn loss_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
    let r = &mut rng;
    let n = r.random_range(1..=8);
    let c = r.random_range(2..=5);
    let d = r.random_range(2..=6);
    let y = labels(r, n, c);
    let w = random_weights(r, c);
    let margin = r.random_range(0.5..1.5);
    let alpha = r.random_range(0.0..1.0);
    let beta = r.random_range(0.0..1.0);
    let (y1, y2, y3, y4, y5) = (y.clone(), y.clone(), y.clone(), y.clone(), y.clone());
    let (w1, w2, w3) = (w.clone(), w.clone(), w);
    vec![
        case("cross_entropy_terms", vec![normal(r, &[n, c])], normal(r, &[n]), move |t, v| {
            losses::cross_entropy_terms(t, v[0], &y1)
        }),
        case("unbalanced_risk", vec![normal(r, &[n, c])], normal(r, &[]), move |t, v| {
            losses::unbalanced_risk(t, v[0], &y2)
        }),
        case("balanced_risk", vec![normal(r, &[n, c])], normal(r, &[]), move |t, v| {
            losses::balanced_risk(t, v[0], &y3, &w1)
        }),
        case("intra_loss", vec![normal(r, &[n, d])], normal(r, &[]), move |t, v| {
            let centers = losses::compute_centers(t, v[0], &y4)?;
            losses::intra_loss(t, &centers)
        }),
        case("inter_loss", vec![normal(r, &[n, d])], normal(r, &[]), move |t, v| {
            let centers = losses::compute_centers(t, v[0], &y5)?;
            losses::inter_loss(t, &centers, &w2, margin)
        }),
        case(
            "total",
            vec![normal(r, &[n, c]), normal(r, &[n, c]), normal(r, &[n, d])],
            normal(r, &[]),
            move |t, v| {
                let eps_u = losses::unbalanced_risk(t, v[0], &y)?;
                let eps_b = losses::balanced_risk(t, v[1], &y, &w3)?;
                let centers = losses::compute_centers(t, v[2], &y)?;
                let intra = losses::intra_loss(t, &centers)?;
                let inter = losses::inter_loss(t, &centers, &w3, margin)?;
                losses::combine(t, eps_u, eps_b, intra, inter, alpha, beta)
            },
        ),
    ]
}

pub fn run(case: &Case) -> GradCheck {
    check_gradients(&case.inputs, STEP, |t, v| {
        let out = (case.build)(t, v)?;
        project(t, out, &case.coef)
    })
    .unwrap_or_else(|e| panic!("{}: {e}", case.name))
}

/// Worst relative error over every case and seed, with where it occurred.
pub fn worst_over_seeds(seeds: u64) -> (f64, &'static str, u64) {
    let mut worst = (0.0, "", 0);
    for seed in 0..seeds {
        for case in op_cases(seed).iter().chain(&loss_cases(seed)) {
            let r = run(case);
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, case.name, seed);
            }
        }
    }
    worst
}
