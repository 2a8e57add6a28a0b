use std::time::Instant;

use lda_core::gradcheck::check_gradients;
use lda_core::losses::{self, ClassWeights};
use lda_core::model::{Heads, LdaModel, ModelDims, Trainable};
use lda_core::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[path = "support/gradcases.rs"]
mod gradcases;

use gradcases::{labels, normal, project, worst_over_seeds, SEEDS, STEP, TOL};

#[test]
fn every_op_matches_finite_differences() {
    let start = Instant::now();
    let worst = worst_over_seeds(SEEDS);
    assert!(worst.0 < TOL, "worst relative error {:.3e} in {} (seed {})", worst.0, worst.1, worst.2);
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn matmul_tight_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (normal(&mut rng, &[3, 4]), normal(&mut rng, &[4, 2]));
    let coef = normal(&mut rng, &[3, 2]);
    let r = check_gradients(&[a, b], STEP, |t, v| {
        let p = t.matmul(v[0], v[1])?;
        project(t, p, &coef)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

fn objective(model: &LdaModel, x: &Tensor, y: &[usize], w: &ClassWeights) -> (Tape, Vec<(String, Var)>, Var) {
    let mut t = Tape::new();
    let bound = model.bind(&mut t, Trainable::ALL);
    let out = model.forward_train(&mut t, &bound, x).unwrap();
    let eps_u = losses::unbalanced_risk(&mut t, out.logits_u.unwrap(), y).unwrap();
    let eps_b = losses::balanced_risk(&mut t, out.logits_b, y, w).unwrap();
    let centers = losses::compute_centers(&mut t, out.proj.unwrap(), y).unwrap();
    let intra = losses::intra_loss(&mut t, &centers).unwrap();
    let inter = losses::inter_loss(&mut t, &centers, w, 1.0).unwrap();
    let total = losses::combine(&mut t, eps_u, eps_b, intra, inter, 0.5, 0.3).unwrap();
    (t, bound.named_vars(), total)
}

#[test]
fn full_model_objective_matches_finite_differences() {
    // every parameter of R, h, h' and p through the joint objective
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let dims = ModelDims {
            input: 3,
            hidden: vec![4],
            rep: 3,
            classes: 3,
            proj: 5,
        };
        let mut model = LdaModel::init(dims, Heads::Lda, seed).unwrap();
        // nonzero biases keep every projected feature away from the zero
        // vector, where the cosine guard is discontinuous
        for (_, p) in model.named_params_mut() {
            for v in p.data_mut() {
                *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let x = normal(&mut rng, &[6, 3]);
        let y = labels(&mut rng, 6, 3);
        let w = ClassWeights::from_counts(&[30, 10, 3]).unwrap();
        let (tape, vars, total) = objective(&model, &x, &y, &w);
        let grads = tape.backward(total).unwrap();
        let value = |m: &LdaModel| {
            let (t, _, o) = objective(m, &x, &y, &w);
            t.value(o).item()
        };
        let mut worst = 0.0f64;
        for (k, (name, var)) in vars.iter().enumerate() {
            let analytic = grads.get(*var).unwrap().data().to_vec();
            for (i, a) in analytic.into_iter().enumerate() {
                let nudge = |m: &mut LdaModel, h: f64| {
                    let mut params = m.named_params_mut();
                    assert_eq!(&params[k].0, name);
                    params[k].1.data_mut()[i] += h;
                };
                nudge(&mut model, STEP);
                let plus = value(&model);
                nudge(&mut model, -2.0 * STEP);
                let minus = value(&model);
                nudge(&mut model, STEP);
                let numeric = (plus - minus) / (2.0 * STEP);
                let denom = a.abs().max(numeric.abs()).max(lda_core::gradcheck::REL_FLOOR);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        assert!(worst < TOL, "seed {seed}: {worst:.3e}");
    }
}
