use lda_core::data::{
    synth_gaussian, ImbalanceProfile, LongTailDataset, Sampler, SamplerMode, Split, SynthConfig,
};
use lda_core::losses::{self, ClassWeights};
use lda_core::metrics::contrastive_domain_divergence;
use lda_core::model::{Heads, LdaModel, ModelDims, Trainable};
use lda_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn synth(c: usize, max: usize, ir: f64, noise: f64, seed: u64) -> LongTailDataset {
    synth_gaussian(&SynthConfig {
        profile: ImbalanceProfile {
            num_classes: c,
            max_count: max,
            imbalance_ratio: ir,
        },
        dim: 16,
        center_scale: 3.0,
        noise_sigma: noise,
        seed,
        test_per_class: 32,
    })
    .unwrap()
}

#[test]
fn importance_weighting_identity() {
    let counts = [60usize, 30, 10];
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    let n = labels.len();
    let c = counts.len();
    for seed in 0..20 {
        let logits = normal(&mut ChaCha8Rng::seed_from_u64(seed), n, c);
        let mut t = Tape::new();
        let l = t.constant(logits);
        let per_sample = losses::cross_entropy_terms(&mut t, l, &labels).unwrap();
        let per_sample = t.value(per_sample).data().to_vec();

        // brute force: mean loss inside each class, then the uniform mean
        let class_mean: Vec<f64> = (0..c)
            .map(|k| {
                let m: Vec<f64> = (0..n).filter(|&i| labels[i] == k).map(|i| per_sample[i]).collect();
                m.iter().sum::<f64>() / m.len() as f64
            })
            .collect();
        let uniform = class_mean.iter().sum::<f64>() / c as f64;

        let w = ClassWeights::from_counts(&counts).unwrap();
        let eps_b = losses::balanced_risk(&mut t, l, &labels, &w).unwrap();
        let eps_b = t.value(eps_b).item();
        assert!((eps_b - c as f64 * uniform).abs() < 1e-10, "{eps_b} vs {}", c as f64 * uniform);

        // with p_b folded in (w = p_b / p_u) the estimate is the balanced risk itself
        let scaled = ClassWeights::new(w.as_slice().iter().map(|x| x / c as f64).collect()).unwrap();
        let eps = losses::balanced_risk(&mut t, l, &labels, &scaled).unwrap();
        assert!((t.value(eps).item() - uniform).abs() < 1e-10);
    }
}

#[test]
fn uniform_weights_reduce_to_unbalanced_risk_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let logits = normal(&mut rng, 7, 4);
        let y: Vec<usize> = (0..7).map(|_| rng.random_range(0..4)).collect();
        let mut t = Tape::new();
        let l = t.constant(logits);
        let u = losses::unbalanced_risk(&mut t, l, &y).unwrap();
        let b = losses::balanced_risk(&mut t, l, &y, &ClassWeights::uniform(4, 1.0)).unwrap();
        assert_eq!(t.value(u).item().to_bits(), t.value(b).item().to_bits());
    }
}

#[test]
fn class_balanced_sampler_frequencies() {
    let ds = synth(10, 500, 100.0, 1.0, 0);
    let mut s = Sampler::new(&ds, SamplerMode::ClassBalanced, 100, 4).unwrap();
    let mut hits = [0usize; 10];
    let mut draws = 0;
    while draws < 100_000 {
        for batch in s.next_epoch() {
            for i in batch {
                hits[ds.labels()[i]] += 1;
                draws += 1;
            }
        }
    }
    for h in hits {
        let f = h as f64 / draws as f64;
        assert!((f - 0.1).abs() < 0.02 * 0.1, "frequency {f}");
    }
}

fn nearest_centroid_accuracy(ds: &LongTailDataset) -> f64 {
    let (xt, yt) = ds.split_data(Split::Train).unwrap();
    let (xs, ys) = ds.split_data(Split::Test).unwrap();
    let d = ds.dim();
    let mut centroid = vec![vec![0.0; d]; ds.num_classes()];
    for (i, &y) in yt.iter().enumerate() {
        for (s, v) in centroid[y].iter_mut().zip(xt.row(i)) {
            *s += v / ds.class_counts()[y] as f64;
        }
    }
    let hit = ys
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let dist = |c: &Vec<f64>| c.iter().zip(xs.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..centroid.len())
                .min_by(|&a, &b| dist(&centroid[a]).total_cmp(&dist(&centroid[b])))
                .unwrap();
            best == y
        })
        .count();
    hit as f64 / ys.len() as f64
}

#[test]
fn noiseless_mixture_is_separable() {
    for seed in 0..5 {
        assert_eq!(nearest_centroid_accuracy(&synth(10, 500, 100.0, 0.0, seed)), 1.0);
    }
}

#[test]
fn nearest_centroid_reference() {
    let accs: Vec<f64> = (0..5).map(|s| nearest_centroid_accuracy(&synth(10, 500, 100.0, 1.0, s))).collect();
    println!("nearest-centroid test accuracy, C=10 d=16 scale=3 sigma=1: {accs:?}");
    assert!(accs.iter().all(|&a| a > 0.5));
}

#[test]
fn synth_is_deterministic() {
    assert_eq!(synth(10, 500, 100.0, 1.0, 3), synth(10, 500, 100.0, 1.0, 3));
    assert_ne!(synth(10, 500, 100.0, 1.0, 3), synth(10, 500, 100.0, 1.0, 4));
}

#[test]
fn init_logits_are_tame() {
    for width in [4, 64, 256, 1024] {
        let dims = ModelDims {
            input: width,
            hidden: vec![width],
            rep: width,
            classes: 10,
            proj: 2 * width,
        };
        for seed in 0..100 {
            let model = LdaModel::init(dims.clone(), Heads::Lda, seed).unwrap();
            let x = normal(&mut ChaCha8Rng::seed_from_u64(seed), 4, width);
            let (logits, _) = model.inference_logits(&x).unwrap();
            for i in 0..4 {
                let row = logits.row(i);
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
                assert!(var.sqrt() < 3.0, "width {width} seed {seed}: std {}", var.sqrt());
            }
        }
    }
}

#[test]
fn encoder_gradient_is_sum_over_heads() {
    let dims = ModelDims {
        input: 5,
        hidden: vec![6],
        rep: 4,
        classes: 3,
        proj: 8,
    };
    let model = LdaModel::init(dims, Heads::Lda, 11).unwrap();
    let x = normal(&mut ChaCha8Rng::seed_from_u64(1), 9, 5);
    let y = [0, 1, 2, 0, 1, 2, 0, 0, 1];
    let w = ClassWeights::from_counts(&[50, 20, 5]).unwrap();
    // 0: h', 1: h, 2: p, 3: all three
    let encoder_grads = |mask: u8| {
        let mut t = Tape::new();
        let bound = model.bind(&mut t, Trainable::ALL);
        let out = model.forward_train(&mut t, &bound, &x).unwrap();
        let u = losses::unbalanced_risk(&mut t, out.logits_u.unwrap(), &y).unwrap();
        let b = losses::balanced_risk(&mut t, out.logits_b, &y, &w).unwrap();
        let centers = losses::compute_centers(&mut t, out.proj.unwrap(), &y).unwrap();
        let intra = losses::intra_loss(&mut t, &centers).unwrap();
        let inter = losses::inter_loss(&mut t, &centers, &w, 1.0).unwrap();
        let p = t.add(intra, inter).unwrap();
        let total = match mask {
            0 => u,
            1 => b,
            2 => p,
            _ => {
                let ub = t.add(u, b).unwrap();
                t.add(ub, p).unwrap()
            }
        };
        let grads = t.backward(total).unwrap();
        bound
            .named_vars()
            .into_iter()
            .filter(|(name, _)| name.starts_with("encoder"))
            .flat_map(|(_, v)| grads.get(v).unwrap().data().to_vec())
            .collect::<Vec<f64>>()
    };
    let parts = [encoder_grads(0), encoder_grads(1), encoder_grads(2)];
    let joint = encoder_grads(3);
    for (i, g) in joint.iter().enumerate() {
        let sum = parts[0][i] + parts[1][i] + parts[2][i];
        assert!((g - sum).abs() <= 1e-12 * (1.0 + g.abs()), "{g} vs {sum}");
    }
    assert!(parts.iter().all(|p| p.iter().any(|v| *v != 0.0)));
}

#[test]
fn predictions_ignore_auxiliary_heads() {
    let dims = ModelDims::standard(16, 10);
    let model = LdaModel::init(dims, Heads::Lda, 2).unwrap();
    let x = normal(&mut ChaCha8Rng::seed_from_u64(5), 40, 16);
    let base = model.predict(&x).unwrap();
    let mut other = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for l in [other.head_unbalanced.as_mut().unwrap(), other.projection.as_mut().unwrap()] {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut()) {
            *v = 100.0 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    assert_eq!(other.predict(&x).unwrap(), base);
}

#[test]
fn inference_cost_matches_single_head_model() {
    let dims = ModelDims::standard(16, 10);
    let lda = LdaModel::init(dims.clone(), Heads::Lda, 0).unwrap();
    let single = LdaModel::init(dims, Heads::Single, 0).unwrap();
    let x = Tensor::zeros(&[3, 16]);
    let (_, a) = lda.predict_counted(&x).unwrap();
    let (_, b) = single.predict_counted(&x).unwrap();
    assert_eq!(a, b);
    assert!(lda.parameter_count() > single.parameter_count());
}

#[test]
fn swapped_classes_raise_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let blob = |rng: &mut ChaCha8Rng, cx: f64| {
        (0..30)
            .flat_map(|_| {
                [cx + 0.3 * rng.sample::<f64, _>(StandardNormal), 0.3 * rng.sample::<f64, _>(StandardNormal)]
            })
            .collect::<Vec<f64>>()
    };
    let mut train = blob(&mut rng, -2.0);
    train.extend(blob(&mut rng, 2.0));
    let mut test = blob(&mut rng, -2.0);
    test.extend(blob(&mut rng, 2.0));
    let train = Tensor::new(vec![60, 2], train).unwrap();
    let test = Tensor::new(vec![60, 2], test).unwrap();
    let y: Vec<usize> = (0..60).map(|i| i / 30).collect();
    let swapped: Vec<usize> = y.iter().map(|k| 1 - k).collect();
    let aligned = contrastive_domain_divergence(&train, &y, &test, &y, 2).unwrap().value;
    let crossed = contrastive_domain_divergence(&train, &y, &test, &swapped, 2).unwrap().value;
    assert!(aligned < 0.0);
    assert!(crossed > aligned);
}
