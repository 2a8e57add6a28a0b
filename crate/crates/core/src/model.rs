//! Shared MLP encoder with a balanced classifier `h`, an auxiliary
//! unbalanced classifier `h'` and a projection head `p`.
//!
//! Only the encoder and `h` take part in inference.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, Tensor};
use crate::{Error, Result};

/// Layer widths of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub rep: usize,
    pub classes: usize,
    pub proj: usize,
}

impl ModelDims {
    /// Default encoder: two ReLU layers of width 64, projection twice as wide.
    pub fn standard(input: usize, classes: usize) -> Self {
        ModelDims {
            input,
            hidden: vec![64],
            rep: 64,
            classes,
            proj: 128,
        }
    }

    fn validate(&self, heads: Heads) -> Result<()> {
        let widths = [self.input, self.rep, self.classes, self.proj];
        if widths.iter().chain(&self.hidden).any(|&w| w < 1) {
            return Err(Error::config(format!("every width must be ≥ 1: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if heads == Heads::Lda && self.proj < self.rep {
            return Err(Error::config(format!(
                "projection width {} must be ≥ representation width {}",
                self.proj, self.rep
            )));
        }
        Ok(())
    }
}

/// Which heads sit on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    /// `h`, `h'` and `p`.
    Lda,
    /// A single classifier, stored in the `h` slot.
    Single,
}

/// Affine map `x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::new(vec![fan_in, fan_out], w).expect("init shape"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Weight vector feeding output unit `j` (a classifier's class vector).
    pub fn unit_weights(&self, j: usize) -> Vec<f64> {
        self.weight.column(j)
    }
}

// Init streams. A single-head model draws its classifier from the stream of
// h', so a plain cross-entropy run and an LDA run share that head's start.
const STREAM_HEAD_UNBALANCED: u64 = 1;
const STREAM_HEAD_BALANCED: u64 = 2;
const STREAM_PROJECTION: u64 = 3;
const STREAM_ENCODER: u64 = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    dims: ModelDims,
    heads: Heads,
    pub encoder: Vec<Linear>,
    pub head_balanced: Linear,
    pub head_unbalanced: Option<Linear>,
    pub projection: Option<Linear>,
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub encoder: bool,
    pub heads: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        encoder: true,
        heads: true,
    };
    pub const HEADS_ONLY: Trainable = Trainable {
        encoder: false,
        heads: true,
    };
    pub const NONE: Trainable = Trainable {
        encoder: false,
        heads: false,
    };
}

/// Model parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    encoder: Vec<(Var, Var)>,
    head_balanced: (Var, Var),
    head_unbalanced: Option<(Var, Var)>,
    projection: Option<(Var, Var)>,
}

impl Bound {
    /// `(parameter name, var)` in canonical order.
    pub fn named_vars(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        let mut push = |name: String, (w, b): (Var, Var)| {
            out.push((format!("{name}.weight"), w));
            out.push((format!("{name}.bias"), b));
        };
        for (i, &l) in self.encoder.iter().enumerate() {
            push(format!("encoder.{i}"), l);
        }
        push("head_b".into(), self.head_balanced);
        if let Some(l) = self.head_unbalanced {
            push("head_u".into(), l);
        }
        if let Some(l) = self.projection {
            push("proj".into(), l);
        }
        out
    }
}

/// Tape outputs of a training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TrainOutputs {
    pub rep: Var,
    pub logits_b: Var,
    pub logits_u: Option<Var>,
    pub proj: Option<Var>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl LdaModel {
    /// Scaled-uniform weights, zero biases; deterministic per seed.
    pub fn init(dims: ModelDims, heads: Heads, seed: u64) -> Result<Self> {
        dims.validate(heads)?;
        let mut widths = vec![dims.input];
        widths.extend(&dims.hidden);
        widths.push(dims.rep);
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(w[0], w[1], &mut stream_rng(seed, STREAM_ENCODER + i as u64)))
            .collect();
        let classifier = |stream| Linear::init(dims.rep, dims.classes, &mut stream_rng(seed, stream));
        let (head_balanced, head_unbalanced, projection) = match heads {
            Heads::Lda => (
                classifier(STREAM_HEAD_BALANCED),
                Some(classifier(STREAM_HEAD_UNBALANCED)),
                Some(Linear::init(
                    dims.rep,
                    dims.proj,
                    &mut stream_rng(seed, STREAM_PROJECTION),
                )),
            ),
            Heads::Single => (classifier(STREAM_HEAD_UNBALANCED), None, None),
        };
        Ok(LdaModel {
            dims,
            heads,
            encoder,
            head_balanced,
            head_unbalanced,
            projection,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn heads(&self) -> Heads {
        self.heads
    }

    /// `(layer name, layer)` in canonical order.
    pub fn layers(&self) -> Vec<(String, &Linear)> {
        let mut out: Vec<(String, &Linear)> = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("encoder.{i}"), l))
            .collect();
        out.push(("head_b".into(), &self.head_balanced));
        if let Some(l) = &self.head_unbalanced {
            out.push(("head_u".into(), l));
        }
        if let Some(l) = &self.projection {
            out.push(("proj".into(), l));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut Linear)> {
        let mut out: Vec<(String, &mut Linear)> = self
            .encoder
            .iter_mut()
            .enumerate()
            .map(|(i, l)| (format!("encoder.{i}"), l))
            .collect();
        out.push(("head_b".into(), &mut self.head_balanced));
        if let Some(l) = &mut self.head_unbalanced {
            out.push(("head_u".into(), l));
        }
        if let Some(l) = &mut self.projection {
            out.push(("proj".into(), l));
        }
        out
    }

    /// `(parameter name, tensor)` in the same order as [`Bound::named_vars`].
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &mut l.weight),
                    (format!("{name}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, l)| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> Bound {
        let mut put = |l: &Linear, grad: bool| {
            if grad {
                (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
            } else {
                (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
            }
        };
        let encoder = self
            .encoder
            .iter()
            .map(|l| put(l, trainable.encoder))
            .collect();
        Bound {
            encoder,
            head_balanced: put(&self.head_balanced, trainable.heads),
            head_unbalanced: self.head_unbalanced.as_ref().map(|l| put(l, trainable.heads)),
            projection: self.projection.as_ref().map(|l| put(l, trainable.heads)),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, d) = x.dims2()?;
        if d != self.dims.input {
            return Err(Error::shape("model input", x.shape(), &[0, self.dims.input]));
        }
        Ok(())
    }

    fn affine(tape: &mut Tape, x: Var, (w, b): (Var, Var)) -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for &layer in &bound.encoder {
            let a = Self::affine(tape, h, layer)?;
            h = tape.relu(a);
        }
        Ok(h)
    }

    /// Runs every head on one tape: `rep = R(x)`, `logits_u = h'(rep)`,
    /// `logits_b = h(rep)`, `proj = p(rep)`.
    pub fn forward_train(&self, tape: &mut Tape, bound: &Bound, x: &Tensor) -> Result<TrainOutputs> {
        self.check_input(x)?;
        let x = tape.constant(x.clone());
        let rep = self.encode(tape, bound, x)?;
        let logits_b = Self::affine(tape, rep, bound.head_balanced)?;
        let logits_u = bound
            .head_unbalanced
            .map(|l| Self::affine(tape, rep, l))
            .transpose()?;
        let proj = bound
            .projection
            .map(|l| Self::affine(tape, rep, l))
            .transpose()?;
        Ok(TrainOutputs {
            rep,
            logits_b,
            logits_u,
            proj,
        })
    }

    /// Logits of the balanced classifier, plus the number of tape operations
    /// spent computing them.
    pub fn inference_logits(&self, x: &Tensor) -> Result<(Tensor, usize)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for l in &self.encoder {
            encoder.push((tape.constant(l.weight.clone()), tape.constant(l.bias.clone())));
        }
        let head = (
            tape.constant(self.head_balanced.weight.clone()),
            tape.constant(self.head_balanced.bias.clone()),
        );
        let xv = tape.constant(x.clone());
        let mut h = xv;
        for &layer in &encoder {
            let a = Self::affine(&mut tape, h, layer)?;
            h = tape.relu(a);
        }
        let logits = Self::affine(&mut tape, h, head)?;
        Ok((tape.value(logits).clone(), tape.op_count()))
    }

    /// Argmax of `h` only; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_counted(x)?.0)
    }

    /// [`predict`](Self::predict) together with its tape operation count.
    pub fn predict_counted(&self, x: &Tensor) -> Result<(Vec<usize>, usize)> {
        let (logits, ops) = self.inference_logits(x)?;
        let n = logits.shape()[0];
        Ok(((0..n).map(|i| argmax(logits.row(i))).collect(), ops))
    }

    /// Encoder outputs `R(x)`.
    pub fn representations(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Trainable::NONE);
        let xv = tape.constant(x.clone());
        let rep = self.encode(&mut tape, &bound, xv)?;
        Ok(tape.value(rep).clone())
    }

    /// Features in the space the cosine regularizers act on: `p(R(x))`, or
    /// `R(x)` for a model without a projection head.
    pub fn embeddings(&self, x: &Tensor) -> Result<Tensor> {
        let rep = self.representations(x)?;
        let Some(p) = &self.projection else {
            return Ok(rep);
        };
        let mut tape = Tape::new();
        let r = tape.constant(rep);
        let w = tape.constant(p.weight.clone());
        let b = tape.constant(p.bias.clone());
        let out = Self::affine(&mut tape, r, (w, b))?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            input: 4,
            hidden: vec![6],
            rep: 5,
            classes: 3,
            proj: 10,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = LdaModel::init(dims(), Heads::Lda, 9).unwrap();
        let b = LdaModel::init(dims(), Heads::Lda, 9).unwrap();
        assert_eq!(a, b);
        for (_, l) in a.layers() {
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
        }
        assert_ne!(a, LdaModel::init(dims(), Heads::Lda, 10).unwrap());
    }

    #[test]
    fn init_rejects_zero_width() {
        let mut d = dims();
        d.hidden = vec![0];
        assert!(matches!(
            LdaModel::init(d, Heads::Lda, 0),
            Err(Error::Config(_))
        ));
        let mut d = dims();
        d.proj = 2;
        assert!(LdaModel::init(d, Heads::Lda, 0).is_err());
    }

    #[test]
    fn lda_adds_exactly_two_heads_of_parameters() {
        let lda = LdaModel::init(dims(), Heads::Lda, 1).unwrap();
        let single = LdaModel::init(dims(), Heads::Single, 1).unwrap();
        let extra = (5 * 3 + 3) + (5 * 10 + 10);
        assert_eq!(lda.parameter_count(), single.parameter_count() + extra);
        // the single head starts where h' starts
        assert_eq!(Some(&single.head_balanced), lda.head_unbalanced.as_ref());
        assert_eq!(single.encoder, lda.encoder);
    }

    #[test]
    fn zero_heads_give_zero_logits() {
        let mut m = LdaModel::init(dims(), Heads::Lda, 2).unwrap();
        for l in [
            &mut m.head_balanced,
            m.head_unbalanced.as_mut().unwrap(),
        ] {
            l.weight.data_mut().fill(0.0);
        }
        let x = Tensor::full(&[2, 4], 0.3);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, Trainable::ALL);
        let out = m.forward_train(&mut tape, &bound, &x).unwrap();
        assert!(tape.value(out.logits_b).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.logits_u.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_row_batch_shapes() {
        let m = LdaModel::init(dims(), Heads::Lda, 2).unwrap();
        let x = Tensor::full(&[1, 4], 1.0);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, Trainable::ALL);
        let out = m.forward_train(&mut tape, &bound, &x).unwrap();
        assert_eq!(tape.value(out.rep).shape(), [1, 5]);
        assert_eq!(tape.value(out.logits_b).shape(), [1, 3]);
        assert_eq!(tape.value(out.logits_u.unwrap()).shape(), [1, 3]);
        assert_eq!(tape.value(out.proj.unwrap()).shape(), [1, 10]);
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let m = LdaModel::init(dims(), Heads::Lda, 2).unwrap();
        assert!(matches!(
            m.predict(&Tensor::zeros(&[1, 3])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn crafted_head_maps_basis_vectors() {
        // identity encoder on nonnegative inputs, identity classifier
        let d = ModelDims {
            input: 3,
            hidden: vec![],
            rep: 3,
            classes: 3,
            proj: 3,
        };
        let mut m = LdaModel::init(d, Heads::Lda, 0).unwrap();
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        m.encoder[0].weight = eye.clone();
        m.head_balanced.weight = eye.clone();
        assert_eq!(m.predict(&eye).unwrap(), [0, 1, 2]);
    }

    #[test]
    fn tie_goes_to_lowest_class() {
        let mut m = LdaModel::init(dims(), Heads::Lda, 0).unwrap();
        m.head_balanced.weight.data_mut().fill(0.0);
        let x = Tensor::full(&[3, 4], 0.7);
        assert_eq!(m.predict(&x).unwrap(), [0, 0, 0]);
    }
}
