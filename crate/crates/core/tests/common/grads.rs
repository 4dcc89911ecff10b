//! Finite-difference checks for every tape primitive and both full losses.

use emoxl::classifier::{Classifier, ClassifierConfig};
use emoxl::error::TensorError;
use emoxl::gradcheck::{finite_diff_check_many, GradCheckReport};
use emoxl::model::{Chatbot, Mode, ModelConfig};
use emoxl::params::Bound;
use emoxl::text::UtterancePair;
use emoxl::{Float, Rng, Tape, Tensor, Var};

pub const H: Float = 1e-5;
pub const RTOL: Float = 1e-4;
pub const ATOL: Float = 1e-9;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>;

fn uniform(rng: &mut Rng, shape: &[usize], lo: Float, hi: Float) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng.uniform() as Float).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values bounded away from zero, for the ReLU kink.
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, 0.1, 2.0);
    for x in t.data_mut() {
        if rng.uniform() < 0.5 {
            *x = -*x;
        }
    }
    t
}

/// `sum(x * w)` with a fixed random `w`, so no coordinate cancels.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(x).shape().to_vec();
    let w = uniform(&mut Rng::new(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

fn cases() -> Vec<(&'static str, Build, Vec<Tensor>)> {
    let mut rng = Rng::new(31);
    let mut u = |shape: &[usize]| uniform(&mut rng, shape, -2.0, 2.0);
    let mut out: Vec<(&'static str, Build, Vec<Tensor>)> = vec![
        (
            "matmul",
            Box::new(|t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 1)
            }),
            vec![u(&[3, 4]), u(&[4, 2])],
        ),
        (
            "add",
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y, 2)
            }),
            vec![u(&[3, 4]), u(&[3, 4])],
        ),
        (
            "add_row_broadcast",
            Box::new(|t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y, 3)
            }),
            vec![u(&[3, 4]), u(&[4])],
        ),
        (
            "sub",
            Box::new(|t, v| {
                let y = t.sub(v[0], v[1])?;
                project(t, y, 4)
            }),
            vec![u(&[2, 5]), u(&[2, 5])],
        ),
        (
            "mul",
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                project(t, y, 5)
            }),
            vec![u(&[2, 5]), u(&[2, 5])],
        ),
        (
            "mul_row_broadcast",
            Box::new(|t, v| {
                let y = t.mul(v[0], v[1])?;
                project(t, y, 6)
            }),
            vec![u(&[3, 4]), u(&[1, 4])],
        ),
        (
            "scale",
            Box::new(|t, v| {
                let y = t.scale(v[0], -1.7)?;
                project(t, y, 7)
            }),
            vec![u(&[3, 3])],
        ),
        (
            "sum",
            Box::new(|t, v| {
                let y = t.mul(v[0], v[0])?;
                t.sum(y)
            }),
            vec![u(&[4, 3])],
        ),
        (
            "concat",
            Box::new(|t, v| {
                let a = t.concat(&[v[0], v[1]], 0)?;
                let b = t.concat(&[a, a], 1)?;
                project(t, b, 8)
            }),
            vec![u(&[2, 3]), u(&[1, 3])],
        ),
        (
            "slice",
            Box::new(|t, v| {
                let a = t.slice(v[0], 1, 1, 2)?;
                let b = t.slice(a, 0, 1, 2)?;
                project(t, b, 9)
            }),
            vec![u(&[3, 4])],
        ),
        (
            "transpose",
            Box::new(|t, v| {
                let y = t.transpose(v[0])?;
                project(t, y, 10)
            }),
            vec![u(&[2, 5])],
        ),
        (
            "gather",
            Box::new(|t, v| {
                let y = t.gather(v[0], vec![0, 5, 5, 2, 7, 1], vec![2, 3])?;
                project(t, y, 11)
            }),
            vec![u(&[2, 4])],
        ),
        (
            "embedding",
            Box::new(|t, v| {
                let y = t.embedding(v[0], &[3, 0, 3, 1])?;
                project(t, y, 12)
            }),
            vec![u(&[5, 3])],
        ),
        (
            "sigmoid",
            Box::new(|t, v| {
                let y = t.sigmoid(v[0])?;
                project(t, y, 13)
            }),
            vec![u(&[3, 4])],
        ),
        (
            "tanh",
            Box::new(|t, v| {
                let y = t.tanh(v[0])?;
                project(t, y, 14)
            }),
            vec![u(&[3, 4])],
        ),
        (
            "softmax_rows",
            Box::new(|t, v| {
                let y = t.softmax(v[0], 1)?;
                project(t, y, 16)
            }),
            vec![u(&[3, 5])],
        ),
        (
            "softmax_cols",
            Box::new(|t, v| {
                let y = t.softmax(v[0], 0)?;
                project(t, y, 17)
            }),
            vec![u(&[4, 3])],
        ),
        (
            "standardize",
            Box::new(|t, v| {
                let y = t.standardize(v[0], 1e-5)?;
                project(t, y, 18)
            }),
            vec![u(&[3, 6])],
        ),
        (
            "dropout_fixed_mask",
            Box::new(|t, v| {
                let y = t.dropout(v[0], 0.3, &mut Rng::new(4), true)?;
                project(t, y, 19)
            }),
            vec![u(&[4, 4])],
        ),
        (
            "cross_entropy",
            Box::new(|t, v| t.cross_entropy(v[0], &[2, 0, 4, 1], Some(1))),
            vec![u(&[4, 5])],
        ),
    ];
    out.push((
        "relu",
        Box::new(|t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 15)
        }),
        vec![away_from_zero(&mut Rng::new(32), &[3, 4])],
    ));
    out
}

pub fn primitive_reports() -> Vec<(&'static str, GradCheckReport)> {
    cases()
        .into_iter()
        .map(|(name, f, inputs)| (name, finite_diff_check_many(f, &inputs, H).unwrap()))
        .collect()
}

fn pair(input: Vec<usize>, response: Vec<usize>, emotion: usize) -> UtterancePair {
    UtterancePair {
        input_ids: input,
        response_ids: response,
        coarse_emotion_id: emotion,
        fine_emotion: String::new(),
        references: vec![],
    }
}

/// Full classifier loss (V=20, d_emb=8, H=8) at weights redrawn from
/// `[-1, 1]`, for a few seeds.
pub fn classifier_reports() -> Vec<GradCheckReport> {
    let config = ClassifierConfig {
        vocab_size: 20,
        d_emb: 8,
        hidden: 8,
        dense: 6,
        dropout: 0.0,
        max_len: 64,
    };
    let model = Classifier::new(config, 0).unwrap();
    let pairs = [pair(vec![4, 9, 3], vec![3], 2), pair(vec![12, 3], vec![3], 7)];
    let refs: Vec<&UtterancePair> = pairs.iter().collect();
    [11u64, 12, 13]
        .iter()
        .map(|&seed| {
            let mut rng = Rng::new(seed);
            let inputs: Vec<Tensor> = model
                .params()
                .tensors()
                .iter()
                .map(|t| uniform(&mut rng, t.shape(), -1.0, 1.0))
                .collect();
            finite_diff_check_many(
                |tape, vars| {
                    let bound = Bound::from_vars(vars.to_vec());
                    model.loss(tape, &bound, &refs, &mut Rng::new(0), false)
                },
                &inputs,
                H,
            )
            .unwrap()
        })
        .collect()
}

/// Full chatbot loss at V=16, d_model=8, one layer each side, two heads.
pub fn chatbot_report() -> GradCheckReport {
    let config = ModelConfig {
        vocab_size: 16,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_model: 8,
        d_ff: 8,
        mem_len: 4,
        dropout: 0.0,
        max_gen_len: 6,
        max_len: 64,
        emotion_fusion: true,
    };
    let model = Chatbot::new(config, 21).unwrap();
    let pairs = [pair(vec![4, 9, 3], vec![6, 3], 2), pair(vec![12, 3], vec![7, 11, 3], 6)];
    let refs: Vec<&UtterancePair> = pairs.iter().collect();
    let mut rng = Rng::new(1);
    let inputs: Vec<Tensor> = model
        .params()
        .tensors()
        .iter()
        .map(|t| uniform(&mut rng, t.shape(), -0.5, 0.5))
        .collect();
    finite_diff_check_many(
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let mut rng = Rng::new(0);
            model.loss(tape, &bound, &refs, &mut Mode::eval(&mut rng))
        },
        &inputs,
        H,
    )
    .unwrap()
}
