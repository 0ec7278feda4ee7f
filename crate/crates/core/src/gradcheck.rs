//! Finite-difference verification of every backward pass on small random
//! configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::dense::{dense_backward, dense_forward, DenseParams};
use crate::layers::dropout::{dropout_backward, dropout_forward};
use crate::layers::lstm::{bilstm_backward, bilstm_forward, lstm_layer_backward, lstm_layer_forward, LstmParams};
use crate::layers::{build_model, model_backward, model_forward, InputShape, ModelKind, ModelSpec, ModelState};
use crate::numerics::{finite_diff_check, Activation, Tensor, FD_EPS};

pub const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub seeds: usize,
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("positive shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks the analytic gradient of `f` with respect to each tensor in
/// `params`, holding the others fixed. Returns the largest error.
fn check_all<F>(f: F, params: &[Tensor], grads: &[Tensor]) -> Result<f64>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut work = params.to_vec();
        let err = finite_diff_check(
            |t| {
                work[i] = t.clone();
                f(&work)
            },
            &params[i],
            &grads[i],
            FD_EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn lstm_params(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmParams {
    let mut p = LstmParams::init(input, hidden, Activation::Relu, rng);
    for b in p.bias.data_mut() {
        *b += rng.random_range(-0.3..0.3);
    }
    p
}

fn with_lstm(p: &LstmParams, w: &Tensor, b: &Tensor) -> LstmParams {
    LstmParams {
        weight: w.clone(),
        bias: b.clone(),
        cell_activation: p.cell_activation,
    }
}

fn dense_case(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, act) in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::Linear].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 16 + k as u64);
        let mut p = DenseParams::init(5, 4, act, &mut rng);
        p.bias = random(&mut rng, &[4], 0.5);
        let x = random(&mut rng, &[3, 5], 1.0);
        let r = random(&mut rng, &[3, 4], 1.0);
        let (_, cache) = dense_forward(&x, &p)?;
        let g = dense_backward(&p, &cache, &r)?;
        let f = |t: &[Tensor]| {
            let q = DenseParams {
                weight: t[1].clone(),
                bias: t[2].clone(),
                activation: act,
            };
            dot(&dense_forward(&t[0], &q).expect("shapes").0, &r)
        };
        worst = worst.max(check_all(f, &[x, p.weight.clone(), p.bias.clone()], &[g.d_input, g.d_weight, g.d_bias])?);
    }
    Ok(worst)
}

/// A single step from zero state plus a short sequence, so the forget-gate
/// path through `c_{t-1}` is exercised as well.
fn lstm_cell_case(seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for steps in [1, 2] {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed * 4 + steps as u64);
        let p = lstm_params(&mut rng, 2, 2);
        let x = random(&mut rng, &[2, steps, 2], 1.0);
        let (y, cache) = lstm_layer_forward(&x, &p, false)?;
        let r = random(&mut rng, y.shape(), 1.0);
        let (dx, g) = lstm_layer_backward(&p, &cache, &r)?;
        let f = |t: &[Tensor]| dot(&lstm_layer_forward(&t[0], &with_lstm(&p, &t[1], &t[2]), false).expect("shapes").0, &r);
        worst = worst.max(check_all(f, &[x, p.weight.clone(), p.bias.clone()], &[dx, g.d_weight, g.d_bias])?);
    }
    Ok(worst)
}

/// Two stacked layers over 4 steps: sequences out of the first, final state
/// out of the second.
fn stacked_lstm_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let p1 = lstm_params(&mut rng, 3, 3);
    let p2 = lstm_params(&mut rng, 3, 2);
    let x = random(&mut rng, &[2, 4, 3], 1.0);
    let (h1, c1) = lstm_layer_forward(&x, &p1, true)?;
    let (y, c2) = lstm_layer_forward(&h1, &p2, false)?;
    let r = random(&mut rng, y.shape(), 1.0);
    let (dh1, g2) = lstm_layer_backward(&p2, &c2, &r)?;
    let (dx, g1) = lstm_layer_backward(&p1, &c1, &dh1)?;
    let f = |t: &[Tensor]| {
        let (h, _) = lstm_layer_forward(&t[0], &with_lstm(&p1, &t[1], &t[2]), true).expect("shapes");
        dot(&lstm_layer_forward(&h, &with_lstm(&p2, &t[3], &t[4]), false).expect("shapes").0, &r)
    };
    check_all(
        f,
        &[x, p1.weight.clone(), p1.bias.clone(), p2.weight.clone(), p2.bias.clone()],
        &[dx, g1.d_weight, g1.d_bias, g2.d_weight, g2.d_bias],
    )
}

/// Two bidirectional layers (hidden 3 then 2 per direction) over 5 steps.
fn bidirectional_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let f1 = lstm_params(&mut rng, 2, 3);
    let b1 = lstm_params(&mut rng, 2, 3);
    let f2 = lstm_params(&mut rng, 6, 2);
    let b2 = lstm_params(&mut rng, 6, 2);
    let x = random(&mut rng, &[2, 5, 2], 1.0);
    let (h1, c1) = bilstm_forward(&x, &f1, &b1, true)?;
    let (y, c2) = bilstm_forward(&h1, &f2, &b2, false)?;
    let r = random(&mut rng, y.shape(), 1.0);
    let (dh1, gf2, gb2) = bilstm_backward(&f2, &b2, &c2, &r)?;
    let (dx, gf1, gb1) = bilstm_backward(&f1, &b1, &c1, &dh1)?;
    let f = |t: &[Tensor]| {
        let (h, _) =
            bilstm_forward(&t[0], &with_lstm(&f1, &t[1], &t[2]), &with_lstm(&b1, &t[3], &t[4]), true).expect("shapes");
        let (y, _) = bilstm_forward(&h, &with_lstm(&f2, &t[5], &t[6]), &with_lstm(&b2, &t[7], &t[8]), false).expect("shapes");
        dot(&y, &r)
    };
    let params = [
        x,
        f1.weight.clone(),
        f1.bias.clone(),
        b1.weight.clone(),
        b1.bias.clone(),
        f2.weight.clone(),
        f2.bias.clone(),
        b2.weight.clone(),
        b2.bias.clone(),
    ];
    let grads = [
        dx,
        gf1.d_weight,
        gf1.d_bias,
        gb1.d_weight,
        gb1.d_bias,
        gf2.d_weight,
        gf2.d_bias,
        gb2.d_weight,
        gb2.d_bias,
    ];
    check_all(f, &params, &grads)
}

/// Training-mode dropout with the mask fixed by reseeding the generator.
fn dropout_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
    let x = random(&mut rng, &[4, 6], 1.0);
    let r = random(&mut rng, &[4, 6], 1.0);
    let mask_seed = 4100 + seed;
    let (_, mask) = dropout_forward(&x, 0.5, true, &mut ChaCha8Rng::seed_from_u64(mask_seed))?;
    let g = dropout_backward(&r, mask.as_ref())?;
    let f = |t: &[Tensor]| {
        let (y, _) = dropout_forward(&t[0], 0.5, true, &mut ChaCha8Rng::seed_from_u64(mask_seed)).expect("rate");
        dot(&y, &r)
    };
    check_all(f, &[x], &[g])
}

/// Zero biases put ReLU units exactly on their kink whenever the previous
/// layer is silent, where a central difference is meaningless.
/// Moves biases off the ReLU kink at zero. Recurrent candidate-gate biases
/// are pushed positive so the cells carry O(1) state; near-silent cells at
/// Glorot scale leave many gradient entries near 1e-9, where a central
/// difference is dominated by roundoff. The head bias stays untouched.
fn condition_biases(model: &mut ModelState, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(model.params_mut()) {
        if t.ndim() != 1 || name.starts_with("head") {
            continue;
        }
        let recurrent = name.starts_with("lstm") || name.starts_with("bilstm");
        let hidden = t.len() / 4;
        for (k, b) in t.data_mut().iter_mut().enumerate() {
            if recurrent && k / hidden == 2 {
                *b += rng.random_range(0.5..1.0);
            } else {
                *b += rng.random_range(-0.3..0.3);
            }
        }
    }
}

/// A random linear functional of the logits of a tiny model of `kind`,
/// with dropout active under a fixed mask seed.
pub(crate) fn full_model_case(kind: ModelKind, seed: u64) -> Result<f64> {
    let spec = ModelSpec {
        kind,
        layer_widths: vec![3, 2],
        dropout_rate: 0.5,
        n_classes: 4,
        cell_activation: Activation::Relu,
    };
    let input = InputShape { steps: 5, channels: 3 };
    let mut model = build_model(&spec, input, 5000 + seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
    condition_biases(&mut model, &mut rng);
    let x = random(&mut rng, &[4, 5, 3], 1.0);
    let drop_seed = 5100 + seed;
    let (out, cache) = model_forward(&model, &x, true, &mut ChaCha8Rng::seed_from_u64(drop_seed))?;
    let r = random(&mut rng, out.shape(), 1.0);
    let grads = model_backward(&model, &cache, &r)?;
    let params: Vec<Tensor> = model.params().into_iter().map(|(_, t)| t.clone()).collect();
    let f = |t: &[Tensor]| {
        let mut m = model.clone();
        for (slot, v) in m.params_mut().into_iter().zip(t) {
            *slot = v.clone();
        }
        let (o, _) = model_forward(&m, &x, true, &mut ChaCha8Rng::seed_from_u64(drop_seed)).expect("shapes");
        dot(&o, &r)
    };
    check_all(f, &params, &grads.tensors)
}

/// Runs every case over `seeds` seeds and reports the worst error per case.
pub fn run_gradcheck(seeds: usize) -> Result<Vec<GradcheckResult>> {
    type Case = Box<dyn Fn(u64) -> Result<f64>>;
    let mut cases: Vec<(String, Case)> = vec![
        ("dense".into(), Box::new(dense_case)),
        ("lstm_cell".into(), Box::new(lstm_cell_case)),
        ("stacked_lstm_4_steps".into(), Box::new(stacked_lstm_case)),
        ("bidirectional_stack".into(), Box::new(bidirectional_case)),
        ("dropout_train".into(), Box::new(dropout_case)),
    ];
    for kind in ModelKind::ALL {
        cases.push((format!("model_{kind}"), Box::new(move |s| full_model_case(kind, s))));
    }
    cases
        .into_iter()
        .map(|(name, case)| {
            let mut worst: f64 = 0.0;
            for s in 0..seeds as u64 {
                worst = worst.max(case(s)?);
            }
            Ok(GradcheckResult {
                name,
                max_rel_error: worst,
                seeds,
            })
        })
        .collect()
}
