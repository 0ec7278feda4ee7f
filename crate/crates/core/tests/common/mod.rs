#![allow(dead_code)]

use fnirs_pain::layers::lstm::{Gate, LstmParams};
use fnirs_pain::numerics::{Activation, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hidden 2, input 2 cell with hand-picked weights. Columns act on `[h_prev, x]`.
pub fn oracle_params(act: Activation) -> LstmParams {
    let mut p = LstmParams::zeros(2, 2, act);
    let blocks: [(Gate, [f64; 8], [f64; 2]); 4] = [
        (Gate::Forget, [0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.2, -0.3], [0.05, -0.05]),
        (Gate::Input, [0.2, -0.1, 0.0, 0.1, 0.3, 0.1, -0.2, 0.2], [0.0, 0.1]),
        (Gate::Candidate, [0.5, 0.4, -0.3, -0.2, -0.4, 0.2, 0.6, -0.1], [0.1, -0.7]),
        (Gate::Output, [0.0, 0.3, 0.1, -0.5, 0.2, -0.2, 0.4, 0.1], [-0.1, 0.0]),
    ];
    for (g, w, b) in blocks {
        p.gate_weight_mut(g).copy_from_slice(&w);
        p.gate_bias_mut(g).copy_from_slice(&b);
    }
    p
}

pub fn oracle_inputs() -> (Tensor, Tensor, Tensor) {
    (
        Tensor::vector(vec![0.5, -1.0]).unwrap(),
        Tensor::vector(vec![0.1, -0.2]).unwrap(),
        Tensor::vector(vec![0.3, -0.4]).unwrap(),
    )
}

/// `(h_t, c_t)` evaluated by hand in 40-digit arithmetic.
pub fn oracle_expected(act: Activation) -> ([f64; 2], [f64; 2]) {
    match act {
        Activation::Relu => ([0.1139056082896806784277, 0.0], [0.1910261834261041181898, -0.2336762091741629416454]),
        Activation::Tanh => (
            [0.1123802937089363265102, -0.2041474290277911417583],
            [0.190748420639052117911, -0.3978529812159802179803],
        ),
        other => panic!("no oracle for {other:?}"),
    }
}

pub const TOY_LEVELS: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];

/// Constant windows at one of four levels per class, plus small jitter.
pub fn toy_windows(per_class: usize, steps: usize, channels: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 4 {
        let class = i % 4;
        let data = (0..steps * channels)
            .map(|_| TOY_LEVELS[class] + rng.random_range(-0.05..0.05))
            .collect();
        windows.push(Tensor::new(vec![steps, channels], data).unwrap());
        labels.push(class);
    }
    (windows, labels)
}
