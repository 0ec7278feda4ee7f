mod common;

use common::{oracle_expected, oracle_inputs, oracle_params};
use fnirs_pain::layers::lstm::{lstm_cell_step, lstm_gates, lstm_layer_forward};
use fnirs_pain::numerics::{Activation, Tensor};

#[test]
fn cell_step_matches_hand_evaluation() {
    for act in [Activation::Relu, Activation::Tanh] {
        let p = oracle_params(act);
        let (x, h, c) = oracle_inputs();
        let (h_t, c_t) = lstm_cell_step(&x, &h, &c, &p).unwrap();
        let (eh, ec) = oracle_expected(act);
        for k in 0..2 {
            assert!((h_t.data()[k] - eh[k]).abs() < 1e-12, "{act:?} h[{k}]");
            assert!((c_t.data()[k] - ec[k]).abs() < 1e-12, "{act:?} c[{k}]");
        }
    }
}

#[test]
fn relu_cell_clips_negative_candidate() {
    let p = oracle_params(Activation::Relu);
    let (x, h, c) = oracle_inputs();
    let [_, _, cand, _] = lstm_gates(&x, &h, &c, &p).unwrap();
    assert_eq!(cand[1], 0.0);
    assert!((cand[0] - 0.12).abs() < 1e-15);
}

#[test]
fn layer_of_length_one_matches_oracle_from_rest() {
    let p = oracle_params(Activation::Tanh);
    let (x, _, _) = oracle_inputs();
    let zero = Tensor::zeros(&[2]);
    let (h_step, _) = lstm_cell_step(&x, &zero, &zero, &p).unwrap();
    let seq = Tensor::new(vec![1, 1, 2], x.data().to_vec()).unwrap();
    let (out, _) = lstm_layer_forward(&seq, &p, false).unwrap();
    assert_eq!(out.data(), h_step.data());
}
