use proptest::prelude::*;

use super::*;
use crate::testutil::{central_diff, max_rel_err, rng};

fn tiny_shape(head: Head, layer_norm: bool) -> NetShape {
    let out = if head == Head::Gaussian { 4 } else { 2 };
    NetShape {
        widths: vec![3, 5, 4, out],
        layer_norm,
        head,
    }
}

#[test]
fn zero_net_outputs_zero() {
    let net = DenseNet::<f64>::zeros(NetShape::mlp(4, 8, 3, true, Head::Linear)).unwrap();
    assert_eq!(net.forward(&[0.3, -1.0, 2.0, 5.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn identity_single_layer() {
    let shape = NetShape {
        widths: vec![2, 2],
        layer_norm: false,
        head: Head::Linear,
    };
    let net = DenseNet::<f32>::from_params(shape, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
}

#[test]
fn forward_rejects_bad_input() {
    let net = DenseNet::<f32>::zeros(NetShape::mlp(2, 4, 1, true, Head::Linear)).unwrap();
    assert!(matches!(
        net.forward(&[1.0]),
        Err(crate::Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        net.forward(&[1.0, f32::NAN]),
        Err(crate::Error::NonFinite { .. })
    ));
}

/// Straight-line evaluation of the seed-42 probe net, written without the
/// matrix or slot machinery of the implementation.
fn straight_line_forward(p: &[f64], x: &[f64]) -> Vec<f64> {
    // widths 3 -> 5 -> 4 -> 2, LayerNorm on, linear head
    let mut off = 0;
    let mut h = x.to_vec();
    for (n_in, n_out, hidden) in [(3, 5, true), (5, 4, true), (4, 2, false)] {
        let mut z = vec![0.0; n_out];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = p[off + n_in * n_out + o];
            for (i, hi) in h.iter().enumerate() {
                *zo += hi * p[off + i * n_out + o];
            }
        }
        off += n_in * n_out + n_out;
        if !hidden {
            return z;
        }
        let mean = z.iter().sum::<f64>() / n_out as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_out as f64;
        let sd = (var + 1e-5).sqrt();
        h = (0..n_out)
            .map(|k| (p[off + k] * (z[k] - mean) / sd + p[off + n_out + k]).max(0.0))
            .collect();
        off += 2 * n_out;
    }
    unreachable!()
}

#[test]
fn seed42_golden_output() {
    let net = DenseNet::<f64>::init(tiny_shape(Head::Linear, true), &mut rng(42)).unwrap();
    let x = [0.5, -1.25, 2.0];
    let got = net.forward(&x).unwrap();
    let oracle = straight_line_forward(net.params(), &x);
    for (g, o) in got.iter().zip(&oracle) {
        assert!((g - o).abs() < 1e-12, "{got:?} vs {oracle:?}");
    }
    // Frozen once from the straight-line evaluator.
    let golden = GOLDEN_42;
    for (g, e) in got.iter().zip(golden) {
        assert!((g - e).abs() < 1e-9, "{got:?} vs golden {golden:?}");
    }
}

const GOLDEN_42: [f64; 2] = [1.051904297524333, -1.4918721445139882];

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm(&[3.0f64; 4]).unwrap(), vec![0.0; 4]);
    let y = layer_norm(&[1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let want = [-1.3416, -0.4472, 0.4472, 1.3416];
    for (a, b) in y.iter().zip(want) {
        assert!((a - b).abs() < 1e-3, "{y:?}");
    }
    assert!(layer_norm(&[1.0f64]).is_err());
}

proptest! {
    #[test]
    fn layer_norm_moments_and_shift(x in prop::collection::vec(-50.0f64..50.0, 2..32), c in -100.0f64..100.0) {
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 0.5);
        let y = layer_norm(&x).unwrap();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-6);
        prop_assert!((var - 1.0).abs() < 1e-3);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys = layer_norm(&shifted).unwrap();
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let net = DenseNet::<f64>::init(tiny_shape(Head::Linear, true), &mut rng(1)).unwrap();
    let g = backward(&net, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
    assert!(g.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn scalar_weight_gradient() {
    let shape = NetShape {
        widths: vec![1, 1],
        layer_norm: false,
        head: Head::Linear,
    };
    let net = DenseNet::<f64>::from_params(shape, vec![0.7, 0.0]).unwrap();
    let g = backward(&net, &[3.0], &[1.0]).unwrap();
    assert_eq!(g.as_slice()[0], 3.0);
    assert_eq!(g.as_slice()[1], 1.0);
}

#[test]
fn backward_rejects_non_finite_upstream() {
    let net = DenseNet::<f64>::init(tiny_shape(Head::Linear, false), &mut rng(0)).unwrap();
    assert!(backward(&net, &[0.1, 0.2, 0.3], &[f64::NAN, 0.0]).is_err());
}

fn check_gradients(head: Head, layer_norm: bool, seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = tiny_shape(head, layer_norm);
    let net = DenseNet::<f64>::init(shape.clone(), &mut r).unwrap();
    // Random LN affine and biases so every parameter matters.
    let mut params = net.params().to_vec();
    for p in params.iter_mut() {
        *p += 0.1 * rand::Rng::random_range(&mut r, -1.0..1.0);
    }
    let net = DenseNet::from_params(shape.clone(), params.clone()).unwrap();
    let x = [0.4, -0.9, 1.3];
    let upstream: Vec<f64> = (0..net.output_dim()).map(|i| 0.5 + i as f64 * 0.25).collect();
    let analytic = backward(&net, &x, &upstream).unwrap();
    let numeric = central_diff(&params, 1e-4, |p| {
        let n = DenseNet::from_params(shape.clone(), p.to_vec()).unwrap();
        n.forward(&x)
            .unwrap()
            .iter()
            .zip(&upstream)
            .map(|(a, b)| a * b)
            .sum()
    });
    max_rel_err(analytic.as_slice(), &numeric, 1e-6)
}

#[test]
fn gradients_match_finite_differences_for_every_head() {
    for head in [Head::Linear, Head::Gaussian, Head::Softplus] {
        for ln in [true, false] {
            for seed in 0..5 {
                let err = check_gradients(head, ln, seed);
                assert!(err < 1e-4, "{head:?} ln={ln} seed={seed}: rel err {err}");
            }
        }
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let net = DenseNet::<f64>::init(tiny_shape(Head::Softplus, true), &mut rng(9)).unwrap();
    let x = vec![0.2, -0.4, 0.9];
    let up = Matrix::row_vector(&[1.0, -2.0]);
    let (_, tape) = net.forward_tape(&Matrix::row_vector(&x)).unwrap();
    let dx = net.backward(&tape, &up, None).unwrap();
    let numeric = central_diff(&x, 1e-5, |xx| {
        let y = net.forward(xx).unwrap();
        y[0] - 2.0 * y[1]
    });
    assert!(max_rel_err(dx.as_slice(), &numeric, 1e-6) < 1e-5);
}

#[test]
fn gaussian_head_clamps_log_std() {
    let shape = NetShape {
        widths: vec![1, 2],
        layer_norm: false,
        head: Head::Gaussian,
    };
    let net = DenseNet::<f64>::from_params(shape, vec![0.0, 0.0, 0.5, 50.0]).unwrap();
    assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.5, LOG_STD_MAX]);
    let g = backward(&net, &[1.0], &[1.0, 1.0]).unwrap();
    // clamped coordinate passes no gradient
    assert_eq!(g.as_slice()[1], 0.0);
    assert_eq!(g.as_slice()[3], 0.0);
}

#[test]
fn softplus_head_is_positive() {
    let shape = NetShape {
        widths: vec![1, 1],
        layer_norm: false,
        head: Head::Softplus,
    };
    let net = DenseNet::<f64>::from_params(shape, vec![1.0, 0.0]).unwrap();
    assert!(net.forward(&[-800.0]).unwrap()[0] >= SOFTPLUS_FLOOR);
    assert!((net.forward(&[0.0]).unwrap()[0] - (2f64.ln() + 1e-6)).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_first_step_is_identity() {
    let mut p = vec![0.3f32, -1.0];
    let mut st = AdamState::new(2, AdamConfig::default());
    st.step(&mut p, &[0.0, 0.0]).unwrap();
    assert_eq!(p, vec![0.3, -1.0]);
    assert_eq!(st.step_count(), 1);
}

#[test]
fn adam_first_step_is_lr() {
    // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1.
    let mut p = vec![0.0f64];
    let mut st = AdamState::new(1, AdamConfig::with_lr(0.1));
    st.step(&mut p, &[1.0]).unwrap();
    assert!((p[0] + 0.1).abs() < 1e-7, "{}", p[0]);
}

#[test]
fn adam_rejects_non_finite_gradient_without_mutation() {
    let mut p = vec![1.0f32];
    let mut st = AdamState::new(1, AdamConfig::default());
    assert!(matches!(
        st.step(&mut p, &[f32::INFINITY]),
        Err(crate::Error::NonFinite { .. })
    ));
    assert_eq!(p, vec![1.0]);
    assert_eq!(st.step_count(), 0);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut p = vec![0.5f32, -0.25, 1.0];
        let mut st = AdamState::new(3, AdamConfig::default());
        for k in 0..50 {
            let g: Vec<f32> = p.iter().map(|v| v * 2.0 + k as f32 * 0.01).collect();
            st.step(&mut p, &g).unwrap();
        }
        p
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
