use super::*;
use crate::embedding::{context_window, window_embed};
use crate::numeric::finite_diff_check;

fn tiny(arch: Architecture, window: usize, num_tags: usize, seed: u64) -> Tagger {
    let dims = ModelDims {
        hidden: 3,
        window,
        embedding_dim: 4,
        num_tags,
    };
    let mut rng = SeededRng::new(seed);
    let mut tagger = Tagger::new(arch, 7, dims, &mut rng).unwrap();
    // small random values everywhere, including the CRF transitions
    let params: Vec<f64> = tagger
        .flat_params()
        .iter()
        .map(|_| rng.uniform(-0.5, 0.5))
        .collect();
    tagger.set_flat_params(&params).unwrap();
    tagger
}

fn grad_check(
    tagger: &Tagger,
    tokens: &[usize],
    gold: &[usize],
    masks: Option<&DropoutMasks>,
    step: f64,
) -> f64 {
    let (loss, grads) = tagger.loss_and_gradients(tokens, gold, masks).unwrap();
    if masks.is_none() {
        assert!((loss - tagger.loss(tokens, gold).unwrap()).abs() < 1e-12);
    }
    let analytic = tagger.flat_gradients(&grads);
    let params = tagger.flat_params();
    let mut probe = tagger.clone();
    finite_diff_check(
        |p| {
            probe.set_flat_params(p).unwrap();
            probe.loss_and_gradients(tokens, gold, masks).unwrap().0
        },
        &params,
        &analytic,
        step,
    )
    .unwrap()
}

#[test]
fn elman_gradients() {
    for window in [1, 3] {
        let tagger = tiny(Architecture::Elman, window, 9, 31);
        let err = grad_check(&tagger, &[2, 3, 4], &[0, 3, 4], None, 1e-6);
        assert!(err < 1e-4, "s={window}: {err}");
    }
}

#[test]
fn jordan_gradients() {
    for window in [1, 3] {
        let tagger = tiny(Architecture::Jordan, window, 9, 32);
        let err = grad_check(&tagger, &[2, 5, 4, 2], &[7, 8, 0, 1], None, 1e-6);
        assert!(err < 1e-4, "s={window}: {err}");
    }
}

#[test]
fn bilstm_crf_gradients() {
    for window in [1, 3] {
        let tagger = tiny(Architecture::BiLstmCrf, window, 5, 33);
        let err = grad_check(&tagger, &[2, 3, 6, 3], &[1, 2, 0, 4], None, 1e-6);
        assert!(err < 1e-4, "s={window}: {err}");
    }
}

// the 1/(1-p) rescaling leaves some input weights with ~1e-6 gradients, too
// small for a 1e-6 central difference
#[test]
fn gradients_with_fixed_dropout_masks() {
    let mut rng = SeededRng::new(34);
    for arch in Architecture::ALL {
        let tagger = tiny(arch, 3, 5, 35);
        let dims = tagger.dims();
        let masks =
            DropoutMasks::sample(&mut rng, 4, dims.input_dim(), dims.feature_dim(arch), 0.3);
        let err = grad_check(&tagger, &[2, 3, 6, 3], &[1, 2, 0, 4], Some(&masks), 1e-5);
        assert!(err < 1e-4, "{arch}: {err}");
    }
}

#[test]
fn zero_output_layer_ties_to_first_tag() {
    for arch in [Architecture::Elman, Architecture::Jordan] {
        let mut tagger = tiny(arch, 1, 9, 36);
        if let Network::Elman(p) | Network::Jordan(p) = tagger.network_mut() {
            p.output_weights = Matrix::zeros(9, 3);
            p.output_bias = Matrix::zeros(9, 1);
        }
        assert_eq!(tagger.predict(&[2, 3, 4, 5]).unwrap(), vec![0; 4]);
    }
}

#[test]
fn prediction_lengths() {
    for arch in Architecture::ALL {
        let tagger = tiny(arch, 3, 9, 37);
        for len in 1..8 {
            let tokens: Vec<usize> = (0..len).map(|i| 2 + i % 5).collect();
            assert_eq!(tagger.predict(&tokens).unwrap().len(), len);
        }
        assert!(matches!(tagger.predict(&[]), Err(Error::Empty(_))));
    }
}

/// Emission scores computed from the public building blocks.
fn emissions_by_hand(tagger: &Tagger, tokens: &[usize]) -> Matrix {
    let Network::BiLstmCrf(p) = tagger.network() else {
        panic!("not a BiLSTM-CRF")
    };
    let xs: Vec<Vec<f64>> = (0..tokens.len())
        .map(|t| {
            let w = context_window(tokens, t, tagger.dims().window).unwrap();
            window_embed(&w, tagger.embeddings()).unwrap()
        })
        .collect();
    let feats = bilstm_forward(&xs, p).unwrap();
    let k = p.num_tags();
    let mut e = Matrix::zeros(tokens.len(), k);
    for t in 0..tokens.len() {
        for y in 0..k {
            let s: f64 = p
                .projection
                .row(y)
                .iter()
                .zip(feats.row(t))
                .map(|(a, b)| a * b)
                .sum();
            e.set(t, y, s + p.projection_bias.as_slice()[y]);
        }
    }
    e
}

#[test]
fn bilstm_crf_prediction_matches_enumeration() {
    let mut tagger = tiny(Architecture::BiLstmCrf, 3, 5, 38);
    // stronger transitions so the CRF actually matters
    if let Network::BiLstmCrf(p) = tagger.network_mut() {
        let mut rng = SeededRng::new(39);
        for v in p.crf.transitions.as_mut_slice() {
            *v = rng.uniform(-3.0, 3.0);
        }
    }
    let tokens = [2, 6, 3, 2];
    let Network::BiLstmCrf(p) = tagger.network() else {
        unreachable!()
    };
    let e = emissions_by_hand(&tagger, &tokens);
    let mut best = (f64::NEG_INFINITY, vec![]);
    for code in 0..5usize.pow(4) {
        let path: Vec<usize> = (0..4)
            .map(|t| (code / 5usize.pow(3 - t as u32)) % 5)
            .collect();
        let mut s = p.crf.start.as_slice()[path[0]] + p.crf.stop.as_slice()[path[3]];
        for t in 0..4 {
            s += e.get(t, path[t]);
            if t > 0 {
                s += p.crf.transitions.get(path[t - 1], path[t]);
            }
        }
        if s > best.0 {
            best = (s, path);
        }
    }
    assert_eq!(tagger.predict(&tokens).unwrap(), best.1);
}

#[test]
fn recurrences_are_causal() {
    for arch in [Architecture::Elman, Architecture::Jordan] {
        let tagger = tiny(arch, 1, 9, 40);
        let (Network::Elman(p) | Network::Jordan(p)) = tagger.network() else {
            unreachable!()
        };
        let mut rng = SeededRng::new(41);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let base = p.forward(&xs, None).unwrap();
        let mut changed = xs.clone();
        changed[4][2] += 1.0;
        let other = p.forward(&changed, None).unwrap();
        for t in 0..4 {
            assert_eq!(base.hidden[t], other.hidden[t]);
        }
        assert_ne!(base.hidden[4], other.hidden[4]);
        for h in base.hidden.iter().flatten() {
            assert!(*h > 0.0 && *h < 1.0);
        }
    }
}

#[test]
fn lstm_backward_direction_is_anticausal() {
    let tagger = tiny(Architecture::BiLstmCrf, 1, 5, 42);
    let Network::BiLstmCrf(p) = tagger.network() else {
        unreachable!()
    };
    let mut rng = SeededRng::new(43);
    let xs: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let base = bilstm_forward(&xs, p).unwrap();
    let mut changed = xs.clone();
    changed[1][0] -= 0.7;
    let other = bilstm_forward(&changed, p).unwrap();
    for t in 2..5 {
        assert_eq!(base.row(t)[3..], other.row(t)[3..]);
    }
    assert_eq!(base.row(0)[..3], other.row(0)[..3]);
}

#[test]
fn zero_learning_rate_is_identity() {
    let mut tagger = tiny(Architecture::BiLstmCrf, 3, 5, 44);
    let before = tagger.clone();
    let (_, grads) = tagger.loss_and_gradients(&[2, 3], &[1, 2], None).unwrap();
    tagger.apply_gradients(&grads, 0.0).unwrap();
    let bits = |t: &Tagger| {
        t.flat_params()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&tagger), bits(&before));
}

#[test]
fn rejects_bad_inputs() {
    let tagger = tiny(Architecture::Elman, 3, 9, 45);
    assert!(tagger.loss_and_gradients(&[2, 3], &[0], None).is_err());
    assert!(tagger.loss_and_gradients(&[2, 3], &[0, 9], None).is_err());
    assert!(tagger.predict(&[99]).is_err());
    let dims = ModelDims {
        hidden: 3,
        window: 2,
        embedding_dim: 4,
        num_tags: 9,
    };
    assert!(Tagger::new(Architecture::Elman, 5, dims, &mut SeededRng::new(0)).is_err());
    assert_eq!(
        "bilstm-crf".parse::<Architecture>().unwrap(),
        Architecture::BiLstmCrf
    );
    assert!("gru".parse::<Architecture>().is_err());
}
