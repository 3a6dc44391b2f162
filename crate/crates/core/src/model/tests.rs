use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tensor};
use crate::dsp::Spectrogram;
use crate::error::Error;

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        input_bins: 6,
        conv_stack: vec![
            ConvLayer::new(2, 3, 1, Some(2)),
            ConvLayer::new(2, 3, 1, None),
        ],
        rnn_width: 3,
        feature_dim: 3,
        n_classes: 3,
    }
}

fn random_spec(rng: &mut ChaCha8Rng, frames: usize, bins: usize) -> Spectrogram {
    Spectrogram::new(
        (0..frames * bins)
            .map(|_| rng.random_range(-3.0..1.0))
            .collect(),
        frames,
        bins,
    )
    .unwrap()
}

/// Counts window placements explicitly instead of using the closed form.
fn simulate_axis(len: usize, kernel: usize, stride: usize, pad: usize, pool: usize) -> usize {
    let mut outputs = 0;
    let mut start: isize = -(pad as isize);
    while start + kernel as isize <= (len + pad) as isize {
        outputs += 1;
        start += stride as isize;
    }
    outputs / pool
}

#[test]
fn shape_contract_matches_layer_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let configs = [
        EncoderConfig::default(),
        tiny_config(),
        EncoderConfig {
            input_bins: 20,
            conv_stack: vec![
                "4x5x5s2".parse().unwrap(),
                "4x3x3s1p2".parse().unwrap(),
                "6x3x1s1,2".parse().unwrap(),
            ],
            rnn_width: 4,
            feature_dim: 2,
            n_classes: 2,
        },
    ];
    for cfg in configs {
        for _ in 0..10 {
            let frames = rng.random_range(cfg.min_frames().unwrap()..60);
            let (mut t, mut f, mut c) = (frames, cfg.input_bins, 1);
            for layer in &cfg.conv_stack {
                let pool = layer.pool.unwrap_or([1, 1]);
                t = simulate_axis(
                    t,
                    layer.kernel[0],
                    layer.stride[0],
                    layer.kernel[0] / 2,
                    pool[0],
                );
                f = simulate_axis(
                    f,
                    layer.kernel[1],
                    layer.stride[1],
                    layer.kernel[1] / 2,
                    pool[1],
                );
                c = layer.out_channels;
            }
            assert_eq!(cfg.output_frames(frames).unwrap(), t);
            assert_eq!(cfg.sequence_dim().unwrap(), c * f);

            if cfg.input_bins <= 20 {
                let params = ModelParams::init(&cfg, 1).unwrap();
                let spec = random_spec(&mut rng, frames, cfg.input_bins);
                let batch = SpectrogramBatch::from_spectrograms([&spec]).unwrap();
                let seqs = cnn_encode(&batch, &params).unwrap();
                assert_eq!(seqs.sequence(0).shape(), &[t, c * f]);
                let rnn = bi_rnn_compress(&seqs, &params).unwrap();
                assert_eq!(rnn.shape(), &[1, 2 * cfg.rnn_width]);
            }
        }
    }
}

#[test]
fn identity_kernel_passes_spectrogram_through() {
    let cfg = EncoderConfig {
        input_bins: 5,
        conv_stack: vec![ConvLayer::new(1, 3, 1, None)],
        rnn_width: 2,
        feature_dim: 2,
        n_classes: 2,
    };
    let mut params = ModelParams::init(&cfg, 0).unwrap();
    let mut kernel = Tensor::zeros(&[1, 1, 3, 3]);
    kernel.data_mut()[4] = 1.0;
    *params.get_mut("conv0.weight").unwrap() = kernel;
    *params.get_mut("conv0.slope").unwrap() = Tensor::scalar(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = random_spec(&mut rng, 7, 5);
    let seqs = cnn_encode(
        &SpectrogramBatch::from_spectrograms([&spec]).unwrap(),
        &params,
    )
    .unwrap();
    assert_eq!(seqs.sequence(0).data(), spec.values());
}

#[test]
fn padding_never_reaches_valid_outputs() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let short = random_spec(&mut rng, 9, 6);
    let long = random_spec(&mut rng, 17, 6);
    let mut batch = SpectrogramBatch::from_spectrograms([&short, &long]).unwrap();
    assert_eq!(batch.mask()[0].iter().filter(|&&m| m).count(), 9);

    let clean = cnn_encode(&batch, &params).unwrap();
    for t in 9..17 {
        for v in batch.frame_mut(0, t) {
            *v = 1e6;
        }
    }
    let dirty = cnn_encode(&batch, &params).unwrap();
    assert_eq!(clean, dirty);
    assert_eq!(clean.lengths()[0], cfg.output_frames(9).unwrap());
    assert_eq!(
        clean.mask()[0].iter().filter(|&&m| m).count(),
        clean.lengths()[0]
    );
    assert!(clean
        .step(0, clean.max_steps() - 1)
        .iter()
        .all(|&v| v == 0.0));
}

/// Plain-loop GRU, independent of the graph engine.
#[allow(clippy::needless_range_loop)]
fn reference_gru(params: &ModelParams, dir: &str, seq: &Tensor, reverse: bool) -> Vec<f64> {
    let get = |n: &str| params.get(&format!("gru_{dir}.{n}")).unwrap();
    let hidden = get("b_r").len();
    let input = seq.cols();
    let affine = |x: &[f64], w: &Tensor, h: &[f64], u: &Tensor, b: &Tensor| -> Vec<f64> {
        (0..hidden)
            .map(|j| {
                let mut s = b.data()[j];
                for k in 0..input {
                    s += x[k] * w.data()[k * hidden + j];
                }
                for k in 0..hidden {
                    s += h[k] * u.data()[k * hidden + j];
                }
                s
            })
            .collect()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; hidden];
    let order: Vec<usize> = if reverse {
        (0..seq.rows()).rev().collect()
    } else {
        (0..seq.rows()).collect()
    };
    for t in order {
        let x = seq.row(t);
        let r: Vec<f64> = affine(x, get("w_r"), &h, get("u_r"), get("b_r"))
            .into_iter()
            .map(sig)
            .collect();
        let u: Vec<f64> = affine(x, get("w_u"), &h, get("u_u"), get("b_u"))
            .into_iter()
            .map(sig)
            .collect();
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = affine(x, get("w_h"), &rh, get("u_h"), get("b_h"))
            .into_iter()
            .map(f64::tanh)
            .collect();
        h = (0..hidden)
            .map(|j| u[j] * h[j] + (1.0 - u[j]) * cand[j])
            .collect();
    }
    h
}

#[test]
fn bi_rnn_matches_reference_gru() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = cfg.sequence_dim().unwrap();
    for steps in [1, 2, 5] {
        let seq = Tensor::matrix(
            steps,
            d,
            (0..steps * d)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let out = bi_rnn_compress(
            &SequenceBatch::from_sequences(vec![seq.clone()]).unwrap(),
            &params,
        )
        .unwrap();
        let mut expected = reference_gru(&params, "fwd", &seq, false);
        expected.extend(reference_gru(&params, "bwd", &seq, true));
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn bi_rnn_padding_invariance() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = cfg.sequence_dim().unwrap();
    let a = Tensor::matrix(
        3,
        d,
        (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let b = Tensor::matrix(
        8,
        d,
        (0..8 * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let solo = bi_rnn_compress(
        &SequenceBatch::from_sequences(vec![a.clone()]).unwrap(),
        &params,
    )
    .unwrap();
    let batched =
        bi_rnn_compress(&SequenceBatch::from_sequences(vec![b, a]).unwrap(), &params).unwrap();
    assert!(solo
        .row(0)
        .iter()
        .zip(batched.row(1))
        .all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn zero_gru_weights_give_zero_output() {
    let cfg = tiny_config();
    let mut params = ModelParams::init(&cfg, 5).unwrap();
    for (name, t) in params
        .names()
        .to_vec()
        .into_iter()
        .zip(params.tensors_mut())
    {
        if name.starts_with("gru_") {
            *t = Tensor::zeros(t.shape());
        }
    }
    let seq = Tensor::filled(&[4, cfg.sequence_dim().unwrap()], 0.7);
    let out = bi_rnn_compress(&SequenceBatch::from_sequences(vec![seq]).unwrap(), &params).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bi_rnn_rejects_empty_sequence() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 5).unwrap();
    let seq = Tensor::zeros(&[0, cfg.sequence_dim().unwrap()]);
    let err =
        bi_rnn_compress(&SequenceBatch::from_sequences(vec![seq]).unwrap(), &params).unwrap_err();
    assert!(matches!(err, Error::EmptySequence));
}

#[test]
fn default_encoder_produces_64_dim_features_deterministically() {
    let cfg = EncoderConfig::default();
    let params = ModelParams::init(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = random_spec(&mut rng, 30, 128);
    let batch = SpectrogramBatch::from_spectrograms([&spec]).unwrap();
    let z1 = encode(&batch, &params).unwrap();
    let z2 = encode(&batch, &params).unwrap();
    assert_eq!(z1.shape(), &[1, 64]);
    assert_eq!(z1, z2);
}

#[test]
fn too_short_input_is_an_error() {
    let cfg = EncoderConfig::default();
    let params = ModelParams::init(&cfg, 0).unwrap();
    let spec = Spectrogram::new(vec![0.0; 128], 1, 128).unwrap();
    let err = encode(
        &SpectrogramBatch::from_spectrograms([&spec]).unwrap(),
        &params,
    )
    .unwrap_err();
    assert!(matches!(err, Error::InputTooShort { .. }));
}

#[test]
fn batched_encoding_equals_solo_encoding() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let specs: Vec<Spectrogram> = [5, 13, 8, 21]
        .iter()
        .map(|&t| random_spec(&mut rng, t, 6))
        .collect();
    let batched = encode(
        &SpectrogramBatch::from_spectrograms(&specs).unwrap(),
        &params,
    )
    .unwrap();
    for (i, s) in specs.iter().enumerate() {
        let solo = encode(&SpectrogramBatch::from_spectrograms([s]).unwrap(), &params).unwrap();
        assert!(solo
            .row(0)
            .iter()
            .zip(batched.row(i))
            .all(|(a, b)| (a - b).abs() < 1e-12));
        // the training graph computes the same features
        let (z, logits) = encode_one(s, &params).unwrap();
        assert!(z
            .iter()
            .zip(batched.row(i))
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let via_classify = classify(&Tensor::matrix(1, 3, z), &params).unwrap();
        assert!(via_classify
            .data()
            .iter()
            .zip(&logits)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn classify_examples() {
    let cfg = EncoderConfig {
        feature_dim: 4,
        n_classes: 4,
        ..tiny_config()
    };
    let mut params = ModelParams::init(&cfg, 0).unwrap();
    let z = Tensor::matrix(2, 4, vec![0.5, -1.0, 2.0, 3.0, 1.0, 1.0, -2.0, 0.0]);

    *params.get_mut("fc2.weight").unwrap() = Tensor::zeros(&[4, 4]);
    assert!(classify(&z, &params)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    *params.get_mut("fc2.weight").unwrap() = Tensor::eye(4);
    assert_eq!(classify(&z, &params).unwrap(), z);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = Tensor::matrix(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
    let b = Tensor::vector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
    *params.get_mut("fc2.weight").unwrap() = w.clone();
    *params.get_mut("fc2.bias").unwrap() = b.clone();
    let logits = classify(&z, &params).unwrap();
    for i in 0..2 {
        for j in 0..4 {
            let expected: f64 = (0..4)
                .map(|k| z.row(i)[k] * w.data()[k * 4 + j])
                .sum::<f64>()
                + b.data()[j];
            assert!((logits.row(i)[j] - expected).abs() < 1e-12);
        }
    }
    assert!(classify(&Tensor::zeros(&[1, 3]), &params).is_err());
}

#[test]
fn sum_of_features_passes_grad_check() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for seed in 0..3 {
        let params = ModelParams::init(&cfg, seed).unwrap();
        let spec = random_spec(&mut rng, 7, 6);
        let mut enc = EncoderGraph::build(&cfg, 7, true).unwrap();
        let z = enc.z_node();
        let g = enc.graph_mut();
        let total = g.sum(z).unwrap();
        let point = EncoderGraph::inputs(&params, &spec).unwrap();
        let err = grad_check(g, total, &point, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
