use super::*;
use crate::kernels::Kernel;
use crate::rng::{stream, substream};
use crate::signal_model::{add_noise_sigma, align_estimates, synthesize, DiracStream, SamplingConfig};

const P: usize = 20;

fn small_cfg() -> EncoderConfig {
    EncoderConfig { filters: 8, hidden: 16, ..Default::default() }
}

fn known_net(k: usize, seed: u64) -> (Kernel, FriedNet) {
    let kernel = Kernel::emoms(P).unwrap();
    let config = SamplingConfig::periodic(P + 1, 1.0);
    let dec = Decoder::fixed(&kernel, 1.0 / 16.0, config).unwrap();
    let enc = Encoder::new(P + 1, k, small_cfg(), &mut stream(seed)).unwrap();
    (kernel, FriedNet::new(enc, dec).unwrap())
}

fn data(kernel: &Kernel, k: usize, count: usize, sigma: f64, seed: u64) -> Vec<FriedExample> {
    let config = SamplingConfig::periodic(P + 1, 1.0);
    (0..count)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let s = DiracStream::random(&mut rng, k, 1.0, (0.5, 2.0)).unwrap();
            let clean = synthesize(&s, kernel, &config).unwrap();
            let noisy = add_noise_sigma(&clean, sigma, &mut rng).unwrap();
            FriedExample {
                noisy: noisy.values,
                clean: Some(clean.values),
                locations: s.locations().to_vec(),
                amplitudes: Some(s.amplitudes().to_vec()),
            }
        })
        .collect()
}

#[test]
fn loss_examples() {
    let y = [1.0, 2.0, 3.0];
    assert_eq!(friednet_loss(&y, &y, &[0.1], &[0.1], 5.0).unwrap(), 0.0);
    assert_eq!(friednet_loss(&[1.0, 2.0, 4.0], &y, &[0.3], &[0.1], 0.0).unwrap(), 1.0);
    let e = 0.25;
    let l = friednet_loss(&y, &y, &[0.1 + e], &[0.1], 3.0).unwrap();
    assert!((l - 3.0 * e * e).abs() < 1e-15);
    assert!(friednet_loss(&y, &y[..2], &[0.0], &[0.0], 1.0).is_err());
}

#[test]
fn known_kernel_training_freezes_decoder_and_is_reproducible() {
    let (kernel, net0) = known_net(1, 1);
    let train = data(&kernel, 1, 64, 0.05, 10);
    let cfg = FriedTrainConfig { stage1_epochs: 3, stage2_epochs: 2, batch_size: 16, lr_warmup: 1e-3, lr_encoder: 1e-3, ..Default::default() };
    let mut a = net0.clone();
    let log = train_known_kernel(&mut a, &train, &cfg).unwrap();
    assert_eq!(log.stage1.len(), 3);
    assert_eq!(log.stage2.len(), 2);
    let bits = |d: &Decoder| d.kernel.coefficients().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.decoder), bits(&net0.decoder));
    let mut b = net0.clone();
    let log_b = train_known_kernel(&mut b, &train, &cfg).unwrap();
    assert_eq!(log, log_b);
    assert_eq!(a, b);
}

#[test]
fn encoder_training_improves_on_held_out_data() {
    let (kernel, mut net) = known_net(1, 2);
    let train = data(&kernel, 1, 256, 0.02, 11);
    let test = data(&kernel, 1, 64, 0.02, 12);
    let err = |net: &FriedNet| {
        let inputs: Vec<Vec<f64>> = test.iter().map(|e| e.noisy.clone()).collect();
        let pred = net.encoder.predict(&inputs).unwrap();
        pred.iter().zip(&test).map(|(p, e)| (p[0] - e.locations[0]).powi(2)).sum::<f64>() / test.len() as f64
    };
    let before = err(&net);
    let cfg = FriedTrainConfig { stage1_epochs: 15, batch_size: 16, lr_warmup: 1e-3, lr_encoder: 1e-3, ..Default::default() };
    train_encoder(&mut net, &train, &cfg).unwrap();
    let after = err(&net);
    assert!(after < 0.5 * before, "{after} vs {before}");
}

#[test]
fn unknown_kernel_training_normalizes_every_epoch() {
    let kernel = Kernel::emoms(P).unwrap();
    let config = SamplingConfig::periodic(P + 1, 1.0);
    let mut rng = stream(3);
    let dec = Decoder::learnable(21.0, 10.0, 1.0 / 8.0, config, &mut rng).unwrap();
    let enc = Encoder::new(P + 1, 1, small_cfg(), &mut rng).unwrap();
    let mut net = FriedNet::new(enc, dec).unwrap();
    let mut train = data(&kernel, 1, 32, 0.01, 13);
    for ex in &mut train {
        ex.clean = None;
        ex.amplitudes = None;
    }
    let cfg = FriedTrainConfig {
        gamma: 100.0,
        stage1_epochs: 1,
        stage2_epochs: 2,
        stage3_epochs: 1,
        batch_size: 8,
        lr_decoder: 1e-3,
        ..Default::default()
    };
    let log = train_unknown_kernel(&mut net, &train, &cfg).unwrap();
    assert_eq!((log.stage1.len(), log.stage2.len(), log.stage3.len()), (1, 2, 1));
    assert!((net.decoder.kernel.extremum() - 1.0).abs() < 1e-12);
}

#[test]
fn finetune_descends_and_never_worsens() {
    let (kernel, net) = known_net(2, 4);
    let config = SamplingConfig::periodic(P + 1, 1.0);
    let s = DiracStream::new(1.0, vec![-0.21, 0.17], vec![1.0, 1.5]).unwrap();
    let clean = synthesize(&s, &net.decoder.as_kernel(), &config).unwrap();
    let err = |t: &[f64], y: &[f64]| {
        let a = net.decoder.amplitudes(t, y).unwrap();
        let yh = net.decoder.forward(t, &a).unwrap();
        yh.values.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
    };
    let start = [-0.209, 0.171];
    let cfg = FinetuneConfig { steps: 60, lr: 1e-5 };
    let refined = finetune_datum(&start, &net.decoder, &clean.values, &cfg).unwrap();
    assert!(err(&refined, &clean.values) < 1e-3 * err(&start, &clean.values));
    // at the optimum nothing moves
    let stay = finetune_datum(s.locations(), &net.decoder, &clean.values, &cfg).unwrap();
    for (a, b) in stay.iter().zip(s.locations()) {
        assert!((a - b).abs() < 1e-9);
    }
    // noisy data from a random start: never worse than the start
    let noisy = add_noise_sigma(&synthesize(&s, &kernel, &config).unwrap(), 0.3, &mut stream(5)).unwrap();
    for seed in 0..5u64 {
        let t0 = [-0.3 + 0.05 * seed as f64, 0.2];
        let r = finetune_datum(&t0, &net.decoder, &noisy.values, &cfg).unwrap();
        assert!(err(&r, &noisy.values) <= err(&t0, &noisy.values));
    }
}

#[test]
fn checkpoint_round_trip_and_reconstruction() {
    let (kernel, net) = known_net(2, 6);
    let mut other = known_net(2, 7).1;
    other.load_params(crate::nn::ParamSet::from_bytes(&net.to_params().to_bytes()).unwrap()).unwrap();
    assert_eq!(other, net);
    let config = SamplingConfig::periodic(P + 1, 1.0);
    let s = DiracStream::new(1.0, vec![-0.2, 0.3], vec![1.0, 2.0]).unwrap();
    let y = synthesize(&s, &kernel, &config).unwrap();
    let r = reconstruct_friednet(&net, &y, Some(&FinetuneConfig::default()), Method::FriedNetFinetuned).unwrap();
    assert_eq!(r.locations.len(), 2);
    assert!(r.locations.iter().all(|t| (-0.5..0.5).contains(t)));
    align_estimates(&r, &s).unwrap();
}
