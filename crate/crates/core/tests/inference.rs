use kinetic_mmm_core::dataset::{generate_synthetic, scale_dataset, GeneratorSpec, GroundTruth, ScaleInfo, TimeSeriesDataset};
use kinetic_mmm_core::inference::*;
use kinetic_mmm_core::transforms::{carryover, michaelis_menten_series, CarryoverParams, MMParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noiseless(n_weeks: usize, m: usize, c: usize, seed: u64) -> (TimeSeriesDataset, GroundTruth) {
    let mut g = GeneratorSpec::with_dimensions(n_weeks, m, c, seed);
    g.noise_sd = 0.0;
    generate_synthetic(&g).unwrap()
}

fn model_for(ds: &TimeSeriesDataset, spec: &ModelSpec) -> Model {
    let (scaled, scale) = scale_dataset(ds).unwrap();
    build_model(&scaled, &scale, spec).unwrap()
}

/// Draws scattered around the prior-ish region so every parameter varies.
fn scattered_draws(model: &Model, chains: usize, draws: usize, seed: u64) -> PosteriorDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = (0..chains)
        .map(|_| {
            (0..draws)
                .map(|_| {
                    let u: Vec<f64> = (0..model.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    model.constrain(&u)
                })
                .collect()
        })
        .collect();
    let stats = SamplerStats {
        step_size: 0.1,
        divergences: 0,
        mean_accept_stat: 0.8,
        mean_tree_depth: 3.0,
    };
    PosteriorDraws::new(model, d, vec![stats; chains])
}

#[test]
fn ground_truth_predictions_reproduce_noiseless_response() {
    let (ds, truth) = noiseless(60, 3, 2, 4);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let theta = model.params_from_truth(&truth).unwrap();
    let draws = PosteriorDraws::point_mass(&model, &theta, 2, 100);
    let pred = predict(&draws, &ds).unwrap();
    for (p, y) in pred.mean.iter().zip(ds.response()) {
        assert!((p - y).abs() <= 1e-9 * y.abs(), "{p} vs {y}");
    }
    assert!(!draws.converged());
}

#[test]
fn intervals_widen_with_noise() {
    let (ds, _) = noiseless(60, 3, 1, 5);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let draws = scattered_draws(&model, 2, 50, 1);
    let sigma = draws.param_index("sigma").unwrap();
    let mut wide = draws.clone();
    for d in wide.draws.iter_mut().flatten() {
        d[sigma] *= 10.0;
    }
    let a = predict(&draws, &ds).unwrap();
    let b = predict(&wide, &ds).unwrap();
    for t in 0..ds.n_weeks() {
        assert!(a.lower[t] <= a.mean[t] && a.mean[t] <= a.upper[t]);
        assert!(b.upper[t] - b.lower[t] > a.upper[t] - a.lower[t]);
        assert!((a.mean[t] - b.mean[t]).abs() <= 1e-9 * a.mean[t].abs());
    }
}

#[test]
fn decomposition_is_additive_for_every_variant() {
    let (ds, _) = noiseless(60, 3, 2, 6);
    for variant in Variant::ALL {
        let mut spec = ModelSpec::new(variant);
        spec.include_trend = true;
        spec.fourier_terms = 2;
        let model = model_for(&ds, &spec);
        let draws = scattered_draws(&model, 2, 40, 2);
        let d = decompose(&draws, &ds).unwrap();
        let pred = predict(&draws, &ds).unwrap();
        for t in 0..ds.n_weeks() {
            let s = d.component_sum(t);
            assert!((s - d.prediction[t]).abs() <= 1e-9 * d.prediction[t].abs(), "{variant}");
            assert!((s - pred.mean[t]).abs() <= 1e-9 * pred.mean[t].abs(), "{variant}");
        }
        assert!(d.contributions.values.iter().flatten().all(|&v| v >= 0.0));
    }
}

#[test]
fn zero_spend_channel_has_zero_column() {
    let (ds, _) = noiseless(60, 3, 1, 7);
    let mut media = ds.media().to_vec();
    media[2] = vec![0.0; ds.n_weeks()];
    let ds = TimeSeriesDataset::new(
        ds.time().to_vec(),
        media,
        ds.controls().to_vec(),
        ds.response().to_vec(),
        ds.channel_names().to_vec(),
        ds.control_names().to_vec(),
        ds.response_name().into(),
    )
    .unwrap();
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let draws = scattered_draws(&model, 2, 20, 3);
    let d = decompose(&draws, &ds).unwrap();
    assert!(d.contributions.values[2].iter().all(|&v| v == 0.0));
    let share = contribution_percent(&d.contributions, ds.response()).unwrap();
    assert_eq!(share.channels[2].1, 0.0);
}

#[test]
fn mismatched_channels_rejected() {
    let (ds, _) = noiseless(60, 3, 1, 8);
    let (other, _) = noiseless(60, 2, 1, 8);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let draws = scattered_draws(&model, 2, 10, 4);
    assert!(matches!(predict(&draws, &other), Err(InferenceError::ChannelMismatch(_))));
    assert!(matches!(decompose(&draws, &other), Err(InferenceError::ChannelMismatch(_))));
}

#[test]
fn contribution_percent_arithmetic() {
    let cm = ContributionMatrix {
        channel_names: vec!["a".into(), "b".into()],
        values: vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.0, 1.0]],
    };
    let y = [4.0, 4.0, 4.0];
    let s = contribution_percent(&cm, &y).unwrap();
    assert_eq!(s.channels[0].1, 50.0);
    assert!((s.channels[1].1 - 100.0 * 1.5 / 12.0).abs() < 1e-9);
    assert!((s.total - (50.0 + 12.5)).abs() < 1e-9);
    let zero = ContributionMatrix {
        channel_names: vec!["a".into()],
        values: vec![vec![0.0; 3]],
    };
    assert_eq!(contribution_percent(&zero, &y).unwrap().total, 0.0);
    assert!(matches!(contribution_percent(&cm, &[0.0; 3]), Err(InferenceError::ZeroResponseTotal)));
}

#[test]
fn summary_of_identical_draws() {
    let (ds, truth) = noiseless(60, 2, 0, 9);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let theta = model.params_from_truth(&truth).unwrap();
    let draws = PosteriorDraws::point_mass(&model, &theta, 2, 100);
    let summary = posterior_summary(&draws);
    for s in &summary {
        assert_eq!(s.sd, 0.0);
        assert!(s.rhat.is_nan());
    }
    // Back in original units.
    let km = summary.iter().find(|s| s.name == "km[ch1]").unwrap();
    assert!((km.mean - truth.spec.channels[0].km).abs() < 1e-9 * truth.spec.channels[0].km);
    let json = serde_json::to_string(&draws).unwrap();
    let back: PosteriorDraws = serde_json::from_str(&json).unwrap();
    assert_eq!(back.draws, draws.draws);
    assert!(back.rhat.iter().all(|r| r.is_nan()));
}

#[test]
fn prior_only_sampling_matches_prior_moments() {
    let (ds, _) = noiseless(60, 2, 1, 10);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmBoltzmann)).prior_only();
    let draws = sample(&model, &SamplerConfig::new(4, 1000, 1000, 21)).unwrap();
    for (i, p) in draws.params.iter().enumerate() {
        let (m, sd) = p.prior.moments();
        let chains = draws.chains_of(i);
        let all: Vec<f64> = chains.concat();
        let e = ess(&chains);
        let got = all.iter().sum::<f64>() / all.len() as f64;
        let got_sd = (all.iter().map(|v| (v - got).powi(2)).sum::<f64>() / (all.len() - 1) as f64).sqrt();
        assert!((got - m).abs() < 3.0 * sd / e.sqrt(), "{}: mean {got} vs {m}", p.name);
        // Sd of a sample sd is about sd / sqrt(2 ess) for light tails; allow
        // a little extra for kurtosis.
        assert!((got_sd - sd).abs() < 4.0 * sd / (2.0 * e).sqrt(), "{}: sd {got_sd} vs {sd}", p.name);
    }
}

#[test]
fn single_channel_contribution_matches_forward_transform() {
    let (ds, truth) = noiseless(80, 1, 0, 12);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let draws = sample(&model, &SamplerConfig::new(2, 400, 200, 3)).unwrap();
    let d = decompose(&draws, &ds).unwrap();
    let c = &truth.spec.channels[0];
    let s = carryover(ds.media_column(0), &CarryoverParams::new(c.retention, c.delay, truth.spec.max_lag).unwrap());
    let expected = michaelis_menten_series(&s, &MMParams::new(c.vmax, c.km).unwrap());
    let peak = expected.iter().cloned().fold(0.0, f64::max);
    for (got, want) in d.contributions.values[0].iter().zip(&expected) {
        assert!((got - want).abs() < 0.02 * peak, "{got} vs {want}");
    }
}

#[test]
fn sampling_is_deterministic() {
    let (ds, _) = noiseless(40, 2, 1, 13);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let cfg = SamplerConfig::new(2, 100, 100, 8);
    let a = sample(&model, &cfg).unwrap();
    let b = sample(&model, &cfg).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn frozen_sampler_flags_nonconvergence() {
    let (ds, _) = noiseless(40, 2, 1, 14);
    let model = model_for(&ds, &ModelSpec::new(Variant::MmCarryover));
    let cfg = SamplerConfig {
        fixed_step_size: Some(0.0),
        ..SamplerConfig::new(4, 0, 100, 8)
    };
    let draws = sample(&model, &cfg).unwrap();
    assert!(!draws.converged());
    assert!(draws.rhat.iter().all(|r| *r > RHAT_THRESHOLD));
}

#[test]
fn scale_info_is_identity_for_unit_scales() {
    let s = ScaleInfo::identity(2, 1);
    assert_eq!(Unit::ResponsePerSpend(1).factor(&s), 1.0);
}
