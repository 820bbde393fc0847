use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svgfont::dataset::{synthesize, Corpus, SyntheticSpec};
use svgfont::labels::label_of;
use svgfont::svg_decoder::{DecoderConfig, SvgDecoder};
use svgfont::training::*;
use svgfont::vae::{Vae, VaeConfig};

fn corpus(chars: &str) -> Corpus {
    let labels: Vec<usize> = chars.chars().map(|c| label_of(c).unwrap()).collect();
    synthesize(&[SyntheticSpec::REGULAR], &labels, 3).unwrap()
}

fn short(steps: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        steps: Some(steps),
        batch_size: batch,
        ..TrainConfig::vae_default()
    }
}

fn fresh_vae(seed: u64) -> Vae<f32> {
    Vae::new(VaeConfig::small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn fresh_decoder(seed: u64) -> SvgDecoder<f32> {
    SvgDecoder::new(DecoderConfig::small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn same_seed_gives_byte_equal_checkpoints() {
    let c = corpus("abcdef");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut curves = Vec::new();
    for d in &dirs {
        let mut vae = fresh_vae(1);
        curves.push(train_vae(&mut vae, &c.images(), &short(6, 4), Some(d.path())).unwrap());
    }
    assert_eq!(curves[0], curves[1]);
    for name in ["vae.ckpt", "losses.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }

    let mut other = fresh_vae(1);
    let cfg = TrainConfig { seed: 9, ..short(6, 4) };
    let curve = train_vae(&mut other, &c.images(), &cfg, None).unwrap();
    assert_ne!(curve, curves[0]);
}

#[test]
fn vae_loss_never_drops_below_the_free_bits_floor() {
    let c = corpus("abcd");
    let mut vae = fresh_vae(2);
    let curve = train_vae(&mut vae, &c.images(), &short(5, 4), None).unwrap();
    let floor = vae.config.z_dim as f64 * vae.config.free_bits_per_dim;
    for r in &curve {
        assert!(r.kl_term >= floor - 1e-5, "{r:?}");
        assert!(r.total >= vae.config.kl_beta * floor - 1e-4);
        assert!(r.recon > 0.0);
    }
}

#[test]
fn decoder_training_leaves_the_vae_untouched() {
    let c = corpus("abc");
    let vae = fresh_vae(4);
    let d = tempfile::tempdir().unwrap();
    vae.save(d.path()).unwrap();
    let before = std::fs::read(d.path().join("vae.ckpt")).unwrap();
    let mut dec = fresh_decoder(5);
    train_decoder(&mut dec, &vae, &c.sequences(), &short(4, 3), None).unwrap();
    vae.save(d.path()).unwrap();
    assert!(before == std::fs::read(d.path().join("vae.ckpt")).unwrap());
}

#[test]
fn empty_corpus_and_bad_config_are_rejected() {
    let mut vae = fresh_vae(0);
    assert!(matches!(
        train_vae(&mut vae, &[], &short(1, 1), None),
        Err(TrainError::EmptyCorpus)
    ));
    let c = corpus("a");
    let bad = TrainConfig {
        batch_size: 0,
        ..short(1, 1)
    };
    assert!(matches!(
        train_vae(&mut vae, &c.images(), &bad, None),
        Err(TrainError::Config(_))
    ));
    let mut dec = SvgDecoder::<f32>::new(
        DecoderConfig {
            z_dim: 3,
            ..DecoderConfig::small()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let r = train_decoder(&mut dec, &vae, &c.sequences(), &short(1, 1), None);
    assert!(matches!(r, Err(TrainError::Config(_))));
}

#[test]
fn memorized_decoder_is_better_without_dropout_and_curve_falls() {
    let c = corpus("ilo");
    let seqs = c.sequences();
    let vae = fresh_vae(6);
    let mut dec = fresh_decoder(7);
    let curve = train_decoder(&mut dec, &vae, &seqs, &short(300, 3), None).unwrap();
    let zs = encode_means(&vae, &seqs).unwrap();
    let eval = teacher_forced(&dec, &zs, &seqs).unwrap();
    let tail: Vec<f64> = curve[curve.len() - 50..].iter().map(|r| r.total).collect();
    let train_mode = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(eval.loss <= train_mode, "eval {} vs train {}", eval.loss, train_mode);
    let smoothed = smooth(&curve.iter().map(|r| r.total).collect::<Vec<_>>(), 50);
    assert!(smoothed[299] < smoothed[49] && smoothed[199] < smoothed[49]);
}

#[test]
fn per_class_and_per_length_evaluations() {
    let c = corpus("lo");
    let seqs = c.sequences();
    let vae = fresh_vae(8);
    let dec = fresh_decoder(9);
    let single = example_nlls(&dec, &vae, &seqs).unwrap();

    // duplicating an example leaves its class mean unchanged
    let mut dup = seqs.clone();
    dup.push(seqs[0].clone());
    let by_class = nll_by_class(&dec, &vae, &dup).unwrap();
    assert_eq!(by_class.len(), 62);
    assert!((by_class[seqs[0].label].unwrap() - single[0]).abs() < 1e-9);
    assert_eq!(by_class.iter().filter(|v| v.is_some()).count(), 2);

    let points = nll_vs_length(&dec, &vae, &seqs, seqs[1].label).unwrap();
    assert_eq!(points, vec![(seqs[1].sequence.length, single[1])]);
    assert!(matches!(
        nll_vs_length(&dec, &vae, &seqs, 61),
        Err(TrainError::MissingClass(61))
    ));
}

#[test]
fn length_statistics() {
    let pts = [(7, 1.0), (7, 3.0), (12, 0.0), (12, 4.0), (12, 8.0)];
    let buckets = length_buckets(&pts);
    assert_eq!(buckets.len(), 2);
    assert_eq!(
        (
            buckets[0].length,
            buckets[0].count,
            buckets[0].mean,
            buckets[0].variance
        ),
        (7, 2, 2.0, 1.0)
    );
    assert_eq!(buckets[1].mean, 4.0);
    assert!((buckets[1].variance - 32.0 / 3.0).abs() < 1e-12);
    assert_eq!(short_long_variance(&pts, 10), (Some(1.0), Some(32.0 / 3.0)));
    assert_eq!(short_long_variance(&pts[..1], 10), (None, None));
    assert_eq!(smooth(&[2.0, 4.0, 6.0, 8.0], 2), vec![2.0, 3.0, 5.0, 7.0]);
}

#[test]
fn eval_report_files() {
    let c = corpus("aAbB");
    let seqs = c.sequences();
    let vae = fresh_vae(10);
    let dec = fresh_decoder(11);
    let d = tempfile::tempdir().unwrap();
    let files = write_eval_report(&dec, &vae, &seqs, d.path()).unwrap();
    let by_class = std::fs::read_to_string(&files.nll_by_class).unwrap();
    assert_eq!(by_class.lines().count(), 63);
    // a and A get distinct files even on case-insensitive file systems
    assert_eq!(files.nll_vs_length.len(), 4);
    let mut names: Vec<String> = files
        .nll_vs_length
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().to_lowercase())
        .collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 4);
    assert!(files.length_variance.exists());
}
