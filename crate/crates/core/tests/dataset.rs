use std::path::Path;

use svgfont::dataset::*;
use svgfont::labels::label_of;
use svgfont::raster::ink_coverage;
use svgfont::svg_path::PathError;

fn svg(d: &str) -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1000 1000"><path d="{d}"/></svg>"#)
}

fn write(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

/// A comb: `n` teeth vertices on top of a flat base, closed.
fn comb(n: usize) -> String {
    let mut d = String::from("M 0 100");
    for i in 0..n {
        d += &format!(" L {} {}", i * 10, if i % 2 == 0 { 0 } else { 40 });
    }
    d + &format!(" L {} 100 Z", (n - 1) * 10)
}

#[test]
fn single_valid_glyph() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "fontA_a.svg",
        &svg("M 100 100 L 500 100 L 500 700 L 100 700 Z"),
    );
    let (corpus, skipped) = ingest(dir.path()).unwrap();
    assert!(skipped.is_empty());
    assert_eq!(corpus.len(), 1);
    assert_eq!(corpus.entries[0].label, label_of('a').unwrap());
    assert_eq!(corpus.entries[0].font_id, "fontA");
}

#[test]
fn bad_files_are_skipped_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    let square = svg("M 100 100 L 500 100 L 500 700 L 100 700 Z");
    write(dir.path(), "fontA_a.svg", &square);
    write(dir.path(), "fontA_λ.svg", &square);
    write(dir.path(), "fontA_b.svg", &svg(&comb(60)));
    write(dir.path(), "fontA_c.svg", "<svg></svg>");
    write(dir.path(), "fontA_d.svg", &svg("M 0 0 A 1 1 0 0 0 1 1"));
    write(dir.path(), "nounderscore.svg", &square);
    write(dir.path(), "notes.txt", "not an svg");
    let (corpus, skipped) = ingest(dir.path()).unwrap();
    assert_eq!(corpus.len(), 1);
    let reason = |name: &str| &skipped.iter().find(|s| s.source == name).unwrap().reason;

    assert!(matches!(reason("fontA_λ.svg"), SkipReason::LabelNotInSet(_)));
    assert!(reason("fontA_λ.svg").to_string().contains("not in 62-class set"));
    // rejected after parsing, so reported by font and character
    assert!(matches!(
        reason("fontA/b"),
        SkipReason::Path(PathError::TooManyCommands { .. })
    ));
    assert!(matches!(reason("fontA_c.svg"), SkipReason::NoPathData));
    assert!(matches!(reason("fontA_d.svg"), SkipReason::Parse(_)));
    assert!(matches!(reason("nounderscore.svg"), SkipReason::BadFileName));
    assert_eq!(skipped.len(), 5);
}

#[test]
fn nothing_usable_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "fontA_λ.svg", &svg("M 0 0 L 1 0 L 1 1 Z"));
    assert!(matches!(ingest(dir.path()), Err(DatasetError::NoValidGlyphs)));
}

#[test]
fn ingested_corpus_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "f1_O.svg",
        &svg("M 0 0 L 600 0 L 600 700 L 0 700 Z M 200 200 L 200 500 L 400 500 L 400 200 Z"),
    );
    write(dir.path(), "f1_l.svg", &svg("M 0 0 L 100 0 L 100 700 L 0 700 Z"));
    write(
        dir.path(),
        "f2_l.svg",
        &svg("M 0 0 C 50 -20 100 -20 150 0 L 150 700 L 0 700 Z"),
    );
    let (corpus, _) = ingest(dir.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    corpus.save(out.path()).unwrap();
    let back = Corpus::load(out.path()).unwrap();
    assert_eq!(back.meta, corpus.meta);
    assert_eq!(back.entries, corpus.entries);
    // the counter of the O stays empty: its ink is 36/7 of the l, 42/7 if filled
    let o = corpus
        .entries
        .iter()
        .find(|e| e.label == label_of('O').unwrap())
        .unwrap();
    let full = corpus
        .entries
        .iter()
        .find(|e| e.font_id == "f1" && e.label != o.label)
        .unwrap();
    assert!(o.raster.contains(&0.0));
    assert!(ink_coverage_of(&o.raster) < ink_coverage_of(&full.raster) * 5.5);
}

fn ink_coverage_of(pixels: &[f32]) -> f64 {
    pixels.iter().map(|&v| v as f64).sum::<f64>() / pixels.len() as f64
}

fn hundred_fonts() -> Corpus {
    let specs: Vec<SyntheticSpec> = (0..100)
        .map(|i| SyntheticSpec {
            stroke_weight: 0.2 + 0.006 * i as f64,
            ..SyntheticSpec::REGULAR
        })
        .collect();
    synthesize(&specs, &[label_of('l').unwrap()], 0).unwrap()
}

#[test]
fn ninety_ten_split_over_hundred_fonts() {
    let corpus = hundred_fonts();
    assert_eq!(corpus.font_ids().len(), 100);
    let mut train_counts = Vec::new();
    for seed in 0..20 {
        let (train, test) = split(&corpus, 0.9, seed).unwrap();
        let (a, b) = (train.font_ids(), test.font_ids());
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 100);
        assert_eq!(train.len() + test.len(), corpus.len());
        // binomial(100, 0.9): three standard deviations is ±9
        assert!((81..=99).contains(&a.len()), "seed {seed}: {} train fonts", a.len());
        train_counts.push(a.len());
        let again = split(&corpus, 0.9, seed).unwrap();
        assert_eq!(again.0.entries, train.entries);
        assert_eq!(train.meta.split_seed, Some(seed));
    }
    let mean = train_counts.iter().sum::<usize>() as f64 / train_counts.len() as f64;
    assert!((mean - 90.0).abs() < 3.0, "mean {mean}");
    assert!(train_counts.windows(2).any(|w| w[0] != w[1]));
    assert!(matches!(split(&corpus, 1.0, 0), Err(DatasetError::BadRatio(_))));
}

#[test]
fn synthetic_fonts() {
    let a = label_of('H').unwrap();
    let light = synthesize(&[SyntheticSpec::REGULAR], &[a], 1).unwrap();
    let bold = synthesize(
        &[SyntheticSpec {
            stroke_weight: 0.7,
            ..SyntheticSpec::REGULAR
        }],
        &[a],
        1,
    )
    .unwrap();
    let ink = |c: &Corpus| ink_coverage(&render_standalone(&c.entries[0].glyph).unwrap());
    assert!(ink(&bold) > ink(&light));

    let slanted = synthesize(
        &[SyntheticSpec {
            slant_deg: 15.0,
            ..SyntheticSpec::REGULAR
        }],
        &[a],
        1,
    )
    .unwrap();
    assert_eq!(slanted.entries[0].label, a);
    assert_ne!(slanted.entries[0].raster, light.entries[0].raster);

    let (x, y) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthesize(&[SyntheticSpec::REGULAR], &[a, a + 1], 5)
        .unwrap()
        .save(x.path())
        .unwrap();
    synthesize(&[SyntheticSpec::REGULAR], &[a, a + 1], 5)
        .unwrap()
        .save(y.path())
        .unwrap();
    for f in ["manifest.jsonl", "sequences.bin", "rasters.bin", "meta.json"] {
        assert!(
            std::fs::read(x.path().join(f)).unwrap() == std::fs::read(y.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
