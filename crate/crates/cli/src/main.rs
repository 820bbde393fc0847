//! `svgfont`: build corpora, train and evaluate the two models, explore the
//! latent space and serve a frozen bundle.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use svgfont::dataset::{extract_path_data, ingest, split, synthesize, Corpus, SyntheticSpec};
use svgfont::labels::{self, char_of, label_of_str};
use svgfont::latent::{apply_concept, concept_direction, style_z, ConceptDirection, Models, DEFAULT_SAMPLES};
use svgfont::raster::Viewbox;
use svgfont::svg_decoder::{DecoderConfig, SvgDecoder};
use svgfont::svg_path::Glyph;
use svgfont::training::{train_decoder, train_vae, write_eval_report, TrainConfig};
use svgfont::vae::{Vae, VaeConfig};
use svgfont_service::{decode_one, serve, to_svg, ModelBundle, ServiceConfig};

#[derive(Parser)]
#[command(name = "svgfont", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Read `<font>_<char>.svg` files into a corpus directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus of random block-letter fonts.
    Synth {
        #[arg(long, default_value_t = 20)]
        fonts: usize,
        /// Characters to draw; all 62 by default.
        #[arg(long)]
        chars: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus by font into `<out>/train` and `<out>/test`.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    TrainVae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sequence decoder against a frozen VAE.
    TrainDecoder {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class and per-length NLL of a test corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concept direction: mean z of the positive fonts minus the negative ones.
    Concept {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, num_args = 1.., required = true)]
        positive: Vec<String>,
        #[arg(long, num_args = 1.., required = true)]
        negative: Vec<String>,
        /// JSON file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Freeze models, corpus metadata and concepts into a bundle directory.
    Bundle {
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Concept JSON files written by `concept`.
        #[arg(long = "concept")]
        concepts: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw every target character in the style of the given glyphs.
    Propagate {
        #[command(flatten)]
        style: StyleArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep `z + α·c` for a named concept; one sheet row per α.
    ApplyConcept {
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long)]
        concept: String,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-2,-1,0,1,2"
        )]
        alphas: Vec<f64>,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 30)]
        timeout_secs: u64,
        /// Allowed browser origin; any when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(clap::Args)]
struct StyleArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// `<char>=<file>`; the file holds an SVG document or bare path data.
    /// Several glyphs are averaged.
    #[arg(long = "glyph")]
    glyphs: Vec<String>,
    /// Comma-separated style code instead of glyphs.
    #[arg(long, allow_hyphen_values = true)]
    z: Option<String>,
}

#[derive(clap::Args)]
struct SamplingArgs {
    /// Characters to draw; all 62 by default.
    #[arg(long)]
    targets: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Preset {
    /// Full-size architecture.
    #[default]
    Full,
    /// Narrow models that train on a laptop CPU.
    Small,
}

/// `--config` file. Every field is optional; `model` replaces the preset
/// architecture wholesale, `train` overrides single settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    preset: Option<Preset>,
    model: Option<toml::Value>,
    #[serde(default)]
    train: TrainOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    epochs: Option<usize>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    checkpoint_interval: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.steps = self.steps.or(c.steps);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.adam.lr = self.lr.unwrap_or(c.adam.lr);
        c.seed = self.seed.unwrap_or(c.seed);
        c.checkpoint_interval = self.checkpoint_interval.unwrap_or(c.checkpoint_interval);
        c
    }
}

fn read_run_file(path: Option<&Path>) -> Result<RunFile> {
    let Some(path) = path else {
        return Ok(RunFile::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn model_config<C: serde::de::DeserializeOwned>(run: &RunFile, full: C, small: C) -> Result<C> {
    match &run.model {
        Some(v) => Ok(v.clone().try_into().context("invalid [model] table")?),
        None => Ok(match run.preset.unwrap_or_default() {
            Preset::Full => full,
            Preset::Small => small,
        }),
    }
}

fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn parse_labels(chars: Option<&str>) -> Result<Vec<usize>> {
    match chars {
        None => Ok(labels::all().collect()),
        Some(s) => s
            .chars()
            .map(|c| label_of_str(&c.to_string()).ok_or_else(|| anyhow!("{c:?} is not in the 62-class set")))
            .collect(),
    }
}

fn random_spec<R: Rng>(rng: &mut R) -> SyntheticSpec {
    SyntheticSpec {
        stroke_weight: rng.random_range(0.2..0.9),
        slant_deg: rng.random_range(-5.0..20.0),
        width_scale: rng.random_range(0.7..1.3),
        serif: rng.random_bool(0.5),
    }
}

fn train_vae_cmd(corpus: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = read_run_file(config)?;
    let corpus = load_corpus(corpus)?;
    let mut cfg = run.train.apply(TrainConfig::vae_default());
    cfg.seed = seed.unwrap_or(cfg.seed);
    let model = model_config(&run, VaeConfig::full(), VaeConfig::small())?;
    let mut vae = Vae::<f32>::new(model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    log::info!("VAE with {} parameters, {} images", vae.param_count(), corpus.len());
    let curve = train_vae(&mut vae, &corpus.images(), &cfg, Some(out))?;
    if let Some(last) = curve.last() {
        println!(
            "step {}: loss {:.4} (recon {:.4}, kl {:.4})",
            last.step, last.total, last.recon, last.kl_term
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train_decoder_cmd(corpus: &Path, vae: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = read_run_file(config)?;
    let corpus = load_corpus(corpus)?;
    let vae = Vae::<f32>::load(vae)?;
    let mut cfg = run.train.apply(TrainConfig::decoder_default());
    cfg.seed = seed.unwrap_or(cfg.seed);
    let mut model = model_config(&run, DecoderConfig::full(), DecoderConfig::small())?;
    model.z_dim = vae.config.z_dim;
    model.num_classes = vae.config.num_classes;
    let mut decoder = SvgDecoder::<f32>::new(model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    log::info!(
        "decoder with {} parameters, {} sequences",
        decoder.param_count(),
        corpus.len()
    );
    let curve = train_decoder(&mut decoder, &vae, &corpus.sequences(), &cfg, Some(out))?;
    if let Some(last) = curve.last() {
        println!(
            "step {}: loss {:.4} (ce {:.4}, mdn {:.4}, accuracy {:.3})",
            last.step, last.total, last.cross_entropy, last.mdn_nll, last.accuracy
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(corpus: &Path, vae: &Path, decoder: &Path, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let vae = Vae::<f32>::load(vae)?;
    let decoder = SvgDecoder::<f32>::load(decoder)?;
    fs::create_dir_all(out)?;
    let files = write_eval_report(&decoder, &vae, &corpus.sequences(), out)?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "wrote {} and {} per-class length files",
        files.nll_by_class.display(),
        files.nll_vs_length.len()
    );
    println!(
        "NLL variance: length < {}: {}, length >= {}: {}",
        files.length_split,
        show(files.short_long.0),
        files.length_split,
        show(files.short_long.1)
    );
    Ok(())
}

fn concept_cmd(
    corpus: &Path,
    vae: &Path,
    name: &str,
    positive: &[String],
    negative: &[String],
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus)?;
    let vae = Vae::<f32>::load(vae)?;
    let pick = |fonts: &[String]| -> Result<Vec<Glyph>> {
        for f in fonts {
            if !corpus.entries.iter().any(|e| &e.font_id == f) {
                bail!("font {f:?} is not in the corpus");
            }
        }
        Ok(corpus
            .entries
            .iter()
            .filter(|e| fonts.contains(&e.font_id))
            .map(|e| e.glyph.clone())
            .collect())
    };
    let c = concept_direction(&vae, &corpus.meta.viewbox, name, &pick(positive)?, &pick(negative)?)?;
    fs::write(out, serde_json::to_string_pretty(&c)?)?;
    let norm = c.c.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("concept {name:?}: |c| = {norm:.4}, wrote {}", out.display());
    Ok(())
}

fn bundle_cmd(
    vae: &Path,
    decoder: &Path,
    corpus: &Path,
    concepts: &[PathBuf],
    temperature: f64,
    out: &Path,
) -> Result<()> {
    let meta = load_corpus(corpus)?.meta;
    let models = Models {
        vae: Vae::<f32>::load(vae)?,
        decoder: SvgDecoder::<f32>::load(decoder)?,
        viewbox: meta.viewbox,
        temperature,
    };
    let concepts = concepts
        .iter()
        .map(|p| -> Result<ConceptDirection> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
        .collect::<Result<Vec<_>>>()?;
    let bundle = ModelBundle::new(models, meta, concepts)?;
    bundle.save(out)?;
    println!("wrote bundle {} ({} concepts)", out.display(), bundle.concepts.len());
    Ok(())
}

/// Loads a bundle and resolves the style code from `--z` or `--glyph`.
fn style(args: &StyleArgs) -> Result<(ModelBundle, Vec<f64>)> {
    let bundle =
        ModelBundle::load(&args.bundle).with_context(|| format!("loading bundle {}", args.bundle.display()))?;
    let z = match (&args.z, args.glyphs.is_empty()) {
        (Some(z), true) => {
            let z = z
                .split(',')
                .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad z entry {v:?}")))
                .collect::<Result<Vec<_>>>()?;
            if z.len() != bundle.z_dim() {
                bail!("z has {} entries, the model uses {}", z.len(), bundle.z_dim());
            }
            z
        }
        (None, false) => {
            let glyphs = args
                .glyphs
                .iter()
                .map(|spec| read_glyph(&bundle, spec))
                .collect::<Result<Vec<_>>>()?;
            style_z(&bundle.models.vae, &bundle.meta.viewbox, &glyphs)?
        }
        _ => bail!("give either --z or at least one --glyph"),
    };
    Ok((bundle, z))
}

fn read_glyph(bundle: &ModelBundle, spec: &str) -> Result<Glyph> {
    let (ch, file) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("--glyph wants <char>=<file>, got {spec:?}"))?;
    let label = label_of_str(ch).ok_or_else(|| anyhow!("{ch:?} is not in the 62-class set"))?;
    let text = fs::read_to_string(file).with_context(|| format!("reading {file}"))?;
    let d = if text.contains("<path") {
        extract_path_data(&text).ok_or_else(|| anyhow!("{file} has no path data"))?
    } else {
        text
    };
    let glyph = Glyph::from_path(label, &d).with_context(|| format!("parsing {file}"))?;
    bundle
        .meta
        .prepare(&glyph)
        .with_context(|| format!("normalizing {file}"))
}

/// Decodes one sheet row per style code, writing `sheet.svg` and one file
/// per glyph (`r<row>_<label>_<char>.svg`).
fn write_sheet(bundle: &ModelBundle, rows: &[(String, Vec<f64>)], sampling: &SamplingArgs, out: &Path) -> Result<()> {
    let targets = parse_labels(sampling.targets.as_deref())?;
    if sampling.n == 0 {
        bail!("--n must be at least 1");
    }
    fs::create_dir_all(out)?;
    let vb = bundle.meta.viewbox;
    let mut cells = String::new();
    for (r, (title, z)) in rows.iter().enumerate() {
        let y = r * CELL;
        cells += &format!(
            "<text x=\"4\" y=\"{}\" font-size=\"12\" font-family=\"monospace\">{}</text>\n",
            y + CELL / 2,
            xml_escape(title)
        );
        for (i, &label) in targets.iter().enumerate() {
            let d = to_svg(&decode_one(bundle, z, label, sampling.n, sampling.seed)?);
            let ch = char_of(label).expect("valid label");
            fs::write(out.join(format!("r{r}_{label:02}_{ch}.svg")), glyph_svg(&d, &vb))?;
            cells += &format!(
                "<svg x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" viewBox=\"{}\"><path d=\"{d}\"/></svg>\n",
                MARGIN + i * CELL,
                view_box(&vb)
            );
        }
    }
    let sheet = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{cells}</svg>\n",
        MARGIN + targets.len() * CELL,
        rows.len() * CELL
    );
    fs::write(out.join("sheet.svg"), sheet)?;
    println!(
        "wrote {} rows × {} glyphs to {}",
        rows.len(),
        targets.len(),
        out.display()
    );
    Ok(())
}

const CELL: usize = 64;
const MARGIN: usize = 80;

fn view_box(vb: &Viewbox) -> String {
    format!("{} {} {} {}", vb.min_x, vb.min_y, vb.size, vb.size)
}

fn glyph_svg(d: &str, vb: &Viewbox) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CELL}\" height=\"{CELL}\" viewBox=\"{}\"><path d=\"{d}\"/></svg>\n",
        view_box(vb)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Ingest { input, out } => {
            let (corpus, skipped) = ingest(&input)?;
            for s in &skipped {
                println!("skipped {}: {}", s.source, s.reason);
            }
            corpus.save(&out)?;
            println!(
                "{} glyphs from {} fonts, {} skipped; wrote {}",
                corpus.len(),
                corpus.font_ids().len(),
                skipped.len(),
                out.display()
            );
        }
        Cmd::Synth {
            fonts,
            chars,
            seed,
            out,
        } => {
            let labels = parse_labels(chars.as_deref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let specs: Vec<_> = (0..fonts).map(|_| random_spec(&mut rng)).collect();
            let corpus = synthesize(&specs, &labels, seed)?;
            corpus.save(&out)?;
            // ground truth for concept directions: font id -> spec
            let table: Vec<_> = specs
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("{i:03}-{}", s.name()), s))
                .collect();
            fs::write(out.join("fonts.json"), serde_json::to_string_pretty(&table)?)?;
            println!("{} glyphs from {fonts} fonts; wrote {}", corpus.len(), out.display());
        }
        Cmd::Split {
            corpus,
            ratio,
            seed,
            out,
        } => {
            let (train, test) = split(&load_corpus(&corpus)?, ratio, seed)?;
            train.save(&out.join("train"))?;
            test.save(&out.join("test"))?;
            println!(
                "train: {} glyphs / {} fonts, test: {} glyphs / {} fonts",
                train.len(),
                train.font_ids().len(),
                test.len(),
                test.font_ids().len()
            );
        }
        Cmd::TrainVae {
            corpus,
            config,
            seed,
            out,
        } => train_vae_cmd(&corpus, config.as_deref(), seed, &out)?,
        Cmd::TrainDecoder {
            corpus,
            vae,
            config,
            seed,
            out,
        } => train_decoder_cmd(&corpus, &vae, config.as_deref(), seed, &out)?,
        Cmd::Eval {
            corpus,
            vae,
            decoder,
            out,
        } => eval_cmd(&corpus, &vae, &decoder, &out)?,
        Cmd::Concept {
            corpus,
            vae,
            name,
            positive,
            negative,
            out,
        } => concept_cmd(&corpus, &vae, &name, &positive, &negative, &out)?,
        Cmd::Bundle {
            vae,
            decoder,
            corpus,
            concepts,
            temperature,
            out,
        } => bundle_cmd(&vae, &decoder, &corpus, &concepts, temperature, &out)?,
        Cmd::Propagate {
            style: s,
            sampling,
            out,
        } => {
            let (bundle, z) = style(&s)?;
            write_sheet(&bundle, &[("z".into(), z)], &sampling, &out)?;
        }
        Cmd::ApplyConcept {
            style: s,
            concept,
            alphas,
            sampling,
            out,
        } => {
            let (bundle, z) = style(&s)?;
            let c = bundle
                .concepts
                .get(&concept)
                .ok_or_else(|| anyhow!("bundle has no concept {concept:?}"))?;
            let zs = apply_concept(&z, c, &alphas)?;
            let rows: Vec<_> = alphas.iter().map(|a| format!("α={a}")).zip(zs).collect();
            write_sheet(&bundle, &rows, &sampling, &out)?;
        }
        Cmd::Serve {
            bundle,
            host,
            port,
            timeout_secs,
            cors_origin,
        } => {
            let bundle = ModelBundle::load(&bundle)?;
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
            let config = ServiceConfig {
                timeout: Duration::from_secs(timeout_secs),
                cors_origin,
            };
            tokio::runtime::Runtime::new()?.block_on(serve(bundle, config, addr))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
