use std::fs;
use std::path::Path;

use microcolor::analysis::{
    build_survey, hue_histogram, parse_records, saturation_surface, score_survey, SurveyKey,
};
use microcolor::checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
use microcolor::colorspace::{lab_to_rgb, merge_l_ab, rgb_to_lab, split_l_ab};
use microcolor::dataset::{
    list_images, load_gray8, load_rgb, make_split, save_gray8, save_rgb, DatasetManifest,
    DEFAULT_RESIZE, DEFAULT_SPLIT_RATIO,
};
use microcolor::eecnn::{constant_embedder, ConstantEmbedder, WEIGHTS_VERSION};
use microcolor::nstcnn::{
    transfer, FitOptions, ReferenceSpec, TransferJob, DEFAULT_BIN_WIDTH, DEFAULT_FIT_BUDGET,
    DEFAULT_THRESHOLD,
};
use microcolor::prepost::{
    adaptive_threshold, detect_edges, enforce_same_l_same_ab_with, label_regions, uniform_fill,
    Aggregator, EdgeDetector, EdgeMap, GradientMagnitude, PrecomputedEdges,
};
use microcolor::trainer::{train_eecnn, TrainConfig};
use microcolor::{ChromaMap, EeCnn, EeCnnConfig, Error, Plane, RegionMask, Result};

use crate::args::{
    Agg, AnalyzeCommand, Arch, Cli, ColorizeEeArgs, ColorizeNstArgs, Command, PostArgs, SplitArgs,
    SurveyArgs, TrainArgs,
};
use crate::config::ConfigFile;

/// The embedding is a fixed projection so that weights trained by one
/// invocation stay valid for the next.
const EMBEDDER_SEED: u64 = 0;
const DEFAULT_EDGE_THRESHOLD: f64 = 0.3;

pub fn run(cli: Cli) -> Result<()> {
    if cli.version {
        println!(
            "microcolor {} (weights version {WEIGHTS_VERSION}, checkpoint format {CHECKPOINT_FORMAT})",
            env!("CARGO_PKG_VERSION")
        );
        return Ok(());
    }
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        None => Err(Error::Argument("no command given, see --help".into())),
        Some(Command::DatasetSplit(a)) => dataset_split(a, &cfg),
        Some(Command::Train(a)) => train(a, &cfg),
        Some(Command::ColorizeEe(a)) => colorize_ee(a, &cfg),
        Some(Command::ColorizeNst(a)) => colorize_nst(a, &cfg),
        Some(Command::Analyze(a)) => analyze(a, &cfg),
        Some(Command::Survey(a)) => survey(a, &cfg),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn arch_config(arch: Arch) -> EeCnnConfig {
    match arch {
        Arch::Default => EeCnnConfig::default(),
        Arch::Tiny => EeCnnConfig::tiny(),
        Arch::Miniature => EeCnnConfig::miniature(),
    }
}

fn embedder(config: &EeCnnConfig) -> Result<ConstantEmbedder> {
    constant_embedder(config.embedding_dim, EMBEDDER_SEED)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Argument(format!("size {s:?} is not WxH"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn load_l(path: &Path) -> Result<Plane> {
    Ok(split_l_ab(&rgb_to_lab(&load_rgb(path)?)).0)
}

fn plane_csv(p: &Plane) -> String {
    let mut out = String::new();
    for row in p.as_slice().chunks(p.width()) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn dump_planes(dir: &Path, planes: &[(&str, &Plane)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, p) in planes {
        write_text(&dir.join(format!("{name}.csv")), &plane_csv(p))?;
    }
    Ok(())
}

fn save_colorized(l: &Plane, ab: &ChromaMap, out: &Path) -> Result<()> {
    save_rgb(&lab_to_rgb(&merge_l_ab(l, ab)?), out)
}

fn aggregator(cfg: &ConfigFile, post: &PostArgs) -> Result<Aggregator> {
    Ok(match cfg.pick(post.aggregate, "aggregate", Agg::Mean)? {
        Agg::Mean => Aggregator::Mean,
        Agg::Median => Aggregator::Median,
    })
}

/// Edge-guided uniform fill, when an edge threshold is configured.
fn edge_fill(l: &Plane, ab: ChromaMap, post: &PostArgs, cfg: &ConfigFile) -> Result<ChromaMap> {
    let Some(threshold) = cfg.pick_opt(post.edge_threshold, "edge-threshold")? else {
        return Ok(ab);
    };
    let detector: Box<dyn EdgeDetector> = match &post.edges {
        Some(path) => {
            let (w, h, data) = load_gray8(path)?;
            Box::new(PrecomputedEdges(EdgeMap::from_gray8(w, h, &data)?))
        }
        None => Box::new(GradientMagnitude),
    };
    let edges = detect_edges(l, detector.as_ref())?;
    uniform_fill(&ab, &label_regions(&edges, threshold)?)
}

fn dataset_split(a: SplitArgs, cfg: &ConfigFile) -> Result<()> {
    let ratio = cfg.pick(a.ratio, "ratio", DEFAULT_SPLIT_RATIO)?;
    let seed = cfg.pick(a.split_seed, "split-seed", 0)?;
    let resize = match cfg.pick_opt(a.resize, "resize")? {
        Some(s) => parse_size(&s)?,
        None => DEFAULT_RESIZE,
    };
    let paths = list_images(&a.dir)?;
    let manifest = make_split(&paths, ratio, seed)?.with_resize(resize);
    manifest.save(&a.out)?;
    println!(
        "train={} test={}",
        manifest.count(microcolor::dataset::Role::Train),
        manifest.count(microcolor::dataset::Role::Test)
    );
    Ok(())
}

fn train(a: TrainArgs, cfg: &ConfigFile) -> Result<()> {
    let mut config = arch_config(cfg.pick(a.arch, "arch", Arch::Default)?);
    config.use_embedding = !a.no_embedding;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        learning_rate: cfg.pick(a.lr, "lr", defaults.learning_rate)?,
        batch_size: cfg.pick(a.batch_size, "batch-size", defaults.batch_size)?,
        max_epochs: cfg.pick(a.epochs, "epochs", defaults.max_epochs)?,
        patience: cfg.pick(a.patience, "patience", defaults.patience)?,
        min_delta: cfg.pick(a.min_delta, "min-delta", defaults.min_delta)?,
        seed: cfg.pick(a.seed, "seed", defaults.seed)?,
        checkpoint_every: cfg.pick(a.checkpoint_every, "checkpoint-every", 0)?,
        checkpoint_dir: Some(a.out_dir.clone()),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (weights, report) = train_eecnn(&manifest, &config, &tc, &embedder(&config)?)?;
    save_checkpoint(&weights, &a.out_dir.join("weights.ckpt"))?;
    write_text(&a.out_dir.join("report.csv"), &report.to_csv())?;
    println!(
        "epochs={} best_epoch={} weights={}",
        report.stopped_at_epoch,
        report.best_epoch,
        a.out_dir.join("weights.ckpt").display()
    );
    Ok(())
}

fn colorize_ee(a: ColorizeEeArgs, cfg: &ConfigFile) -> Result<()> {
    let weights = load_checkpoint(&a.weights)?;
    let net = EeCnn::new(weights.config.clone())?;
    let l = load_l(&a.input)?;
    let raw = net.forward(&l, &embedder(net.config())?, &weights)?;
    let mut ab = match cfg.pick_opt(a.post.bin_width, "bin-width")? {
        Some(bw) => enforce_same_l_same_ab_with(&l, &raw, bw, None, aggregator(cfg, &a.post)?)?,
        None => raw.clone(),
    };
    ab = edge_fill(&l, ab, &a.post, cfg)?;
    if let Some(dir) = &a.post.debug_planes {
        dump_planes(
            dir,
            &[
                ("l", &l),
                ("raw_a", raw.a()),
                ("raw_b", raw.b()),
                ("a", ab.a()),
                ("b", ab.b()),
            ],
        )?;
    }
    save_colorized(&l, &ab, &a.out)
}

fn load_mask(path: &Path) -> Result<RegionMask> {
    let (w, h, data) = load_gray8(path)?;
    RegionMask::from_gray8(w, h, &data)
}

fn colorize_nst(a: ColorizeNstArgs, cfg: &ConfigFile) -> Result<()> {
    if !a.masks.is_empty() && a.masks.len() != a.references.len() {
        return Err(Error::Argument(format!(
            "{} masks for {} references; give one mask per reference or none",
            a.masks.len(),
            a.references.len()
        )));
    }
    let mut config = arch_config(cfg.pick(a.arch, "arch", Arch::Tiny)?);
    config.use_embedding = !a.no_embedding;
    let l = load_l(&a.input)?;
    let mut references = Vec::with_capacity(a.references.len());
    for (i, path) in a.references.iter().enumerate() {
        let mut spec = ReferenceSpec::from_rgb(&load_rgb(path)?);
        if let Some(mask) = a.masks.get(i) {
            spec = spec.with_mask(load_mask(mask)?);
        }
        references.push(spec);
    }
    let mut job = TransferJob::new(l.clone(), references);
    job.fit = FitOptions {
        budget: cfg.pick(a.budget, "budget", DEFAULT_FIT_BUDGET)?,
        threshold: cfg.pick(a.threshold, "threshold", DEFAULT_THRESHOLD)?,
        learning_rate: cfg.pick(a.lr, "lr", FitOptions::default().learning_rate)?,
        seed: cfg.pick(a.seed, "seed", 0)?,
        augment: !a.no_augment,
    };
    job.bin_width = Some(cfg.pick(a.post.bin_width, "bin-width", DEFAULT_BIN_WIDTH)?);
    job.aggregator = aggregator(cfg, &a.post)?;
    job.cache_dir = a.cache_dir.clone();
    let result = transfer(&job, &config, &embedder(&config)?)?;
    let ab = edge_fill(&l, result.chroma, &a.post, cfg)?;
    if let Some(dir) = &a.post.debug_planes {
        dump_planes(
            dir,
            &[
                ("l", &l),
                ("raw_a", result.raw.a()),
                ("raw_b", result.raw.b()),
                ("a", ab.a()),
                ("b", ab.b()),
            ],
        )?;
    }
    for (i, fit) in result.fits.iter().enumerate() {
        println!(
            "reference={i} steps={} final_loss={:.4}",
            fit.steps, fit.final_loss
        );
    }
    save_colorized(&l, &ab, &a.out)
}

fn analyze(a: AnalyzeCommand, cfg: &ConfigFile) -> Result<()> {
    match a {
        AnalyzeCommand::Saturation {
            input,
            out,
            block,
            heatmap,
        } => {
            let img = load_rgb(&input)?;
            let surface = saturation_surface(&img, cfg.pick(block, "block", 1)?)?;
            write_text(&out, &surface.to_csv())?;
            if let Some(path) = heatmap {
                save_rgb(&surface.heatmap(img.width(), img.height()), &path)?;
            }
            Ok(())
        }
        AnalyzeCommand::Hue { input, out, bins } => {
            let bins = cfg.pick(bins, "bins", 36)?;
            let counts = hue_histogram(&load_rgb(&input)?, bins)?;
            let width = 360.0 / bins as f64;
            let mut csv = String::from("bin_start,bin_end,count\n");
            for (i, c) in counts.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{c}\n",
                    i as f64 * width,
                    (i + 1) as f64 * width
                ));
            }
            write_text(&out, &csv)
        }
        AnalyzeCommand::Survey { records, key, out } => {
            let key = SurveyKey::from_json(&read_text(&key)?)?;
            let score = score_survey(&parse_records(&read_text(&records)?)?, &key)?;
            let mut csv = String::from("participant,accuracy\n");
            for (p, acc) in &score.participants {
                csv.push_str(&format!("{p},{acc}\n"));
            }
            write_text(&out, &csv)?;
            println!(
                "participants={} mean_accuracy={:.4}",
                score.participants.len(),
                score.mean
            );
            Ok(())
        }
        AnalyzeCommand::Edges {
            input,
            out,
            regions,
            edge_threshold,
        } => {
            let l = load_l(&input)?;
            let edges = detect_edges(&l, &GradientMagnitude)?;
            let (w, h) = edges.dims();
            save_gray8(w, h, edges.to_gray8(), &out)?;
            if let Some(path) = regions {
                let t = cfg.pick(edge_threshold, "edge-threshold", DEFAULT_EDGE_THRESHOLD)?;
                let mask = label_regions(&edges, t)?;
                save_gray8(w, h, mask.to_gray8()?, &path)?;
                println!("regions={}", mask.region_count());
            }
            Ok(())
        }
        AnalyzeCommand::Threshold {
            input,
            out,
            window,
            offset,
            visible,
        } => {
            let l = load_l(&input)?;
            let mask = adaptive_threshold(
                &l,
                cfg.pick(window, "window", 31)?,
                cfg.pick(offset, "offset", 0.0)?,
            )?;
            let scale = if visible { 255 } else { 1 };
            let data = mask.labels().iter().map(|&v| (v * scale) as u8).collect();
            save_gray8(mask.width(), mask.height(), data, &out)
        }
    }
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn survey(a: SurveyArgs, cfg: &ConfigFile) -> Result<()> {
    let s = build_survey(
        &read_ids(&a.real)?,
        &read_ids(&a.predicted)?,
        cfg.pick(a.seed, "seed", 0)?,
    )?;
    write_text(&a.order, &(s.order.join("\n") + "\n"))?;
    write_text(&a.key, &s.key.to_json())
}
