use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use devscore::data::{
    gen_tabular, make_split, texture_bags, SplitMode, SplitSpec, TabularGenConfig, TextureGenConfig,
};
use devscore::eval::{estimate_open_space_risk, Region};
use devscore::explain::{explain_bag, pixel_auc};
use devscore::io::{
    history_csv, load_checkpoint, read_bags, saliency_csv, save_checkpoint, write_bags,
    write_saliency_pgm, Checkpoint, CheckpointMeta,
};
use devscore::mil::score_bag;
use devscore::network::score_rows;
use devscore::trainer::inference_reference;
use devscore::{
    deviation, score_to_probability, train_with_validation, Bag, EvalReport, LossKind, PriorConfig,
    TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::{DataKind, EvalArgs, ExplainArgs, LossArg, ScoreArgs, SynthArgs, TrainArgs};
use crate::manifest::RunManifest;
use crate::UsageError;

pub const TRAIN_NORMAL: &str = "train_normal.jsonl";
pub const TRAIN_ANOMALY: &str = "train_anomaly.jsonl";
pub const TEST: &str = "test.jsonl";
pub const CHECKPOINT: &str = "model.ckpt";

/// Padding of the open-space sampling box, relative to the normals' extent.
const RISK_REGION_PAD: f64 = 0.5;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_bags(path: &Path) -> Result<Vec<Bag>> {
    read_bags(path).with_context(|| format!("reading bags from {}", path.display()))
}

pub fn synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let out = &args.out.out;
    let mut spec = SplitSpec { seed: args.seed, ..Default::default() };
    if let Some(n) = args.n_labeled {
        spec.n_labeled = n;
    }
    if let Some(c) = args.contamination {
        spec.contamination = c;
    }
    if let Some(f) = args.test_normal_fraction {
        spec.test_normal_fraction = f;
    }
    spec.allow_high_contamination = args.allow_high_contamination;
    if let Some(c) = args.open_set_class {
        spec.mode = SplitMode::OpenSet { seen_class: c };
    }

    let (generator, bags) = match args.kind {
        DataKind::Tabular => {
            let used = args.texture_flags_used();
            if !used.is_empty() {
                return Err(usage(format!(
                    "texture-only flags used with --kind tabular: {}",
                    used.join(", ")
                )));
            }
            let mut cfg = TabularGenConfig::standard(args.seed);
            if let Some(n) = args.n_normal {
                cfg.n_normal = n;
            }
            (serde_json::to_value(&cfg)?, gen_tabular(&cfg)?)
        }
        DataKind::Texture => {
            let mut cfg = TextureGenConfig { seed: args.seed, ..Default::default() };
            if let Some(n) = args.n_normal {
                cfg.n_normal = n;
            }
            if let Some(n) = args.n_per_defect {
                cfg.n_per_defect = n;
            }
            if let Some(s) = args.image_size {
                cfg.size = s;
            }
            if let Some(p) = args.patch_size {
                cfg.patch = p;
            }
            if let Some(s) = args.stride {
                cfg.stride = s;
            }
            if let Some(s) = args.noise_std {
                cfg.noise_std = s;
            }
            (serde_json::to_value(&cfg)?, texture_bags(&cfg)?)
        }
    };
    spec.validate()?;
    let split = make_split(&bags, &spec)?;

    let mut manifest = RunManifest::new(
        "synth",
        argv,
        out,
        json!({ "generator": generator, "split": spec }),
        args.seed,
    );
    manifest.outputs = [TRAIN_NORMAL, TRAIN_ANOMALY, TEST].iter().map(|f| out.join(f)).collect();
    manifest.write(out)?;

    write_bags(&out.join(TRAIN_NORMAL), &split.train_normal)?;
    write_bags(&out.join(TRAIN_ANOMALY), &split.train_anomaly)?;
    write_bags(&out.join(TEST), &split.test)?;

    let test_anomalies = split.test.iter().filter(|b| b.is_anomaly()).count();
    println!(
        "train_normal: {} (contaminated: {})",
        split.train_normal.len(),
        split.contaminated_ids.len()
    );
    println!("train_anomaly: {}", split.train_anomaly.len());
    println!(
        "test: {} (anomalies: {}, anomaly classes: {:?})",
        split.test.len(),
        test_anomalies,
        split.test_anomaly_classes()
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig { seed: args.seed, ..Default::default() };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = args.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(
        epochs => epochs,
        iters_per_epoch => iters_per_epoch,
        batch_size => batch_size,
        learning_rate => optimizer.learning_rate,
        weight_decay => optimizer.weight_decay,
        beta1 => optimizer.beta1,
        beta2 => optimizer.beta2,
        eps => optimizer.eps,
        k_fraction => mil.k_fraction,
        margin => mil.margin,
        prior_mu => prior.mu,
        prior_sigma => prior.sigma,
        prior_l => prior.l,
    );
    if let Some(h) = &args.hidden {
        cfg.hidden = h.clone();
    }
    cfg.loss = match args.loss {
        LossArg::Deviation => {
            if args.focal_gamma.is_some() || args.focal_alpha.is_some() {
                return Err(usage("--focal-gamma and --focal-alpha require --loss focal"));
            }
            LossKind::Deviation
        }
        LossArg::Focal => {
            let LossKind::Focal { gamma, alpha } = LossKind::focal_default() else {
                unreachable!()
            };
            LossKind::Focal {
                gamma: args.focal_gamma.unwrap_or(gamma),
                alpha: args.focal_alpha.unwrap_or(alpha),
            }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_for(params: devscore::NetworkParams, cfg: &TrainConfig) -> Result<Checkpoint> {
    Ok(Checkpoint {
        params,
        meta: CheckpointMeta {
            seed: cfg.seed,
            mil: cfg.mil,
            prior: cfg.prior,
            loss: cfg.loss,
            reference: inference_reference(cfg)?,
        },
    })
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let out = &args.out.out;
    let data = args.data.clone().unwrap_or_else(|| out.clone());
    let cfg = train_config(args)?;

    let normal_path = data.join(TRAIN_NORMAL);
    let anomaly_path = data.join(TRAIN_ANOMALY);
    if !anomaly_path.exists() {
        bail!(
            "{} not found: training needs labeled anomalies (run `devscore synth` or supply the file)",
            anomaly_path.display()
        );
    }
    let normals = load_bags(&normal_path)?;
    let anomalies = load_bags(&anomaly_path)?;
    let validation = args.validation.as_deref().map(load_bags).transpose()?;

    let mut manifest = RunManifest::new("train", argv, out, serde_json::to_value(&cfg)?, cfg.seed);
    manifest.inputs = vec![normal_path, anomaly_path];
    manifest.inputs.extend(args.validation.clone());
    manifest.outputs = vec![out.join(CHECKPOINT), out.join("history.csv")];
    manifest.write(out)?;

    match train_with_validation(&normals, &anomalies, validation.as_deref(), &cfg) {
        Ok((params, history)) => {
            save_checkpoint(&out.join(CHECKPOINT), &checkpoint_for(params, &cfg)?)?;
            write_text(&out.join("history.csv"), &history_csv(&history))?;
            let last = cfg.epochs.checked_sub(1).and_then(|e| history.epoch_mean_loss(e));
            println!("iterations: {}", history.losses.len());
            if let Some(l) = last {
                println!("final epoch mean loss: {l:.6}");
            }
            if let Some(Some(auc)) = history.epoch_auc.last() {
                println!("final validation auc: {auc:.6}");
            }
            Ok(())
        }
        Err(devscore::Error::Diverged { iteration, reason, last_good }) => {
            let path = out.join(CHECKPOINT);
            save_checkpoint(&path, &checkpoint_for(*last_good.clone(), &cfg)?)?;
            eprintln!("last good parameters written to {}", path.display());
            Err(devscore::Error::Diverged { iteration, reason, last_good }.into())
        }
        Err(e) => Err(e.into()),
    }
}

struct Scored {
    phi_k: Vec<f64>,
    dev: Vec<f64>,
}

fn score_all(ckpt: &Checkpoint, bags: &[Bag]) -> Result<Scored> {
    let mut phi_k = Vec::with_capacity(bags.len());
    for b in bags {
        let t = score_bag(b, &ckpt.params, ckpt.meta.mil.k_fraction)
            .with_context(|| format!("scoring bag {}", b.id))?;
        phi_k.push(t.value);
    }
    let dev = phi_k.iter().map(|&p| deviation(p, &ckpt.meta.reference)).collect();
    Ok(Scored { phi_k, dev })
}

fn load_model(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn score(args: &ScoreArgs, argv: &[String]) -> Result<()> {
    let out = &args.out.out;
    let ckpt = load_model(&args.input.checkpoint)?;
    let bags = load_bags(&args.input.data)?;
    let s = score_all(&ckpt, &bags)?;

    let mut manifest = RunManifest::new("score", argv, out, serde_json::to_value(&ckpt.meta)?, ckpt.meta.seed);
    manifest.inputs = vec![args.input.checkpoint.clone(), args.input.data.clone()];
    manifest.outputs = vec![out.join("scores.csv")];
    manifest.write(out)?;

    // deviations are already standardized, so the tail uses N(0, 1)
    let standard = PriorConfig { mu: 0.0, sigma: 1.0, ..PriorConfig::default() };
    let mut csv = String::from("id,y,phi_k,dev,probability\n");
    for ((b, phi), dev) in bags.iter().zip(&s.phi_k).zip(&s.dev) {
        let p = score_to_probability(*dev, &standard);
        writeln!(csv, "{},{},{phi},{dev},{p}", b.id, b.label)?;
    }
    write_text(&out.join("scores.csv"), &csv)?;
    println!("scored {} bags", bags.len());
    Ok(())
}

fn mean_pixel_auc(ckpt: &Checkpoint, bags: &[Bag]) -> Result<Option<f64>> {
    let mut aucs = Vec::new();
    for b in bags.iter().filter(|b| b.is_anomaly()) {
        if let (Some(mask), Some(_)) = (&b.mask, &b.geometry) {
            if mask.count() == 0 || mask.count() == mask.pixels.len() {
                continue;
            }
            let map = explain_bag(b, &ckpt.params, ckpt.meta.mil.k_fraction)?;
            aucs.push(pixel_auc(&map, mask)?);
        }
    }
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

fn single_instances(bags: &[Bag], what: &str) -> Result<Vec<Vec<f64>>> {
    bags.iter()
        .map(|b| match b.instances.as_slice() {
            [x] => Ok(x.clone()),
            _ => Err(anyhow!("{what}: bag {} has {} instances; open-space risk needs single-instance bags", b.id, b.len())),
        })
        .collect()
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> Result<()> {
    let out = &args.out.out;
    let ckpt = load_model(&args.input.checkpoint)?;
    let bags = load_bags(&args.input.data)?;
    let s = score_all(&ckpt, &bags)?;
    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    let risk_normals = args.risk_normals.as_deref().map(load_bags).transpose()?;

    let config = json!({
        "checkpoint": ckpt.meta,
        "risk_samples": args.risk_samples,
        "risk_threshold": args.risk_threshold,
        "risk_region_pad": RISK_REGION_PAD,
    });
    let mut manifest = RunManifest::new("eval", argv, out, config, args.seed);
    manifest.inputs = vec![args.input.checkpoint.clone(), args.input.data.clone()];
    manifest.inputs.extend(args.risk_normals.clone());
    manifest.outputs = vec![out.join("report.csv"), out.join("report.txt")];
    manifest.write(out)?;

    let mut report = EvalReport::from_scores(&s.phi_k, &labels)?;
    report.pixel_auc = mean_pixel_auc(&ckpt, &bags)?;
    if let Some(normals) = risk_normals {
        let points = single_instances(&normals, "risk normals")?;
        let region = Region::around(&points, RISK_REGION_PAD)?;
        let reference = ckpt.meta.reference;
        let params = &ckpt.params;
        let dev = |x: &[f64]| match score_rows(&[x.to_vec()], params) {
            Ok(s) => deviation(s[0], &reference),
            Err(_) => f64::NAN,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let est = estimate_open_space_risk(
            dev,
            &points,
            &region,
            args.risk_threshold,
            args.risk_samples,
            None,
            &mut rng,
        )?;
        report.open_space_risk = Some(est.risk);
    }
    write_text(&out.join("report.csv"), &report.curve_csv())?;
    let summary = report.summary();
    write_text(&out.join("report.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn explain(args: &ExplainArgs, argv: &[String]) -> Result<()> {
    let out = &args.out.out;
    let ckpt = load_model(&args.input.checkpoint)?;
    let bags = load_bags(&args.input.data)?;
    let bag = bags
        .iter()
        .find(|b| b.id == args.image_id)
        .ok_or_else(|| anyhow!("no bag with id {} in {}", args.image_id, args.input.data.display()))?;

    let stem = format!("saliency_{}", bag.id);
    let (pgm, csv): (PathBuf, PathBuf) = (out.join(format!("{stem}.pgm")), out.join(format!("{stem}.csv")));
    let mut manifest = RunManifest::new("explain", argv, out, serde_json::to_value(&ckpt.meta)?, ckpt.meta.seed);
    manifest.inputs = vec![args.input.checkpoint.clone(), args.input.data.clone()];
    manifest.outputs = vec![pgm.clone(), csv.clone()];

    let map = explain_bag(bag, &ckpt.params, ckpt.meta.mil.k_fraction)?;
    manifest.write(out)?;
    write_saliency_pgm(&pgm, &map)?;
    write_text(&csv, &saliency_csv(&map))?;

    let phi = score_bag(bag, &ckpt.params, ckpt.meta.mil.k_fraction)?.value;
    println!("image {}: phi_k {phi:.6}, dev {:.6}", bag.id, deviation(phi, &ckpt.meta.reference));
    if let Some(mask) = &bag.mask {
        match pixel_auc(&map, mask) {
            Ok(auc) => println!("pixel_auc: {auc}"),
            Err(e) => println!("pixel_auc: unavailable ({e})"),
        }
    }
    Ok(())
}
