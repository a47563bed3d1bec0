use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attrsens::attribution::{attribute, AttrContext, MethodSpec, RangeTag};
use attrsens::config::{ExperimentConfig, ModelConfig};
use attrsens::error::Error;
use attrsens::harness::{
    run_accuracy_variance, run_hyperparam_sensitivity, run_noise_invariance, run_smoothing_trend,
    EvalItem, SensitivityReport,
};
use attrsens::io::{
    dataset_mean_color, generate_dataset, load_model, read_tensor, render_heatmap_png,
    render_mask_png, save_model, write_tensor, DatasetItem, ModelProvenance,
};
use attrsens::metrics::accuracy_scores;
use attrsens::nn::{train, train_robust, MicroClassifier};
use attrsens::tensor::{Precision, Scalar, Tensor};

#[derive(Parser)]
#[command(name = "attrsens", about = "Attribution hyperparameter sensitivity at desk scale")]
struct Cli {
    /// Worker threads (falls back to ATTRIB_SENS_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/eval datasets under the output dir.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one model from the experiment config and save it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: String,
    },
    /// Attribute one image; writes the map as an ATNS tensor.
    Attribute {
        /// Model directory.
        #[arg(long)]
        model: PathBuf,
        /// Input image (.atns, [side, side, 3]).
        #[arg(long)]
        image: PathBuf,
        /// Method spec as JSON, e.g. '{"SmoothGrad":{"n_sg":50,"sigma":0.15}}'.
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Target class; defaults to the model's prediction.
        #[arg(long)]
        class: Option<usize>,
        /// Also render a PNG next to the tensor output.
        #[arg(long)]
        render: bool,
    },
    /// Run the full protocol suite from the experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score one stored heatmap against an image and ground-truth mask.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Attribution map (.atns, [side, side]).
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth object mask (.atns, [side, side], nonzero = object).
        #[arg(long)]
        mask: PathBuf,
        /// Target class; defaults to the model's prediction.
        #[arg(long)]
        class: Option<usize>,
        /// Deletion/insertion curve steps.
        #[arg(long, default_value_t = 32)]
        steps: usize,
    },
    /// Merge every report CSV under a directory into one CSV/JSON pair.
    Report {
        #[arg(long, name = "in")]
        input: PathBuf,
    },
}

/// Monomorphize a block over the configured precision.
macro_rules! with_precision {
    ($p:expr, $T:ident, $body:expr) => {
        match $p {
            Precision::Single => {
                type $T = f32;
                $body
            }
            Precision::Double => {
                type $T = f64;
                $body
            }
        }
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config { .. } | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn init_threads(cli_threads: Option<usize>) {
    let n = cli_threads
        .or_else(|| std::env::var("ATTRIB_SENS_THREADS").ok().and_then(|v| v.parse().ok()));
    #[cfg(feature = "parallel")]
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

fn run(command: Command) -> attrsens::Result<()> {
    match command {
        Command::GenData { config } => {
            let (cfg, root) = load_config(&config)?;
            with_precision!(cfg.precision, T, gen_data::<T>(&cfg, &root)?);
            Ok(())
        }
        Command::Train { config, model } => {
            let (cfg, root) = load_config(&config)?;
            with_precision!(cfg.precision, T, {
                let data = train_items::<T>(&cfg)?;
                let mc = find_model(&cfg, &model)?;
                train_and_save::<T>(&cfg, &root, mc, &data)?;
            });
            Ok(())
        }
        Command::Attribute { model, image, method, out, class, render } => {
            attribute_cmd(&model, &image, &method, &out, class, render)
        }
        Command::Sweep { config } => {
            let (cfg, root) = load_config(&config)?;
            with_precision!(cfg.precision, T, sweep_cmd::<T>(&cfg, &root)?);
            Ok(())
        }
        Command::Evaluate { model, heatmap, image, mask, class, steps } => {
            evaluate_cmd(&model, &heatmap, &image, &mask, class, steps)
        }
        Command::Report { input } => report_cmd(&input),
    }
}

/// Load the config; relative paths resolve against the config directory.
fn load_config(path: &Path) -> attrsens::Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, root))
}

fn find_model<'a>(cfg: &'a ExperimentConfig, id: &str) -> attrsens::Result<&'a ModelConfig> {
    cfg.models.iter().find(|m| m.id == id).ok_or_else(|| Error::Config {
        path: "models".into(),
        message: format!("no model with id '{id}'"),
    })
}

fn gen_data<T: Scalar>(cfg: &ExperimentConfig, root: &Path) -> attrsens::Result<()> {
    let side = cfg.dataset.image_side;
    let total = cfg.dataset.train_count + cfg.dataset.eval_count;
    let items = generate_dataset::<T>(cfg.base_seed, total, side)?;
    let out = root.join(&cfg.output_dir).join("dataset");
    std::fs::create_dir_all(&out)?;
    let mut manifest = String::new();
    for item in &items {
        let split = if (item.index as usize) < cfg.dataset.train_count { "train" } else { "eval" };
        let img_name = format!("img_{:05}.atns", item.index);
        let mask_name = format!("mask_{:05}.atns", item.index);
        write_tensor(&out.join(&img_name), &item.image)?;
        let mask: Vec<T> =
            item.gt_mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
        write_tensor(&out.join(&mask_name), &Tensor::new(vec![side, side], mask)?)?;
        manifest.push_str(&serde_json::to_string(&serde_json::json!({
            "index": item.index,
            "split": split,
            "label": item.label,
            "shape": item.shape,
            "size": item.size,
            "bbox": item.bbox,
            "image": img_name,
            "mask": mask_name,
        }))?);
        manifest.push('\n');
    }
    std::fs::write(out.join("manifest.jsonl"), manifest)?;
    println!("wrote {total} items to {}", out.display());
    Ok(())
}

fn train_items<T: Scalar>(cfg: &ExperimentConfig) -> attrsens::Result<Vec<DatasetItem<T>>> {
    generate_dataset::<T>(cfg.base_seed, cfg.dataset.train_count, cfg.dataset.image_side)
}

fn eval_items<T: Scalar>(cfg: &ExperimentConfig) -> attrsens::Result<Vec<EvalItem<T>>> {
    // indices continue past the training range: disjoint by construction
    let start = cfg.dataset.train_count as u64;
    (0..cfg.dataset.eval_count as u64)
        .map(|i| {
            let item =
                attrsens::io::generate_item::<T>(cfg.base_seed, start + i, cfg.dataset.image_side)?;
            Ok(EvalItem {
                index: item.index,
                image: item.image,
                label: item.label,
                gt_mask: item.gt_mask,
            })
        })
        .collect()
}

fn model_dir(cfg: &ExperimentConfig, root: &Path, id: &str) -> PathBuf {
    root.join(&cfg.output_dir).join("models").join(id)
}

fn train_and_save<T: Scalar>(
    cfg: &ExperimentConfig,
    root: &Path,
    mc: &ModelConfig,
    data: &[DatasetItem<T>],
) -> attrsens::Result<(MicroClassifier<T>, [f64; 3])> {
    let pairs: Vec<(Tensor<T>, usize)> = data.iter().map(|d| (d.image.clone(), d.label)).collect();
    let init = MicroClassifier::<T>::reference(
        cfg.dataset.image_side,
        attrsens::io::CLASS_COUNT,
        mc.seed,
    );
    let mut tc = mc.training.clone().unwrap_or_else(|| cfg.training.clone());
    tc.base_seed = cfg.base_seed.wrapping_add(mc.seed);
    let attack = if mc.robust { cfg.robust_attack.clone() } else { None };
    let (model, _history) = match &attack {
        Some(a) => train_robust(&init, &pairs, &tc, a)?,
        None => train(&init, &pairs, &tc)?,
    };
    let mean_color = dataset_mean_color(data);
    let prov = ModelProvenance {
        dataset_seed: cfg.base_seed,
        train_seed: tc.base_seed,
        epochs: tc.epochs,
        robust_epsilon: attack.map(|a| a.epsilon).unwrap_or(0.0),
        note: String::new(),
    };
    let dir = model_dir(cfg, root, &mc.id);
    save_model(&dir, &model, mean_color, prov)?;
    println!("trained model '{}' -> {}", mc.id, dir.display());
    Ok((model, mean_color))
}

/// Load the model directory if present, otherwise train and save it.
fn load_or_train<T: Scalar>(
    cfg: &ExperimentConfig,
    root: &Path,
    mc: &ModelConfig,
    data: &[DatasetItem<T>],
) -> attrsens::Result<(MicroClassifier<T>, [f64; 3])> {
    let dir = model_dir(cfg, root, &mc.id);
    if dir.join("manifest.json").exists() {
        let (model, manifest) = load_model::<T>(&dir)?;
        return Ok((model, manifest.mean_color));
    }
    train_and_save(cfg, root, mc, data)
}

fn predicted_class<T: Scalar>(
    model: &MicroClassifier<T>,
    image: &Tensor<T>,
) -> attrsens::Result<usize> {
    let probs = model.forward(image)?;
    Ok(probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0))
}

/// Read a stored tensor of either precision, widened to f64.
fn read_any_f64(path: &Path) -> attrsens::Result<Tensor<f64>> {
    let bytes = std::fs::read(path)?;
    match bytes.get(6) {
        Some(0) => Ok(read_tensor::<f32>(path)?.cast()),
        _ => read_tensor::<f64>(path),
    }
}

/// Stored dtype of a model directory, so the CLI can load either precision.
fn model_precision(model_dir: &Path) -> attrsens::Result<Precision> {
    let text = std::fs::read_to_string(model_dir.join("manifest.json"))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("dtype").and_then(|v| v.as_u64()) {
        Some(0) => Ok(Precision::Single),
        Some(1) => Ok(Precision::Double),
        other => Err(Error::Format(format!(
            "{}: unsupported dtype {other:?}",
            model_dir.display()
        ))),
    }
}

fn attribute_cmd(
    model_dir: &Path,
    image_path: &Path,
    method_json: &str,
    out: &Path,
    class: Option<usize>,
    render: bool,
) -> attrsens::Result<()> {
    with_precision!(model_precision(model_dir)?, T, {
        attribute_cmd_typed::<T>(model_dir, image_path, method_json, out, class, render)
    })
}

fn attribute_cmd_typed<T: Scalar>(
    model_dir: &Path,
    image_path: &Path,
    method_json: &str,
    out: &Path,
    class: Option<usize>,
    render: bool,
) -> attrsens::Result<()> {
    let method: MethodSpec = serde_json::from_str(method_json)
        .map_err(|e| Error::Config { path: "--method".into(), message: e.to_string() })?;
    let (model, manifest) = load_model::<T>(model_dir)?;
    let image: Tensor<T> = read_any_f64(image_path)?.cast();
    let class = match class {
        Some(c) => c,
        None => predicted_class(&model, &image)?,
    };
    let ctx = AttrContext { mean_color: manifest.mean_color };
    let map = attribute(&model, &image, class, &method, &ctx)?;
    write_tensor(out, &Tensor::new(vec![map.side, map.side], map.values.clone())?)?;
    if render {
        let png = out.with_extension("png");
        match map.range_tag {
            RangeTag::SignedUnit => render_heatmap_png(&map.values, map.side, &png)?,
            RangeTag::MaskUnit => render_mask_png(&map.values, map.side, &png)?,
        }
        println!("rendered {}", png.display());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn write_report(dir: &Path, name: &str, report: &SensitivityReport) -> attrsens::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.csv")), report.to_csv())?;
    std::fs::write(dir.join(format!("{name}.json")), report.to_json())?;
    println!("report '{name}': {} rows", report.rows.len());
    Ok(())
}

fn sweep_cmd<T: Scalar>(cfg: &ExperimentConfig, root: &Path) -> attrsens::Result<()> {
    let data = train_items::<T>(cfg)?;
    let eval = eval_items::<T>(cfg)?;
    let reports_dir = root.join(&cfg.output_dir).join("reports");

    let mut models: Vec<(String, MicroClassifier<T>, [f64; 3])> = Vec::new();
    for mc in &cfg.models {
        let (model, mean_color) = load_or_train(cfg, root, mc, &data)?;
        models.push((mc.id.clone(), model, mean_color));
    }
    let ctx = AttrContext { mean_color: models[0].2 };

    for (i, method) in cfg.noise_methods.iter().enumerate() {
        let mut parts = Vec::new();
        for (id, model, _) in &models {
            parts.push(run_noise_invariance(
                model,
                id,
                &eval,
                cfg.noise_sigma,
                method,
                &ctx,
                cfg.base_seed,
            )?);
        }
        let combined = SensitivityReport::merged(parts);
        write_report(&reports_dir, &format!("noise_{:02}_{}", i, method.name()), &combined)?;
    }

    for trend in &cfg.trends {
        let regular = &models.iter().find(|(id, ..)| id == &trend.regular_model).unwrap().1;
        let robust = &models.iter().find(|(id, ..)| id == &trend.robust_model).unwrap().1;
        let report = run_smoothing_trend(
            regular,
            robust,
            &eval,
            trend.kind,
            &trend.sweep,
            trend.sigma,
            &ctx,
            cfg.base_seed,
        )?;
        write_report(&reports_dir, &format!("trend_{}", trend.name), &report)?;
    }

    for sc in &cfg.sweeps {
        let selected: Vec<(String, &MicroClassifier<T>)> = models
            .iter()
            .filter(|(id, ..)| sc.models.is_empty() || sc.models.contains(id))
            .map(|(id, m, _)| (id.clone(), m))
            .collect();
        let report = run_hyperparam_sensitivity(&sc.spec, &eval, &selected, &ctx, cfg.base_seed)?;
        write_report(&reports_dir, &format!("sweep_{}", sc.name), &report)?;
        if sc.accuracy {
            let acc = run_accuracy_variance(
                &sc.spec,
                &eval,
                &selected,
                &ctx,
                cfg.deletion_steps,
                cfg.base_seed,
            )?;
            // the global study reuses the same rows with different aggregation
            let global = SensitivityReport::with_global_std(acc.rows.clone());
            write_report(&reports_dir, &format!("accuracy_{}", sc.name), &acc)?;
            write_report(&reports_dir, &format!("global_{}", sc.name), &global)?;
        }
    }
    Ok(())
}

fn evaluate_cmd(
    model_dir: &Path,
    heatmap: &Path,
    image_path: &Path,
    mask_path: &Path,
    class: Option<usize>,
    steps: usize,
) -> attrsens::Result<()> {
    with_precision!(model_precision(model_dir)?, T, {
        evaluate_cmd_typed::<T>(model_dir, heatmap, image_path, mask_path, class, steps)
    })
}

fn evaluate_cmd_typed<T: Scalar>(
    model_dir: &Path,
    heatmap: &Path,
    image_path: &Path,
    mask_path: &Path,
    class: Option<usize>,
    steps: usize,
) -> attrsens::Result<()> {
    let (model, _) = load_model::<T>(model_dir)?;
    let image: Tensor<T> = read_any_f64(image_path)?.cast();
    let map: Tensor<f64> = read_any_f64(heatmap)?;
    let mask: Tensor<f64> = read_any_f64(mask_path)?;
    let side = image.dims()[0];
    if map.dims() != [side, side] || mask.dims() != [side, side] {
        return Err(Error::ShapeMismatch {
            expected: format!("[{side}, {side}] heatmap and mask"),
            got: format!("{:?} / {:?}", map.dims(), mask.dims()),
        });
    }
    let class = match class {
        Some(c) => c,
        None => predicted_class(&model, &image)?,
    };
    let gt: Vec<bool> = mask.data().iter().map(|&v| v != 0.0).collect();
    let mut score = |img: &Tensor<T>| -> attrsens::Result<f64> {
        Ok(model.forward(img)?[class].as_f64())
    };
    let scores = accuracy_scores(&mut score, &image, map.data(), &gt, steps)?;
    println!("{}", serde_json::to_string_pretty(&scores)?);
    Ok(())
}

/// Merge every `*.csv` report under `dir` into `merged.csv`/`merged.json`.
fn report_cmd(dir: &Path) -> attrsens::Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_stem().is_some_and(|s| s != "merged")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no report CSVs under {}", dir.display())));
    }
    let mut rows = Vec::new();
    for p in &paths {
        rows.extend(parse_csv(&p)?);
    }
    let report = SensitivityReport::from_rows(rows);
    std::fs::write(dir.join("merged.csv"), report.to_csv())?;
    std::fs::write(dir.join("merged.json"), report.to_json())?;
    println!("merged {} files into {}", paths.len(), dir.join("merged.csv").display());
    Ok(())
}

fn parse_csv(csv: &Path) -> attrsens::Result<Vec<attrsens::harness::ReportRow>> {
    let text = std::fs::read_to_string(csv)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() != 11 || cols[0] != "image_id" {
        return Err(Error::Format(format!("{}: unrecognized header", csv.display())));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Format(format!("{}: bad row at line {}", csv.display(), ln + 2)));
        }
        let bad = |e: String| Error::Format(format!("{}: line {}: {e}", csv.display(), ln + 2));
        let parse = |s: &str| -> attrsens::Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| bad(e.to_string()))
            }
        };
        rows.push(attrsens::harness::ReportRow {
            image_id: f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            model_id: f[1].to_string(),
            method: f[2].to_string(),
            swept_field: f[3].to_string(),
            variant_value: parse(f[4])?.unwrap_or(0.0),
            spearman: parse(f[5])?,
            pearson_hog: parse(f[6])?,
            ssim: parse(f[7])?,
            loc_error: parse(f[8])?,
            deletion_auc: parse(f[9])?,
            insertion_auc: parse(f[10])?,
        });
    }
    Ok(rows)
}
