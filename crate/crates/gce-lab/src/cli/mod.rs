//! Command-line front-end: train, attack, evaluate, landscape,
//! export-embeddings.
//!
//! Every run directory is named by the resolved config hash plus seed,
//! and contains the echoed config, so any artifact can be regenerated
//! from its own metadata. The `GCE_LAB_DATA` environment variable (or
//! `--data`) points at the directory holding `mnist/`.

use crate::attacks::{self, AttackConfig, AttackKind, AttackLoss};
use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{self, Config};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::landscape::{self, LandscapeLoss};
use crate::losses::GceConfig;
use crate::models::{self, ModelSpec, ParamSet};
use crate::report::{CellStatus, EvalReport, EvalRow};
use crate::tensor::{RawTensor, Tensor};
use crate::training::{self, LossKind};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "gce-lab",
    about = "Complement-entropy objectives, white-box attacks, and adversarial training on CPU",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Data root containing `mnist/` (overrides GCE_LAB_DATA).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and write checkpoint + log.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Plain-text key=value training config.
        #[arg(long)]
        config: PathBuf,
        /// Override `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one attack against a checkpoint and write a manifest.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// fgsm | bim | pgd | mim | jsma | cw
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Iterations for the iterative attacks.
        #[arg(long)]
        iterations: Option<usize>,
        /// Momentum decay (mim).
        #[arg(long, default_value_t = 1.0)]
        decay: f64,
        /// Max fraction of pixels modified (jsma).
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        /// Perturb single pixels instead of pixel pairs (jsma).
        #[arg(long, default_value_t = false)]
        jsma_single: bool,
        /// Confidence margin kappa (cw).
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
        /// Initial constant (cw).
        #[arg(long, default_value_t = 0.001)]
        c0: f64,
        #[arg(long, default_value_t = 9)]
        binary_steps: usize,
        /// Optimizer iterations per binary-search round (cw).
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Explicit target class (default untargeted / average case).
        #[arg(long)]
        target: Option<usize>,
        /// Loss driving the gradient: xe | gce.
        #[arg(long, default_value = "xe")]
        loss: String,
        /// Evaluate on a seeded subset of this size (0 = whole split).
        #[arg(long, default_value_t = 1000)]
        subset: usize,
        /// Dataset split: test | train.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run a (models x attacks x budgets) matrix and emit a report.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoints, comma-separated or repeated.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        /// Suite config file (attacks, budgets, subset, seed).
        #[arg(long)]
        suite: PathBuf,
        /// Override `suite.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-sample loss sheets and profiles over the 3-class simplex.
    Landscape {
        #[command(flatten)]
        common: CommonArgs,
        /// complement_entropy | gce | normalized_gce | xe
        #[arg(long)]
        loss: String,
        /// Guiding exponents, comma-separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0 / 3.0, 0.1])]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 201)]
        resolution: usize,
        /// Basin width reported in the assertions sidecar.
        #[arg(long, default_value_t = 0.05)]
        basin_delta: f64,
    },
    /// Export penultimate-layer features to CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split: test | train.
        #[arg(long, default_value = "test")]
        split: String,
        /// Seeded subset size (0 = whole split).
        #[arg(long, default_value_t = 0)]
        limit: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output CSV path (default <out>/embeddings.csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            common,
            config,
            seed,
        } => cmd_train(&common, &config, seed),
        Command::Attack {
            common,
            checkpoint,
            kind,
            eps,
            iterations,
            decay,
            gamma,
            jsma_single,
            kappa,
            c0,
            binary_steps,
            max_iter,
            target,
            loss,
            subset,
            split,
            seed,
        } => {
            let kind = AttackKind::parse(&kind)?;
            let mut cfg = AttackConfig::new(kind);
            cfg.epsilon = eps;
            if let Some(iters) = iterations {
                cfg.iterations = iters;
            }
            cfg.decay = decay;
            cfg.gamma = gamma;
            cfg.jsma_pixel_pairs = !jsma_single;
            cfg.confidence = kappa;
            cfg.initial_constant = c0;
            cfg.binary_steps = binary_steps;
            cfg.max_opt_iterations = max_iter;
            cfg.targeted = target;
            cfg.seed = seed;
            cfg.loss = parse_attack_loss(&loss)?;
            cfg.validate()?;
            cmd_attack(&common, &checkpoint, cfg, subset, &split, seed)
        }
        Command::Evaluate {
            common,
            checkpoints,
            suite,
            seed,
        } => cmd_evaluate(&common, &checkpoints, &suite, seed),
        Command::Landscape {
            common,
            loss,
            alpha,
            resolution,
            basin_delta,
        } => cmd_landscape(&common, &loss, &alpha, resolution, basin_delta),
        Command::ExportEmbeddings {
            common,
            checkpoint,
            split,
            limit,
            seed,
            csv,
        } => cmd_export_embeddings(&common, &checkpoint, &split, limit, seed, csv.as_deref()),
    }
}

fn parse_attack_loss(s: &str) -> Result<AttackLoss> {
    match s {
        "xe" => Ok(AttackLoss::Xe),
        "gce" => Ok(AttackLoss::Gce(GceConfig::default())),
        other => Err(Error::InvalidArgument(format!(
            "attack loss must be xe or gce, got {other}"
        ))),
    }
}

fn data_dir(common: &CommonArgs) -> PathBuf {
    common.data.clone().unwrap_or_else(data::data_root)
}

fn load_split(root: &Path, split: &str) -> Result<Dataset> {
    let train = match split {
        "train" => true,
        "test" => false,
        other => {
            return Err(Error::InvalidArgument(format!(
                "split must be train or test, got {other}"
            )))
        }
    };
    data::load_mnist_split(root, train).map_err(|e| match e {
        Error::Io { path, message } => Error::Io {
            path,
            message: format!("{message} (fetch the dataset with scripts/fetch_mnist.sh)"),
        },
        other => other,
    })
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn cmd_train(common: &CommonArgs, config_path: &Path, seed_override: Option<u64>) -> Result<()> {
    let mut cfg = Config::from_file(config_path)?;
    if let Some(seed) = seed_override {
        cfg.set("train.seed", seed);
    }
    if let Some(data) = &common.data {
        cfg.set("data.dir", data.display());
    }
    let resolved = config::resolve_train(&cfg)?;
    let run_id = format!("{}-s{}", cfg.hash(), resolved.train.seed);
    let run_dir = common.out.join(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write_text(&run_dir.join("resolved.cfg"), &cfg.to_canonical_string())?;

    let root = PathBuf::from(&resolved.data_dir);
    let mut train_set = load_split(&root, "train")?;
    let test_set = load_split(&root, "test")?;
    if resolved.train_subset > 0 {
        train_set = train_set.subset(resolved.train_subset, resolved.train.seed)?;
    }

    println!(
        "run {run_id}: {} loss={} epochs={} batch={} train_n={}",
        config_path.display(),
        resolved.train.loss.name(),
        resolved.train.epochs,
        resolved.train.batch_size,
        train_set.len()
    );

    let (params, log) = match (resolved.train.loss, resolved.train.adversarial.enabled) {
        (LossKind::Cot, _) => training::train_cot(&resolved.spec, &train_set, &test_set, &resolved.train)?,
        (_, true) => {
            training::train_adversarial_pgd(&resolved.spec, &train_set, &test_set, &resolved.train)?
        }
        (_, false) => training::train_natural(&resolved.spec, &train_set, &test_set, &resolved.train)?,
    };

    for e in &log.epochs {
        println!(
            "epoch {:>3}  loss {:>12.6}  test_err {:>6.2}%  lr {:<9}  {:>6.1}s",
            e.epoch, e.train_loss, e.test_error_pct, e.lr, e.seconds
        );
    }
    let meta = CheckpointMeta::new(
        resolved.train.loss.name(),
        resolved.train.gce.alpha,
        resolved.train.seed,
    );
    checkpoint::save_checkpoint(&run_dir.join("checkpoint.bin"), &resolved.spec, &params, &meta)?;
    write_text(&run_dir.join("trainlog.csv"), &log.to_csv())?;
    println!("wrote {}", run_dir.join("checkpoint.bin").display());
    Ok(())
}

fn budget_string(cfg: &AttackConfig) -> String {
    match cfg.kind {
        AttackKind::Fgsm => format!("eps={}", cfg.epsilon),
        AttackKind::Bim | AttackKind::Pgd | AttackKind::Mim => {
            format!("eps={},r={}", cfg.epsilon, cfg.iterations)
        }
        AttackKind::Jsma => format!("gamma={}", cfg.gamma),
        AttackKind::Cw => format!(
            "c0={},kappa={},bs={},iters={}",
            cfg.initial_constant, cfg.confidence, cfg.binary_steps, cfg.max_opt_iterations
        ),
    }
}

fn cmd_attack(
    common: &CommonArgs,
    checkpoint_path: &Path,
    cfg: AttackConfig,
    subset: usize,
    split: &str,
    seed: u64,
) -> Result<()> {
    let (spec, params, meta) = checkpoint::load_checkpoint(checkpoint_path)?;
    let root = data_dir(common);
    let mut dataset = load_split(&root, split)?;
    if subset > 0 && subset < dataset.len() {
        dataset = dataset.subset(subset, seed)?;
    }

    let out_dir = common.out.join("attacks");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    // Per-sample manifest plus the adversarial batch container.
    let mut manifest = String::from("sample,label,prediction,success,linf,l2\n");
    let chunk = 200;
    let mut correct = 0usize;
    let mut l2_sum = 0.0;
    let mut adv_pixels = Vec::with_capacity(dataset.images.data.len());
    let mut start = 0;
    let mut piece = 0u64;
    while start < dataset.len() {
        let stop = (start + chunk).min(dataset.len());
        let indices: Vec<usize> = (start..stop).collect();
        let (images, labels) = dataset.gather(&indices);
        let mut chunk_cfg = cfg.clone();
        chunk_cfg.seed = crate::seeding::derive(cfg.seed, "eval-chunk", &[piece]);
        let result = attacks::run(&spec, &params, &images, &labels, &chunk_cfg)?;
        for (offset, &label) in labels.iter().enumerate() {
            let idx = start + offset;
            let pred = result.predictions[offset];
            if pred == label {
                correct += 1;
            }
            l2_sum += result.l2[offset];
            manifest.push_str(&format!(
                "{idx},{label},{pred},{},{:.6},{:.6}\n",
                u8::from(result.success[offset]),
                result.linf[offset],
                result.l2[offset]
            ));
        }
        adv_pixels.extend_from_slice(&result.adversarial.data);
        start = stop;
        piece += 1;
    }

    let accuracy = 100.0 * correct as f64 / dataset.len().max(1) as f64;
    let mean_l2 = l2_sum / dataset.len().max(1) as f64;
    let tag = format!(
        "{}-{}-{}-s{seed}",
        checkpoint_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model"),
        cfg.kind.name(),
        budget_string(&cfg).replace([',', '='], "_"),
    );
    write_text(&out_dir.join(format!("manifest-{tag}.csv")), &manifest)?;
    let shape = dataset.images.shape.clone();
    checkpoint::save_tensors(
        &out_dir.join(format!("batch-{tag}.tensors")),
        &[
            ("images".to_string(), RawTensor { shape, data: adv_pixels }),
            (
                "labels".to_string(),
                RawTensor::new(
                    vec![dataset.len()],
                    dataset.labels.iter().map(|&l| l as f64).collect(),
                )?,
            ),
        ],
    )?;

    // One summary row appended to the shared attack log.
    let log_path = out_dir.join("log.csv");
    let mut log = if log_path.exists() {
        fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?
    } else {
        String::from("model,loss,attack,budget,accuracy_pct,mean_l2,samples,seed,dataset_sha\n")
    };
    log.push_str(&format!(
        "{},{},{},{},{accuracy:.2},{mean_l2:.6},{},{seed},{}\n",
        tag,
        meta.loss_kind,
        cfg.kind.name(),
        budget_string(&cfg),
        dataset.len(),
        dataset.checksum()
    ));
    write_text(&log_path, &log)?;

    println!(
        "{} under {} ({}): accuracy {accuracy:.2}% over {} samples, mean L2 {mean_l2:.4}",
        meta.loss_kind,
        cfg.kind.name(),
        budget_string(&cfg),
        dataset.len()
    );
    Ok(())
}

struct SuiteCell {
    attack: String,
    cfg: Option<AttackConfig>,
}

fn suite_cells(suite: &Config, seed: u64) -> Result<Vec<SuiteCell>> {
    let mut cells = vec![SuiteCell {
        attack: "clean".into(),
        cfg: None,
    }];
    let attacks = suite.list_or("suite.attacks", &["fgsm", "bim", "pgd", "mim"]);
    let epsilons: Vec<f64> = suite
        .list_or("suite.epsilons", &["0.1", "0.2", "0.3"])
        .iter()
        .map(|e| {
            e.parse()
                .map_err(|_| Error::Format(format!("suite.epsilons: bad entry `{e}`")))
        })
        .collect::<Result<_>>()?;
    for name in attacks {
        match name.as_str() {
            "clean" => {}
            "fgsm" | "bim" | "pgd" | "mim" => {
                let kind = AttackKind::parse(&name)?;
                for &eps in &epsilons {
                    let mut cfg = AttackConfig::new(kind);
                    cfg.epsilon = eps;
                    cfg.iterations = match kind {
                        AttackKind::Fgsm => 1,
                        AttackKind::Bim => suite.usize_or("suite.bim_iterations", 10)?,
                        AttackKind::Pgd => suite.usize_or("suite.pgd_iterations", 40)?,
                        AttackKind::Mim => suite.usize_or("suite.mim_iterations", 40)?,
                        _ => unreachable!(),
                    };
                    cfg.decay = suite.f64_or("suite.mim_decay", 1.0)?;
                    cfg.seed = seed;
                    cfg.validate()?;
                    cells.push(SuiteCell {
                        attack: name.clone(),
                        cfg: Some(cfg),
                    });
                }
            }
            "jsma" => {
                for gamma in suite.list_or("suite.gammas", &["0.25"]) {
                    let mut cfg = AttackConfig::new(AttackKind::Jsma);
                    cfg.gamma = gamma
                        .parse()
                        .map_err(|_| Error::Format(format!("suite.gammas: bad entry `{gamma}`")))?;
                    cfg.seed = seed;
                    cfg.validate()?;
                    cells.push(SuiteCell {
                        attack: "jsma".into(),
                        cfg: Some(cfg),
                    });
                }
            }
            "cw" => {
                let mut cfg = AttackConfig::new(AttackKind::Cw);
                cfg.binary_steps = suite.usize_or("suite.cw_binary_steps", 9)?;
                cfg.max_opt_iterations = suite.usize_or("suite.cw_max_iter", 1000)?;
                cfg.initial_constant = suite.f64_or("suite.cw_c0", 0.001)?;
                cfg.confidence = suite.f64_or("suite.cw_kappa", 0.0)?;
                cfg.seed = seed;
                cfg.validate()?;
                cells.push(SuiteCell {
                    attack: "cw".into(),
                    cfg: Some(cfg),
                });
            }
            other => {
                return Err(Error::Format(format!(
                    "suite.attacks: unknown attack `{other}`"
                )))
            }
        }
    }
    Ok(cells)
}

fn cmd_evaluate(
    common: &CommonArgs,
    checkpoints: &[PathBuf],
    suite_path: &Path,
    seed_override: Option<u64>,
) -> Result<()> {
    let mut suite = Config::from_file(suite_path)?;
    if let Some(seed) = seed_override {
        suite.set("suite.seed", seed);
    }
    let seed = suite.u64_or("suite.seed", 7)?;
    let subset = suite.usize_or("suite.subset", 1000)?;
    let split = suite.get("suite.split").unwrap_or("test").to_string();
    let chunk = suite.usize_or("suite.chunk", 200)?;

    let root = data_dir(common);
    let mut dataset = load_split(&root, &split)?;
    if subset > 0 && subset < dataset.len() {
        dataset = dataset.subset(subset, seed)?;
    }
    let dataset_sha = dataset.checksum();
    let cells = suite_cells(&suite, seed)?;

    let mut report = EvalReport {
        config_hash: suite.hash(),
        seed,
        rows: Vec::new(),
    };
    for ckpt_path in checkpoints {
        let (spec, params, meta) = checkpoint::load_checkpoint(ckpt_path)?;
        let model_id = ckpt_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let alpha = (meta.loss_kind == "gce").then_some(meta.alpha);
        for cell in &cells {
            let (status, accuracy_pct, mean_l2, budget) = match &cell.cfg {
                None => match attacks::clean_accuracy(&spec, &params, &dataset) {
                    Ok(acc) => (CellStatus::Ok, acc, 0.0, "-".to_string()),
                    Err(err) => {
                        eprintln!("cell failed: {model_id}/clean: {err}");
                        (CellStatus::Failed, f64::NAN, f64::NAN, "-".to_string())
                    }
                },
                Some(cfg) => {
                    match attacks::evaluate_attack(&spec, &params, &dataset, cfg, chunk) {
                        Ok(summary) => (
                            CellStatus::Ok,
                            summary.accuracy_pct,
                            summary.mean_l2,
                            budget_string(cfg),
                        ),
                        Err(err) => {
                            eprintln!("cell failed: {model_id}/{}: {err}", cell.attack);
                            (CellStatus::Failed, f64::NAN, f64::NAN, budget_string(cfg))
                        }
                    }
                }
            };
            report.rows.push(EvalRow {
                model_id: model_id.clone(),
                loss_kind: meta.loss_kind.clone(),
                alpha,
                attack: cell.attack.clone(),
                budget,
                status,
                accuracy_pct,
                mean_l2,
                samples: dataset.len(),
                seed,
                dataset_sha: dataset_sha.clone(),
            });
        }
    }

    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let report_path = common.out.join(format!("report-{}-s{seed}.csv", suite.hash()));
    write_text(&report_path, &report.to_csv())?;
    print!("{}", report.to_table());
    println!("wrote {}", report_path.display());
    if report.any_failed() {
        return Err(Error::InvalidArgument(
            "one or more evaluation cells failed; see report".into(),
        ));
    }
    Ok(())
}

fn cmd_landscape(
    common: &CommonArgs,
    loss: &str,
    alphas: &[f64],
    resolution: usize,
    basin_delta: f64,
) -> Result<()> {
    let loss = LandscapeLoss::parse(loss)?;
    let uses_alpha = matches!(loss, LandscapeLoss::Gce | LandscapeLoss::NormalizedGce);
    if uses_alpha {
        for &a in alphas {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "alpha must be in (0, 1], got {a}"
                )));
            }
        }
    }
    let out_dir = common.out.join("landscape");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let sheet_alphas: Vec<f64> = if uses_alpha { alphas.to_vec() } else { vec![1.0] };
    let mut assertions = String::new();
    for &alpha in &sheet_alphas {
        let sheet = landscape::evaluate_sheet(loss, alpha, resolution)?;
        let stem = if uses_alpha {
            format!("{}_alpha_{alpha}", loss.name())
        } else {
            loss.name().to_string()
        };
        write_text(&out_dir.join(format!("{stem}.csv")), &sheet.to_csv())?;
        let pgm = sheet.to_pgm();
        fs::write(out_dir.join(format!("{stem}.pgm")), &pgm)
            .map_err(|e| Error::io(&out_dir, e))?;

        let (min_value, i1, i2) = sheet.minimum();
        let min_shaded = sheet.shaded[i2 * resolution + i1];
        let valley = landscape::valley_flatness_check(loss, alpha, resolution.max(10))?;
        let basin = sheet.basin_fraction(basin_delta);
        assertions.push_str(&format!(
            "{stem}: min={min_value:.6} at ({:.4},{:.4}) shaded={min_shaded} \
             valley_max_deviation={:.3e} valley_decreasing_toward_origin={} \
             basin_fraction(delta={basin_delta})={basin:.4}\n",
            sheet.coords[i1],
            sheet.coords[i2],
            valley.max_deviation,
            valley.strictly_decreasing_toward_origin,
        ));
        println!("wrote {}", out_dir.join(format!("{stem}.csv")).display());
    }
    if uses_alpha {
        let curves = landscape::profile_equal_incorrect(loss, &sheet_alphas, resolution.max(10))?;
        write_text(
            &out_dir.join(format!("profile_{}.csv", loss.name())),
            &landscape::profiles_to_csv(&curves),
        )?;
    }
    write_text(&out_dir.join("assertions.txt"), &assertions)?;
    println!("wrote {}", out_dir.join("assertions.txt").display());
    Ok(())
}

fn cmd_export_embeddings(
    common: &CommonArgs,
    checkpoint_path: &Path,
    split: &str,
    limit: usize,
    seed: u64,
    csv_path: Option<&Path>,
) -> Result<()> {
    let (spec, params, _) = checkpoint::load_checkpoint(checkpoint_path)?;
    let root = data_dir(common);
    let mut dataset = load_split(&root, split)?;
    if limit > 0 && limit < dataset.len() {
        dataset = dataset.subset(limit, seed)?;
    }
    let features = penultimate_features_raw(&spec, &params, &dataset)?;
    let width = spec.feature_width();

    let mut csv = String::from("id,label");
    for f in 0..width {
        csv.push_str(&format!(",f{f}"));
    }
    csv.push('\n');
    for (i, &label) in dataset.labels.iter().enumerate() {
        csv.push_str(&format!("{i},{label}"));
        for v in &features.data[i * width..(i + 1) * width] {
            // Default float formatting round-trips losslessly.
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let path = csv_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| common.out.join("embeddings.csv"));
    write_text(&path, &csv)?;
    println!(
        "wrote {} ({} rows x {} features)",
        path.display(),
        dataset.len(),
        width
    );
    Ok(())
}

/// Penultimate features for a whole dataset, chunked.
pub fn penultimate_features_raw(
    spec: &ModelSpec,
    params: &ParamSet,
    dataset: &Dataset,
) -> Result<RawTensor> {
    let bound = params.bind(false)?;
    let n = dataset.len();
    let d = dataset.image_numel();
    let width = spec.feature_width();
    let mut out = Vec::with_capacity(n * width);
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let stop = (start + chunk).min(n);
        let [c, h, w] = dataset.image_shape();
        let x = Tensor::constant(
            vec![stop - start, c, h, w],
            dataset.images.data[start * d..stop * d].to_vec(),
        )?;
        let pass = models::forward_full(spec, &bound, &x)?;
        out.extend_from_slice(pass.features.data());
        start = stop;
    }
    RawTensor::new(vec![n, width], out)
}
