use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cran_core::baselines::{local_search, mrt_uniform, LocalSearchConfig};
use cran_core::channel::{ConstraintBounds, InstanceSpec};
use cran_core::dataset::{read_dataset, sidecar_text, write_dataset};
use cran_core::nn::{
    desk_width, features_matrix, load_checkpoint, recover_from_output, save_checkpoint, Checkpoint, Mlp, MlpConfig,
    Variant,
};
use cran_core::system::SystemInstance;
use cran_core::trainer::{evaluate, evaluate_with, std_dev, train, EvalReport, LrSchedule, TrainConfig, TrainData};
use cran_core::verify::{run_all, Fault, VerifyConfig};

use crate::settings::{ConfigFile, Layers, Preset};
use crate::{BenchArgs, Cli, CliError, Command, EvalArgs, GenerateArgs, SweepArgs, TrainArgs, VerifyArgs};

pub const GIT_DESCRIBE: &str = env!("CRAN_GIT_DESCRIBE");

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    }
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let layers = Layers { file: &file };
    match cli.command {
        Command::Generate(a) => generate(&layers, a),
        Command::Train(a) => train_cmd(&layers, a),
        Command::Eval(a) => eval_cmd(&layers, a),
        Command::Sweep(a) => sweep(&layers, a),
        Command::BenchTime(a) => bench_time(&layers, a),
        Command::Verify(a) => verify(&layers, a),
    }
}

/// Seed of an auxiliary stream derived from the master seed.
fn derived_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const VALIDATION_TAG: u64 = 1;

/// `#`-prefixed provenance lines heading every CSV.
fn csv_metadata(command: &str, seed: u64, config: &[(&str, String)]) -> String {
    let mut out = format!("# cran {GIT_DESCRIBE}\n# command={command}\n# seed={seed}\n");
    for (k, v) in config {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_instances(path: &Path) -> Result<Vec<SystemInstance>, CliError> {
    let samples = read_dataset(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(samples.into_iter().map(SystemInstance::new).collect())
}

fn sample_instances(spec: &InstanceSpec, seed: u64, n: usize) -> Result<Vec<SystemInstance>, CliError> {
    if n == 0 {
        return Err(CliError::Usage("sample count must be positive".into()));
    }
    Ok(spec.sample_range(seed, 0, n)?.into_iter().map(SystemInstance::new).collect())
}

fn check_size(instances: &[SystemInstance], m: usize, k: usize, what: &str) -> Result<(), CliError> {
    match instances.first() {
        Some(i) if i.num_aps() == m && i.num_users() == k => Ok(()),
        Some(i) => Err(CliError::Usage(format!(
            "{what} has M={}, K={}, expected M={m}, K={k}",
            i.num_aps(),
            i.num_users()
        ))),
        None => Err(CliError::Usage(format!("{what} is empty"))),
    }
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse().map_err(|e: cran_core::Error| CliError::Usage(e.to_string()))
}

fn generate(layers: &Layers, a: GenerateArgs) -> Result<(), CliError> {
    let m = layers.pick(a.m, "m", 3)?;
    let k = layers.pick(a.k, "k", 3)?;
    let n = layers.pick(a.n, "n", 1000)?;
    let seed = layers.seed(a.seed)?;
    let out = layers.pick(a.out, "out", PathBuf::from("dataset.bin"))?;
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let spec = InstanceSpec::new(m, k);
    let samples = spec.sample_range(seed, 0, n)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_dataset(&out, &samples, &sidecar_text(&spec, n, seed, &format!("cran {GIT_DESCRIBE}")))
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    println!("wrote {n} samples (M={m}, K={k}, seed={seed}) to {}", out.display());
    Ok(())
}

fn train_cmd(layers: &Layers, a: TrainArgs) -> Result<(), CliError> {
    let preset: Preset = layers.pick(a.preset, "preset", "desk".to_string())?.parse().map_err(CliError::Usage)?;
    let pv = preset.values();
    let variant = parse_variant(&layers.pick(a.variant, "variant", "proposed".to_string())?)?;
    let seed = layers.seed(a.seed)?;
    let m = layers.pick(a.m, "m", pv.m)?;
    let k = layers.pick(a.k, "k", pv.k)?;
    let depth = layers.pick(a.depth, "depth", pv.depth)?;
    let width = layers.pick(a.width, "width", pv.width.unwrap_or_else(|| desk_width(m, k)))?;
    let batch_size = layers.pick(a.batch_size, "batch-size", pv.batch_size)?;
    let max_iterations = layers.pick(a.max_iterations, "max-iterations", pv.max_iterations)?;
    let validation_interval = layers.pick(a.validation_interval, "validation-interval", pv.validation_interval)?;
    let patience = layers.pick(a.patience, "patience", pv.patience)?;
    let lr = layers.pick(a.lr, "lr", LrSchedule::default().initial)?;
    let val_size = layers.pick(a.val_size, "val-size", 1000)?;
    let out_dir = layers.pick(a.out_dir, "out-dir", PathBuf::from("runs"))?;
    let train_path = layers.pick_opt(a.train_data, "train-data")?;
    let val_path = layers.pick_opt(a.val_data, "val-data")?;
    let no_wall_clock = a.no_wall_clock || layers.file.get::<bool>("no-wall-clock")?.unwrap_or(false);
    if depth < 2 {
        return Err(CliError::Usage("--depth must be at least 2".into()));
    }

    let spec = InstanceSpec::new(m, k);
    let data = match &train_path {
        Some(p) => {
            let set = load_instances(p)?;
            check_size(&set, m, k, "training set")?;
            TrainData::Fixed(set)
        }
        None => TrainData::Online { spec, seed },
    };
    let validation = match &val_path {
        Some(p) => load_instances(p)?,
        None => sample_instances(&spec, derived_seed(seed, VALIDATION_TAG), val_size)?,
    };
    check_size(&validation, m, k, "validation set")?;

    let net = match variant {
        Variant::Proposed => MlpConfig::proposed(m, k, depth, width),
        Variant::DiLearn => MlpConfig::dilearn(m, k, depth, width),
    };
    let config = TrainConfig {
        batch_size,
        max_iterations,
        validation_interval,
        patience,
        lr: LrSchedule { initial: lr, ..LrSchedule::default() },
        record_wall_clock: !no_wall_clock,
        ..TrainConfig::desk(variant, seed)
    };
    let initial = Mlp::new(net.clone(), seed)?;
    let (model, report) = train(initial, &config, &data, &validation).map_err(|e| match e {
        cran_core::Error::NonFinite { iteration, sample } => {
            CliError::Failed(format!("training aborted: non-finite loss at iteration {iteration}, batch sample {sample}"))
        }
        other => other.into(),
    })?;

    let name = variant.name();
    let ckpt_path = out_dir.join(format!("{name}.ckpt.json"));
    let log_path = out_dir.join(format!("{name}_train_log.csv"));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    save_checkpoint(&ckpt_path, &Checkpoint { m, k, variant, model, optimizer: None })
        .map_err(|e| CliError::Io(format!("{}: {e}", ckpt_path.display())))?;
    let meta = csv_metadata(
        "train",
        seed,
        &[
            ("variant", name.to_string()),
            ("preset", format!("{preset:?}").to_lowercase()),
            ("m", m.to_string()),
            ("k", k.to_string()),
            ("depth", depth.to_string()),
            ("width", width.to_string()),
            ("batch_size", batch_size.to_string()),
            ("max_iterations", max_iterations.to_string()),
            ("validation_interval", validation_interval.to_string()),
            ("patience", patience.to_string()),
            ("lr", lr.to_string()),
            ("train_data", train_path.as_ref().map_or("online".into(), |p| p.display().to_string())),
            ("val_data", val_path.as_ref().map_or(format!("sampled:{val_size}"), |p| p.display().to_string())),
            ("best_iteration", report.best_iteration.to_string()),
            ("excluded_samples", report.excluded_samples.to_string()),
        ],
    );
    write_file(&log_path, &(meta + &report.to_csv()))?;
    let initial_val = report.history.first().map_or(f64::NAN, |h| h.val_sum_rate);
    println!(
        "{name}: validation sum-rate {initial_val:.6} -> {:.6} (best at iteration {} of {}); checkpoint {}, log {}",
        report.best_val_sum_rate,
        report.best_iteration,
        report.iterations_run,
        ckpt_path.display(),
        log_path.display()
    );
    Ok(())
}

/// A way of producing solutions for a test set.
enum Method {
    Learned(Checkpoint),
    Mrt,
    LocalSearch,
}

impl Method {
    fn name(&self) -> &'static str {
        match self {
            Method::Learned(c) => c.variant.name(),
            Method::Mrt => "mrt",
            Method::LocalSearch => "local-search",
        }
    }

    fn evaluate(&self, instances: &[SystemInstance]) -> Result<EvalReport, CliError> {
        Ok(match self {
            Method::Learned(c) => evaluate(&c.model, instances, c.variant)?,
            Method::Mrt => evaluate_with(instances, |_, inst| Ok(mrt_uniform(inst)))?,
            Method::LocalSearch => evaluate_with(instances, |_, inst| {
                let r = local_search(inst, &LocalSearchConfig::default())?;
                Ok((r.v, r.omega))
            })?,
        })
    }
}

fn load_learned(path: &Path, expected: Variant) -> Result<Checkpoint, CliError> {
    let ck = load_checkpoint(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if ck.variant != expected {
        return Err(CliError::Usage(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            ck.variant.name(),
            expected.name()
        )));
    }
    Ok(ck)
}

fn eval_cmd(layers: &Layers, a: EvalArgs) -> Result<(), CliError> {
    let checkpoint = layers.pick_opt(a.checkpoint, "checkpoint")?;
    let method = match (&checkpoint, layers.pick_opt(a.method, "method")?) {
        (Some(path), None) => {
            let ck = load_checkpoint(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Method::Learned(ck)
        }
        (None, Some(name)) => match name.as_str() {
            "mrt" => Method::Mrt,
            "local-search" => Method::LocalSearch,
            other => return Err(CliError::Usage(format!("unknown baseline {other:?} (mrt or local-search)"))),
        },
        (None, None) => return Err(CliError::Usage("give --checkpoint or --method".into())),
        (Some(_), Some(_)) => return Err(CliError::Usage("--checkpoint and --method are exclusive".into())),
    };
    let (dm, dk) = match &method {
        Method::Learned(c) => (c.m, c.k),
        _ => (3, 3),
    };
    let m = layers.pick(a.m, "m", dm)?;
    let k = layers.pick(a.k, "k", dk)?;
    let seed = layers.seed(a.seed)?;
    let n = layers.pick(a.n, "n", 1000)?;
    let data = layers.pick_opt(a.data, "data")?;
    let instances = match &data {
        Some(p) => load_instances(p)?,
        None => sample_instances(&InstanceSpec::new(m, k), seed, n)?,
    };
    check_size(&instances, m, k, "test set")?;
    if let Method::Learned(c) = &method {
        check_size(&instances, c.m, c.k, "test set")?;
    }
    let report = method.evaluate(&instances)?;
    if let Some(out) = layers.pick_opt(a.out, "out")? {
        let meta = csv_metadata(
            "eval",
            seed,
            &[
                ("method", method.name().to_string()),
                ("checkpoint", checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string())),
                ("data", data.as_ref().map_or(format!("sampled:{n}"), |p| p.display().to_string())),
                ("m", m.to_string()),
                ("k", k.to_string()),
            ],
        );
        write_file(&out, &(meta + &report.to_csv()))?;
    }
    println!(
        "method={} n={} mean_sum_rate={:.6} std_sum_rate={:.6} violations={} degenerate={}",
        method.name(),
        report.rates.len(),
        report.mean_sum_rate,
        report.std_sum_rate(),
        report.violations,
        report.degenerate
    );
    if report.violations > 0 {
        return Err(CliError::Failed(format!("{} feasibility violations", report.violations)));
    }
    Ok(())
}

fn sweep(layers: &Layers, a: SweepArgs) -> Result<(), CliError> {
    let axis = layers.pick(a.axis, "axis", "snr".to_string())?;
    let default_values = match axis.as_str() {
        "snr" => vec![0.0, 10.0, 20.0, 30.0],
        "capacity" => vec![2.0, 6.0, 10.0],
        other => return Err(CliError::Usage(format!("unknown axis {other:?} (snr or capacity)"))),
    };
    let values = match a.values {
        Some(v) => v,
        None => match layers.file.get::<String>("values")? {
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad axis value {s:?}"))))
                .collect::<Result<_, _>>()?,
            None => default_values,
        },
    };
    if values.is_empty() {
        return Err(CliError::Usage("no axis values".into()));
    }
    let snr = layers.pick(a.snr, "snr", 20.0)?;
    let capacity = layers.pick(a.capacity, "capacity", 10.0)?;
    let proposed_ck = layers.pick_opt(a.proposed_checkpoint, "proposed-checkpoint")?;
    let dilearn_ck = layers.pick_opt(a.dilearn_checkpoint, "dilearn-checkpoint")?;
    let method_names: Vec<String> = match a.methods {
        Some(v) => v,
        None => match layers.file.get::<String>("methods")? {
            Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
            None => {
                let mut v = Vec::new();
                if proposed_ck.is_some() {
                    v.push("proposed".into());
                }
                if dilearn_ck.is_some() {
                    v.push("dilearn".into());
                }
                v.extend(["mrt".into(), "local-search".into()]);
                v
            }
        },
    };
    let mut methods = Vec::new();
    for name in &method_names {
        methods.push(match name.as_str() {
            "proposed" => Method::Learned(load_learned(
                proposed_ck.as_deref().ok_or_else(|| CliError::Usage("proposed needs --proposed-checkpoint".into()))?,
                Variant::Proposed,
            )?),
            "dilearn" => Method::Learned(load_learned(
                dilearn_ck.as_deref().ok_or_else(|| CliError::Usage("dilearn needs --dilearn-checkpoint".into()))?,
                Variant::DiLearn,
            )?),
            "mrt" => Method::Mrt,
            "local-search" => Method::LocalSearch,
            other => return Err(CliError::Usage(format!("unknown method {other:?}"))),
        });
    }
    let (dm, dk) = methods
        .iter()
        .find_map(|mth| if let Method::Learned(c) = mth { Some((c.m, c.k)) } else { None })
        .unwrap_or((3, 3));
    let m = layers.pick(a.m, "m", dm)?;
    let k = layers.pick(a.k, "k", dk)?;
    for mth in &methods {
        if let Method::Learned(c) = mth {
            if (c.m, c.k) != (m, k) {
                return Err(CliError::Usage(format!("{} checkpoint is for M={}, K={}", c.variant.name(), c.m, c.k)));
            }
        }
    }
    let n = layers.pick(a.n, "n", 1000)?;
    let seed = layers.seed(a.seed)?;

    let mut csv = csv_metadata(
        "sweep",
        seed,
        &[
            ("axis", axis.clone()),
            ("values", values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")),
            ("snr_db", snr.to_string()),
            ("capacity", capacity.to_string()),
            ("methods", method_names.join(";")),
            ("proposed_checkpoint", proposed_ck.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("dilearn_checkpoint", dilearn_ck.as_ref().map_or("none".into(), |p| p.display().to_string())),
            ("m", m.to_string()),
            ("k", k.to_string()),
            ("n", n.to_string()),
        ],
    );
    csv.push_str("axis_value,method,mean_rate,std_rate,n\n");
    for &value in &values {
        let (p_db, c) = if axis == "snr" { (value, capacity) } else { (snr, value) };
        let bounds = ConstraintBounds::fixed(10f64.powf(p_db / 10.0), c);
        let spec = InstanceSpec::new(m, k).with_bounds(bounds);
        let instances = sample_instances(&spec, seed, n)?;
        for mth in &methods {
            let report = mth.evaluate(&instances)?;
            let _ = writeln!(
                csv,
                "{value},{},{},{},{}",
                mth.name(),
                report.mean_sum_rate,
                std_dev(&report.rates),
                report.rates.len()
            );
            log::info!("{axis}={value} {}: {:.4}", mth.name(), report.mean_sum_rate);
        }
    }
    match layers.pick_opt(a.out, "out")? {
        Some(out) => {
            write_file(&out, &csv)?;
            println!("wrote sweep over {axis} ({} points, {} methods) to {}", values.len(), methods.len(), out.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

const BATCHED_REPEATS: usize = 10;

fn bench_time(layers: &Layers, a: BenchArgs) -> Result<(), CliError> {
    let proposed_ck = layers.pick_opt(a.proposed_checkpoint, "proposed-checkpoint")?;
    let dilearn_ck = layers.pick_opt(a.dilearn_checkpoint, "dilearn-checkpoint")?;
    let proposed = match &proposed_ck {
        Some(p) => Some(load_learned(p, Variant::Proposed)?),
        None => None,
    };
    let dilearn = match &dilearn_ck {
        Some(p) => Some(load_learned(p, Variant::DiLearn)?),
        None => None,
    };
    let (dm, dk) = proposed.as_ref().or(dilearn.as_ref()).map_or((6, 6), |c| (c.m, c.k));
    let m = layers.pick(a.m, "m", dm)?;
    let k = layers.pick(a.k, "k", dk)?;
    let n = layers.pick(a.n, "n", 100)?;
    let seed = layers.seed(a.seed)?;
    let width = desk_width(m, k);
    let fresh = |variant: Variant| -> Result<Checkpoint, CliError> {
        let cfg = match variant {
            Variant::Proposed => MlpConfig::proposed(m, k, 5, width),
            Variant::DiLearn => MlpConfig::dilearn(m, k, 5, width),
        };
        Ok(Checkpoint { m, k, variant, model: Mlp::new(cfg, seed)?, optimizer: None })
    };
    let proposed = match proposed {
        Some(c) => c,
        None => fresh(Variant::Proposed)?,
    };
    let dilearn = match dilearn {
        Some(c) => c,
        None => fresh(Variant::DiLearn)?,
    };
    for c in [&proposed, &dilearn] {
        if (c.m, c.k) != (m, k) {
            return Err(CliError::Usage(format!("{} checkpoint is for M={}, K={}", c.variant.name(), c.m, c.k)));
        }
    }
    let instances = sample_instances(&InstanceSpec::new(m, k), seed, n)?;

    let time_learned = |c: &Checkpoint| -> Result<Vec<f64>, CliError> {
        let mut out = Vec::with_capacity(n);
        for (i, inst) in instances.iter().enumerate() {
            let start = Instant::now();
            let y = c.model.predict(&features_matrix(std::slice::from_ref(inst)))?;
            let sol = recover_from_output(inst, y.row(0), c.variant);
            let elapsed = start.elapsed().as_secs_f64();
            match sol {
                Ok(_) | Err(cran_core::Error::DegenerateBeamformer) => {}
                Err(e) => return Err(e.into()),
            }
            if i > 0 || n == 1 {
                out.push(elapsed);
            }
        }
        Ok(out)
    };
    // whole test set in one eval-mode pass, reported per sample; first pass is warm-up
    let time_batched = |c: &Checkpoint| -> Result<Vec<f64>, CliError> {
        let mut out = Vec::with_capacity(BATCHED_REPEATS);
        for rep in 0..=BATCHED_REPEATS {
            let start = Instant::now();
            let y = c.model.predict(&features_matrix(&instances))?;
            for (i, inst) in instances.iter().enumerate() {
                match recover_from_output(inst, y.row(i), c.variant) {
                    Ok(_) | Err(cran_core::Error::DegenerateBeamformer) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if rep > 0 {
                out.push(start.elapsed().as_secs_f64() / n as f64);
            }
        }
        Ok(out)
    };
    let time_solver = |f: &dyn Fn(&SystemInstance) -> Result<(), CliError>| -> Result<Vec<f64>, CliError> {
        let mut out = Vec::with_capacity(n);
        for (i, inst) in instances.iter().enumerate() {
            let start = Instant::now();
            f(inst)?;
            let elapsed = start.elapsed().as_secs_f64();
            if i > 0 || n == 1 {
                out.push(elapsed);
            }
        }
        Ok(out)
    };
    let rows: Vec<(&str, Vec<f64>)> = vec![
        ("proposed", time_learned(&proposed)?),
        ("dilearn", time_learned(&dilearn)?),
        ("proposed-batched", time_batched(&proposed)?),
        ("dilearn-batched", time_batched(&dilearn)?),
        (
            "mrt",
            time_solver(&|inst| {
                mrt_uniform(inst);
                Ok(())
            })?,
        ),
        (
            "local-search",
            time_solver(&|inst| {
                local_search(inst, &LocalSearchConfig::default())?;
                Ok(())
            })?,
        ),
    ];
    let mean = |t: &[f64]| t.iter().sum::<f64>() / t.len() as f64;
    let proposed_mean = mean(&rows[0].1);
    let mut csv = csv_metadata(
        "bench-time",
        seed,
        &[
            ("m", m.to_string()),
            ("k", k.to_string()),
            ("n", n.to_string()),
            ("threads", rayon::current_num_threads().to_string()),
            ("proposed_checkpoint", proposed_ck.as_ref().map_or(format!("untrained depth 5 width {width}"), |p| p.display().to_string())),
            ("dilearn_checkpoint", dilearn_ck.as_ref().map_or(format!("untrained depth 5 width {width}"), |p| p.display().to_string())),
            ("timing", "learned rows: single-sample eval-mode inference plus recovery, first sample discarded; batched rows: one pass over all samples divided by n, repeated".into()),
        ],
    );
    csv.push_str("method,mean_s,p95_s,n,ratio_to_proposed\n");
    for (name, mut t) in rows {
        let mu = mean(&t);
        t.sort_by(f64::total_cmp);
        let _ = writeln!(csv, "{name},{mu:e},{:e},{},{}", percentile(&t, 0.95), t.len(), mu / proposed_mean);
    }
    match layers.pick_opt(a.out, "out")? {
        Some(out) => {
            write_file(&out, &csv)?;
            print!("{}", csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn verify(layers: &Layers, a: VerifyArgs) -> Result<(), CliError> {
    let seed = layers.seed(a.seed)?;
    let fault: Option<Fault> = match layers.pick_opt(a.inject_fault, "inject-fault")? {
        Some(raw) => Some(raw.parse::<Fault>().map_err(|e| CliError::Usage(e.to_string()))?),
        None => None,
    };
    let quick = layers.pick(a.quick, "quick", 1)?.max(1);
    let base = VerifyConfig::new(seed);
    let shrink = |n: usize| (n / quick).max(1);
    let config = VerifyConfig {
        feasibility_cases: shrink(base.feasibility_cases),
        direction_cases: shrink(base.direction_cases),
        gradient_cases: shrink(base.gradient_cases),
        network_gradient_cases: shrink(base.network_gradient_cases),
        scalar_cases: shrink(base.scalar_cases),
        phase_cases: shrink(base.phase_cases),
        fault,
        seed,
    };
    let reports = run_all(&config);
    let mut first = None;
    for r in &reports {
        println!("{:<18} cases={:<6} failures={}", r.suite, r.cases, r.failures);
        if first.is_none() {
            first = r.first_failure.clone();
        }
    }
    match first {
        None => {
            println!("all suites passed (seed {seed})");
            Ok(())
        }
        Some(f) => {
            let json = serde_json::to_string(&f).map_err(|e| CliError::Failed(e.to_string()))?;
            println!("{json}");
            Err(CliError::Failed(format!("invariant {} failed in suite {} (seed {}, case {})", f.invariant, f.suite, f.seed, f.case)))
        }
    }
}
