use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use voxsg::dataset::{generate_dataset, split_sizes, Dataset, Split};
use voxsg::graph_io::{read_scene_graph, write_scene_graph};
use voxsg::instancing::extract_objects;
use voxsg::metrics::{
    aggregate_seeds, check_upper_bound, detection_metrics, format_csv, format_table, recall_suite, upper_bound_recall,
    MatchSpec, MeanStd, RecallReport, Task, UpperBound,
};
use voxsg::nifti::read_volume;
use voxsg::phantom::PhantomConfig;
use voxsg::pipeline::{evaluate_predcls, evaluate_sggen, load_predcls, load_sggen, predict_predcls, predict_sggen};
use voxsg::relnet::{checkpoint, train, RelationModel};
use voxsg::scene::{stats, SceneGraph};
use voxsg::volume::LabelMap;

use crate::config::{RunConfig, KEYS};
use crate::error::CliError;
use crate::server::{serve, AppState};
use crate::{
    Command, ConfigArgs, EvalDetArgs, EvalSggArgs, ExtractArgs, PredictArgs, ServeArgs, StatsArgs, SynthArgs,
    TrainArgs,
};

type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::EvalDet(a) => eval_det(a),
        Command::EvalSgg(a) => eval_sgg(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Config => {
            for (key, default, doc) in KEYS {
                let comment = if default.is_empty() { "# " } else { "" };
                println!("# {doc}\n{comment}{key} = {default}\n");
            }
            Ok(())
        }
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// The config file (or defaults), then `--set` pairs, then dedicated flags.
fn load_config(args: &ConfigArgs, overrides: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &args.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, found {pair:?}")))?;
        config.set(k.trim(), v.trim()).map_err(CliError::Usage)?;
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            config.set(k, v).map_err(|e| CliError::Usage(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing --{key} (or `{key}` in the config file)")))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse().map_err(|e: voxsg::Error| CliError::Usage(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent.display(), e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path.display(), e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn single_run(scalars: &BTreeMap<String, f64>) -> BTreeMap<String, MeanStd> {
    scalars.iter().map(|(k, &v)| (k.clone(), MeanStd { mean: v, std: 0.0 })).collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = match &a.phantom {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<PhantomConfig>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => PhantomConfig::default(),
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let manifest = generate_dataset(&a.out, &config, a.cases, a.seed)?;
    let (tr, va, te) = split_sizes(a.cases);
    println!(
        "wrote {} cases to {} (train {tr}, val {va}, test {te}); {:.2} relations per image",
        manifest.cases.len(),
        a.out.display(),
        manifest.stats.mean_relations_per_image()
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let config = load_config(
        &a.config,
        &[
            ("connectivity", a.connectivity.clone()),
            ("min_bleeding_volume_cm3", a.min_bleeding_volume.clone()),
        ],
    )?;
    let case_id = a.case_id.clone().unwrap_or_else(|| {
        let name = file_name(&a.labels);
        name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
    });
    let labels = read_volume(&a.labels)
        .and_then(|v| LabelMap::try_from(&v))
        .map_err(|e| e.in_case(&case_id))?;
    let graph = SceneGraph {
        case_id,
        shape: labels.shape(),
        spacing: labels.spacing(),
        objects: extract_objects(&labels, &config.instancing, None),
        relations: Vec::new(),
    };
    write_scene_graph(&graph, &a.out)?;
    println!("{} objects written to {}", graph.objects.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SeedRun {
    seed: u64,
    checkpoint: String,
    best_epoch: usize,
    epochs_run: usize,
    validation: BTreeMap<String, f64>,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut overrides = vec![
        ("dataset", path_value(&a.dataset)),
        ("out", path_value(&a.out)),
        ("arch", a.arch.clone()),
        ("epochs", a.epochs.clone()),
    ];
    if let Some(n) = a.seeds {
        if n == 0 {
            return Err(CliError::Usage("--seeds must be at least 1".into()));
        }
        overrides.push(("seeds", Some((0..n).map(|s| s.to_string()).collect::<Vec<_>>().join(","))));
    }
    if a.grounding {
        overrides.push(("grounding", Some("true".into())));
    }
    let config = load_config(&a.config, &overrides)?;
    let ds = Dataset::open(required(&config.dataset, "dataset")?)?;
    let out = required(&config.out, "out")?;
    create_dir(out)?;

    let train_cases = load_predcls(&ds, Split::Train, &config.model)?;
    let val_cases = load_predcls(&ds, Split::Val, &config.model)?;
    let trained = config
        .seeds
        .par_iter()
        .map(|&seed| train(&train_cases, &val_cases, config.model, &config.train, seed).map(|(m, l)| (seed, m, l)))
        .collect::<voxsg::Result<Vec<_>>>()?;

    let tag = format!("{}{}", config.model.arch.name(), if config.model.grounding { "-seg" } else { "" });
    let spec = MatchSpec {
        task: Task::PredCls,
        ..config.matching
    };
    let mut runs = Vec::new();
    for (seed, model, log) in &trained {
        let name = format!("{tag}-seed{seed}.json");
        checkpoint::save(model, out.join(&name))?;
        let report = evaluate_predcls(model, &val_cases, &spec, config.rank_mode)?;
        runs.push(SeedRun {
            seed: *seed,
            checkpoint: name,
            best_epoch: log.best_epoch,
            epochs_run: log.epochs.len(),
            validation: report.scalars(),
        });
    }
    let aggregate = aggregate_seeds(&runs.iter().map(|r| r.validation.clone()).collect::<Vec<_>>())?;
    write_json(
        &out.join(format!("{tag}-train.json")),
        &json!({
            "model": config.model,
            "train": config.train,
            "runs": runs,
            "validation": aggregate,
        }),
    )?;
    write_text(&out.join(format!("{tag}.conf")), &config.to_text())?;

    let k = spec.k;
    let columns = vec![format!("R@{k}"), format!("mR@{k}"), format!("mAP@{k}")];
    println!("validation, predicate classification, {} seeds", runs.len());
    print!("{}", format_table(&columns, &[(tag, aggregate)]));
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let config = load_config(
        &a.config,
        &[
            ("dataset", path_value(&a.dataset)),
            ("out", path_value(&a.out)),
            ("task", a.task.clone()),
        ],
    )?;
    let split = parse_split(&a.split)?;
    let ds = Dataset::open(required(&config.dataset, "dataset")?)?;
    let out = required(&config.out, "out")?;
    let model = checkpoint::load(&a.checkpoint)?;
    let graphs = match config.matching.task {
        Task::PredCls => predict_predcls(&model, &load_predcls(&ds, split, &model.config)?, config.rank_mode)?,
        Task::SgGen => predict_sggen(
            &model,
            &load_sggen(&ds, split, &config.instancing, &model.config)?,
            config.rank_mode,
        )?,
    };
    create_dir(out)?;
    for g in &graphs {
        write_scene_graph(g, out.join(format!("{}.json", g.case_id)))?;
    }
    println!("{} predicted graphs written to {}", graphs.len(), out.display());
    Ok(())
}

fn load_predictions(dir: &Path, names: &[String]) -> Result<Vec<SceneGraph>> {
    names
        .par_iter()
        .map(|name| read_scene_graph(dir.join(format!("{name}.json"))).map_err(|e| e.in_case(name)))
        .collect::<voxsg::Result<Vec<_>>>()
        .map_err(Into::into)
}

/// Scene graph files of a directory, keyed by file stem, in name order.
fn read_graph_dir(dir: &Path) -> Result<Vec<(String, SceneGraph)>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir.display(), e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(str::to_string))
        .collect();
    names.sort();
    let graphs = load_predictions(dir, &names)?;
    Ok(names.into_iter().zip(graphs).collect())
}

fn dataset_graphs(ds: &Dataset, split: Option<Split>) -> Result<Vec<(String, SceneGraph)>> {
    ds.ids(split)
        .into_par_iter()
        .map(|id| ds.graph(&id).map(|g| (id, g)))
        .collect::<voxsg::Result<Vec<_>>>()
        .map_err(Into::into)
}

fn eval_det(a: EvalDetArgs) -> Result<()> {
    let config = load_config(
        &a.config,
        &[("dataset", path_value(&a.dataset)), ("iou_threshold", a.iou.clone())],
    )?;
    let split = parse_split(&a.split)?;
    let ds = Dataset::open(required(&config.dataset, "dataset")?)?;
    let gts = dataset_graphs(&ds, Some(split))?;
    let names: Vec<String> = gts.iter().map(|(n, _)| n.clone()).collect();
    let preds = match &a.predictions {
        Some(dir) => load_predictions(dir, &names)?,
        None => gts
            .par_iter()
            .map(|(id, gt)| {
                let labels = ds.degraded_labels(id)?;
                Ok(SceneGraph {
                    objects: extract_objects(&labels, &config.instancing, None),
                    relations: Vec::new(),
                    ..gt.clone()
                })
            })
            .collect::<voxsg::Result<Vec<_>>>()?,
    };
    let pairs: Vec<_> = preds.iter().zip(gts.iter().map(|(_, g)| g)).collect();
    let report = detection_metrics(&pairs, config.matching.iou_threshold);
    let scalars = report.scalars();
    let columns: Vec<String> = scalars.keys().cloned().collect();
    print!("{}", format_table(&columns, &[("detections".into(), single_run(&scalars))]));
    if let Some(path) = &a.json {
        write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRun {
    source: String,
    report: RecallReport,
    upper_bound: UpperBound,
}

fn eval_sgg(a: EvalSggArgs) -> Result<()> {
    let config = load_config(
        &a.config,
        &[
            ("dataset", path_value(&a.dataset)),
            ("task", a.task.clone()),
            ("k", a.k.clone()),
            ("iou_threshold", a.iou.clone()),
        ],
    )?;
    let spec = config.matching;
    if a.predictions.is_empty() && a.checkpoint.is_empty() {
        return Err(CliError::Usage("give at least one --predictions or --checkpoint".into()));
    }
    let split = parse_split(&a.split)?;
    let dataset = match (&a.gt, &config.dataset) {
        (Some(_), _) => None,
        (None, Some(root)) => Some(Dataset::open(root)?),
        (None, None) => return Err(CliError::Usage("missing --dataset or --gt".into())),
    };
    let gts = match (&a.gt, &dataset) {
        (Some(dir), _) => read_graph_dir(dir)?,
        (None, Some(ds)) => dataset_graphs(ds, Some(split))?,
        (None, None) => unreachable!(),
    };
    let names: Vec<String> = gts.iter().map(|(n, _)| n.clone()).collect();
    let gt_graphs: Vec<&SceneGraph> = gts.iter().map(|(_, g)| g).collect();

    let mut runs = Vec::new();
    for dir in &a.predictions {
        let preds = load_predictions(dir, &names)?;
        let pairs: Vec<_> = preds.iter().zip(gt_graphs.iter().copied()).collect();
        let report = recall_suite(&pairs, &spec);
        let upper_bound = upper_bound_recall(&pairs, &spec);
        if spec.task == Task::SgGen {
            check_upper_bound(&report, &upper_bound)?;
        }
        runs.push(EvalRun {
            source: file_name(dir),
            report,
            upper_bound,
        });
    }
    if !a.checkpoint.is_empty() {
        let ds = dataset
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint needs --dataset".into()))?;
        for path in &a.checkpoint {
            let model: RelationModel = checkpoint::load(path)?;
            let (report, upper_bound) = match spec.task {
                Task::PredCls => {
                    let cases = load_predcls(ds, split, &model.config)?;
                    let report = evaluate_predcls(&model, &cases, &spec, config.rank_mode)?;
                    let pairs: Vec<_> = cases.iter().map(|c| (&c.graph, &c.graph)).collect();
                    (report, upper_bound_recall(&pairs, &spec))
                }
                Task::SgGen => {
                    let cases = load_sggen(ds, split, &config.instancing, &model.config)?;
                    evaluate_sggen(&model, &cases, &spec, config.rank_mode)?
                }
            };
            runs.push(EvalRun {
                source: file_name(path),
                report,
                upper_bound,
            });
        }
    }

    let k = spec.k;
    let ub_key = format!("UB R@{k}");
    let scalars: Vec<BTreeMap<String, f64>> = runs
        .iter()
        .map(|r| {
            let mut s = r.report.scalars();
            s.insert(ub_key.clone(), r.upper_bound.recall);
            s
        })
        .collect();
    let aggregate = aggregate_seeds(&scalars)?;
    let rows = vec![(a.name.clone(), aggregate.clone())];
    let columns = vec![format!("R@{k}"), format!("mR@{k}"), format!("mAP@{k}"), ub_key];
    println!(
        "{}, K = {k}, IoU {}, {} run(s), {} cases",
        spec.task.name(),
        spec.iou_threshold,
        runs.len(),
        gts.len()
    );
    print!("{}", format_table(&columns, &rows));
    if let Some(path) = &a.json {
        write_json(
            path,
            &json!({
                "task": spec.task,
                "k": k,
                "iou_threshold": spec.iou_threshold,
                "runs": runs,
                "aggregate": aggregate,
            }),
        )?;
    }
    if let Some(path) = &a.csv {
        let all: Vec<String> = aggregate.keys().cloned().collect();
        write_text(path, &format_csv(&all, &rows))?;
    }
    Ok(())
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    let graphs: Vec<SceneGraph> = match (&a.dataset, &a.gt) {
        (Some(root), _) => dataset_graphs(&Dataset::open(root)?, None)?,
        (None, Some(dir)) => read_graph_dir(dir)?,
        (None, None) => return Err(CliError::Usage("missing --dataset or --gt".into())),
    }
    .into_iter()
    .map(|(_, g)| g)
    .collect();
    let s = stats(&graphs);
    let value = json!({
        "mean_relations_per_image": s.mean_relations_per_image(),
        "stats": s,
    });
    println!("{}", serde_json::to_string_pretty(&value).expect("stats serialize"));
    if let Some(path) = &a.json {
        write_json(path, &value)?;
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let state = AppState::open(&a.dataset)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(serve(state, SocketAddr::new(a.host, a.port)))
}
