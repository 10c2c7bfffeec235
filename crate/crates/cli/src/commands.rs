use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use stgatt::model::checkpoint;
use stgatt::model::selfcheck::GRADCHECK_TOLERANCE;
use stgatt::model::{
    evaluate, evaluate_horizons, ha_baseline, prepare, split_steps, toy_gradient_checks, train,
    ForecastModel, MetricsReport, NormStats, PreparedData, Signal, TRACE_HEADER,
};
use stgatt::partition::{build_schemes, partition_report, select_base_nodes, PartitionScheme};
use stgatt::embedding::compute_spe;
use stgatt::stgraph::{SpatialGraph, UnifiedGraph};
use stgatt::{Error, Result};

use crate::config::RunConfig;
use crate::dataset::load_signal;
use crate::{Cli, Command, GlobalArgs};

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn text<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

/// Config file first, then the flags, then derived settings.
pub fn resolve(global: &GlobalArgs) -> Result<RunConfig> {
    let mut run = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut set = |key: &str, value: Option<String>| -> Result<()> {
        match value {
            Some(v) => run.set(key, &v),
            None => Ok(()),
        }
    };
    set("seed", text(global.seed))?;
    set("out_dir", global.out_dir.as_ref().map(|p| p.display().to_string()))?;
    set("graph", global.graph.as_ref().map(|p| p.display().to_string()))?;
    if !global.signal.is_empty() {
        let joined = global.signal.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        set("signal", Some(joined))?;
    }
    set("interval_min", text(global.interval_min))?;
    set("split", global.split.clone())?;
    set("horizon", text(global.horizon))?;
    set("out_horizon", text(global.out_horizon))?;
    set("channels", text(global.channels))?;
    set("d_model", text(global.d_model))?;
    set("spe_rank", text(global.spe_rank))?;
    set("steps_per_day", text(global.steps_per_day))?;
    set("blocks", text(global.blocks))?;
    set("heads", text(global.heads))?;
    set("subsets", text(global.subsets))?;
    set("learning_rate", global.learning_rate.map(|v| format!("{v:?}")))?;
    set("batch_size", text(global.batch_size))?;
    set("epochs", text(global.epochs))?;
    set("clip_norm", global.clip_norm.clone())?;
    if global.directed {
        set("symmetrize", Some("false".into()))?;
    }
    for pair in &global.overrides {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        run.set(k.trim(), v)?;
    }
    run.finish()?;
    Ok(run)
}

fn load_graph(run: &mut RunConfig) -> Result<SpatialGraph> {
    let path = run
        .graph
        .clone()
        .ok_or_else(|| Error::Input("no graph file given (--graph)".into()))?;
    let graph = SpatialGraph::load(&path, run.symmetrize)?;
    let n = graph.n_nodes();
    if run.is_explicit("n_nodes") && run.model.n_nodes != n {
        return Err(Error::Input(format!("config n_nodes {} but graph has {n} nodes", run.model.n_nodes)));
    }
    run.model.n_nodes = n;
    Ok(graph)
}

fn out_dir(run: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&run.out_dir).map_err(|e| io_error(&run.out_dir, e))?;
    Ok(run.out_dir.clone())
}

fn write_effective(run: &RunConfig) -> Result<()> {
    let dir = out_dir(run)?;
    write_file(&dir.join("effective.conf"), run.to_string())
}

fn load_data(run: &RunConfig, n_nodes: usize, horizon: usize, out_horizon: usize) -> Result<(Signal, PreparedData)> {
    let (signal, _) = load_signal(&run.signal, run.interval_min, Some(n_nodes))?;
    if signal.channels() != run.model.channels {
        return Err(Error::Input(format!(
            "config has {} channels but {} signal files were given",
            run.model.channels,
            signal.channels()
        )));
    }
    let data = prepare(&signal, run.split, run.model.steps_per_day, horizon, out_horizon)?;
    info!(
        "windows: train {}  val {}  test {}",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    Ok((signal, data))
}

fn checkpoint_path(run: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| run.out_dir.join("model.ckpt"))
}

fn load_model(run: &mut RunConfig, given: &Option<PathBuf>) -> Result<(SpatialGraph, ForecastModel)> {
    let graph = load_graph(run)?;
    let path = checkpoint_path(run, given);
    if !path.exists() {
        return Err(Error::Input(format!("checkpoint {} not found", path.display())));
    }
    let model = checkpoint::load(&path, &graph)?;
    run.model.channels = model.config.channels;
    Ok((graph, model))
}

/// Aligned text table plus the same numbers as `key = value` lines.
fn metrics_table(rows: &[(String, MetricsReport)]) -> (String, String) {
    let mut table = format!("{:<10} {:>12} {:>12} {:>12} {:>10}\n", "", "MAE", "MAPE(%)", "RMSE", "points");
    let mut kv = String::new();
    for (label, r) in rows {
        let _ = writeln!(table, "{label:<10} {:>12.4} {:>12.4} {:>12.4} {:>10}", r.mae, r.mape, r.rmse, r.evaluated);
        let _ = writeln!(kv, "{label}.mae = {:?}", r.mae);
        let _ = writeln!(kv, "{label}.mape = {:?}", r.mape);
        let _ = writeln!(kv, "{label}.rmse = {:?}", r.rmse);
        let _ = writeln!(kv, "{label}.evaluated = {}", r.evaluated);
        let _ = writeln!(kv, "{label}.excluded_zero = {}", r.excluded_zero);
    }
    (table, kv)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut run = resolve(&cli.global)?;
    match cli.command {
        Command::BuildGraph { export } => build_graph(&mut run, export),
        Command::Partition => partition(&mut run),
        Command::Train { resume, partition_dir } => train_cmd(&mut run, resume, partition_dir),
        Command::Evaluate { checkpoint } => evaluate_cmd(&mut run, &checkpoint, &cli.global.horizon_steps),
        Command::Predict { checkpoint, start, output } => predict(&mut run, &checkpoint, start, output),
        Command::ExportAttention {
            checkpoint,
            window,
            query_node,
            query_time,
            block,
            module,
            head,
            output,
        } => export_attention(&mut run, &checkpoint, window, (query_node, query_time), (block, module, head), output),
        Command::BaselineHa => baseline_ha(&mut run),
        Command::Gradcheck { coords } => gradcheck(&run, coords),
    }
}

fn build_graph(run: &mut RunConfig, export: Option<PathBuf>) -> Result<()> {
    let graph = load_graph(run)?;
    let t = run.model.horizon;
    let ug = UnifiedGraph::build(&graph, t)?;
    let n = graph.n_nodes();
    println!("nodes (N)               {n}");
    println!("edges (E)               {}", graph.edge_count());
    println!("steps (T)               {t}");
    println!("elements (NT)           {}", ug.n_elements());
    println!("temporal edges          {}", n * (t - 1));
    println!("spatial entries         {}", ug.spatial_entries());
    println!("temporal entries        {}", ug.temporal_entries());
    println!("unified nonzeros        {}", ug.nnz());
    if let Some(path) = export {
        write_file(&path, ug.to_edge_list())?;
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn partition(run: &mut RunConfig) -> Result<()> {
    let graph = load_graph(run)?;
    run.model.validate()?;
    let ug = UnifiedGraph::build(&graph, run.model.horizon)?;
    let spe = compute_spe(&graph, run.model.spe_rank)?;
    let bases = select_base_nodes(&spe.rows(), run.model.n_subsets, run.model.seed)?;
    let (p1, p2) = build_schemes(&ug, &bases)?;
    let report = partition_report(&p1, &p2)?;
    let dir = out_dir(run)?;
    write_file(&dir.join("p1.txt"), p1.to_text(&ug))?;
    write_file(&dir.join("p2.txt"), p2.to_text(&ug))?;
    write_file(&dir.join("partition_report.txt"), report.to_string())?;
    write_effective(run)?;
    print!("{report}");
    Ok(())
}

fn read_scheme(ug: &UnifiedGraph, path: &Path) -> Result<PartitionScheme> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    PartitionScheme::from_text(ug, &text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn train_cmd(run: &mut RunConfig, resume: Option<PathBuf>, partition_dir: Option<PathBuf>) -> Result<()> {
    let graph = load_graph(run)?;
    let mut model = match &resume {
        Some(path) => {
            let mut model = checkpoint::load(path, &graph)?;
            let c = &mut model.config;
            c.learning_rate = run.model.learning_rate;
            c.batch_size = run.model.batch_size;
            c.epochs = run.model.epochs;
            c.clip_norm = run.model.clip_norm;
            run.model = c.clone();
            model
        }
        None => match &partition_dir {
            Some(dir) => {
                run.model.validate()?;
                let ug = UnifiedGraph::build(&graph, run.model.horizon)?;
                let p1 = read_scheme(&ug, &dir.join("p1.txt"))?;
                let p2 = read_scheme(&ug, &dir.join("p2.txt"))?;
                if p1.n_subsets() != run.model.n_subsets {
                    return Err(Error::Input(format!(
                        "partition files have {} subsets, config asks for {}",
                        p1.n_subsets(),
                        run.model.n_subsets
                    )));
                }
                ForecastModel::with_schemes(run.model.clone(), &graph, p1, p2)?
            }
            None => ForecastModel::new(run.model.clone(), &graph)?,
        },
    };
    let (_, data) = load_data(run, model.config.n_nodes, model.config.horizon, model.config.out_horizon)?;
    let dir = out_dir(run)?;
    write_effective(run)?;

    let trace_path = dir.join("trace.csv");
    let mut trace = if resume.is_some() && trace_path.exists() {
        fs::read_to_string(&trace_path).map_err(|e| io_error(&trace_path, e))?
    } else {
        format!("{TRACE_HEADER}\n")
    };

    let best = if model.config.epochs == 0 {
        model.norm.get_or_insert_with(|| data.stats.clone());
        model.clone()
    } else {
        let report = train(&mut model, &data)?;
        for r in &report.trace {
            trace.push_str(&r.csv_row());
            trace.push('\n');
        }
        if let Some(e) = report.best_epoch {
            println!("best epoch {e}");
        }
        report.best_model(&model)
    };
    write_file(&trace_path, &trace)?;
    checkpoint::save(&best, dir.join("model.ckpt"))?;
    checkpoint::save(&model, dir.join("last.ckpt"))?;

    if !data.test.is_empty() {
        let stats = best.norm.clone().unwrap_or_else(|| data.stats.clone());
        let test = evaluate(&best, &data.test, &stats)?;
        let (table, kv) = metrics_table(&[("test".into(), test)]);
        print!("{table}");
        write_file(&dir.join("metrics.txt"), kv)?;
    }
    Ok(())
}

fn model_stats(model: &ForecastModel, data: &PreparedData) -> NormStats {
    model.norm.clone().unwrap_or_else(|| data.stats.clone())
}

fn evaluate_cmd(run: &mut RunConfig, ckpt: &Option<PathBuf>, horizons: &[usize]) -> Result<()> {
    let (_, model) = load_model(run, ckpt)?;
    let c = &model.config;
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > c.out_horizon) {
        return Err(Error::Contract(format!("horizon {h} outside 1..={} (model T')", c.out_horizon)));
    }
    let (_, data) = load_data(run, c.n_nodes, c.horizon, c.out_horizon)?;
    let stats = model_stats(&model, &data);
    let reports = evaluate_horizons(&model, &data.test, &stats, horizons)?;
    let rows: Vec<(String, MetricsReport)> = horizons
        .iter()
        .zip(reports)
        .map(|(&h, r)| (format!("{}min", h * run.interval_min), r))
        .collect();
    let (table, kv) = metrics_table(&rows);
    print!("{table}");
    write_file(&out_dir(run)?.join("evaluate.txt"), kv)?;
    Ok(())
}

fn predict(run: &mut RunConfig, ckpt: &Option<PathBuf>, start: Option<usize>, output: Option<PathBuf>) -> Result<()> {
    let (_, model) = load_model(run, ckpt)?;
    let c = model.config.clone();
    let (signal, times) = load_signal(&run.signal, run.interval_min, Some(c.n_nodes))?;
    let s = signal.n_steps();
    if s < c.horizon {
        return Err(Error::Input(format!("signal has {s} steps, a window needs {}", c.horizon)));
    }
    let start = start.unwrap_or(s - c.horizon);
    if start + c.horizon > s {
        return Err(Error::Contract(format!("window starting at {start} runs past the {s}-step signal")));
    }
    let stats = match &model.norm {
        Some(stats) => stats.clone(),
        None => {
            let splits = split_steps(s, run.split, c.steps_per_day)?;
            NormStats::fit(&signal.steps(splits.train)?)?
        }
    };
    let input = stats.apply(&signal.steps(start..start + c.horizon)?)?.permute(&[1, 0, 2])?;
    let window = stgatt::embedding::SignalWindow::new(input, signal.calendar[start..start + c.horizon].to_vec())?;
    let pred = model.predict(&[&window], &stats)?;
    let last = times[start + c.horizon - 1];
    let step = chrono::Duration::minutes(run.interval_min as i64);
    let mut csv = String::from("timestamp,node,channel,value\n");
    for k in 0..c.out_horizon {
        let when = last + step * (k as i32 + 1);
        for node in 0..c.n_nodes {
            for ch in 0..c.channels {
                let v = pred.at(&[0, node, k, ch]);
                let _ = writeln!(csv, "{},{node},{ch},{v:?}", when.format("%Y-%m-%dT%H:%M:%S"));
            }
        }
    }
    let path = output.unwrap_or(out_dir(run)?.join("predictions.csv"));
    write_file(&path, csv)?;
    println!("wrote {} forecast steps to {}", c.out_horizon, path.display());
    Ok(())
}

fn export_attention(
    run: &mut RunConfig,
    ckpt: &Option<PathBuf>,
    window: usize,
    (node, time): (usize, Option<usize>),
    (block, module, head): (usize, usize, Option<usize>),
    output: Option<PathBuf>,
) -> Result<()> {
    let (_, model) = load_model(run, ckpt)?;
    let c = model.config.clone();
    let time = time.unwrap_or(c.horizon - 1);
    if node >= c.n_nodes || time >= c.horizon {
        return Err(Error::Contract(format!(
            "query (node {node}, time {time}) outside N={} T={}",
            c.n_nodes, c.horizon
        )));
    }
    let (_, data) = load_data(run, c.n_nodes, c.horizon, c.out_horizon)?;
    let sample = data.test.get(window).ok_or_else(|| {
        Error::Contract(format!("window {window} out of range ({} test windows)", data.test.len()))
    })?;
    let query = time * c.n_nodes + node;
    let row = model.attention_row(&sample.input, block, module, query, head)?;
    let mut csv = String::from("node,time,alpha\n");
    for (element, alpha) in row {
        let _ = writeln!(csv, "{},{},{alpha:?}", element % c.n_nodes, element / c.n_nodes);
    }
    let path = output.unwrap_or(out_dir(run)?.join("attention.csv"));
    write_file(&path, csv)?;
    println!("wrote attention of (node {node}, time {time}) to {}", path.display());
    Ok(())
}

fn baseline_ha(run: &mut RunConfig) -> Result<()> {
    let n = match run.graph {
        Some(_) => Some(load_graph(run)?.n_nodes()),
        None => None,
    };
    let (signal, _) = load_signal(&run.signal, run.interval_min, n)?;
    let splits = split_steps(signal.n_steps(), run.split, run.model.steps_per_day)?;
    let period = 7 * run.model.steps_per_day;
    if splits.test.is_empty() {
        return Err(Error::Input("test split is empty".into()));
    }
    if splits.test.start < period {
        return Err(Error::Input(format!(
            "insufficient history: the test split starts at step {}, one week is {period} steps",
            splits.test.start
        )));
    }
    let targets: Vec<usize> = splits.test.clone().collect();
    let pred = ha_baseline(&signal, &targets, period)?;
    let truth = signal.steps(splits.test.clone())?;
    let report = MetricsReport::compute(pred.data(), truth.data())?;
    let (table, kv) = metrics_table(&[("HA".into(), report)]);
    print!("{table}");
    write_file(&out_dir(run)?.join("ha_metrics.txt"), kv)?;
    Ok(())
}

fn gradcheck(run: &RunConfig, coords: usize) -> Result<()> {
    let reports = toy_gradient_checks(run.model.seed, coords)?;
    println!("{:<8} {:>8} {:>14}  result", "check", "coords", "max rel err");
    let mut failed = Vec::new();
    for (name, r) in &reports {
        let ok = r.max_rel_error < GRADCHECK_TOLERANCE;
        println!(
            "{name:<8} {:>8} {:>14.3e}  {}",
            r.coords_checked,
            r.max_rel_error,
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed for {}", failed.join(", "))))
    }
}
