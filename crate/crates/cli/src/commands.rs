//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pagelens::eval::{
    self, cost_report, format_run, format_run_jsonl, format_table, typical_variants, EvalOptions,
    EvalReport, QrelSet, Scope, SyntheticCorpus,
};
use pagelens::leb::{read_embedding_file, write_embedding_file};
use pagelens::pipeline::{index_bundle, queries_from_bundle};
use pagelens::preprocess::{crop_empty_regions, RasterImage};
use pagelens::retrieval::{measure_qps, search};
use pagelens::{Collection, Dtype, GridLayout, LayoutFamily, PoolingStrategy, QueryEmbedding, SearchConfig, VectorName};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::{BenchArgs, Cli, Command, CostArgs, CropArgs, EvalArgs, GenArgs, IndexArgs, ProfileArgs, ScopeArg, SearchArgs, SearchFlags};

/// A problem with how the tool was invoked rather than with its inputs.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// 1 for usage and configuration problems, 2 for bad or unreadable data,
/// 3 for anything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<serde_json::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<pagelens::Error>() {
            return match e {
                pagelens::Error::Config(_) | pagelens::Error::UnknownVector(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<io::Error>() {
            return 2;
        }
    }
    3
}

/// A closed downstream pipe (`| head`) is not a failure.
pub fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let kind = c
            .downcast_ref::<io::Error>()
            .map(io::Error::kind)
            .or_else(|| c.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind()));
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        set_threads(n)?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    match cli.command {
        Command::Gen(a) => cmd_gen(cfg, a),
        Command::Crop(a) => cmd_crop(cfg, a),
        Command::Index(a) => cmd_index(cfg, a),
        Command::Search(a) => cmd_search(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Cost(a) => cmd_cost(cfg, a),
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

#[cfg(not(feature = "parallel"))]
fn set_threads(_n: usize) -> Result<()> {
    Ok(())
}

fn apply_profile(cfg: &mut PipelineConfig, a: &ProfileArgs) {
    if let Some(p) = &a.profile {
        cfg.profile = p.clone();
    }
    if a.dim.is_some() {
        cfg.dim = a.dim;
    }
}

fn apply_search(cfg: &mut SearchConfig, a: &SearchFlags) -> Result<()> {
    if let Some(s) = a.stages {
        cfg.stages = s;
    }
    if let Some(v) = &a.stage1_vector {
        cfg.stage1_vector = v.parse::<VectorName>()?;
    }
    if let Some(k) = a.prefetch_k {
        cfg.prefetch_k = k;
    }
    if let Some(k) = a.global_prefetch_k {
        cfg.global_prefetch_k = k;
    }
    if let Some(k) = a.top_k {
        cfg.top_k = k;
    }
    cfg.validate()?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("--grid expects RxC, got `{s}`")))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad grid size `{s}`")));
    Ok((parse(r)?, parse(c)?))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_gen(mut cfg: PipelineConfig, a: GenArgs) -> Result<()> {
    apply_profile(&mut cfg, &a.profile);
    let profile = cfg.model_profile()?;
    let mut spec = cfg.synthetic.clone();
    spec.d = profile.d;
    spec.prefix_nonvisual = profile.prefix_nonvisual;
    spec.suffix_nonvisual = profile.suffix_nonvisual;
    let grid = a.grid.as_deref().map(parse_grid).transpose()?;
    spec.layout = match profile.layout_family {
        LayoutFamily::FixedGrid => {
            let (h, w) = grid.unwrap_or((32, 32));
            GridLayout::FixedGrid { height: h, width: w }
        }
        LayoutFamily::TileGrid => {
            let (r, c) = grid.unwrap_or((4, 3));
            spec.emit_mask = true;
            GridLayout::TileGrid {
                n_rows: r,
                n_cols: c,
                patches_per_tile: a.patches_per_tile.unwrap_or(64),
                has_global_tile: true,
            }
        }
        LayoutFamily::MergedGrid => {
            let (h, w) = grid.unwrap_or((28, 26));
            spec.emit_mask = true;
            spec.max_padding = spec.max_padding.max(16);
            GridLayout::MergedGrid { h_eff: h, w_eff: w }
        }
    };
    macro_rules! set {
        ($field:ident, $v:expr) => {
            if let Some(v) = $v {
                spec.$field = v;
            }
        };
    }
    set!(n_datasets, a.datasets);
    set!(n_pages, a.pages);
    set!(n_queries, a.queries);
    set!(n_topics, a.topics);
    set!(noise, a.noise);
    set!(query_tokens, a.query_tokens);
    spec.seed = a.seed.unwrap_or(cfg.seed);
    if a.f16 {
        spec.dtype = Dtype::F16;
    }
    let corpus = SyntheticCorpus::new(spec.clone())?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut files = Vec::new();
    for ds in 0..spec.n_datasets {
        let pages: Vec<_> = (0..spec.n_pages).map(|i| corpus.page(ds, i)).collect();
        let path = a.out_dir.join(format!("{}.leb", corpus.dataset_id(ds)));
        write_embedding_file(&path, spec.d, &pages)?;
        files.push(path);
    }
    let qpath = a.out_dir.join("queries.leb");
    write_embedding_file(&qpath, spec.d, &corpus.query_bundle())?;
    let rpath = a.out_dir.join("qrels.tsv");
    fs::write(&rpath, corpus.qrels().to_trec())?;
    files.push(qpath);
    files.push(rpath);
    #[derive(Serialize)]
    struct GenSummary<'a> {
        profile: &'a str,
        seed: u64,
        spec: &'a pagelens::eval::SyntheticSpec,
        files: Vec<String>,
    }
    print_json(&GenSummary {
        profile: &profile.name,
        seed: spec.seed,
        spec: &spec,
        files: files.iter().map(|p| p.display().to_string()).collect(),
    })
}

fn cmd_crop(cfg: PipelineConfig, a: CropArgs) -> Result<()> {
    let mut c = cfg.crop;
    if let Some(v) = a.row_thresh {
        c.row_std_thresh = v;
    }
    if let Some(v) = a.col_thresh {
        c.col_std_thresh = v;
    }
    if a.strip {
        c.strip_enabled = true;
    }
    if a.no_strip {
        c.strip_enabled = false;
    }
    if let Some(v) = a.strip_frac {
        c.page_number_strip_fraction = v;
    }
    if let Some(v) = a.min_keep {
        c.min_keep_fraction = v;
    }
    c.validate()?;
    let img = RasterImage::read_pgm(&a.input)?;
    let (rect, out) = crop_empty_regions(&img, &c);
    out.write_pgm(&a.out)?;
    print_json(&rect)
}

fn collection_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "index".into())
}

fn cmd_index(mut cfg: PipelineConfig, a: IndexArgs) -> Result<()> {
    apply_profile(&mut cfg, &a.profile);
    let p = &a.pooling;
    if let Some(s) = &p.smoothing {
        cfg.pooling.smoothing = Some(s.parse::<PoolingStrategy>()?);
    }
    if let Some(w) = p.window {
        cfg.pooling.window = w;
    }
    if p.sigma.is_some() {
        cfg.pooling.sigma = p.sigma;
    }
    if p.max_rows.is_some() {
        cfg.pooling.max_rows = p.max_rows;
    }
    if p.no_renormalize {
        cfg.pooling.renormalize = false;
    }
    let profile = cfg.model_profile()?;
    if p.no_smoothing {
        cfg.pooling.smoothing = None;
    } else if cfg.pooling.smoothing.is_none() && profile.layout_family != LayoutFamily::TileGrid {
        cfg.pooling.smoothing = profile.default_smoothing;
    }
    cfg.validate()?;

    let bundle = read_embedding_file(&a.input)?;
    if bundle.pages.is_empty() {
        bail!(pagelens::Error::format("embedding file holds no pages", 0));
    }
    if bundle.d != profile.d {
        bail!(pagelens::Error::DimMismatch {
            expected: profile.d,
            got: bundle.d
        });
    }
    let build = index_bundle(&collection_name(&a.out), &profile, &cfg.pooling, &bundle)?;
    let failed = build.summary.failures.len();
    if build.collection.is_empty() {
        print_json(&build.summary)?;
        bail!(pagelens::Error::format("no page survived indexing", 0));
    }
    build.collection.save_index(&a.out)?;
    print_json(&build.summary)?;
    if failed > 0 {
        bail!(pagelens::Error::Hygiene {
            page_id: build.summary.failures[0].page_id.clone(),
            reason: format!("{failed} page(s) failed; see summary"),
        });
    }
    Ok(())
}

/// Loads one or more indexes; several are merged into a union collection.
fn load_collections(paths: &[PathBuf]) -> Result<Vec<Collection>> {
    paths
        .iter()
        .map(|p| Collection::load_index(p).with_context(|| format!("loading index {}", p.display())))
        .collect()
}

fn union(cols: Vec<Collection>) -> Result<Collection> {
    if cols.len() == 1 {
        return Ok(cols.into_iter().next().expect("one collection"));
    }
    let refs: Vec<&Collection> = cols.iter().collect();
    Ok(Collection::merge("union", &refs)?)
}

fn load_queries(path: &Path) -> Result<Vec<QueryEmbedding>> {
    let bundle = read_embedding_file(path).with_context(|| format!("loading queries {}", path.display()))?;
    if bundle.pages.is_empty() {
        bail!(pagelens::Error::format("query file holds no queries", 0));
    }
    Ok(queries_from_bundle(&bundle)?)
}

fn load_qrels(path: &Path) -> Result<QrelSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(QrelSet::parse(&text)?)
}

fn cmd_search(mut cfg: PipelineConfig, a: SearchArgs) -> Result<()> {
    apply_search(&mut cfg.search, &a.search)?;
    let col = union(load_collections(&a.indexes)?)?;
    let queries = load_queries(&a.queries)?;
    let mut out = io::stdout().lock();
    for q in &queries {
        let outcome = search(&col, q, &cfg.search)?;
        if a.verbose {
            for (i, s) in outcome.stages.iter().enumerate() {
                let ids: Vec<&str> = s
                    .kept
                    .iter()
                    .map(|&r| col.records()[r].page_id.as_str())
                    .collect();
                eprintln!(
                    "{} stage {} [{}] scanned {} kept {}: {}",
                    q.query_id,
                    i + 1,
                    s.vector,
                    s.scanned,
                    s.kept.len(),
                    ids.join(" ")
                );
            }
        }
        if a.jsonl {
            writeln!(out, "{}", format_run_jsonl(&q.query_id, &outcome))?;
        } else {
            out.write_all(format_run(&q.query_id, &outcome.list, &a.run_tag).as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BenchRow {
    label: String,
    search: SearchConfig,
}

fn default_bench_rows(base: &SearchConfig) -> Vec<BenchRow> {
    let mk = |label: &str, stages: u8| BenchRow {
        label: label.into(),
        search: SearchConfig {
            stages,
            ..base.clone()
        },
    };
    vec![mk("1-stage", 1), mk("2-stage", 2), mk("3-stage", 3)]
}

#[derive(Serialize)]
struct BenchLine {
    label: String,
    search: SearchConfig,
    qps: f64,
    speedup: f64,
    stage_ms: Vec<(String, f64)>,
    metrics: Option<std::collections::BTreeMap<String, f64>>,
}

fn cmd_bench(cfg: PipelineConfig, a: BenchArgs) -> Result<()> {
    let rows = match &a.configs {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rows: Vec<BenchRow> = serde_json::from_str(&text)?;
            if rows.is_empty() {
                return Err(usage("bench config list is empty"));
            }
            rows
        }
        None => default_bench_rows(&cfg.search),
    };
    for r in &rows {
        r.search.validate().with_context(|| format!("config `{}`", r.label))?;
    }
    let col = union(load_collections(&a.indexes)?)?;
    let queries = load_queries(&a.queries)?;
    let qrels = a.qrels.as_deref().map(load_qrels).transpose()?;

    let mut lines = Vec::new();
    let mut reports: Vec<EvalReport> = Vec::new();
    for r in &rows {
        let qps = measure_qps(&col, &queries, &r.search, a.repeats, a.parallel_clients)?;
        let metrics = match &qrels {
            Some(qr) => {
                let refs: Vec<&QueryEmbedding> = queries.iter().collect();
                let opts = EvalOptions {
                    parallel_clients: a.parallel_clients,
                    seed: Some(cfg.seed),
                    ..EvalOptions::default()
                };
                let mut rep = eval::evaluate_collection(&col, &refs, qr, &r.search, Scope::Union, &opts)?;
                rep.qps = qps.qps;
                rep.stage_ms = qps.stage_ms.clone();
                let m = rep.means.clone();
                reports.push(rep);
                Some(m)
            }
            None => None,
        };
        lines.push(BenchLine {
            label: r.label.clone(),
            search: r.search.clone(),
            qps: qps.qps,
            speedup: 0.0,
            stage_ms: qps.stage_ms,
            metrics,
        });
    }
    // Speedups are against the first 1-stage row, or the first row.
    let base = rows.iter().position(|r| r.search.stages == 1).unwrap_or(0);
    let base_qps = lines[base].qps;
    for l in &mut lines {
        l.speedup = if base_qps > 0.0 { l.qps / base_qps } else { 0.0 };
    }

    let mut out = io::stdout().lock();
    if reports.is_empty() {
        let w = lines.iter().map(|l| l.label.len()).max().unwrap_or(0).max(6);
        writeln!(out, "{:<w$} {:>10} {:>8}", "config", "QPS", "speedup")?;
        for l in &lines {
            writeln!(out, "{:<w$} {:>10.2} {:>7.2}x", l.label, l.qps, l.speedup)?;
        }
    } else {
        let labelled: Vec<(String, &EvalReport)> = lines
            .iter()
            .zip(&reports)
            .map(|(l, r)| (format!("{} ({:.2}x)", l.label, l.speedup), r))
            .collect();
        write!(out, "{}", format_table(&labelled, Some(&reports[base])))?;
    }
    serde_json::to_writer_pretty(&mut out, &lines)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_eval(mut cfg: PipelineConfig, a: EvalArgs) -> Result<()> {
    apply_search(&mut cfg.search, &a.search)?;
    let cols = load_collections(&a.indexes)?;
    let queries = load_queries(&a.queries)?;
    let qrels = load_qrels(&a.qrels)?;
    let scope = match a.scope {
        ScopeArg::PerDataset => Scope::PerDataset,
        ScopeArg::Union => Scope::Union,
    };
    let opts = EvalOptions {
        parallel_clients: a.parallel_clients,
        seed: Some(a.seed.unwrap_or(cfg.seed)),
        ..EvalOptions::default()
    };
    let refs: Vec<&Collection> = cols.iter().collect();
    let mut reports = eval::evaluate(&refs, &queries, &qrels, &cfg.search, scope, &opts)?;
    if a.no_timings {
        reports = reports.iter().map(EvalReport::without_timings).collect();
    }
    let rows: Vec<(String, &EvalReport)> = reports.iter().map(|r| (r.collection.clone(), r)).collect();
    let mut out = io::stdout().lock();
    write!(out, "{}", format_table(&rows, None))?;
    let json = serde_json::to_string_pretty(&reports)? + "\n";
    match &a.report {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(json.as_bytes())?,
    }
    Ok(())
}

fn cmd_cost(mut cfg: PipelineConfig, a: CostArgs) -> Result<()> {
    if let Some(p) = &a.profile {
        cfg.profile = p.clone();
    }
    if a.dim.is_some() {
        cfg.dim = a.dim;
    }
    let profile = cfg.model_profile()?;
    let variants = if a.variants.is_empty() {
        typical_variants(&profile)
    } else {
        a.variants
            .iter()
            .map(|v| {
                let (label, count) = v
                    .split_once('=')
                    .ok_or_else(|| usage(format!("--variant expects label=D, got `{v}`")))?;
                let count = count
                    .parse::<u64>()
                    .map_err(|_| usage(format!("bad vector count in `{v}`")))?;
                Ok((label.to_string(), count))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let report = cost_report(&profile, a.pages, a.query_tokens, &variants)?;
    if a.json {
        print_json(&report)
    } else {
        io::stdout().lock().write_all(report.to_table().as_bytes())?;
        Ok(())
    }
}
