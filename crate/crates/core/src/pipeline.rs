//! End-to-end runs: permutation plans, reference embeddings, and property
//! measurement over an embedding set.
//!
//! Work is spread over a rayon pool one item (series, column pair, FD,
//! query) at a time. Each item is computed sequentially and results are
//! collected in key order, so reports do not depend on the pool size.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::corpus::Corpus;
use crate::embedding_io::{EmbeddingRecord, EmbeddingSet, EmbeddingSpace, Level, Manifest, SeriesKey};
use crate::error::{Error, Result};
use crate::fd::{
    determinant_groups, discover_unary_fds, fd_groups, sample_non_fd_pairs, FdError, FdInstance, FdListEntry,
};
use crate::measures::{
    context_shift, cosine, cosine_dispersion, entity_stability, fd_group_variance, join_correlation,
    perturbation_robustness, sample_fidelity, MeasureError, Norm, OverlapKind, OverlapPair,
};
use crate::refembed::{embed_column_cf, embed_column_ctx, normalize, EmbedError, EmbedderConfig, ReferenceModel};
use crate::report::{ItemRecord, MeasureReport, Property, GROUP_LABEL};
use crate::table::{is_textual_column, subject_column_proxy, ColumnRef, Table};
use crate::variants::{
    context_columns, invert, perturb_headers, sample_row_indices, Axis, ContextSetting, PermutationPlan, PerturbMode,
};

pub const THREADS_ENV: &str = "OBSERVATORY_THREADS";

/// Worker count from `OBSERVATORY_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidParam(format!(
                "{THREADS_ENV} must be a positive integer, got `{s}`"
            ))),
        },
    }
}

pub fn thread_pool(threads: Option<usize>) -> Result<ThreadPool> {
    let n = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------- plans

pub fn permute_corpus(corpus: &Corpus, axis: Axis, budget: usize, seed: u64) -> Result<Vec<PermutationPlan>> {
    corpus
        .tables
        .iter()
        .map(|t| Ok(PermutationPlan::for_table(t, axis, budget, seed)?))
        .collect()
}

pub fn plan_file_name(plan: &PermutationPlan) -> String {
    format!("{}.{}.json", plan.table_id, plan.axis.as_str())
}

pub fn write_plans(dir: &Path, plans: &[PermutationPlan]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for plan in plans {
        let path = dir.join(plan_file_name(plan));
        let mut text = serde_json::to_string(plan)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

/// Every `*.json` plan in `dir`, in file name order.
pub fn read_plans(dir: &Path) -> Result<Vec<PermutationPlan>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidParam(format!("plan {}: {e}", p.display())))
        })
        .collect()
}

// ---------------------------------------------------------------- embed

/// Parameters of a reference embedding run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub model: ReferenceModel,
    pub config: EmbedderConfig,
    pub property: Property,
    /// Levels for the order properties.
    pub levels: Vec<Level>,
    pub plans: Vec<PermutationPlan>,
    pub ratios: Vec<f64>,
    /// Samples per ratio.
    pub samples: usize,
    /// Rows per chunk for the full-column embedding; 0 disables chunking.
    pub chunk_rows: usize,
    pub seed: u64,
    pub synonyms: Option<BTreeMap<String, String>>,
    /// Serialize tables without their header row.
    pub headerless: bool,
}

impl EmbedParams {
    pub fn new(model: ReferenceModel, property: Property) -> Self {
        Self {
            model,
            config: EmbedderConfig::default(),
            property,
            levels: vec![Level::Table, Level::Column, Level::Row],
            plans: Vec::new(),
            ratios: vec![0.25, 0.5, 0.75],
            samples: 3,
            chunk_rows: 0,
            seed: 42,
            synonyms: None,
            headerless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutput {
    pub manifest: Manifest,
    pub records: Vec<EmbeddingRecord>,
    pub warnings: Vec<String>,
}

type TableOutput = Result<(Vec<EmbeddingRecord>, Vec<String>)>;

/// Collects embeddings, turning "no tokens" into a warning.
struct Sink<'a> {
    model: &'a str,
    table: &'a str,
    records: Vec<EmbeddingRecord>,
    warnings: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(model: &'a str, table: &'a str) -> Self {
        Self {
            model,
            table,
            records: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Returns whether a record was added.
    fn push(
        &mut self,
        variant: u32,
        level: Level,
        target: Vec<usize>,
        vector: std::result::Result<Vec<f64>, EmbedError>,
        meta: &[(&str, String)],
    ) -> Result<bool> {
        match vector {
            Ok(v) => {
                let mut r = EmbeddingRecord::new(self.model, self.table, variant, level, target, v);
                for (k, val) in meta {
                    r = r.with_meta(*k, val.clone());
                }
                self.records.push(r);
                Ok(true)
            }
            Err(EmbedError::NoTokens(what)) => {
                if variant == 0 {
                    self.warnings.push(format!(
                        "{}: {} {:?} has no tokens; skipped",
                        self.table,
                        level.as_str(),
                        target
                    ));
                } else {
                    log::debug!("{}: variant {variant} of {what} has no tokens", self.table);
                }
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn finish(self) -> TableOutput {
        Ok((self.records, self.warnings))
    }
}

fn embed_in_setting(
    model: ReferenceModel,
    t: &Table,
    c: usize,
    setting: ContextSetting,
    cfg: &EmbedderConfig,
) -> std::result::Result<Vec<f64>, EmbedError> {
    match model {
        ReferenceModel::ContextFree => embed_column_cf(&t.column_values(c)?, t.header(c), cfg),
        ReferenceModel::ContextMixing => embed_column_ctx(t, c, setting, cfg),
    }
}

/// Full-column embedding from row chunks of the table, averaged.
fn chunked_column(
    model: ReferenceModel,
    t: &Table,
    c: usize,
    chunk_rows: usize,
    cfg: &EmbedderConfig,
) -> std::result::Result<Vec<f64>, EmbedError> {
    if chunk_rows == 0 || chunk_rows >= t.nrows() {
        return model.embed_column(t, c, cfg);
    }
    let mut parts = Vec::new();
    for (i, rows) in t.rows().chunks(chunk_rows).enumerate() {
        let sub = Table::new(
            format!("{}#chunk-{i}", t.id()),
            t.headers().map(<[String]>::to_vec),
            rows.to_vec(),
        )?;
        match model.embed_column(&sub, c, cfg) {
            Ok(v) => parts.push(v),
            Err(EmbedError::NoTokens(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if parts.is_empty() {
        return Err(EmbedError::NoTokens(format!("column {c}")));
    }
    let k = parts.len() as f64;
    let mean: Vec<f64> = (0..cfg.dim)
        .map(|i| parts.iter().map(|v| v[i]).sum::<f64>() / k)
        .collect();
    normalize(mean).ok_or_else(|| EmbedError::NoTokens(format!("column {c} (chunks cancel)")))
}

fn order_records(p: &EmbedParams, t: &Table, plan: &PermutationPlan) -> TableOutput {
    let cfg = &p.config;
    let m = p.model;
    let mut sink = Sink::new(m.id(), t.id());
    for (i, perm) in plan.permutations.iter().enumerate() {
        let vt = plan.apply(t, i)?;
        let inv = invert(perm);
        let row_pos = |r: usize| if plan.axis == Axis::Row { inv[r] } else { r };
        let col_pos = |c: usize| if plan.axis == Axis::Column { inv[c] } else { c };
        let v = i as u32;
        for &level in &p.levels {
            match level {
                Level::Table => {
                    sink.push(v, level, vec![], m.embed_table(&vt, cfg), &[])?;
                }
                Level::Column => {
                    for c in 0..t.ncols() {
                        sink.push(v, level, vec![c], m.embed_column(&vt, col_pos(c), cfg), &[])?;
                    }
                }
                Level::Row => {
                    for r in 0..t.nrows() {
                        sink.push(v, level, vec![r], m.embed_row(&vt, row_pos(r), cfg), &[])?;
                    }
                }
                Level::Cell => {
                    for r in 0..t.nrows() {
                        for c in 0..t.ncols() {
                            let e = m.embed_cell(&vt, row_pos(r), col_pos(c), cfg);
                            sink.push(v, level, vec![r, c], e, &[])?;
                        }
                    }
                }
                Level::Entity => {
                    return Err(Error::InvalidParam(
                        "entity level is not defined for order properties".into(),
                    ))
                }
            }
        }
    }
    sink.finish()
}

fn fidelity_records(p: &EmbedParams, t: &Table) -> TableOutput {
    let cfg = &p.config;
    let mut sink = Sink::new(p.model.id(), t.id());
    let mut samples = Vec::new();
    for (j, &ratio) in p.ratios.iter().enumerate() {
        for s in 0..p.samples {
            let idx = sample_row_indices(t.nrows(), ratio, p.seed.wrapping_add(s as u64))?;
            let rows = idx.iter().map(|&r| t.rows()[r].clone()).collect();
            let sub = Table::new(
                format!("{}#sample-{ratio}-{s}", t.id()),
                t.headers().map(<[String]>::to_vec),
                rows,
            )?;
            samples.push((1 + (j * p.samples + s) as u32, ratio, s, sub));
        }
    }
    for c in 0..t.ncols() {
        let full = chunked_column(p.model, t, c, p.chunk_rows, cfg);
        if !sink.push(0, Level::Column, vec![c], full, &[("role", "full".into())])? {
            continue;
        }
        for (variant, ratio, s, sub) in &samples {
            let meta = [("ratio", ratio.to_string()), ("sample", s.to_string())];
            sink.push(
                *variant,
                Level::Column,
                vec![c],
                p.model.embed_column(sub, c, cfg),
                &meta,
            )?;
        }
    }
    sink.finish()
}

fn perturbation_records(p: &EmbedParams, t: &Table) -> TableOutput {
    let cfg = &p.config;
    let mut sink = Sink::new(p.model.id(), t.id());
    if t.headers().is_none() {
        sink.warnings.push(format!("{}: no header row; skipped", t.id()));
        return sink.finish();
    }
    let mut variants = vec![("original", t.clone())];
    variants.push(("abbreviate", perturb_headers(t, PerturbMode::Abbreviate, None)?));
    if let Some(map) = &p.synonyms {
        variants.push(("synonym_map", perturb_headers(t, PerturbMode::SynonymMap, Some(map))?));
    }
    if p.headerless {
        variants = variants.into_iter().map(|(n, vt)| (n, vt.without_headers())).collect();
    }
    for c in 0..t.ncols() {
        for (v, (name, vt)) in variants.iter().enumerate() {
            let added = sink.push(
                v as u32,
                Level::Column,
                vec![c],
                p.model.embed_column(vt, c, cfg),
                &[("perturbation", name.to_string())],
            )?;
            if !added && v == 0 {
                break;
            }
        }
    }
    sink.finish()
}

fn context_records(p: &EmbedParams, t: &Table) -> TableOutput {
    let cfg = &p.config;
    let mut sink = Sink::new(p.model.id(), t.id());
    for c in 0..t.ncols() {
        let textual = is_textual_column(t, c)?.to_string();
        for setting in context_columns(t, c)?.into_keys() {
            let meta = [("setting", setting.as_str().to_string()), ("textual", textual.clone())];
            let added = sink.push(
                setting.ordinal(),
                Level::Column,
                vec![c],
                embed_in_setting(p.model, t, c, setting, cfg),
                &meta,
            )?;
            if !added && setting == ContextSetting::ColumnOnly {
                break;
            }
        }
    }
    sink.finish()
}

fn base_records(p: &EmbedParams, t: &Table, level: Level) -> TableOutput {
    let cfg = &p.config;
    let m = p.model;
    let mut sink = Sink::new(m.id(), t.id());
    match level {
        Level::Column => {
            for c in 0..t.ncols() {
                sink.push(0, level, vec![c], m.embed_column(t, c, cfg), &[])?;
            }
        }
        Level::Cell => {
            for r in 0..t.nrows() {
                for c in 0..t.ncols() {
                    sink.push(0, level, vec![r, c], m.embed_cell(t, r, c, cfg), &[])?;
                }
            }
        }
        Level::Entity => {
            let s = subject_column_proxy(t).unwrap_or(0);
            for r in 0..t.nrows() {
                let mention = [("mention", t.cell(r, s)?.to_string())];
                sink.push(0, level, vec![r, s], m.embed_cell(t, r, s, cfg), &mention)?;
            }
        }
        Level::Table => {
            sink.push(0, level, vec![], m.embed_table(t, cfg), &[])?;
        }
        Level::Row => {
            for r in 0..t.nrows() {
                sink.push(0, level, vec![r], m.embed_row(t, r, cfg), &[])?;
            }
        }
    }
    sink.finish()
}

fn order_axis(property: Property) -> Option<Axis> {
    match property {
        Property::RowOrder => Some(Axis::Row),
        Property::ColOrder => Some(Axis::Column),
        _ => None,
    }
}

/// Reference embeddings of `corpus` for one property.
///
/// Variant ids follow the property: plan index for the order properties,
/// `1 + ratio_index * samples + sample` for fidelity (0 is the full column),
/// perturbation index (0 original), and context setting ordinal.
pub fn embed_reference(corpus: &Corpus, p: &EmbedParams, pool: &ThreadPool) -> Result<EmbedOutput> {
    p.config.validate()?;
    let mut warnings = Vec::new();
    let tables: Vec<Table> = if p.headerless && p.property != Property::Perturbation {
        corpus.tables.iter().map(Table::without_headers).collect()
    } else {
        corpus.tables.clone()
    };
    let mut params: BTreeMap<String, Value> = BTreeMap::new();
    params.insert("alpha".into(), json!(p.config.alpha));
    params.insert("hash_seed".into(), json!(p.config.seed));
    params.insert("token_budget".into(), json!(p.config.token_budget));
    params.insert("headerless".into(), json!(p.headerless));

    let outputs: Vec<TableOutput> = if let Some(axis) = order_axis(p.property) {
        if p.plans.is_empty() {
            return Err(Error::InvalidParam(format!("{} needs permutation plans", p.property)));
        }
        if let Some(bad) = p.plans.iter().find(|plan| plan.axis != axis) {
            return Err(Error::InvalidParam(format!(
                "plan for `{}` is a {} plan but {} needs {} plans",
                bad.table_id,
                bad.axis.as_str(),
                p.property,
                axis.as_str()
            )));
        }
        let mut jobs = Vec::new();
        for t in &tables {
            match p.plans.iter().find(|plan| plan.table_id == t.id()) {
                Some(plan) => jobs.push((t, plan)),
                None => warnings.push(format!("{}: no permutation plan; skipped", t.id())),
            }
        }
        for plan in &p.plans {
            if corpus.get(&plan.table_id).is_none() {
                return Err(Error::InvalidParam(format!(
                    "plan for unknown table `{}`",
                    plan.table_id
                )));
            }
        }
        let budget = p.plans.iter().map(PermutationPlan::len).max().unwrap_or(0);
        params.insert("axis".into(), json!(axis.as_str()));
        params.insert("plan_variants_max".into(), json!(budget));
        params.insert(
            "levels".into(),
            json!(p.levels.iter().map(|l| l.as_str()).collect::<Vec<_>>()),
        );
        params.insert("mcv_includes_identity".into(), json!(true));
        pool.install(|| jobs.par_iter().map(|(t, plan)| order_records(p, t, plan)).collect())
    } else {
        match p.property {
            Property::Fidelity => {
                if p.samples == 0 || p.ratios.is_empty() {
                    return Err(Error::InvalidParam(
                        "fidelity needs at least one ratio and one sample".into(),
                    ));
                }
                params.insert("ratios".into(), json!(p.ratios));
                params.insert("samples".into(), json!(p.samples));
                params.insert("chunk_rows".into(), json!(p.chunk_rows));
                params.insert("mcv_includes_full".into(), json!(true));
                pool.install(|| tables.par_iter().map(|t| fidelity_records(p, t)).collect())
            }
            Property::Perturbation => {
                params.insert("synonym_map".into(), json!(p.synonyms.is_some()));
                pool.install(|| tables.par_iter().map(|t| perturbation_records(p, t)).collect())
            }
            Property::Context => pool.install(|| tables.par_iter().map(|t| context_records(p, t)).collect()),
            base => {
                let level = match base {
                    Property::Join => Level::Column,
                    Property::Fd => Level::Cell,
                    _ => Level::Entity,
                };
                params.insert("levels".into(), json!([level.as_str()]));
                pool.install(|| tables.par_iter().map(|t| base_records(p, t, level)).collect())
            }
        }
    };

    let mut records = Vec::new();
    for out in outputs {
        let (recs, warns) = out?;
        records.extend(recs);
        warnings.extend(warns);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if records.is_empty() {
        return Err(Error::InvalidParam("no embeddings were produced".into()));
    }
    let seed = if order_axis(p.property).is_some() {
        p.plans[0].seed
    } else {
        p.seed
    };
    let manifest = Manifest {
        property: p.property.as_str().to_string(),
        models: vec![p.model.id().to_string()],
        dim: p.config.dim,
        corpus: corpus.name.clone(),
        seed,
        generator: p.model.id().to_string(),
        corpus_hash: Some(corpus.hash.clone()),
        params,
    };
    Ok(EmbedOutput {
        manifest,
        records,
        warnings,
    })
}

// ---------------------------------------------------------------- measure

/// Parameters of a measurement run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureParams {
    pub property: Property,
    /// Model to measure; required only when the set holds several.
    pub model: Option<String>,
    pub overlap: OverlapKind,
    /// Ratios to report for fidelity; all present when `None`.
    pub ratios: Option<Vec<f64>>,
    pub k: usize,
    pub norm: Norm,
    pub seed: u64,
    /// Levels for the order properties; all present when `None`.
    pub levels: Option<Vec<Level>>,
    pub fds: Option<Vec<FdListEntry>>,
    pub pairs: Option<Vec<(ColumnRef, ColumnRef)>>,
}

impl MeasureParams {
    pub fn new(property: Property) -> Self {
        Self {
            property,
            model: None,
            overlap: OverlapKind::Containment,
            ratios: None,
            k: 10,
            norm: Norm::L2,
            seed: 42,
            levels: None,
            fds: None,
            pairs: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeasureInputs<'a> {
    pub emb: &'a EmbeddingSet,
    pub manifest: Option<&'a Manifest>,
    pub emb2: Option<&'a EmbeddingSet>,
    pub corpus: Option<&'a Corpus>,
}

impl<'a> MeasureInputs<'a> {
    pub fn new(emb: &'a EmbeddingSet) -> Self {
        Self {
            emb,
            manifest: None,
            emb2: None,
            corpus: None,
        }
    }
}

/// Why an item produced no values.
struct ItemFailure {
    key: String,
    error: Box<Error>,
}

type ItemResult = std::result::Result<ItemRecord, ItemFailure>;

fn fail(key: impl Into<String>, error: impl Into<Error>) -> ItemFailure {
    ItemFailure {
        key: key.into(),
        error: Box::new(error.into()),
    }
}

fn select_model(set: &EmbeddingSet, wanted: Option<&str>, which: &str) -> Result<String> {
    let models = set.models();
    match wanted {
        Some(m) if models.contains(&m) => Ok(m.to_string()),
        Some(m) => Err(Error::InvalidParam(format!(
            "model `{m}` not in {which} (has: {})",
            models.join(", ")
        ))),
        None => match models.as_slice() {
            [only] => Ok(only.to_string()),
            [] => Err(Error::InvalidParam(format!("{which} is empty"))),
            _ => Err(Error::InvalidParam(format!(
                "{which} holds several models ({}); choose one",
                models.join(", ")
            ))),
        },
    }
}

fn need_corpus<'a>(inputs: &MeasureInputs<'a>, property: Property) -> Result<&'a Corpus> {
    inputs
        .corpus
        .ok_or_else(|| Error::InvalidParam(format!("{property} needs the corpus the embeddings were built from")))
}

fn column_vector<'a>(
    set: &'a EmbeddingSet,
    model: &str,
    table: &str,
    level: Level,
    target: Vec<usize>,
) -> Option<&'a [f64]> {
    let key = SeriesKey {
        model_id: model.to_string(),
        table_id: table.to_string(),
        level,
        target,
    };
    set.get(&key, 0).map(|e| e.vector.as_slice())
}

/// Computes one property over an embedding set.
///
/// Items that cannot be measured become warnings. The run fails only when
/// no item succeeds.
pub fn run_property(inputs: MeasureInputs<'_>, p: &MeasureParams, pool: &ThreadPool) -> Result<MeasureReport> {
    let model = select_model(inputs.emb, p.model.as_deref(), "embedding set")?;
    let corpus_name = inputs
        .corpus
        .map(|c| c.name.clone())
        .or_else(|| inputs.manifest.map(|m| m.corpus.clone()))
        .unwrap_or_else(|| "unknown".into());
    let mut report = MeasureReport::new(p.property, &model, corpus_name);
    if let Some(m) = inputs.manifest {
        if m.property != p.property.as_str() {
            report.warn(format!(
                "embeddings were generated for `{}`, measuring `{}`",
                m.property,
                p.property.as_str()
            ));
        }
        report.param("embed.seed", m.seed);
        report.param("embed.generator", m.generator.as_str());
        report.param("embed.dim", m.dim);
        if let Some(h) = &m.corpus_hash {
            report.param("embed.corpus_hash", h.as_str());
        }
        for (k, v) in &m.params {
            report.param(&format!("embed.{k}"), v.clone());
        }
    }

    let results: Vec<ItemResult> = match p.property {
        Property::RowOrder | Property::ColOrder => measure_order(inputs, p, &model, &mut report, pool)?,
        Property::Join => measure_join(inputs, p, &model, &mut report, pool)?,
        Property::Fd => measure_fd(inputs, p, &model, &mut report, pool)?,
        Property::Fidelity => measure_fidelity(inputs, p, &model, &mut report, pool)?,
        Property::Stability => measure_stability(inputs, p, &model, &mut report, pool)?,
        Property::Perturbation => measure_perturbation(inputs, p, &model, &mut report, pool)?,
        Property::Context => measure_context(inputs, p, &model, &mut report, pool)?,
    };

    let total = results.len();
    let mut first_failure = None;
    for r in results {
        match r {
            Ok(item) => report.per_item.push(item),
            Err(f) => {
                report.warn(format!("{}: {}", f.key, f.error));
                first_failure.get_or_insert(*f.error);
            }
        }
    }
    if report.per_item.is_empty() {
        return Err(match first_failure {
            Some(e) => e,
            None if total == 0 => Error::InvalidParam(format!("nothing to measure for {}", p.property)),
            None => Error::Measure(MeasureError::Empty("items")),
        });
    }
    finish_scalars(&mut report, p)?;
    report.finalize()?;
    Ok(report)
}

fn finish_scalars(report: &mut MeasureReport, p: &MeasureParams) -> Result<()> {
    match p.property {
        Property::Join => {
            let pairs: Vec<OverlapPair> = report
                .per_item
                .iter()
                .map(|item| OverlapPair {
                    query: ColumnRef::new(item.labels["query"].clone(), 0),
                    candidate: ColumnRef::new(item.labels["candidate"].clone(), 0),
                    r_containment: item.values["r_containment"][0],
                    r_jaccard: item.values["r_jaccard"][0],
                    r_multiset_jaccard: item.values["r_multiset_jaccard"][0],
                    m_cosine: item.values["m_cosine"][0],
                })
                .collect();
            let jc = join_correlation(&pairs, p.overlap)?;
            report.scalars.insert("rho".into(), jc.rho);
            report.scalars.insert("n".into(), jc.n as f64);
            if jc.ties {
                report.warn("ties present; average ranks used");
            }
        }
        Property::Stability => {
            let per_query: Vec<f64> = report.per_item.iter().map(|i| i.values["overlap"][0]).collect();
            report.scalars.insert("mean".into(), crate::stats::mean(&per_query));
        }
        Property::Perturbation => {
            let all: Vec<f64> = report
                .per_item
                .iter()
                .flat_map(|i| i.values["cosine"].iter().copied())
                .collect();
            report.scalars.insert("overall_mean".into(), crate::stats::mean(&all));
        }
        _ => {}
    }
    Ok(())
}

fn measure_order(
    inputs: MeasureInputs<'_>,
    p: &MeasureParams,
    model: &str,
    report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let levels: BTreeSet<Level> = match &p.levels {
        Some(l) => l.iter().copied().collect(),
        None => [Level::Table, Level::Column, Level::Row, Level::Cell]
            .into_iter()
            .collect(),
    };
    report.param("levels", levels.iter().map(|l| l.as_str()).collect::<Vec<_>>());
    report.param("mcv_includes_identity", true);
    let keys: Vec<&SeriesKey> = inputs
        .emb
        .keys()
        .filter(|k| k.model_id == model && levels.contains(&k.level))
        .collect();
    let set = inputs.emb;
    let (results, gaps): (Vec<ItemResult>, Vec<Option<String>>) = pool.install(|| {
        keys.par_iter()
            .map(|key| {
                let name = key.to_string();
                let view = match set.series(key) {
                    Ok(v) => v,
                    Err(e) => return (Err(fail(name, e)), None),
                };
                let r = cosine_dispersion(&view.vectors)
                    .map(|d| {
                        ItemRecord::new(&name)
                            .label(GROUP_LABEL, key.level.as_str())
                            .values("cosine", d.cosines)
                            .value("mcv", d.mcv)
                    })
                    .map_err(|e| fail(&name, e));
                (r, view.warning)
            })
            .unzip()
    });
    for w in gaps.into_iter().flatten() {
        report.warnings.push(w);
    }
    Ok(results)
}

/// Rows of a `--pairs` file: `query_table,query_col,candidate_table,candidate_col`.
pub fn read_pairs<R: Read>(source: R) -> Result<Vec<(ColumnRef, ColumnRef)>> {
    #[derive(Deserialize)]
    struct Row {
        query_table: String,
        query_col: usize,
        candidate_table: String,
        candidate_col: usize,
    }
    csv::Reader::from_reader(source)
        .deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| Error::InvalidParam(format!("pairs file: {e}")))?;
            Ok((
                ColumnRef::new(r.query_table, r.query_col),
                ColumnRef::new(r.candidate_table, r.candidate_col),
            ))
        })
        .collect()
}

/// Every ordered pair of columns from different tables sharing a value.
pub fn default_join_pairs(corpus: &Corpus) -> Vec<(ColumnRef, ColumnRef)> {
    let mut out = Vec::new();
    for q in &corpus.tables {
        for c in &corpus.tables {
            if q.id() == c.id() {
                continue;
            }
            for qc in 0..q.ncols() {
                let qv = q.column_values(qc).expect("in range");
                for cc in 0..c.ncols() {
                    let cv = c.column_values(cc).expect("in range");
                    if crate::measures::containment(&qv, &cv).is_ok_and(|r| r > 0.0) {
                        out.push((ColumnRef::new(q.id(), qc), ColumnRef::new(c.id(), cc)));
                    }
                }
            }
        }
    }
    out
}

fn measure_join(
    inputs: MeasureInputs<'_>,
    p: &MeasureParams,
    model: &str,
    report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let corpus = need_corpus(&inputs, p.property)?;
    report.param("overlap", p.overlap.as_str());
    report.param("pairs", if p.pairs.is_some() { "file" } else { "all_overlapping" });
    let pairs = match &p.pairs {
        Some(pairs) => pairs.clone(),
        None => default_join_pairs(corpus),
    };
    for (q, c) in &pairs {
        for r in [q, c] {
            let t = corpus
                .get(&r.table_id)
                .ok_or_else(|| Error::InvalidParam(format!("pair refers to unknown table `{}`", r.table_id)))?;
            t.check_col(r.col_index)?;
        }
    }
    let set = inputs.emb;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|(q, c)| {
                let name = format!("{q} -> {c}");
                let qt = corpus.get(&q.table_id).expect("checked");
                let ct = corpus.get(&c.table_id).expect("checked");
                let qe = column_vector(set, model, &q.table_id, Level::Column, vec![q.col_index]);
                let ce = column_vector(set, model, &c.table_id, Level::Column, vec![c.col_index]);
                let (Some(qe), Some(ce)) = (qe, ce) else {
                    return Err(fail(
                        &name,
                        crate::embedding_io::EmbeddingIoError::MissingKey(name.clone()),
                    ));
                };
                let m = cosine(qe, ce).map_err(|e| fail(&name, e))?;
                let qv = qt.column_values(q.col_index).expect("checked");
                let cv = ct.column_values(c.col_index).expect("checked");
                let pair = OverlapPair::from_values(q.clone(), c.clone(), &qv, &cv, m).map_err(|e| fail(&name, e))?;
                Ok(ItemRecord::new(&name)
                    .label("query", q.to_string())
                    .label("candidate", c.to_string())
                    .value("m_cosine", pair.m_cosine)
                    .value("r_containment", pair.r_containment)
                    .value("r_jaccard", pair.r_jaccard)
                    .value("r_multiset_jaccard", pair.r_multiset_jaccard))
            })
            .collect()
    }))
}

/// FD list of a corpus: every discovered unary FD plus as many sampled
/// non-FD pairs per table.
pub fn fd_list(corpus: &Corpus, seed: u64) -> (Vec<FdListEntry>, Vec<String>) {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for t in &corpus.tables {
        let fds = discover_unary_fds(t);
        let non = if fds.is_empty() {
            Vec::new()
        } else {
            match sample_non_fd_pairs(t, fds.len(), seed) {
                Ok(v) => v,
                Err(e) => {
                    warnings.push(e.to_string());
                    Vec::new()
                }
            }
        };
        let entry = |fd: &FdInstance, holds| FdListEntry {
            table_id: t.id().to_string(),
            x_col: fd.x_col,
            y_col: fd.y_col,
            holds,
        };
        entries.extend(fds.iter().map(|fd| entry(fd, true)));
        entries.extend(non.iter().map(|fd| entry(fd, false)));
    }
    (entries, warnings)
}

fn measure_fd(
    inputs: MeasureInputs<'_>,
    p: &MeasureParams,
    model: &str,
    report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let corpus = need_corpus(&inputs, p.property)?;
    report.param("norm", p.norm.as_str());
    report.param("seed", p.seed);
    let entries = match &p.fds {
        Some(e) => e.clone(),
        None => {
            let (e, warnings) = fd_list(corpus, p.seed);
            for w in warnings {
                report.warn(w);
            }
            e
        }
    };
    let mut jobs = Vec::new();
    for e in &entries {
        let t = corpus
            .get(&e.table_id)
            .ok_or_else(|| Error::InvalidParam(format!("FD list refers to unknown table `{}`", e.table_id)))?;
        let fd = FdInstance {
            x_col: e.x_col,
            y_col: e.y_col,
        };
        let groups = if e.holds {
            fd_groups(t, fd)?.groups
        } else {
            if e.x_col == e.y_col {
                return Err(FdError::Trivial(e.x_col).into());
            }
            t.check_col(e.y_col)?;
            determinant_groups(t, e.x_col)?
        };
        jobs.push((e, groups));
    }
    let set = inputs.emb;
    let norm = p.norm;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(e, groups)| {
                let name = format!("{}:{}->{}", e.table_id, e.x_col, e.y_col);
                let mut missing = 0usize;
                let mut pairs: Vec<Vec<(&[f64], &[f64])>> = Vec::with_capacity(groups.len());
                for rows in groups.values() {
                    let mut g = Vec::with_capacity(rows.len());
                    for &r in rows {
                        let x = column_vector(set, model, &e.table_id, Level::Cell, vec![r, e.x_col]);
                        let y = column_vector(set, model, &e.table_id, Level::Cell, vec![r, e.y_col]);
                        match (x, y) {
                            (Some(x), Some(y)) => g.push((x, y)),
                            _ => missing += 1,
                        }
                    }
                    pairs.push(g);
                }
                let res = fd_group_variance(&pairs, norm).map_err(|err| fail(&name, err))?;
                Ok(ItemRecord::new(&name)
                    .label(GROUP_LABEL, if e.holds { "fd" } else { "non_fd" })
                    .label("groups_used", res.groups_used.to_string())
                    .label("groups_skipped", res.groups_skipped.to_string())
                    .label("tuples_without_embedding", missing.to_string())
                    .value("sbar2", res.sbar2))
            })
            .collect()
    }))
}

fn ratio_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn measure_fidelity(
    inputs: MeasureInputs<'_>,
    p: &MeasureParams,
    model: &str,
    report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    if let Some(r) = &p.ratios {
        report.param("ratios", r.clone());
    }
    report.param("mcv_includes_full", true);
    let keys: Vec<&SeriesKey> = inputs
        .emb
        .keys()
        .filter(|k| k.model_id == model && k.level == Level::Column)
        .collect();
    let set = inputs.emb;
    let nested: Vec<Vec<ItemResult>> = pool.install(|| {
        keys.par_iter()
            .map(|key| {
                let name = key.to_string();
                let Some(variants) = set.variants(key) else {
                    return vec![];
                };
                let Some(full) = variants.get(&0) else {
                    return vec![Err(fail(&name, MeasureError::Empty("full-column embedding")))];
                };
                let mut by_ratio: BTreeMap<String, (f64, Vec<&[f64]>)> = BTreeMap::new();
                for (&v, entry) in variants.range(1..) {
                    let Some(label) = entry.meta.as_ref().and_then(|m| m.get("ratio")) else {
                        return vec![Err(fail(
                            format!("{name} variant {v}"),
                            MeasureError::Empty("ratio metadata"),
                        ))];
                    };
                    let Ok(ratio) = label.parse::<f64>() else {
                        return vec![Err(fail(
                            format!("{name} variant {v}"),
                            Error::InvalidParam(format!("bad ratio `{label}`")),
                        ))];
                    };
                    if p.ratios
                        .as_ref()
                        .is_some_and(|rs| !rs.iter().any(|&r| ratio_matches(r, ratio)))
                    {
                        continue;
                    }
                    by_ratio
                        .entry(label.clone())
                        .or_insert((ratio, Vec::new()))
                        .1
                        .push(&entry.vector);
                }
                let mut ordered: Vec<_> = by_ratio.into_iter().collect();
                ordered.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
                ordered
                    .into_iter()
                    .map(|(label, (_, samples))| {
                        let item = format!("{name}@{label}");
                        sample_fidelity(&full.vector, &samples)
                            .map(|f| {
                                ItemRecord::new(&item)
                                    .label(GROUP_LABEL, &label)
                                    .value("mean_cos", f.mean_cos)
                                    .value("mcv", f.mcv)
                            })
                            .map_err(|e| fail(&item, e))
                    })
                    .collect()
            })
            .collect()
    });
    Ok(nested.into_iter().flatten().collect())
}

fn measure_stability(
    inputs: MeasureInputs<'_>,
    p: &MeasureParams,
    model: &str,
    report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let emb2 = inputs
        .emb2
        .ok_or_else(|| Error::InvalidParam("stability needs a second embedding set".into()))?;
    let model2 = match select_model(emb2, Some(model), "second embedding set") {
        Ok(m) => m,
        Err(_) => select_model(emb2, None, "second embedding set")?,
    };
    report.param("k", p.k);
    report.param("model2", model2.as_str());
    let s1 = EmbeddingSpace::from_set(inputs.emb, model)?;
    let s2 = EmbeddingSpace::from_set(emb2, &model2)?;
    let queries: Vec<&str> = s1.keys().filter(|k| s2.get(k).is_some()).collect();
    if queries.is_empty() {
        return Err(Error::InvalidParam("the two spaces share no entity".into()));
    }
    let k = p.k;
    Ok(pool.install(|| {
        queries
            .par_iter()
            .map(|&q| {
                entity_stability(&s1, &s2, &[q], k)
                    .map(|r| ItemRecord::new(q).value("overlap", r.per_query[0]))
                    .map_err(|e| fail(q, e))
            })
            .collect()
    }))
}

fn measure_perturbation(
    inputs: MeasureInputs<'_>,
    _p: &MeasureParams,
    model: &str,
    _report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let keys: Vec<&SeriesKey> = inputs
        .emb
        .keys()
        .filter(|k| k.model_id == model && k.level == Level::Column)
        .collect();
    let set = inputs.emb;
    Ok(pool.install(|| {
        keys.par_iter()
            .map(|key| {
                let name = key.to_string();
                let view = set.series(key).map_err(|e| fail(&name, e))?;
                if view.variants[0] != 0 {
                    return Err(fail(&name, MeasureError::Empty("original embedding")));
                }
                let group = [(view.vectors[0], view.vectors[1..].to_vec())];
                let r = perturbation_robustness(&group).map_err(|e| fail(&name, e))?;
                let cos = view.vectors[1..]
                    .iter()
                    .map(|v| cosine(view.vectors[0], v))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| fail(&name, e))?;
                Ok(ItemRecord::new(&name)
                    .values("cosine", cos)
                    .value("mean_cos", r.per_original[0]))
            })
            .collect()
    }))
}

fn measure_context(
    inputs: MeasureInputs<'_>,
    _p: &MeasureParams,
    model: &str,
    _report: &mut MeasureReport,
    pool: &ThreadPool,
) -> Result<Vec<ItemResult>> {
    let keys: Vec<&SeriesKey> = inputs
        .emb
        .keys()
        .filter(|k| k.model_id == model && k.level == Level::Column)
        .collect();
    let set = inputs.emb;
    Ok(pool.install(|| {
        keys.par_iter()
            .map(|key| {
                let name = key.to_string();
                let variants = set.variants(key).expect("listed key");
                let single = variants
                    .get(&ContextSetting::ColumnOnly.ordinal())
                    .ok_or_else(|| fail(&name, MeasureError::Empty("column-only embedding")))?;
                let mut by_setting = BTreeMap::new();
                for (&v, e) in variants.range(1..) {
                    let s = ContextSetting::from_ordinal(v).ok_or_else(|| {
                        fail(
                            &name,
                            Error::InvalidParam(format!("variant {v} is not a context setting")),
                        )
                    })?;
                    by_setting.insert(s, e.vector.clone());
                }
                let shift = context_shift(&single.vector, &by_setting).map_err(|e| fail(&name, e))?;
                let textual = single.meta.as_ref().and_then(|m| m.get("textual")).map(String::as_str);
                let mut item = ItemRecord::new(&name);
                if let Some(t) = textual {
                    item = item.label(GROUP_LABEL, if t == "true" { "textual" } else { "non_textual" });
                }
                for (s, c) in shift {
                    item = item.value(s.as_str(), c);
                }
                Ok(item)
            })
            .collect()
    }))
}
