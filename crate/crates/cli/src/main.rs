//! `observatory`: generate table variants and reference embeddings, measure
//! embedding properties, and render reports.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 measure failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use observatory_core::corpus::load_corpus;
use observatory_core::embedding_io::{read_dir, write_dir};
use observatory_core::fd::{read_fd_list, write_fd_list};
use observatory_core::measures::Norm;
use observatory_core::pipeline::{
    embed_reference, fd_list, permute_corpus, read_pairs, read_plans, run_property, thread_pool, threads_from_env,
    write_plans, EmbedParams, MeasureInputs, MeasureParams,
};
use observatory_core::{
    Axis, EmbedderConfig, Error, Level, MeasureReport, OverlapKind, Property, ReferenceModel, Result,
};

#[derive(Parser)]
#[command(
    name = "observatory",
    version,
    about = "Quantitative characterization of table embeddings"
)]
struct Cli {
    /// Log progress (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one row or column permutation plan per corpus table
    Permute {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },

    /// Embed corpus variants with a reference embedder
    EmbedRef {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Property the embeddings are for; inferred from the plans when omitted
        #[arg(long, value_enum)]
        property: Option<PropertyArg>,
        /// Levels for the order properties
        #[arg(long, value_delimiter = ',', value_parser = parse_level, default_value = "table,column,row")]
        level: Vec<Level>,
        /// Permutation plans written by `permute`
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        /// Weight of the target itself in `ref-ctx`
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 42)]
        hash_seed: u64,
        #[arg(long, default_value_t = 512)]
        token_budget: usize,
        /// Sampling ratios for fidelity
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
        ratios: Vec<f64>,
        /// Samples per ratio for fidelity
        #[arg(long, default_value_t = 3)]
        samples: usize,
        /// Rows per chunk for the full-column embedding (0 = no chunking)
        #[arg(long, default_value_t = 0)]
        chunk_rows: usize,
        /// Seed for row sampling
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// JSON object mapping headers to replacement headers
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// Serialize tables without their header row
        #[arg(long)]
        no_headers: bool,
        #[arg(long)]
        out: PathBuf,
    },

    /// List unary FDs and as many sampled non-FD column pairs per table
    DiscoverFds {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// CSV destination (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Compute one property measure over an embedding directory
    Measure {
        #[arg(value_enum)]
        property: PropertyArg,
        #[arg(long)]
        emb: PathBuf,
        /// Second embedding space (stability)
        #[arg(long)]
        emb2: Option<PathBuf>,
        /// Corpus the embeddings were built from (join, fd)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Model to measure when the directory holds several
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value_t = OverlapArg::Containment)]
        overlap: OverlapArg,
        /// Ratios to report (fidelity); all present when omitted
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value_t = NormArg::L2)]
        norm: NormArg,
        /// Seed for non-FD pair sampling
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Restrict the order properties to these levels
        #[arg(long, value_delimiter = ',', value_parser = parse_level)]
        level: Option<Vec<Level>>,
        /// FD list written by `discover-fds`
        #[arg(long)]
        fds: Option<PathBuf>,
        /// Query/candidate column pairs (join)
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Report destination; a `.csv` per-item dump and a `.log` sidecar are written next to it
        #[arg(long)]
        out: PathBuf,
        /// Directory for box-plot CSV, one file per model
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },

    /// Render a report
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Row,
    Column,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "ref-cf")]
    RefCf,
    #[value(name = "ref-ctx")]
    RefCtx,
}

#[derive(Clone, Copy, ValueEnum)]
enum PropertyArg {
    RowOrder,
    ColOrder,
    Join,
    Fd,
    Fidelity,
    Stability,
    Perturbation,
    Context,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OverlapArg {
    Containment,
    Jaccard,
    MultisetJaccard,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Row => Axis::Row,
            AxisArg::Column => Axis::Column,
        }
    }
}

impl From<ModelArg> for ReferenceModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::RefCf => ReferenceModel::ContextFree,
            ModelArg::RefCtx => ReferenceModel::ContextMixing,
        }
    }
}

impl From<PropertyArg> for Property {
    fn from(p: PropertyArg) -> Self {
        match p {
            PropertyArg::RowOrder => Property::RowOrder,
            PropertyArg::ColOrder => Property::ColOrder,
            PropertyArg::Join => Property::Join,
            PropertyArg::Fd => Property::Fd,
            PropertyArg::Fidelity => Property::Fidelity,
            PropertyArg::Stability => Property::Stability,
            PropertyArg::Perturbation => Property::Perturbation,
            PropertyArg::Context => Property::Context,
        }
    }
}

impl From<OverlapArg> for OverlapKind {
    fn from(o: OverlapArg) -> Self {
        match o {
            OverlapArg::Containment => OverlapKind::Containment,
            OverlapArg::Jaccard => OverlapKind::Jaccard,
            OverlapArg::MultisetJaccard => OverlapKind::MultisetJaccard,
        }
    }
}

impl From<NormArg> for Norm {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        }
    }
}

fn parse_level(s: &str) -> std::result::Result<Level, String> {
    s.parse()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_measure_failure() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Permute {
            corpus,
            axis,
            budget,
            seed,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let plans = permute_corpus(&corpus, axis.into(), budget, seed)?;
            write_plans(&out, &plans)?;
            for p in &plans {
                log::info!("{}: {} {} variants", p.table_id, p.len(), p.axis.as_str());
            }
            println!("wrote {} plans to {}", plans.len(), out.display());
            Ok(())
        }
        Command::EmbedRef {
            corpus,
            model,
            property,
            level,
            plans,
            dim,
            alpha,
            hash_seed,
            token_budget,
            ratios,
            samples,
            chunk_rows,
            seed,
            synonyms,
            no_headers,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let plans = plans.as_deref().map(read_plans).transpose()?.unwrap_or_default();
            let property = match (property, plans.first()) {
                (Some(p), _) => Property::from(p),
                (None, Some(plan)) => match plan.axis {
                    Axis::Row => Property::RowOrder,
                    Axis::Column => Property::ColOrder,
                },
                (None, None) => {
                    return Err(Error::InvalidParam(
                        "give --property, or --plans for an order property".into(),
                    ))
                }
            };
            let mut p = EmbedParams::new(model.into(), property);
            p.config = EmbedderConfig {
                dim,
                seed: hash_seed,
                alpha,
                token_budget,
            };
            p.levels = level;
            p.plans = plans;
            p.ratios = ratios;
            p.samples = samples;
            p.chunk_rows = chunk_rows;
            p.seed = seed;
            p.headerless = no_headers;
            if let Some(path) = synonyms {
                let map: BTreeMap<String, String> = serde_json::from_reader(BufReader::new(open(&path)?))?;
                p.synonyms = Some(map);
            }
            let pool = thread_pool(threads_from_env()?)?;
            let output = embed_reference(&corpus, &p, &pool)?;
            let n = write_dir(&out, &output.manifest, &output.records)?;
            println!("wrote {n} embeddings to {}", out.display());
            Ok(())
        }
        Command::DiscoverFds { corpus, seed, out } => {
            let corpus = load_corpus(&corpus)?;
            let (entries, warnings) = fd_list(&corpus, seed);
            for w in warnings {
                log::warn!("{w}");
            }
            match out {
                Some(path) => {
                    let f = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
                    write_fd_list(&entries, f)?;
                }
                None => write_fd_list(&entries, std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Measure {
            property,
            emb,
            emb2,
            corpus,
            model,
            overlap,
            ratios,
            k,
            norm,
            seed,
            level,
            fds,
            pairs,
            out,
            plot_data,
        } => {
            let started = SystemTime::now();
            let clock = Instant::now();
            let (set, manifest) = read_dir(&emb)?;
            let second = emb2.as_deref().map(read_dir).transpose()?;
            let corpus = corpus.as_deref().map(load_corpus).transpose()?;
            let mut p = MeasureParams::new(property.into());
            p.model = model;
            p.overlap = overlap.into();
            p.ratios = ratios;
            p.k = k;
            p.norm = norm.into();
            p.seed = seed;
            p.levels = level;
            p.fds = fds
                .as_deref()
                .map(|f| read_fd_list(open(f)?).map_err(Error::from))
                .transpose()?;
            p.pairs = pairs.as_deref().map(|f| read_pairs(open(f)?)).transpose()?;
            let threads = threads_from_env()?;
            let pool = thread_pool(threads)?;
            let inputs = MeasureInputs {
                emb: &set,
                manifest: manifest.as_ref(),
                emb2: second.as_ref().map(|(s, _)| s),
                corpus: corpus.as_ref(),
            };
            let report = run_property(inputs, &p, &pool)?;
            write_file(&out, &report.to_json())?;
            write_file(&out.with_extension("csv"), &report.render_csv())?;
            if let Some(dir) = plot_data {
                write_file(&dir.join(format!("{}.csv", report.model_id)), &report.plot_data_csv())?;
            }
            let epoch = started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let log = format!(
                "started_unix={epoch}\nelapsed_ms={}\nthreads={}\nproperty={}\nemb={}\nwarnings={}\n",
                clock.elapsed().as_millis(),
                pool.current_num_threads(),
                report.property,
                emb.display(),
                report.warnings.len()
            );
            write_file(&out.with_extension("log"), &log)?;
            print!("{}", report.render_text());
            Ok(())
        }
        Command::Report { input, format } => {
            let text =
                std::fs::read_to_string(&input).map_err(|e| Error::io(format!("reading {}", input.display()), e))?;
            let report = MeasureReport::from_json(&text)?;
            if report.compute_summary()? != report.summary {
                return Err(Error::InvalidParam(format!(
                    "{}: summary does not match per-item values",
                    input.display()
                )));
            }
            let rendered = match format {
                FormatArg::Text => report.render_text(),
                FormatArg::Csv => report.render_csv(),
            };
            std::io::stdout()
                .lock()
                .write_all(rendered.as_bytes())
                .map_err(|e| Error::io("writing stdout", e))
        }
    }
}
