use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lingprobe::conllu::{read_treebank_files, ParseOptions, Treebank};
use lingprobe::embstore::{read_embeddings, write_lemb_file, LabelFile};
use lingprobe::pipeline::{
    render_report, run_cluster, run_compare, run_profiling, run_split_analysis, write_cluster_report,
    write_delta_report, write_profiling_run, write_split_report, ProfilingReport, RunConfig,
};
use lingprobe::probe::{length_baseline, SvrParams};
use lingprobe::profiler::{profile_treebank, FeatureRegistry};
use lingprobe::stats::length_rank;
use lingprobe::synth::{embedding_set, random_treebank, SignalPlanter, TreeOptions};
use lingprobe::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lingprobe",
    version,
    about = "Linguistic profiling and layerwise probing of sentence embeddings"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for fold assignment and solver shuffling
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Feature registry JSON (defaults to the built-in English inventory)
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Significance level for rank-sum tests
    #[arg(long, global = true, default_value_t = 0.05)]
    alpha: f64,
    /// Layers to probe, e.g. `1,6,12` or `1-12`
    #[arg(long, global = true)]
    layers: Option<String>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Cross-validation folds
    #[arg(long, global = true, default_value_t = 5)]
    folds: usize,
    /// SVR insensitivity tube
    #[arg(long, global = true, default_value_t = 0.0)]
    epsilon: f64,
    /// SVR loss weight
    #[arg(long, global = true, default_value_t = 1.0)]
    c: f64,
    #[arg(long, global = true, default_value_t = 1000)]
    max_epochs: usize,
    /// Reject the whole treebank on the first malformed sentence
    #[arg(long, global = true)]
    strict: bool,
    /// Run probes on one thread
    #[arg(long, global = true)]
    sequential: bool,
    /// Repeat for more log output
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Profile a treebank: one row of linguistic features per sentence
    Profile {
        /// CoNLL-U files, read in order as one treebank
        #[arg(required = true)]
        treebank: Vec<PathBuf>,
        /// Also write profiles.jsonl
        #[arg(long)]
        jsonl: bool,
    },
    /// Probe every feature at every layer of one embedding file
    Probe {
        /// CoNLL-U files, read in order as one treebank
        #[arg(long, required = true, num_args = 1..)]
        treebank: Vec<PathBuf>,
        /// LEMB file, or embeddings in the TSV debug form
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Correlation of every feature with sentence length
    Baseline {
        /// CoNLL-U files, read in order as one treebank
        #[arg(required = true)]
        treebank: Vec<PathBuf>,
    },
    /// Ward clustering of the features of a profiling report
    Cluster {
        /// A `*.report.json` written by `probe`
        report: PathBuf,
        /// Number of flat clusters to cut the dendrogram into
        #[arg(long, default_value_t = 5)]
        clusters: usize,
    },
    /// Rho differences between a pre-trained model and fine-tuned ones
    Compare {
        /// CoNLL-U files, read in order as one treebank
        #[arg(long, required = true, num_args = 1..)]
        treebank: Vec<PathBuf>,
        /// Embeddings of the pre-trained model
        #[arg(long)]
        pre: PathBuf,
        /// Embeddings of one or more fine-tuned models
        #[arg(long, required = true, num_args = 1..)]
        fine: Vec<PathBuf>,
        /// Layer to compare (default: output layer)
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Probe errors of correctly vs incorrectly classified sentences
    Split {
        /// CoNLL-U files, read in order as one treebank
        #[arg(long, required = true, num_args = 1..)]
        treebank: Vec<PathBuf>,
        /// Embeddings of the classifier models
        #[arg(long, required = true, num_args = 1..)]
        embeddings: Vec<PathBuf>,
        /// TSV `sent_id<TAB>gold<TAB>predicted`
        #[arg(long)]
        labels: PathBuf,
    },
    /// Render a profiling or delta report as an SVG heatmap
    Render {
        /// A `*.report.json` or `delta.json`
        report: PathBuf,
        /// Output file (default: <out-dir>/heatmap.svg)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the feature registry as JSON, optionally restricted to some features
    Registry {
        /// Comma-separated feature names to keep, in order
        #[arg(long)]
        features: Option<String>,
    },
    /// Write a synthetic treebank and an embedding file with planted signals
    Synth {
        #[arg(long, default_value_t = 200)]
        sentences: usize,
        #[arg(long, default_value_t = 12)]
        layer_count: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
    },
}

/// Features the synthetic embeddings encode, strongest in layer 1.
const SYNTH_FEATURES: [&str; 7] = [
    "sent_length",
    "char_per_tok",
    "ttr_form",
    "lexical_density",
    "avg_links_len",
    "max_links_len",
    "parse_depth",
];

fn parse_layers(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Usage(format!("bad layer list {spec:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a == 0 || b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => {
                let l: usize = part.parse().map_err(|_| bad())?;
                if l == 0 {
                    return Err(bad());
                }
                out.push(l);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Usage("empty layer list".into()));
    }
    Ok(out)
}

impl Global {
    fn registry(&self) -> Result<FeatureRegistry> {
        match &self.registry {
            Some(p) => FeatureRegistry::load(p),
            None => Ok(FeatureRegistry::default_english()),
        }
    }

    fn treebank(&self, paths: &[PathBuf]) -> Result<Treebank> {
        let tb = read_treebank_files(paths, ParseOptions { strict: self.strict })?;
        info!("read {} sentences from {} file(s)", tb.len(), paths.len());
        Ok(tb)
    }

    fn config(&self) -> Result<RunConfig> {
        Ok(RunConfig {
            seed: self.seed,
            svr: SvrParams {
                epsilon: self.epsilon,
                c: self.c,
                max_epochs: self.max_epochs,
                seed: self.seed,
                ..SvrParams::default()
            },
            folds: self.folds,
            layers: self.layers.as_deref().map(parse_layers).transpose()?,
            alpha: self.alpha,
            parallel: !self.sequential,
        })
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    println!("{}", path.display());
    Ok(())
}

fn report_files(files: Vec<PathBuf>) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let out = &g.out_dir;
    match &cli.command {
        Command::Profile { treebank, jsonl } => {
            let table = profile_treebank(&g.treebank(treebank)?, &g.registry()?)?;
            write(&out.join("profiles.tsv"), &table.to_tsv())?;
            write(&out.join("summary.tsv"), &table.summary_tsv())?;
            if *jsonl {
                let mut buf = Vec::new();
                table.write_jsonl(&mut buf)?;
                write(&out.join("profiles.jsonl"), &String::from_utf8_lossy(&buf))?;
            }
        }
        Command::Probe { treebank, embeddings } => {
            let cfg = g.config()?;
            let run = run_profiling(
                &g.treebank(treebank)?,
                &read_embeddings(embeddings)?,
                &g.registry()?,
                &cfg,
            )?;
            report_files(write_profiling_run(&run, out)?);
        }
        Command::Baseline { treebank } => {
            let table = profile_treebank(&g.treebank(treebank)?, &g.registry()?)?;
            let baseline = length_baseline(&table.lengths(), table.targets().view())?;
            let ranks = length_rank(&baseline);
            let mut body = String::from("feature\tbaseline\tlength_rank\n");
            for ((name, b), r) in table.feature_names.iter().zip(&baseline).zip(ranks) {
                let b = b.map(|v| format!("{v:.6}")).unwrap_or_default();
                body.push_str(&format!("{name}\t{b}\t{r}\n"));
            }
            write(&out.join("baseline.tsv"), &body)?;
        }
        Command::Cluster { report, clusters } => {
            let r = ProfilingReport::from_json(&fs::read_to_string(report)?)?;
            report_files(write_cluster_report(&run_cluster(&r, *clusters)?, out)?);
        }
        Command::Compare {
            treebank,
            pre,
            fine,
            layer,
        } => {
            let cfg = g.config()?;
            let tb = g.treebank(treebank)?;
            let registry = g.registry()?;
            let pre_run = run_profiling(&tb, &read_embeddings(pre)?, &registry, &cfg)?;
            let fine_runs = fine
                .iter()
                .map(|p| run_profiling(&tb, &read_embeddings(p)?, &registry, &cfg))
                .collect::<Result<Vec<_>>>()?;
            let report = run_compare(&pre_run, &fine_runs, *layer, cfg.alpha)?;
            report_files(write_delta_report(&report, out)?);
        }
        Command::Split {
            treebank,
            embeddings,
            labels,
        } => {
            let cfg = g.config()?;
            let sets = embeddings
                .iter()
                .map(|p| read_embeddings(p))
                .collect::<Result<Vec<_>>>()?;
            let report = run_split_analysis(
                &g.treebank(treebank)?,
                &sets,
                &LabelFile::load(labels)?,
                &g.registry()?,
                &cfg,
            )?;
            report_files(write_split_report(&report, out)?);
        }
        Command::Render { report, output } => {
            let svg = render_report(&fs::read_to_string(report)?)?;
            write(&output.clone().unwrap_or_else(|| out.join("heatmap.svg")), &svg)?;
        }
        Command::Registry { features } => {
            let mut registry = g.registry()?;
            if let Some(list) = features {
                let names: Vec<&str> = list.split(',').map(str::trim).filter(|n| !n.is_empty()).collect();
                registry = registry.subset(&names)?;
            }
            println!("{}", registry.to_json());
        }
        Command::Synth {
            sentences,
            layer_count,
            dim,
        } => {
            if *sentences == 0 || *layer_count == 0 || *dim == 0 {
                return Err(Error::Usage("sentences, layer count and dim must be positive".into()));
            }
            let tb = random_treebank(*sentences, g.seed, TreeOptions::default());
            let registry = FeatureRegistry::default_english()
                .subset(&SYNTH_FEATURES)
                .expect("built-in features");
            let table = profile_treebank(&tb, &registry)?;
            let targets = table.targets();
            let planter = SignalPlanter::new(SYNTH_FEATURES.len(), *dim, g.seed);
            let layers = (0..*layer_count)
                .map(|l| {
                    let scale = 1.0 - l as f64 / *layer_count as f64;
                    planter.layer(targets.view(), scale, 0.5, g.seed.wrapping_add(l as u64 + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            let ids: Vec<String> = tb.sentences.iter().map(|s| s.sent_id.clone()).collect();
            let set = embedding_set("synthetic", &ids, &layers)?;
            write(&out.join("synth.conllu"), &lingprobe::conllu::write_conllu(&tb))?;
            let lemb = out.join("synth.lemb");
            write_lemb_file(&set, &lemb)?;
            println!("{}", lemb.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
