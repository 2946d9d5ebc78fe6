use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use samplerlab::corpus::{load_token_stream, split_documents, write_token_stream, TextMode};
use samplerlab::harness::{
    self, apply_env, build_oracle, export_text, run_sweep, surrogate_char_chain, CorpusSource, FamilyGrid,
    OracleParams, RunOptions, SweepSpec, VocabMap, DEFAULT_PLACEHOLDER,
};
use samplerlab::kernel::io as kernel_io;
use samplerlab::metrics::{evaluate, write_csv, MetricsReport, RunKind};
use samplerlab::samplers::{sample, Family, RemaskStrategy, SampleMetadata, SamplerConfig, UnmaskRule};
use samplerlab::OracleChain;

#[derive(Parser)]
#[command(name = "samplerlab", version, about = "Oracle Markov-chain laboratory for discrete diffusion samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an oracle kernel from a corpus.
    BuildOracle(BuildOracleArgs),
    /// Run a sampler grid and write result tables.
    Sweep(SweepArgs),
    /// Draw sequences with one sampler configuration.
    Sample(SampleArgs),
    /// Compute metrics of a token-stream sample file.
    Evaluate(EvaluateArgs),
    /// Render a token-stream sample file as text.
    ExportText(ExportArgs),
    /// Run the built-in exactness and identity checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct BuildOracleArgs {
    /// Plain text corpus for the 27-symbol character codec.
    #[arg(long, conflicts_with_all = ["tokens", "surrogate"])]
    text8: Option<PathBuf>,
    /// Lowercase and filter the text instead of rejecting invalid characters.
    #[arg(long, requires = "text8")]
    lenient: bool,
    /// Pre-tokenized id stream.
    #[arg(long, conflicts_with = "surrogate")]
    tokens: Option<PathBuf>,
    /// Vocabulary size of the token stream (defaults to its header).
    #[arg(long, requires = "tokens")]
    vocab_size: Option<usize>,
    /// Seed of a synthetic dense 27-state chain instead of a corpus.
    #[arg(long)]
    surrogate: Option<u64>,
    #[arg(long, default_value_t = 0.99)]
    mass: f64,
    #[arg(long, default_value_t = 0.9)]
    percentile: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Keep every observed successor; the default for --text8.
    #[arg(long)]
    dense: bool,
    /// Truncate even for --text8.
    #[arg(long, conflicts_with = "dense")]
    sparse: bool,
    /// Output kernel file (binary; `.json` extension writes JSON).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML sweep specification; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    /// Replaces the family list, e.g. `ar,mdlm,sedd`.
    #[arg(long, value_delimiter = ',')]
    families: Option<Vec<String>>,
    /// Temperature grid for families given by --families.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Nucleus grid for ReMDM families given by --families.
    #[arg(long, value_delimiter = ',')]
    nucleus: Option<Vec<f64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    save_samples: bool,
    /// Recompute completed cells.
    #[arg(long)]
    force: bool,
    /// Compute at most this many new cells, leaving the rest for a later run.
    #[arg(long)]
    max_new_cells: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    oracle: PathBuf,
    /// TOML sampler configuration; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    nucleus: Option<f64>,
    #[arg(long)]
    eta_cap: Option<f64>,
    #[arg(long)]
    t_on: Option<f64>,
    #[arg(long)]
    t_off: Option<f64>,
    #[arg(long, value_parser = parse_remask)]
    remask_strategy: Option<RemaskStrategy>,
    #[arg(long, value_parser = parse_unmask)]
    unmask_rule: Option<UnmaskRule>,
    #[arg(long, value_delimiter = ',')]
    prompt: Option<Vec<u32>>,
    #[arg(long, default_value_t = 1024)]
    length: usize,
    #[arg(long, default_value_t = 512)]
    count: usize,
    /// Token-stream output; a `.json` sidecar with the run metadata is
    /// written next to it.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    oracle: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value = "Text8 (Char)")]
    dataset: String,
    /// Model label; defaults to the family in the sample sidecar.
    #[arg(long)]
    model: Option<String>,
    /// Append the CSV row (with header if new) to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Vocabulary map (JSON object or `id<TAB>string` lines); defaults to
    /// the character map.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_PLACEHOLDER)]
    placeholder: String,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 20240601)]
    seed: u64,
}

fn parse_remask(s: &str) -> Result<RemaskStrategy, String> {
    match s {
        "low-confidence" => Ok(RemaskStrategy::LowConfidence),
        "random" => Ok(RemaskStrategy::Random),
        _ => Err(format!("expected low-confidence or random, got {s:?}")),
    }
}

fn parse_unmask(s: &str) -> Result<UnmaskRule, String> {
    match s {
        "bernoulli" => Ok(UnmaskRule::Bernoulli),
        "fixed-count" => Ok(UnmaskRule::FixedCount),
        _ => Err(format!("expected bernoulli or fixed-count, got {s:?}")),
    }
}

fn load_chain(path: &Path) -> Result<OracleChain> {
    let kernel = kernel_io::load(path).with_context(|| format!("loading oracle {}", path.display()))?;
    Ok(OracleChain::new(kernel)?)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn build_oracle_cmd(a: BuildOracleArgs) -> Result<()> {
    let kernel = if let Some(seed) = a.surrogate {
        let chain = surrogate_char_chain(seed, a.epsilon)?;
        println!("synthetic 27-state chain, seed {seed}, eps {:e}", a.epsilon);
        chain.kernel().clone()
    } else {
        let (source, text8) = match (&a.text8, &a.tokens) {
            (Some(p), None) => (
                CorpusSource::Text8 {
                    path: p.clone(),
                    mode: if a.lenient { TextMode::Lenient } else { TextMode::Strict },
                },
                true,
            ),
            (None, Some(p)) => (
                CorpusSource::Tokens {
                    path: p.clone(),
                    vocab_size: a.vocab_size,
                },
                false,
            ),
            _ => bail!("give exactly one of --text8, --tokens or --surrogate"),
        };
        let params = OracleParams {
            mass: a.mass,
            percentile: a.percentile,
            epsilon: a.epsilon,
            dense: a.dense || (text8 && !a.sparse),
        };
        let (kernel, summary) = build_oracle(&source, &params)?;
        let text = summary.to_text();
        print!("{text}");
        fs::write(a.out.with_extension("summary.txt"), &text)?;
        fs::write(a.out.with_extension("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        if !summary.sanity_passed {
            warn!("stationary sanity checks failed");
        }
        kernel
    };
    if a.out.extension().is_some_and(|e| e == "json") {
        fs::write(&a.out, kernel_io::to_json(&kernel)?)?;
    } else {
        kernel_io::save_binary(&kernel, &a.out)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => SweepSpec::load(p)?,
        None => SweepSpec::default(),
    };
    if let Some(v) = a.oracle {
        spec.oracle = v;
    }
    if let Some(v) = a.dataset {
        spec.dataset = v;
    }
    if let Some(v) = a.length {
        spec.length = v;
    }
    if let Some(v) = a.count {
        spec.count = v;
    }
    if let Some(v) = a.seeds {
        spec.seeds = v;
    }
    if let Some(v) = a.steps {
        spec.steps = v;
    }
    if let Some(names) = a.families {
        spec.families = names
            .iter()
            .filter(|n| !n.is_empty())
            .map(|n| n.parse::<Family>().map(FamilyGrid::new))
            .collect::<Result<_, _>>()?;
    }
    for g in &mut spec.families {
        if let Some(b) = &a.betas {
            g.betas = b.clone();
        }
        if let Some(p) = &a.nucleus {
            g.nucleus = p.clone();
        }
    }
    if let Some(v) = a.output_dir {
        spec.output_dir = v;
    }
    if let Some(v) = a.workers {
        spec.workers = Some(v);
    }
    spec.save_samples |= a.save_samples;
    let spec = spec.with_env()?;
    let out = run_sweep(
        &spec,
        RunOptions {
            max_new_cells: a.max_new_cells,
            force: a.force,
        },
    )?;
    println!(
        "{} computed, {} reused, {} failed, {} pending",
        out.computed, out.skipped, out.failed, out.pending
    );
    println!("wrote {}", out.csv_path.display());
    if out.failed > 0 {
        bail!("{} cells failed; see {}", out.failed, out.manifest_path.display());
    }
    Ok(())
}

fn sample_cmd(a: SampleArgs) -> Result<()> {
    let chain = load_chain(&a.oracle)?;
    let mut cfg = match &a.config {
        Some(p) => SamplerConfig::from_toml_str(&fs::read_to_string(p)?)?,
        None => SamplerConfig::default(),
    };
    if let Some(f) = a.family {
        cfg.family = f.parse()?;
    }
    macro_rules! set {
        ($($field:ident <- $arg:expr),*) => { $(if let Some(v) = $arg { cfg.$field = v; })* };
    }
    set!(steps <- a.steps, seed <- a.seed, beta <- a.beta, nucleus_p <- a.nucleus, eta_cap <- a.eta_cap,
         t_on <- a.t_on, t_off <- a.t_off, remask_strategy <- a.remask_strategy,
         unmask_rule <- a.unmask_rule, prompt <- a.prompt);
    let batch = sample(&chain, &cfg, a.length, a.count)?;
    let wall = batch.wall_time_s;
    let seqs = batch.into_sequences();
    write_token_stream(&a.out, chain.vocab_size(), &seqs)?;
    let meta = SampleMetadata::new(&cfg, a.length, a.count, wall);
    fs::write(sidecar(&a.out), serde_json::to_string_pretty(&meta)?)?;
    info!("sampled {} x {} in {wall:.2}s", a.count, a.length);
    println!("wrote {} and {}", a.out.display(), sidecar(&a.out).display());
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<Vec<u32>>> {
    let reader = load_token_stream(path, None).with_context(|| format!("reading {}", path.display()))?;
    Ok(split_documents(reader)?)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let chain = load_chain(&a.oracle)?;
    let seqs = read_samples(&a.samples)?;
    let meta: Option<SampleMetadata> = fs::read_to_string(sidecar(&a.samples))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    let metrics = evaluate(&seqs, &chain)?;
    let family = meta.as_ref().map(|m| m.family);
    let diffusion = family.is_some_and(Family::is_diffusion);
    let report = MetricsReport {
        dataset: a.dataset,
        kind: if diffusion { RunKind::Diffusion } else { RunKind::Baseline },
        model: a
            .model
            .or_else(|| family.map(|f| f.label().to_string()))
            .unwrap_or_else(|| "samples".into()),
        steps: meta.as_ref().filter(|_| diffusion).map(|m| m.steps),
        seed: meta.as_ref().filter(|_| diffusion).map(|m| m.seed),
        metrics,
    };
    println!("{}", report.to_json());
    if let Some(path) = a.csv {
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&report), &mut buf)?;
        let text = String::from_utf8(buf)?;
        let body = if path.exists() {
            text.split_once('\n').map(|(_, b)| b.to_string()).unwrap_or_default()
        } else {
            text
        };
        use std::io::Write;
        fs::OpenOptions::new().create(true).append(true).open(&path)?.write_all(body.as_bytes())?;
    }
    Ok(())
}

fn export_cmd(a: ExportArgs) -> Result<()> {
    let seqs = read_samples(&a.samples)?;
    let map = match &a.vocab {
        Some(p) => VocabMap::load(p)?,
        None => VocabMap::text8(),
    };
    let e = export_text(&seqs, &map, &a.placeholder);
    fs::write(&a.out, e.text)?;
    if e.missing > 0 {
        warn!("{} ids had no vocabulary entry", e.missing);
        eprintln!("warning: {} ids missing from the vocabulary map", e.missing);
    }
    println!("wrote {} documents to {}", seqs.len(), a.out.display());
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<bool> {
    let mut ok = true;
    for r in harness::verify::run_all(a.seed) {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(ok)
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let env = apply_env()?;
    if let Some(w) = env.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match cli.command {
        Command::BuildOracle(a) => build_oracle_cmd(a)?,
        Command::Sweep(a) => sweep_cmd(a)?,
        Command::Sample(a) => sample_cmd(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::ExportText(a) => export_cmd(a)?,
        Command::Verify(a) => return verify_cmd(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
