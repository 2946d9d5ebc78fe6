use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_env, HarnessError, VERSION};
use crate::corpus::write_token_stream;
use crate::kernel::{io as kernel_io, OracleChain};
use crate::metrics::{evaluate, write_csv, MetricsReport, RunKind};
use crate::samplers::{sample, Family, RemaskStrategy, SampleMetadata, SamplerConfig, UnmaskRule};

pub const DEFAULT_STEPS: [usize; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];

/// One sampler family and the grid of its free parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyGrid {
    pub family: Family,
    /// Overrides the sweep-level step list.
    pub steps: Option<Vec<usize>>,
    pub betas: Vec<f64>,
    pub nucleus: Vec<f64>,
    pub eta_cap: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub remask_strategy: RemaskStrategy,
    pub unmask_rule: UnmaskRule,
    pub prompt: Vec<u32>,
}

impl Default for FamilyGrid {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            family: d.family,
            steps: None,
            betas: vec![1.0],
            nucleus: vec![1.0],
            eta_cap: d.eta_cap,
            t_on: d.t_on,
            t_off: d.t_off,
            remask_strategy: d.remask_strategy,
            unmask_rule: d.unmask_rule,
            prompt: Vec::new(),
        }
    }
}

impl FamilyGrid {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Value of the `Dataset` column.
    pub dataset: String,
    pub oracle: PathBuf,
    /// Sequence length `T`.
    pub length: usize,
    /// Sequences per cell `N`.
    pub count: usize,
    pub seeds: Vec<u64>,
    pub steps: Vec<usize>,
    pub families: Vec<FamilyGrid>,
    pub output_dir: PathBuf,
    /// Concurrent cells; defaults to the number of cores.
    pub workers: Option<usize>,
    /// Also write each cell's sequences as a token stream.
    pub save_samples: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            dataset: "Text8 (Char)".into(),
            oracle: PathBuf::from("oracle.bin"),
            length: 1024,
            count: 512,
            seeds: vec![123],
            steps: DEFAULT_STEPS.to_vec(),
            families: Vec::new(),
            output_dir: PathBuf::from("sweep"),
            workers: None,
            save_samples: false,
        }
    }
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(s).map_err(|e| HarnessError::Input(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut spec = Self::from_toml_str(&fs::read_to_string(path)?)?;
        // relative paths in a spec file are relative to the file
        if let Some(dir) = path.parent() {
            if spec.oracle.is_relative() {
                spec.oracle = dir.join(&spec.oracle);
            }
            if spec.output_dir.is_relative() {
                spec.output_dir = dir.join(&spec.output_dir);
            }
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Applies the `DLM_WORKERS` and `DLM_OUTPUT_DIR` overrides.
    pub fn with_env(mut self) -> Result<Self, HarnessError> {
        let env = apply_env()?;
        if let Some(w) = env.workers {
            self.workers = Some(w);
        }
        if let Some(d) = env.output_dir {
            self.output_dir = d;
        }
        Ok(self)
    }

    /// All cells in grid order: family, beta, nucleus, steps, seed.
    pub fn expand(&self) -> Result<Vec<CellSpec>, HarnessError> {
        if self.length < 2 || self.count == 0 {
            return Err(HarnessError::Input(format!(
                "need length >= 2 and count >= 1, got {} and {}",
                self.length, self.count
            )));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Input("no seeds".into()));
        }
        let mut cells = Vec::new();
        for grid in &self.families {
            let steps = if grid.family.is_diffusion() {
                grid.steps.clone().unwrap_or_else(|| self.steps.clone())
            } else {
                vec![1]
            };
            let nucleus = if grid.family.is_remdm() { grid.nucleus.clone() } else { vec![1.0] };
            for &beta in &grid.betas {
                for &p in &nucleus {
                    for &s in &steps {
                        for &seed in &self.seeds {
                            let config = SamplerConfig {
                                family: grid.family,
                                steps: s,
                                beta,
                                eta_cap: grid.eta_cap,
                                t_on: grid.t_on,
                                t_off: grid.t_off,
                                nucleus_p: p,
                                remask_strategy: grid.remask_strategy,
                                unmask_rule: grid.unmask_rule,
                                prompt: grid.prompt.clone(),
                                seed,
                            };
                            config.validate_for(usize::MAX, self.length)?;
                            cells.push(CellSpec {
                                config,
                                single_seed: self.seeds.len() == 1,
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One sampler configuration to run and evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub config: SamplerConfig,
    single_seed: bool,
}

impl CellSpec {
    /// `Model` column: family label plus any non-default grid parameter.
    pub fn model_label(&self) -> String {
        let c = &self.config;
        let mut label = c.family.label().to_string();
        if c.beta != 1.0 {
            label += &format!(" (β={})", c.beta);
        }
        if c.nucleus_p < 1.0 {
            label += &format!(" (p={})", c.nucleus_p);
        }
        label
    }

    fn report(&self, dataset: &str, metrics: crate::metrics::Metrics) -> MetricsReport {
        let c = &self.config;
        let ar = !c.family.is_diffusion();
        MetricsReport {
            dataset: dataset.to_string(),
            kind: if ar { RunKind::Baseline } else { RunKind::Diffusion },
            model: self.model_label(),
            steps: (!ar).then_some(c.steps),
            seed: (!ar || !self.single_seed).then_some(c.seed),
            metrics,
        }
    }
}

/// Everything that determines a cell's result.
#[derive(Serialize)]
struct CellKey<'a> {
    dataset: &'a str,
    oracle_sha256: &'a str,
    length: usize,
    count: usize,
    config: &'a SamplerConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub oracle: PathBuf,
    pub oracle_sha256: String,
    pub length: usize,
    pub count: usize,
    pub config: SamplerConfig,
    pub wall_time_s: f64,
    pub sample_time_s: f64,
    pub outputs: Vec<PathBuf>,
    pub error: Option<String>,
}

/// Stored result of one cell; `report` is absent when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub manifest: RunManifest,
    pub report: Option<MetricsReport>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop after computing this many new cells (the rest stay pending).
    pub max_new_cells: Option<usize>,
    /// Recompute cells even if a completed record exists.
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub csv_path: PathBuf,
    pub jsonl_path: PathBuf,
    pub manifest_path: PathBuf,
    pub reports: Vec<MetricsReport>,
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub pending: usize,
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    version: &'a str,
    spec: &'a SweepSpec,
    cells: Vec<Option<&'a RunManifest>>,
}

fn load_record(path: &Path) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every pending cell of `spec` and rebuilds the CSV, JSON-lines and
/// manifest outputs from all completed cells in grid order.
pub fn run_sweep(spec: &SweepSpec, options: RunOptions) -> Result<SweepOutcome, HarnessError> {
    let cells = spec.expand()?;
    let out = &spec.output_dir;
    let cell_dir = out.join("cells");
    fs::create_dir_all(&cell_dir)?;
    if spec.save_samples {
        fs::create_dir_all(out.join("samples"))?;
    }

    let (chain, oracle_sha256) = if cells.is_empty() {
        (None, String::new())
    } else {
        let bytes = fs::read(&spec.oracle)?;
        let kernel = kernel_io::load(&spec.oracle)?;
        (Some(OracleChain::new(kernel)?), sha256_hex(&bytes))
    };

    let hashes: Vec<String> = cells
        .iter()
        .map(|c| {
            let key = CellKey {
                dataset: &spec.dataset,
                oracle_sha256: &oracle_sha256,
                length: spec.length,
                count: spec.count,
                config: &c.config,
            };
            sha256_hex(serde_json::to_string(&key).expect("key serializes").as_bytes())
        })
        .collect();

    let mut records: Vec<Option<CellRecord>> = hashes
        .iter()
        .map(|h| {
            if options.force {
                None
            } else {
                load_record(&cell_dir.join(format!("{h}.json"))).filter(|r| r.report.is_some())
            }
        })
        .collect();
    let skipped = records.iter().filter(|r| r.is_some()).count();
    let mut todo: Vec<usize> = (0..cells.len()).filter(|&i| records[i].is_none()).collect();
    let pending = options.max_new_cells.map_or(0, |m| todo.len().saturating_sub(m));
    todo.truncate(todo.len() - pending);
    info!(
        "sweep: {} cells, {} already complete, {} to run, {} deferred",
        cells.len(),
        skipped,
        todo.len(),
        pending
    );

    let workers = spec.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Input(e.to_string()))?;
    let total = todo.len();
    let (tx, rx) = mpsc::channel::<(usize, CellRecord)>();
    let mut computed = 0;
    let mut failed = 0;
    std::thread::scope(|scope| -> Result<(), HarnessError> {
        if let Some(chain) = &chain {
            let todo = &todo;
            let cells = &cells;
            let hashes = &hashes;
            let oracle_sha256 = &oracle_sha256;
            let pool = &pool;
            scope.spawn(move || {
                pool.install(|| {
                    todo.par_iter().for_each_with(tx, |tx, &i| {
                        let rec = run_cell(spec, chain, &cells[i], &hashes[i], oracle_sha256);
                        let _ = tx.send((i, rec));
                    })
                })
            });
        } else {
            drop(tx);
        }
        // single collector: all output writing happens here
        for (i, rec) in rx {
            let path = cell_dir.join(format!("{}.json", hashes[i]));
            write_atomic(&path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
            computed += 1;
            match &rec.manifest.error {
                None => info!(
                    "[{computed}/{total}] {} S={} seed={}: {:.2}s",
                    cells[i].model_label(),
                    cells[i].config.steps,
                    cells[i].config.seed,
                    rec.manifest.wall_time_s
                ),
                Some(e) => {
                    failed += 1;
                    warn!("[{computed}/{total}] {} failed: {e}", cells[i].model_label());
                }
            }
            if rec.report.is_some() {
                records[i] = Some(rec);
            }
        }
        Ok(())
    })?;

    let reports: Vec<MetricsReport> = records.iter().flatten().filter_map(|r| r.report.clone()).collect();
    let csv_path = out.join("results.csv");
    let mut buf = Vec::new();
    write_csv(&reports, &mut buf)?;
    write_atomic(&csv_path, &buf)?;
    let jsonl_path = out.join("results.jsonl");
    let jsonl: String = reports.iter().map(|r| r.to_json() + "\n").collect();
    write_atomic(&jsonl_path, jsonl.as_bytes())?;
    let manifest_path = out.join("manifest.json");
    let manifest = SweepManifest {
        version: VERSION,
        spec,
        cells: records.iter().map(|r| r.as_ref().map(|r| &r.manifest)).collect(),
    };
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;

    Ok(SweepOutcome {
        csv_path,
        jsonl_path,
        manifest_path,
        reports,
        computed,
        skipped,
        failed,
        pending,
    })
}

fn run_cell(spec: &SweepSpec, chain: &OracleChain, cell: &CellSpec, hash: &str, oracle_sha256: &str) -> CellRecord {
    let start = Instant::now();
    let mut manifest = RunManifest {
        config_hash: hash.to_string(),
        version: VERSION.to_string(),
        oracle: spec.oracle.clone(),
        oracle_sha256: oracle_sha256.to_string(),
        length: spec.length,
        count: spec.count,
        config: cell.config.clone(),
        wall_time_s: 0.0,
        sample_time_s: 0.0,
        outputs: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<MetricsReport, HarnessError> {
        let batch = sample(chain, &cell.config, spec.length, spec.count)?;
        manifest.sample_time_s = batch.wall_time_s;
        let seqs = batch.into_sequences();
        let metrics = evaluate(&seqs, chain)?;
        if spec.save_samples {
            let path = spec.output_dir.join("samples").join(format!("{hash}.tokens"));
            write_token_stream(&path, chain.vocab_size(), &seqs)?;
            let meta = SampleMetadata::new(&cell.config, spec.length, spec.count, manifest.sample_time_s);
            let side = path.with_extension("json");
            fs::write(&side, serde_json::to_string_pretty(&meta)?)?;
            manifest.outputs.push(path);
            manifest.outputs.push(side);
        }
        Ok(cell.report(&spec.dataset, metrics))
    })();
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(report) => CellRecord {
            manifest,
            report: Some(report),
        },
        Err(e) => {
            manifest.error = Some(e.to_string());
            CellRecord { manifest, report: None }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::surrogate_char_chain;

    fn spec_in(dir: &Path) -> SweepSpec {
        let chain = surrogate_char_chain(3, 1e-4).unwrap();
        let oracle = dir.join("oracle.bin");
        kernel_io::save_binary(chain.kernel(), &oracle).unwrap();
        SweepSpec {
            oracle,
            length: 12,
            count: 6,
            seeds: vec![1],
            steps: vec![2, 4],
            families: vec![
                FamilyGrid::new(Family::Ar),
                FamilyGrid {
                    betas: vec![1.0, 2.0],
                    ..FamilyGrid::new(Family::Sedd)
                },
                FamilyGrid {
                    nucleus: vec![1.0, 0.9],
                    ..FamilyGrid::new(Family::RemdmConf)
                },
            ],
            output_dir: dir.join("out"),
            workers: Some(2),
            ..SweepSpec::default()
        }
    }

    #[test]
    fn grid_expansion_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path());
        let cells = spec.expand().unwrap();
        // AR: 1, SEDD: 2 betas x 2 steps, ReMDM: 2 nucleus x 2 steps
        assert_eq!(cells.len(), 9);
        let labels: Vec<String> = cells.iter().map(CellSpec::model_label).collect();
        assert_eq!(labels[0], "AR");
        assert_eq!(labels[3], "SEDD (β=2)");
        assert_eq!(labels[8], "ReMDM (p=0.9)");
    }

    #[test]
    fn resume_reproduces_uninterrupted_csv() {
        let dir = tempfile::tempdir().unwrap();
        let spec = spec_in(dir.path());
        let full = run_sweep(&spec, RunOptions::default()).unwrap();
        assert_eq!((full.computed, full.failed), (9, 0));
        let full_csv = fs::read(&full.csv_path).unwrap();
        let lines = String::from_utf8(full_csv.clone()).unwrap();
        assert_eq!(lines.lines().count(), 10);
        assert!(lines.lines().nth(1).unwrap().starts_with("Text8 (Char),Baseline,AR,—,—,"));

        let second = SweepSpec {
            output_dir: dir.path().join("out2"),
            ..spec.clone()
        };
        let part = run_sweep(
            &second,
            RunOptions {
                max_new_cells: Some(4),
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!((part.computed, part.pending), (4, 5));
        let rest = run_sweep(&second, RunOptions::default()).unwrap();
        assert_eq!((rest.computed, rest.skipped), (5, 4));
        assert_eq!(fs::read(&rest.csv_path).unwrap(), full_csv);

        // nothing left to do
        let again = run_sweep(&second, RunOptions::default()).unwrap();
        assert_eq!((again.computed, again.skipped), (0, 9));
        assert_eq!(fs::read(&again.csv_path).unwrap(), full_csv);
    }

    #[test]
    fn empty_family_list_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            families: Vec::new(),
            oracle: dir.path().join("missing.bin"),
            output_dir: dir.path().join("out"),
            ..SweepSpec::default()
        };
        let out = run_sweep(&spec, RunOptions::default()).unwrap();
        let text = fs::read_to_string(out.csv_path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("Dataset,Type,Model,Steps,Seed,NLL,"));
    }

    #[test]
    fn failed_cells_are_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = spec_in(dir.path());
        // prompt token 99 is outside the 27-symbol vocabulary
        spec.families = vec![
            FamilyGrid::new(Family::Mdlm),
            FamilyGrid {
                prompt: vec![99],
                ..FamilyGrid::new(Family::Llada)
            },
        ];
        let out = run_sweep(&spec, RunOptions::default()).unwrap();
        assert_eq!((out.computed, out.failed, out.reports.len()), (4, 2, 2));
        let manifest = fs::read_to_string(out.manifest_path).unwrap();
        assert!(manifest.contains("config_hash"));
    }

    #[test]
    fn spec_toml_roundtrip() {
        let text = r#"
            oracle = "k.bin"
            length = 64
            count = 8
            steps = [8, 16]

            [[families]]
            family = "sedd"
            betas = [1.0, 2.0, 4.0]

            [[families]]
            family = "remdm-loop"
            nucleus = [0.9]
        "#;
        let spec = SweepSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.families.len(), 2);
        assert_eq!(spec.families[0].betas, vec![1.0, 2.0, 4.0]);
        assert_eq!(spec.seeds, vec![123]);
        assert_eq!(SweepSpec::from_toml_str(&spec.to_toml_string()).unwrap(), spec);
        assert!(SweepSpec::from_toml_str("bogus = 1").is_err());
    }
}
