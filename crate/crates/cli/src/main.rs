use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use trurm_core::adversary::{features_for, run_attack, TrainingMeta};
use trurm_core::afd::{decompose, AfdParams};
use trurm_core::fpe::{encrypt_segment, estimate_t_res, EncryptionKey, PerturbationParams};
use trurm_core::harness::{self, emit_reports, run_scenario_sweep, snr_for_distance, Sample, ScenarioConfig};
use trurm_core::io::{self, DecomposedRecord, EncryptedRecord, RateRow, SegmentMeta};
use trurm_core::optim::search::tradeoff_csv;
use trurm_core::optim::{optimize_betas, GridSpec, SearchConfig};
use trurm_core::preprocess::{preprocess_cube, DEFAULT_EXCLUDE_DC_BINS};
use trurm_core::ptn::{ptn_monitor, PtnParams};
use trurm_core::sim::{self, PersonaProfile, RadarConfig};
use trurm_core::par;

/// Privacy-preserving respiration monitoring from FMCW radar phase.
#[derive(Parser)]
#[command(name = "tru-rm", version)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// JSON file with the verb's parameter block; explicit flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (or directory for `evaluate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesise a radar cube; --config takes a radar config.
    Simulate(SimulateArgs),
    /// Range FFT, phase extraction and segmentation of a cube.
    Preprocess(PreprocessArgs),
    /// Split segments into respiratory, personal and residual components; --config takes decomposition params.
    Decompose(DecomposeArgs),
    /// Perturb the identity-bearing components under a key; --config takes perturbation params.
    Encrypt(EncryptArgs),
    /// Estimate respiration rates from encrypted segments; --config takes network params.
    Monitor(MonitorArgs),
    /// Train and score the identity classifier; --config takes training params.
    Attack(AttackArgs),
    /// Grid search over perturbation strengths; --config takes search params.
    Sweep(SweepArgs),
    /// Scenario sweep over distance, pattern and duration; --config takes a scenario config.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Persona JSON; defaults to a member of the seeded built-in cohort.
    #[arg(long)]
    persona: Option<PathBuf>,
    /// Index into the built-in cohort when --persona is absent.
    #[arg(long, default_value_t = 0)]
    persona_index: usize,
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Subject range in metres; overrides the persona's.
    #[arg(long)]
    distance: Option<f64>,
    /// Segment SNR; derived from the distance when absent.
    #[arg(long)]
    snr_db: Option<f64>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    window: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = DEFAULT_EXCLUDE_DC_BINS)]
    exclude_dc: usize,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of VMD modes.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Respiration band as LO:HI in Hz.
    #[arg(long)]
    band: Option<String>,
}

#[derive(Args)]
struct EncryptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Key file holding lowercase hex.
    #[arg(long)]
    key: PathBuf,
    /// Create the key file from the seed when it does not exist yet.
    #[arg(long)]
    generate_key: Option<usize>,
    #[arg(long)]
    beta_amp: Option<f64>,
    #[arg(long)]
    beta_phase: Option<f64>,
    /// Security margin ε in bits.
    #[arg(long)]
    epsilon: Option<usize>,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Network parameters; an identity network when absent.
    #[arg(long)]
    ptn: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Labelled segment, decomposition or encrypted files.
    #[arg(long, num_args = 1.., required = true)]
    train: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    test: Vec<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory of labelled decomposition files.
    #[arg(long)]
    cohort: PathBuf,
    /// Log-spaced axes, e.g. `beta_amp=0:2:5 beta_phase=0:2:5`.
    #[arg(long, num_args = 1..)]
    grid_log: Vec<String>,
    #[arg(long)]
    ptn: Option<PathBuf>,
    #[arg(long)]
    mae_budget: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Overrides the config's seed list.
    #[arg(long, num_args = 1..)]
    seeds: Vec<u64>,
}

fn load_or<T: serde::de::DeserializeOwned>(config: &Option<PathBuf>, default: T) -> Result<T> {
    match config {
        Some(p) => io::read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(default),
    }
}

fn out_path(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| anyhow!("band must be LO:HI, got '{s}'"))?;
    let band = (a.trim().parse::<f64>()?, b.trim().parse::<f64>()?);
    if !(band.0 > 0.0 && band.1 > band.0) {
        bail!("band must satisfy 0 < LO < HI");
    }
    Ok(band)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let radar: RadarConfig = load_or(&cli.config, RadarConfig::desk())?;
    radar.validate()?;
    let mut persona: PersonaProfile = match &a.persona {
        Some(p) => io::read_json(p).with_context(|| format!("reading persona {}", p.display()))?,
        None => sim::default_cohort(cli.seed)
            .into_iter()
            .nth(a.persona_index)
            .ok_or_else(|| anyhow!("persona index must be below {}", sim::COHORT_SIZE))?,
    };
    if let Some(d) = a.distance {
        persona.base_range = d;
    }
    let snr = match a.snr_db {
        Some(s) => s,
        None => snr_for_distance(persona.base_range)?,
    };
    let disp = sim::synth_displacement(&persona, a.duration, radar.slow_time_rate(), cli.seed)?;
    let cube = sim::synth_radar_cube(&disp, &radar, sim::noise_std_for_snr(&radar, snr), cli.seed ^ 0xC0BE)?;
    io::write_cube(out, &cube)?;
    eprintln!("wrote {} frames for persona {} to {}", cube.frames, persona.id_label, out.display());
    Ok(())
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let cube = io::read_cube(&a.input).with_context(|| format!("reading cube {}", a.input.display()))?;
    let id = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (bin, segs) = preprocess_cube(&cube, a.window, a.overlap, a.exclude_dc, &id)?;
    io::write_segments(out, &segs)?;
    eprintln!("target bin {} at {:.3} m, {} segments", bin.bin_index, bin.range, segs.len());
    Ok(())
}

fn decompose_cmd(cli: &Cli, a: &DecomposeArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let mut params: AfdParams = load_or(&cli.config, AfdParams::default())?;
    if let Some(k) = a.k {
        params.vmd.k = k;
    }
    if let Some(b) = &a.band {
        params.band = parse_band(b)?;
    }
    let segs = io::read_segments(&a.input).with_context(|| format!("reading segments {}", a.input.display()))?;
    if segs.is_empty() {
        bail!("{} holds no segments", a.input.display());
    }
    let records = par::try_map(&segs, |s| decompose(s, &params).map(|signal| DecomposedRecord { meta: SegmentMeta::of(s), signal }))?;
    io::write_decomposition(out, &params, &records)?;
    eprintln!("decomposed {} segments", records.len());
    Ok(())
}

fn encrypt(cli: &Cli, a: &EncryptArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let mut pp: PerturbationParams = load_or(&cli.config, PerturbationParams::default())?;
    if let Some(v) = a.beta_amp {
        pp.beta_amp = v;
    }
    if let Some(v) = a.beta_phase {
        pp.beta_phase = v;
    }
    if let Some(v) = a.epsilon {
        pp.epsilon_margin = v;
    }
    let key = match (a.key.exists(), a.generate_key) {
        (true, _) => io::read_key_hex(&a.key).with_context(|| format!("reading key {}", a.key.display()))?,
        (false, Some(bits)) => {
            let k = EncryptionKey::random(bits, cli.seed)?;
            io::write_key_hex(&a.key, &k)?;
            k
        }
        (false, None) => bail!("key file {} does not exist (pass --generate-key <bits> to create it)", a.key.display()),
    };
    pp.validate(key.len())?;
    let (_, recs) = io::read_decomposition(&a.input).with_context(|| format!("reading decomposition {}", a.input.display()))?;
    if recs.is_empty() {
        bail!("{} holds no segments", a.input.display());
    }
    let enc = par::try_map(&recs, |r| {
        let t_res = estimate_t_res(&r.signal.x_ure, r.meta.sample_rate);
        encrypt_segment(&r.signal, &key, &pp, t_res, r.meta.sample_rate).map(|enc| EncryptedRecord { meta: r.meta.clone(), enc })
    })?;
    io::write_encrypted(out, &enc, pp.beta_amp, pp.beta_phase)?;
    eprintln!("encrypted {} segments under key {}", enc.len(), enc[0].enc.key_fingerprint);
    Ok(())
}

fn monitor(cli: &Cli, a: &MonitorArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let recs = io::read_encrypted(&a.input).with_context(|| format!("reading encrypted {}", a.input.display()))?;
    let first = recs.first().ok_or_else(|| anyhow!("{} holds no segments", a.input.display()))?;
    let ptn_file = a.ptn.as_ref().or(cli.config.as_ref());
    let params = match ptn_file {
        Some(p) => io::read_json::<PtnParams>(p).with_context(|| format!("reading network params {}", p.display()))?,
        None => PtnParams::new(first.meta.sample_rate, cli.seed)?,
    };
    params.validate()?;
    let rows = par::try_map(&recs, |r| {
        ptn_monitor(&r.enc, &params, false).map(|m| RateRow {
            segment_index: r.meta.segment_index,
            start_time_s: r.meta.start_time,
            rate_bpm: m.rate.bpm,
            truth_bpm: r.meta.truth.as_ref().map(|t| t.resp_rate_bpm),
            peak_prominence: m.rate.prominence,
        })
    })?;
    io::write_rates_csv(out, &rows)?;
    Ok(())
}

/// Series and identity labels from any labelled series file.
fn labelled_series(path: &Path) -> Result<(f64, Vec<(Vec<f64>, u32)>)> {
    let fmt = io::peek_format(path)?;
    let rows: Vec<(SegmentMeta, Vec<f64>)> = match fmt.as_str() {
        "segments" => io::read_segments(path)?
            .into_iter()
            .map(|s| {
                let m = SegmentMeta::of(&s);
                let mu = s.phase.iter().sum::<f64>() / s.phase.len().max(1) as f64;
                (m, s.phase.iter().map(|v| v - mu).collect())
            })
            .collect(),
        "decomposition" => io::read_decomposition(path)?.1.into_iter().map(|r| (r.meta, r.signal.recombine())).collect(),
        "encrypted" => io::read_encrypted(path)?.into_iter().map(|r| (r.meta, r.enc.y)).collect(),
        other => bail!("{} has unsupported format '{other}'", path.display()),
    };
    let fs = rows.first().map(|(m, _)| m.sample_rate).ok_or_else(|| anyhow!("{} holds no segments", path.display()))?;
    let out = rows
        .into_iter()
        .map(|(m, y)| {
            let label = m
                .truth
                .and_then(|t| t.id_label)
                .ok_or_else(|| anyhow!("segment {} of {} has no identity label", m.segment_index, m.source_id))?;
            Ok((y, label))
        })
        .collect::<Result<_>>()?;
    Ok((fs, out))
}

fn features(paths: &[PathBuf]) -> Result<Vec<(trurm_core::adversary::IdFeatureVector, u32)>> {
    let mut all = Vec::new();
    for p in paths {
        let (fs, rows) = labelled_series(p).with_context(|| format!("reading {}", p.display()))?;
        let (ys, labels): (Vec<Vec<f64>>, Vec<u32>) = rows.into_iter().unzip();
        all.extend(features_for(&ys, fs)?.into_iter().zip(labels));
    }
    Ok(all)
}

fn attack(cli: &Cli, a: &AttackArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let meta: TrainingMeta = load_or(&cli.config, TrainingMeta { seed: cli.seed, ..TrainingMeta::default() })?;
    let report = run_attack(&features(&a.train)?, &features(&a.test)?, meta)?;
    io::write_json(out, &report)?;
    eprintln!("IRAC {:.4} on {} test segments", report.irac, report.n_test);
    Ok(())
}

fn cohort_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading cohort directory {}", dir.display()))? {
        let p = e?.path();
        if p.is_file() && io::peek_format(&p).map(|f| f == "decomposition").unwrap_or(false) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no decomposition files in {}", dir.display());
    }
    Ok(files)
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let mut cfg: SearchConfig = load_or(&cli.config, SearchConfig { seed: cli.seed, ..SearchConfig::default() })?;
    for spec in &a.grid_log {
        let (name, axis) = spec.split_once('=').ok_or_else(|| anyhow!("grid axis must be NAME=LO:HI:N, got '{spec}'"))?;
        let vals = GridSpec::parse_axis(axis)?;
        match name {
            "beta_amp" => cfg.grid.beta_amp = vals,
            "beta_phase" => cfg.grid.beta_phase = vals,
            other => bail!("unknown grid axis '{other}'"),
        }
    }
    if let Some(b) = a.mae_budget {
        cfg.mae_budget = b;
    }
    let mut samples = Vec::new();
    let mut rate = None;
    for f in cohort_files(&a.cohort)? {
        let (_, recs) = io::read_decomposition(&f).with_context(|| format!("reading {}", f.display()))?;
        for r in recs {
            let fs = r.meta.sample_rate;
            if *rate.get_or_insert(fs) != fs {
                bail!("cohort mixes sample rates");
            }
            let truth = r.meta.truth.clone().ok_or_else(|| anyhow!("{}: segment {} has no truth", f.display(), r.meta.segment_index))?;
            let label = truth.id_label.ok_or_else(|| anyhow!("{}: segment {} has no identity label", f.display(), r.meta.segment_index))?;
            samples.push(Sample {
                t_res: estimate_t_res(&r.signal.x_ure, fs),
                decomposed: r.signal,
                label,
                truth_bpm: truth.resp_rate_bpm,
                start_time: r.meta.start_time,
                segment_index: r.meta.segment_index,
                source_id: r.meta.source_id,
            });
        }
    }
    let fs = rate.unwrap_or(20.0);
    let ds = harness::dataset_from_samples(samples, fs, cfg.seed)?;
    let ptn = match &a.ptn {
        Some(p) => io::read_json::<PtnParams>(p)?,
        None => PtnParams::new(fs, cfg.seed)?,
    };
    let result = optimize_betas(&ds, &ptn, &cfg)?;
    let csv = out.with_extension("csv");
    io::atomic_write(&csv, tradeoff_csv(&result).as_bytes())?;
    if let Err(e) = io::write_json(out, &result) {
        let _ = std::fs::remove_file(&csv);
        return Err(e.into());
    }
    eprintln!(
        "selected beta_amp {:.4} beta_phase {:.4}: IRAC {:.4} (baseline {:.4}), MAE {:.4} bpm",
        result.beta_amp, result.beta_phase, result.irac_enc, result.baseline_irac, result.mae_bpm
    );
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let out = out_path(&cli.out)?;
    let mut cfg: ScenarioConfig = load_or(&cli.config, ScenarioConfig { seeds: vec![cli.seed], ..ScenarioConfig::default() })?;
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    let reports = run_scenario_sweep(&cfg)?;
    let paths = emit_reports(&reports, out)?;
    print!("{}", std::fs::read_to_string(&paths.text)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Simulate(a) => simulate(cli, a),
        Cmd::Preprocess(a) => preprocess(cli, a),
        Cmd::Decompose(a) => decompose_cmd(cli, a),
        Cmd::Encrypt(a) => encrypt(cli, a),
        Cmd::Monitor(a) => monitor(cli, a),
        Cmd::Attack(a) => attack(cli, a),
        Cmd::Sweep(a) => sweep(cli, a),
        Cmd::Evaluate(a) => evaluate(cli, a),
    }
}

fn main() -> ExitCode {
    par::init_from_env();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
