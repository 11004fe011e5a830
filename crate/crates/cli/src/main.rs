mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use polyfhe::approx::{fit_inv_sqrt, write_curve_csv, DEFAULT_DOMAIN, DEFAULT_FIT_NODES};
use polyfhe::leakage::{self, AblationParam, Variant};
use polyfhe::pipeline::{
    derive_seed, gen_synthetic_dataset, load_gallery, read_dataset_csv, save_gallery,
    split_enroll_probe, write_dataset_csv, Embedding, Mode, ParamsStore, Pipeline,
};
use polyfhe::polyprotect::{gen_params, PolyProtectParams};
use polyfhe::summation::{bench_summation, write_bench_csv};
use polyfhe::EncryptionContext;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "polyfhe", version, about = "PolyProtect over a simulated slot-encryption backend")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for gallery and grid parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a PolyProtect parameter set.
    GenParams(ParamsArgs),
    /// Write a synthetic labeled dataset as CSV.
    GenData(DataArgs),
    /// Enroll the first sample of every identity into an encrypted gallery.
    Enroll(EnrollArgs),
    /// Rank a saved gallery against every probe in a dataset CSV.
    Identify(IdentifyArgs),
    /// Benchmark naive, DFT and fold summation.
    BenchSum(BenchArgs),
    /// Fit a 1/sqrt(x) approximant and export its error curve.
    FitInvsqrt(FitArgs),
    /// Attribute leakage per protection variant.
    EvalLeakage(LeakageArgs),
    /// Attribute leakage as one PolyProtect parameter varies.
    Ablation(AblationArgs),
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    c_range: Option<i64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    num_ids: Option<usize>,
    #[arg(long)]
    samples_per_id: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    class_separation: Option<f64>,
    #[arg(long)]
    attribute_correlation: Option<f64>,
}

#[derive(Debug, Args)]
struct EnrollArgs {
    /// Dataset CSV (id, gender, age_band, ethnicity, v0..).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    params: ParamsArgs,
    #[arg(long)]
    compress_dim: Option<usize>,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    /// Gallery directory written by `enroll`.
    #[arg(long)]
    gallery: PathBuf,
    /// Parameter store written by `enroll`.
    #[arg(long)]
    params_store: PathBuf,
    /// Probe embeddings in dataset CSV format.
    #[arg(long)]
    probes: PathBuf,
    #[arg(long)]
    degree: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// `a..b` for the powers of two in [a, b], or a comma-separated list.
    #[arg(long, default_value = "2..2048", value_parser = parse_sizes)]
    sizes: Sizes,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
    /// Points in the exported error curve.
    #[arg(long, default_value_t = 512)]
    points: usize,
}

#[derive(Debug, Args)]
struct LeakageArgs {
    /// Dataset CSV; a synthetic set from the configuration when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated variant names; all when absent.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[arg(long, value_parser = parse_param)]
    param: AblationParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<i64>,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Sizes(Vec<usize>);

fn parse_sizes(s: &str) -> std::result::Result<Sizes, String> {
    let bad = || format!("invalid sizes {s:?}");
    let sizes = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        std::iter::successors(Some(a.next_power_of_two()), |n| n.checked_mul(2))
            .take_while(|&n| n <= b)
            .collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    if sizes.is_empty() {
        return Err(bad());
    }
    Ok(Sizes(sizes))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: polyfhe::Error| e.to_string())
}

fn parse_param(s: &str) -> std::result::Result<AblationParam, String> {
    s.parse().map_err(|e: polyfhe::Error| e.to_string())
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

struct Run {
    out_dir: PathBuf,
    cfg: RunConfig,
    outputs: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn finish(self, command: &str) -> Result<()> {
        fs::write(self.out_dir.join("config.toml"), self.cfg.to_toml()?)?;
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config_sha256: self.cfg.digest()?,
            outputs: self.outputs,
        };
        fs::write(self.out_dir.join("run-manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

fn apply_params(cfg: &mut RunConfig, a: &ParamsArgs) {
    let p = &mut cfg.polyprotect;
    p.m = a.m.unwrap_or(p.m);
    p.overlap = a.overlap.unwrap_or(p.overlap);
    p.c_range = a.c_range.unwrap_or(p.c_range);
}

fn read_dataset(path: &Path) -> Result<Vec<Embedding>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_dataset_csv(BufReader::new(f))?)
}

fn dataset_or_synthetic(path: Option<&Path>, cfg: &RunConfig) -> Result<Vec<Embedding>> {
    match path {
        Some(p) => read_dataset(p),
        None => Ok(gen_synthetic_dataset(&cfg.synthetic_spec())?),
    }
}

fn cmd_gen_params(run: &mut Run, a: &ParamsArgs) -> Result<()> {
    apply_params(&mut run.cfg, a);
    let p = &run.cfg.polyprotect;
    let params = gen_params(p.m, p.overlap, p.c_range, run.cfg.seed)?;
    fs::write(run.path("params.json"), params.to_json()?)?;
    println!("params_id {}", params.params_id());
    Ok(())
}

fn cmd_gen_data(run: &mut Run, a: &DataArgs) -> Result<()> {
    let d = &mut run.cfg.dataset;
    d.num_ids = a.num_ids.unwrap_or(d.num_ids);
    d.samples_per_id = a.samples_per_id.unwrap_or(d.samples_per_id);
    d.dim = a.dim.unwrap_or(d.dim);
    d.class_separation = a.class_separation.unwrap_or(d.class_separation);
    d.attribute_correlation = a.attribute_correlation.unwrap_or(d.attribute_correlation);
    let data = gen_synthetic_dataset(&run.cfg.synthetic_spec())?;
    write_dataset_csv(&data, run.create("dataset.csv")?)?;
    println!("{} embeddings of dim {}", data.len(), run.cfg.dataset.dim);
    Ok(())
}

fn cmd_enroll(run: &mut Run, a: &EnrollArgs) -> Result<()> {
    apply_params(&mut run.cfg, &a.params);
    if let Some(d) = a.compress_dim {
        run.cfg.pipeline.compress_dim = d;
    }
    let data = read_dataset(&a.data)?;
    let pipe = Pipeline::new(run.cfg.pipeline_config()?)?;
    let (enrolled, _) = split_enroll_probe(&data);
    let (gallery, store) = pipe.enroll_all(&enrolled, Mode::Encrypted)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run.cfg.seed, "gallery-nonce", 0));
    save_gallery(&run.path("gallery"), &gallery, &pipe.ctx, &mut rng)?;
    let mut params: Vec<&PolyProtectParams> = store.iter().collect();
    params.sort_by(|x, y| x.params_id().cmp(y.params_id()));
    fs::write(run.path("params_store.json"), serde_json::to_string_pretty(&params)?)?;
    println!("enrolled {} subjects", gallery.len());
    Ok(())
}

fn cmd_identify(run: &mut Run, a: &IdentifyArgs) -> Result<()> {
    if let Some(d) = a.degree {
        run.cfg.approx.degree = d;
    }
    let text = fs::read_to_string(&a.params_store)
        .with_context(|| format!("reading {}", a.params_store.display()))?;
    let params: Vec<PolyProtectParams> = serde_json::from_str(&text).map_err(polyfhe::Error::from)?;
    let store: ParamsStore = params.into_iter().collect();
    let pipe = Pipeline::new(run.cfg.pipeline_config()?)?;
    let gallery = load_gallery(&a.gallery, &pipe.ctx, &store)
        .with_context(|| format!("loading gallery {}", a.gallery.display()))?;
    let probes = read_dataset(&a.probes)?;

    let mut out = run.create("ranking.csv")?;
    writeln!(out, "probe,true_id,rank,subject_id,score")?;
    let mut hits = 0;
    for (i, probe) in probes.iter().enumerate() {
        let ranking = pipe.identify(probe, &gallery, &store, Mode::Encrypted)?;
        for (r, (id, score)) in ranking.iter().enumerate() {
            writeln!(out, "{i},{},{},{id},{score:.9}", probe.subject_id, r + 1)?;
        }
        let (top, score) = ranking[0];
        hits += (top == probe.subject_id) as usize;
        println!("probe {i}: rank-1 subject {top} score {score:.6}");
    }
    out.flush()?;
    if !probes.is_empty() {
        println!("rank-1 accuracy {:.4}", hits as f64 / probes.len() as f64);
    }
    Ok(())
}

fn cmd_bench_sum(run: &mut Run, a: &BenchArgs) -> Result<()> {
    let max = *a.sizes.0.iter().max().expect("nonempty");
    let ctx = EncryptionContext::new(max.next_power_of_two(), run.cfg.ctx.depth_budget, run.cfg.key_seed())?;
    let rows = bench_summation(&a.sizes.0, &ctx, a.repeats, run.cfg.seed)?;
    write_bench_csv(&rows, run.create("bench_sum.csv")?)?;
    println!("{} rows", rows.len());
    Ok(())
}

fn cmd_fit_invsqrt(run: &mut Run, a: &FitArgs) -> Result<()> {
    if let Some(d) = a.degree {
        run.cfg.approx.degree = d;
    }
    let base = run.cfg.approx.domain_or(DEFAULT_DOMAIN)?;
    let (lo, hi) = (a.lo.unwrap_or(base.lo), a.hi.unwrap_or(base.hi));
    run.cfg.approx.domain = Some([lo, hi]);
    let domain = polyfhe::approx::Domain::new(lo, hi)?;
    let approx = fit_inv_sqrt(run.cfg.approx.degree, domain, DEFAULT_FIT_NODES)?;
    fs::write(run.path("invsqrt.json"), approx.to_json()?)?;
    write_curve_csv(&approx, a.points, run.create("invsqrt_curve.csv")?)?;
    println!(
        "degree {} on [{lo}, {hi}]: max rel err {:.6e}, mean {:.6e}",
        approx.degree, approx.fit_report.max_rel_err, approx.fit_report.mean_rel_err
    );
    Ok(())
}

fn cmd_eval_leakage(run: &mut Run, a: &LeakageArgs) -> Result<()> {
    let data = dataset_or_synthetic(a.data.as_deref(), &run.cfg)?;
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let reports = leakage::run_leakage_suite(&data, &variants, &run.cfg.leakage_config())?;
    leakage::write_leakage_csv(&reports, run.create("leakage.csv")?)?;
    for r in &reports {
        println!(
            "{:<10} {:<20} a_o {:.4} a_p {:.4} pg_x100 {:>7.2} sr {:>7.4} chance {:.4}",
            r.attribute.name(),
            r.variant,
            r.a_o,
            r.a_p,
            100.0 * r.pg,
            r.sr,
            r.chance
        );
    }
    Ok(())
}

fn cmd_ablation(run: &mut Run, a: &AblationArgs) -> Result<()> {
    let data = dataset_or_synthetic(a.data.as_deref(), &run.cfg)?;
    let rows = leakage::ablation_sweep(a.param, &a.values, &data, &run.cfg.leakage_config())?;
    leakage::write_ablation_csv(&rows, run.create(&format!("ablation_{}.csv", a.param.name()))?)?;
    println!("{} rows", rows.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let mut r = Run {
        out_dir: cli.out_dir.clone(),
        cfg,
        outputs: Vec::new(),
    };
    let name = match &cli.command {
        Command::GenParams(a) => cmd_gen_params(&mut r, a).map(|_| "gen-params"),
        Command::GenData(a) => cmd_gen_data(&mut r, a).map(|_| "gen-data"),
        Command::Enroll(a) => cmd_enroll(&mut r, a).map(|_| "enroll"),
        Command::Identify(a) => cmd_identify(&mut r, a).map(|_| "identify"),
        Command::BenchSum(a) => cmd_bench_sum(&mut r, a).map(|_| "bench-sum"),
        Command::FitInvsqrt(a) => cmd_fit_invsqrt(&mut r, a).map(|_| "fit-invsqrt"),
        Command::EvalLeakage(a) => cmd_eval_leakage(&mut r, a).map(|_| "eval-leakage"),
        Command::Ablation(a) => cmd_ablation(&mut r, a).map(|_| "ablation"),
    }?;
    r.finish(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !parts.last().is_some_and(|p| p.ends_with(&cause)) {
                    parts.push(cause);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(1)
        }
    }
}
