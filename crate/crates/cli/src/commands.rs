use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fnsteg::codec::{embed_with_progress, extract, plan_capacity, EmbedRequest, EmbedResult};
use fnsteg::distort::{hf_residual_critic, Channel};
use fnsteg::io::{read_png, read_png_exact, write_png};
use fnsteg::keyring::{derive_stream, format_seed, InitAlgorithm, KeyMaterial};
use fnsteg::metrics::quality_report;
use fnsteg::sps::{write_trace_csv, ZInit};

use crate::config::{CoverSource, RunConfig};
use crate::CliError;

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "fnsteg",
    version,
    about = "Hide images in key-reproducible covers with fixed random decoders"
)]
pub struct Cli {
    /// Print every seed a command consumes to stderr.
    #[arg(long, global = true)]
    pub seed_report: bool,

    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Print the default run configuration as JSON and exit.
    #[arg(long)]
    pub print_default_config: bool,

    /// Print the JPEG quantization tables (base and scaled) and exit.
    #[arg(long, value_name = "QUALITY", num_args = 0..=1, default_missing_value = "90")]
    pub dump_jpeg_tables: Option<u8>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a key file with fresh seeds from system entropy.
    Keygen {
        /// Number of receivers.
        #[arg(long, short = 't', default_value_t = 1)]
        receivers: usize,
        #[arg(long, default_value_t = InitAlgorithm::Xavier)]
        init: InitAlgorithm,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Write the cover a key file produces.
    Cover {
        #[arg(long, short)]
        keys: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Hide one secret per receiver in a stego image.
    Embed {
        #[arg(long, short)]
        keys: PathBuf,
        /// Secret image; repeat once per receiver, in key-file order.
        #[arg(long = "secret", short, required = true)]
        secrets: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-receiver diagnostics CSV (overrides the config file).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Loss trace CSV (overrides the config file).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Directory for the self-check extractions, `recovered_<t>.png`.
        #[arg(long)]
        recovered_dir: Option<PathBuf>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Recover one receiver's secret from a stego image.
    Extract {
        #[arg(long, short)]
        keys: PathBuf,
        #[arg(long, short, default_value_t = 0)]
        receiver: usize,
        #[arg(long, short)]
        stego: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Compare two images.
    Metrics {
        reference: PathBuf,
        other: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Embed and extract every PNG in a directory and tabulate quality.
    Bench {
        #[arg(long, short)]
        dir: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Seed from which per-image keys are derived.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: RunOpts,
    },
}

/// Run configuration file plus command-line overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct RunOpts {
    /// Run configuration JSON; see --print-default-config.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Capacity in bits per pixel (6 or 1.5).
    #[arg(long)]
    pub bpp: Option<f64>,
    /// Model JPEG at this quality during the search.
    #[arg(long, value_name = "QUALITY")]
    pub jpeg: Option<u8>,
    #[arg(long)]
    pub no_critic: bool,
    /// Procedural cover size, e.g. 256x256.
    #[arg(long, value_name = "HxW")]
    pub cover_size: Option<String>,
    /// Use a fixed PNG cover instead of the procedural one.
    #[arg(long, conflicts_with = "cover_size")]
    pub cover_file: Option<PathBuf>,
}

impl RunOpts {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(n) = self.iters {
            cfg.sps.total_iters = n;
            cfg.sps.gamma_start_iter = cfg.sps.gamma_start_iter.min(n);
        }
        if let Some(e) = self.epsilon {
            cfg.sps.epsilon = e;
        }
        if let Some(b) = self.beta {
            cfg.sps.beta = b;
        }
        if let Some(bpp) = self.bpp {
            cfg.capacity_bpp = plan_capacity(bpp)?;
        }
        if let Some(q) = self.jpeg {
            cfg.robustness = Channel::JpegProxy { quality: q };
        }
        if self.no_critic {
            cfg.critic = false;
        }
        if let Some(s) = &self.cover_size {
            let (h, w) = parse_size(s)?;
            cfg.cover = CoverSource::Procedural { height: h, width: w };
        }
        if let Some(p) = &self.cover_file {
            cfg.cover = CoverSource::File { path: p.clone() };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("cover size must look like 256x256, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        w.trim().parse().map_err(|_| bad())?,
    ))
}

pub struct Context {
    pub seed_report: bool,
    pub quiet: bool,
}

impl Context {
    fn report(&self, line: impl AsRef<str>) {
        if self.seed_report {
            eprintln!("seed-report: {}", line.as_ref());
        }
    }

    fn report_keys(&self, keys: &KeyMaterial, cfg: Option<&RunConfig>, receivers: &[usize]) {
        if !self.seed_report {
            return;
        }
        let procedural = cfg.is_none_or(|c| matches!(c.cover, CoverSource::Procedural { .. }));
        if procedural {
            self.report(format!("cover_seed={}", format_seed(keys.cover_seed)));
        } else {
            self.report(format!(
                "cover_seed={} (unused: file-backed cover)",
                format_seed(keys.cover_seed)
            ));
        }
        for &t in receivers {
            self.report(format!(
                "decoder_seed[{t}]={} init={}",
                format_seed(keys.decoder_seeds[t]),
                keys.init_algorithm
            ));
        }
        if let Some(ZInit::Gaussian { seed, .. }) = cfg.map(|c| c.sps.z_init) {
            self.report(format!("z_init_seed={}", format_seed(seed)));
        }
    }

    fn progress(&self, line: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", line.as_ref());
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context {
        seed_report: cli.seed_report,
        quiet: cli.quiet,
    };
    if cli.print_default_config {
        return emit(&format!("{}\n", RunConfig::default().to_json()));
    }
    if let Some(q) = cli.dump_jpeg_tables {
        fnsteg::distort::JpegProxyConfig::new(q)?;
        return emit(&fnsteg::distort::tables_report(q));
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given; see --help".into()));
    };
    match command {
        Command::Keygen { receivers, init, out } => keygen(&ctx, receivers, init, &out),
        Command::Cover { keys, out, run } => cover(&ctx, &keys, &out, &run),
        Command::Embed {
            keys,
            secrets,
            out,
            diagnostics,
            trace,
            recovered_dir,
            run,
        } => {
            let mut cfg = run.resolve()?;
            if diagnostics.is_some() {
                cfg.outputs.diagnostics_csv = diagnostics;
            }
            if trace.is_some() {
                cfg.outputs.trace_csv = trace;
            }
            embed_cmd(&ctx, &cfg, &keys, &secrets, &out, recovered_dir.as_deref())
        }
        Command::Extract {
            keys,
            receiver,
            stego,
            out,
            run,
        } => extract_cmd(&ctx, &run.resolve()?, &keys, receiver, &stego, &out),
        Command::Metrics { reference, other, csv } => metrics_cmd(&ctx, &reference, &other, csv.as_deref()),
        Command::Bench { dir, out, seed, run } => bench(&ctx, &run.resolve()?, &dir, &out, seed),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn fresh_seed() -> CliResult<u64> {
    getrandom::u64().map_err(|e| CliError::Core(fnsteg::Error::Io(std::io::Error::other(e.to_string()))))
}

pub fn keygen(ctx: &Context, receivers: usize, init: InitAlgorithm, out: &Path) -> CliResult<()> {
    if receivers == 0 {
        return Err(CliError::Usage("at least one receiver is required".into()));
    }
    let cover_seed = fresh_seed()?;
    let mut seeds: Vec<u64> = Vec::with_capacity(receivers);
    while seeds.len() < receivers {
        let s = fresh_seed()?;
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    let keys = KeyMaterial::new(cover_seed, seeds)?.with_init(init);
    fs::write(out, keys.to_json()?)?;
    let all: Vec<usize> = (0..receivers).collect();
    ctx.report_keys(&keys, None, &all);
    ctx.progress(format!("wrote {} with {receivers} decoder seed(s)", out.display()));
    Ok(())
}

fn load_keys(path: &Path) -> CliResult<KeyMaterial> {
    Ok(KeyMaterial::from_json(&fs::read_to_string(path)?)?)
}

pub fn cover(ctx: &Context, keys: &Path, out: &Path, run: &RunOpts) -> CliResult<()> {
    let cfg = run.resolve()?;
    let keys = load_keys(keys)?;
    ctx.report_keys(&keys, Some(&cfg), &[]);
    let provider = cfg.cover.provider(keys.cover_seed);
    let c = fnsteg::cover::generate_cover(&provider, cfg.capacity_bpp.stride_product())?;
    write_png(out, &c)?;
    Ok(())
}

fn build_request(cfg: &RunConfig, keys: KeyMaterial, secrets: Vec<fnsteg::nn::ImagePlane>) -> CliResult<EmbedRequest> {
    let provider = cfg.cover.provider(keys.cover_seed);
    let mut req = EmbedRequest::new(keys, secrets, provider, cfg.capacity_bpp);
    req.sps = cfg.sps.clone();
    req.decoder = cfg.decoder_spec();
    req.robustness = cfg.robustness;
    req.warning_floor_db = cfg.warning_floor_db;
    if cfg.critic {
        req.critics.push(hf_residual_critic());
    }
    Ok(req)
}

fn run_embed(ctx: &Context, req: &EmbedRequest) -> CliResult<EmbedResult> {
    let total = req.sps.total_iters;
    let step = (total / 10).max(1);
    Ok(embed_with_progress(req, |row| {
        if row.iteration % step == 0 || row.iteration + 1 == total {
            ctx.progress(format!(
                "iter {:>5}/{total}  loss {:.4}  |delta| {:.4}  recovery {:?}",
                row.iteration,
                row.loss.total,
                row.loss.perturbation_norm,
                row.loss
                    .recovery_terms
                    .iter()
                    .map(|v| (v * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            ));
        }
    })?)
}

#[derive(Serialize)]
struct DiagnosticsRow {
    receiver: usize,
    decoder_seed: String,
    original_height: usize,
    original_width: usize,
    recovery_psnr_db: f64,
    recovery_ssim: f64,
    after_channel_psnr_db: Option<f64>,
    below_warning_floor: bool,
    stego_psnr_db: f64,
    stego_ssim: f64,
    stego_linf: f64,
    best_iteration: usize,
    best_total_loss: f64,
}

pub fn embed_cmd(
    ctx: &Context,
    cfg: &RunConfig,
    keys: &Path,
    secrets: &[PathBuf],
    out: &Path,
    recovered_dir: Option<&Path>,
) -> CliResult<()> {
    let keys = load_keys(keys)?;
    if secrets.len() != keys.receivers() {
        return Err(CliError::Usage(format!(
            "{} secret image(s) given but the key file has {} receiver(s)",
            secrets.len(),
            keys.receivers()
        )));
    }
    let all: Vec<usize> = (0..keys.receivers()).collect();
    ctx.report_keys(&keys, Some(cfg), &all);
    let images = secrets.iter().map(read_png).collect::<fnsteg::Result<Vec<_>>>()?;
    let req = build_request(cfg, keys, images)?;
    let res = run_embed(ctx, &req)?;
    write_png(out, &res.stego)?;

    if let Some(dir) = recovered_dir {
        fs::create_dir_all(dir)?;
        for (t, r) in res.receivers.iter().enumerate() {
            write_png(dir.join(format!("recovered_{t}.png")), &r.recovered)?;
        }
    }
    if let Some(p) = &cfg.outputs.trace_csv {
        write_trace_csv(&res.trace, fs::File::create(p)?)?;
    }
    for w in res.warnings() {
        eprintln!("warning: {w}");
    }
    if let Some(p) = &cfg.outputs.diagnostics_csv {
        let mut w = csv::Writer::from_path(p)?;
        for (t, r) in res.receivers.iter().enumerate() {
            w.serialize(DiagnosticsRow {
                receiver: t,
                decoder_seed: format_seed(r.seed),
                original_height: r.original_size.0,
                original_width: r.original_size.1,
                recovery_psnr_db: r.recovery.psnr_db,
                recovery_ssim: r.recovery.ssim,
                after_channel_psnr_db: r.after_channel.as_ref().map(|(_, q)| q.psnr_db),
                below_warning_floor: r.below_floor,
                stego_psnr_db: res.stego_quality.psnr_db,
                stego_ssim: res.stego_quality.ssim,
                stego_linf: res.stego_quality.linf,
                best_iteration: res.best_iteration,
                best_total_loss: res.trace[res.best_iteration].loss.total,
            })?;
        }
        w.flush()?;
    }
    ctx.progress(format!(
        "stego PSNR {:.2} dB, SSIM {:.4}; recovery PSNR {}",
        res.stego_quality.psnr_db,
        res.stego_quality.ssim,
        res.receivers
            .iter()
            .map(|r| format!("{:.2} dB", r.recovery.psnr_db))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(())
}

pub fn extract_cmd(
    ctx: &Context,
    cfg: &RunConfig,
    keys: &Path,
    receiver: usize,
    stego: &Path,
    out: &Path,
) -> CliResult<()> {
    let keys = load_keys(keys)?;
    if receiver >= keys.receivers() {
        return Err(CliError::Usage(format!(
            "receiver index {receiver} is out of range; the key file has {} receiver(s)",
            keys.receivers()
        )));
    }
    ctx.report_keys(&keys, Some(cfg), &[receiver]);
    let s = read_png_exact(stego)?;
    let provider = cfg.cover.provider(keys.cover_seed);
    let secret = extract(&s, &keys, receiver, &provider, &cfg.decoder_spec())?;
    write_png(out, &secret)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    reference: &'a str,
    other: &'a str,
    psnr_db: f64,
    ssim: f64,
    linf: f64,
    l2: f64,
}

pub fn metrics_cmd(ctx: &Context, reference: &Path, other: &Path, csv_out: Option<&Path>) -> CliResult<()> {
    ctx.report("no seeds consumed");
    let a = read_png(reference)?;
    let b = read_png(other)?;
    let q = quality_report(&a, &b)?;
    emit(&format!(
        "{:<6} {:>12.4} dB\n{:<6} {:>12.6}\n{:<6} {:>12.6}\n{:<6} {:>12.6}\n",
        "psnr", q.psnr_db, "ssim", q.ssim, "linf", q.linf, "l2", q.l2
    ))?;
    if let Some(p) = csv_out {
        let mut w = csv::Writer::from_path(p)?;
        w.serialize(MetricsRow {
            reference: &reference.display().to_string(),
            other: &other.display().to_string(),
            psnr_db: q.psnr_db,
            ssim: q.ssim,
            linf: q.linf,
            l2: q.l2,
        })?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchRow {
    file: String,
    stego_psnr_db: f64,
    stego_ssim: f64,
    recovery_psnr_db: f64,
    recovery_ssim: f64,
}

/// Keys for the `index`-th bench image, a pure function of the bench seed.
pub fn bench_keys(seed: u64, index: usize) -> KeyMaterial {
    let mut r = derive_stream(seed, format!("bench/keys/{index}"));
    let cover = r.next_u64();
    let mut decoder = r.next_u64();
    while decoder == cover {
        decoder = r.next_u64();
    }
    KeyMaterial::new(cover, vec![decoder]).expect("one seed is valid")
}

pub fn bench(ctx: &Context, cfg: &RunConfig, dir: &Path, out: &Path, seed: u64) -> CliResult<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    ctx.report(format!("bench_seed={}", format_seed(seed)));

    let mut rows = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let secret = match read_png(path) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        let keys = bench_keys(seed, i);
        ctx.report_keys(&keys, Some(cfg), &[0]);
        ctx.progress(format!("[{}/{}] {}", i + 1, files.len(), path.display()));
        let req = build_request(cfg, keys, vec![secret])?;
        let res = run_embed(ctx, &req)?;
        let recovered = extract(&res.stego, &req.keys, 0, &req.cover, &req.decoder)?;
        let rec = quality_report(&recovered, &res.receivers[0].secret)?;
        rows.push(BenchRow {
            file: path
                .file_name()
                .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
            stego_psnr_db: res.stego_quality.psnr_db,
            stego_ssim: res.stego_quality.ssim,
            recovery_psnr_db: rec.psnr_db,
            recovery_ssim: rec.ssim,
        });
    }

    let mut w = csv::Writer::from_writer(fs::File::create(out)?);
    if rows.is_empty() {
        w.write_record([
            "file",
            "stego_psnr_db",
            "stego_ssim",
            "recovery_psnr_db",
            "recovery_ssim",
        ])?;
    }
    for r in &rows {
        w.serialize(r)?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        w.serialize(BenchRow {
            file: "mean".into(),
            stego_psnr_db: mean(|r| r.stego_psnr_db),
            stego_ssim: mean(|r| r.stego_ssim),
            recovery_psnr_db: mean(|r| r.recovery_psnr_db),
            recovery_ssim: mean(|r| r.recovery_ssim),
        })?;
    }
    w.flush()?;
    emit(&format!(
        "{} image(s) benchmarked, results in {}\n",
        rows.len(),
        out.display()
    ))
}
