use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use maxvit::axes::{self, PartitionKind, PartitionSpec};
use maxvit::backbone::{checkpoint, golden, FlopReport, MaxVit, VariantName, VariantSpec};
use maxvit::check::{self, cases::randn, Faults};
use maxvit::train::{train_toy, write_trace_csv, ToyConfig};
use maxvit::Element;

const NUM_CLASSES: usize = 1000;
const SPATIAL_KINDS: &[&str] = &["conv", "dwconv", "attention", "mlp"];

/// Multi-axis vision transformer: inspection, verification, benchmarking
/// and toy training.
#[derive(Parser)]
#[command(name = "maxvit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stage shapes, parameter and FLOP accounting against published figures.
    Describe(DescribeArgs),
    /// Run the property suites.
    Check(CheckArgs),
    /// Time inference at a resolution and at twice that resolution.
    Bench(BenchArgs),
    /// Train the miniature model on synthetic blobs.
    TrainToy(TrainArgs),
    /// Print the block or grid partition index table for a small image.
    DumpIndices(DumpArgs),
}

#[derive(Args)]
struct Output {
    /// Emit JSON instead of plain text.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long, default_value = "T", value_parser = parse_variant)]
    variant: VariantName,
    #[arg(long, default_value_t = 224)]
    res: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    GridOffByOne,
}

#[derive(Args)]
struct CheckArgs {
    /// Run only properties whose suite or name contains this string.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "T", value_parser = parse_variant)]
    variant: VariantName,
    #[arg(long, default_value_t = 224)]
    res: usize,
    #[arg(long, default_value_t = 5)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the timing run at twice the resolution.
    #[arg(long)]
    no_scaling: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    /// CSV loss trace destination (`step,loss`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the trained weights as a checkpoint directory.
    #[arg(long)]
    save: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Block,
    Grid,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, value_enum, default_value = "block")]
    kind: Kind,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 4)]
    w: usize,
    /// Window size P (block) or grid size G (grid).
    #[arg(long, default_value_t = 2)]
    size: usize,
    #[arg(long)]
    json: bool,
}

fn parse_variant(s: &str) -> Result<VariantName, String> {
    s.parse::<VariantName>().map_err(|e| e.to_string())
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn use_f64() -> bool {
    std::env::var("MAXVIT_F64").is_ok_and(|v| v == "1")
}

fn precision() -> &'static str {
    if use_f64() {
        "f64"
    } else {
        "f32"
    }
}

fn emit<R: Serialize>(output: &Output, report: &R, plain: impl FnOnce() -> String) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    if let Some(path) = &output.out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    if output.json {
        say(&format!("{json}\n"))
    } else {
        say(&plain())
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn say(text: &str) -> anyhow::Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Describe(a) => describe(a),
        Command::Check(a) => run_check(a),
        Command::Bench(a) => bench(a),
        Command::TrainToy(a) => train(a),
        Command::DumpIndices(a) => dump(a),
    }
}

fn partition(spec: &VariantSpec, res: usize) -> anyhow::Result<PartitionSpec> {
    spec.partition_for(res)
        .map_err(|e| Usage(format!("resolution {res} does not fit variant {}: {e}", spec.name)).into())
}

#[derive(Serialize)]
struct StageRow {
    stage: String,
    blocks: usize,
    shape: [usize; 3],
    params: usize,
    macs: u64,
}

#[derive(Serialize)]
struct GoldenCmp {
    params_m: f64,
    params_delta: f64,
    params_ok: bool,
    flops_g: Option<f64>,
    flops_delta: Option<f64>,
    flops_ok: Option<bool>,
    flops_gated: bool,
}

#[derive(Serialize)]
struct DescribeReport {
    variant: VariantName,
    resolution: usize,
    partition: PartitionSpec,
    stages: Vec<StageRow>,
    params: usize,
    params_m: f64,
    gflops: f64,
    flops: FlopReport,
    golden: GoldenCmp,
}

fn describe(a: DescribeArgs) -> anyhow::Result<ExitCode> {
    let spec = VariantSpec::named(a.variant);
    let p = partition(&spec, a.res)?;
    let (mut model, _) = MaxVit::layout(&spec, NUM_CLASSES)?;
    model.set_partition_layout(p);
    let flops = model.flops(a.res)?;
    let params = model.num_params();

    let extents = spec.stage_resolutions(a.res);
    let mut stages = vec![StageRow {
        stage: "stem".into(),
        blocks: 0,
        shape: [extents[0], extents[0], spec.stem_channels],
        params: model.stem_conv1.num_params() + model.stem_norm.num_params() + model.stem_conv2.num_params(),
        macs: 0,
    }];
    for (i, (s, st)) in spec.stages.iter().zip(&model.stages).enumerate() {
        stages.push(StageRow {
            stage: format!("s{}", i + 1),
            blocks: s.blocks,
            shape: [extents[i + 1], extents[i + 1], s.channels],
            params: st.blocks.iter().map(|b| b.num_params()).sum(),
            macs: 0,
        });
    }
    for row in &mut stages {
        row.macs = flops.stages.iter().find(|s| s.stage == row.stage).map_or(0, |s| s.macs);
    }

    let params_m = params as f64 / 1e6;
    let want_p = golden::params_m(a.variant);
    let params_delta = golden::rel_delta(params_m, want_p);
    let g = golden::lookup(a.variant, a.res);
    let flops_delta = g.map(|g| golden::rel_delta(flops.gflops(), g.flops_g));
    let cmp = GoldenCmp {
        params_m: want_p,
        params_delta,
        params_ok: params_delta.abs() <= golden::PARAM_TOLERANCE,
        flops_g: g.map(|g| g.flops_g),
        flops_delta,
        flops_ok: flops_delta.map(|d| d.abs() <= golden::FLOP_TOLERANCE),
        flops_gated: g.is_some_and(|g| g.gate_flops),
    };
    let failed = !cmp.params_ok || (cmp.flops_gated && cmp.flops_ok == Some(false));
    let report = DescribeReport {
        variant: a.variant,
        resolution: a.res,
        partition: p,
        stages,
        params,
        params_m,
        gflops: flops.gflops(),
        flops,
        golden: cmp,
    };
    emit(&a.output, &report, || {
        let mut s = format!(
            "MaxViT-{} @ {}  window {} grid {}\n",
            report.variant, report.resolution, p.window_size, p.grid_size
        );
        s += &format!("{:<6} {:>6} {:>16} {:>12} {:>10}\n", "stage", "blocks", "shape", "params", "GMACs");
        for r in &report.stages {
            let shape = format!("{}x{}x{}", r.shape[0], r.shape[1], r.shape[2]);
            s += &format!(
                "{:<6} {:>6} {:>16} {:>12} {:>10.3}\n",
                r.stage,
                r.blocks,
                shape,
                r.params,
                r.macs as f64 / 1e9
            );
        }
        let c = &report.golden;
        s += &format!("params {:.2}M (published {}M, {:+.2}%)\n", report.params_m, c.params_m, c.params_delta * 100.0);
        match (c.flops_g, c.flops_delta) {
            (Some(g), Some(d)) => s += &format!("flops  {:.2}G (published {g}G, {:+.2}%)\n", report.gflops, d * 100.0),
            _ => s += &format!("flops  {:.2}G (no published figure)\n", report.gflops),
        }
        s
    })?;
    if failed {
        eprintln!("error: accounting outside published tolerance");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_check(a: CheckArgs) -> anyhow::Result<ExitCode> {
    let faults = Faults { grid_off_by_one: matches!(a.inject_fault, Some(Fault::GridOffByOne)) };
    let summary = check::run(a.filter.as_deref(), faults);
    if summary.total == 0 {
        return Err(Usage(format!(
            "filter {:?} selects no properties; suites are {}",
            a.filter.unwrap_or_default(),
            check::SUITES.join(", ")
        ))
        .into());
    }
    emit(&a.output, &summary, || {
        let mut s = String::new();
        for p in &summary.properties {
            let tag = if p.passed { "PASS" } else { "FAIL" };
            s += &format!("{tag} {}/{} ({} ms): {}\n", p.suite, p.name, p.millis, p.detail);
        }
        s += &format!("{}/{} properties passed\n", summary.total - summary.failed, summary.total);
        s
    })?;
    for p in summary.failures() {
        eprintln!("failed: {}/{}: {}", p.suite, p.name, p.detail);
    }
    Ok(if summary.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct Timing {
    resolution: usize,
    gflops: f64,
    /// MACs of layers whose cost grows with image area.
    spatial_gflops: f64,
    median_ms: Option<f64>,
    p90_ms: Option<f64>,
    imgs_per_s: Option<f64>,
}

#[derive(Serialize)]
struct BenchReport {
    variant: VariantName,
    precision: &'static str,
    parallel: bool,
    batch: usize,
    iters: usize,
    resolution: usize,
    median_ms: Option<f64>,
    p90_ms: Option<f64>,
    imgs_per_s: Option<f64>,
    runs: Vec<Timing>,
    /// Spatial-layer MAC ratio between the two resolutions.
    flop_ratio: Option<f64>,
    /// Same including the SE bottlenecks and classifier, which do not scale.
    total_flop_ratio: Option<f64>,
    time_ratio: Option<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

fn time_forward<T: Element>(spec: &VariantSpec, res: usize, a: &BenchArgs) -> anyhow::Result<Timing> {
    let (mut model, mut store) = MaxVit::build::<T>(spec, NUM_CLASSES, a.seed)?;
    model.set_partition(&mut store, partition(spec, res)?)?;
    let flops = model.flops(res)?;
    let gflops = flops.gflops();
    let spatial_gflops = flops.total_of(SPATIAL_KINDS) as f64 / 1e9;
    if a.iters == 0 {
        return Ok(Timing { resolution: res, gflops, spatial_gflops, median_ms: None, p90_ms: None, imgs_per_s: None });
    }
    let images = randn(&[a.batch, res, res, 3], a.seed, 1.0).cast::<T>();
    model.infer(&store, &images)?;
    let mut ms: Vec<f64> = (0..a.iters)
        .map(|_| {
            let t = Instant::now();
            model.infer(&store, &images).map(|_| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_, _>>()?;
    ms.sort_by(f64::total_cmp);
    let median = percentile(&ms, 0.5);
    Ok(Timing {
        resolution: res,
        gflops,
        spatial_gflops,
        median_ms: Some(median),
        p90_ms: Some(percentile(&ms, 0.9)),
        imgs_per_s: Some(a.batch as f64 * 1e3 / median),
    })
}

fn bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    if a.batch == 0 {
        bail!(Usage("batch must be at least 1".into()));
    }
    let spec = VariantSpec::named(a.variant);
    partition(&spec, a.res)?;
    let run = |res| if use_f64() { time_forward::<f64>(&spec, res, &a) } else { time_forward::<f32>(&spec, res, &a) };
    let mut runs = vec![run(a.res)?];
    let double = 2 * a.res;
    if !a.no_scaling && spec.partition_for(double).is_ok() {
        runs.push(run(double)?);
    }
    let (flop_ratio, total_flop_ratio, time_ratio) = match runs.as_slice() {
        [lo, hi] => (
            Some(hi.spatial_gflops / lo.spatial_gflops),
            Some(hi.gflops / lo.gflops),
            hi.median_ms.zip(lo.median_ms).map(|(h, l)| h / l),
        ),
        _ => (None, None, None),
    };
    let base = &runs[0];
    let report = BenchReport {
        variant: a.variant,
        precision: precision(),
        parallel: maxvit::par::is_parallel(),
        batch: a.batch,
        iters: a.iters,
        resolution: a.res,
        median_ms: base.median_ms,
        p90_ms: base.p90_ms,
        imgs_per_s: base.imgs_per_s,
        flop_ratio,
        total_flop_ratio,
        time_ratio,
        runs,
    };
    emit(&a.output, &report, || {
        let mut s =
            format!("MaxViT-{} {} batch {} x {} iters\n", report.variant, report.precision, report.batch, report.iters);
        for r in &report.runs {
            match (r.median_ms, r.p90_ms, r.imgs_per_s) {
                (Some(m), Some(p), Some(t)) => {
                    s += &format!(
                        "@{:<4} {:>8.2} GFLOPs  median {m:.1} ms  p90 {p:.1} ms  {t:.2} img/s\n",
                        r.resolution, r.gflops
                    )
                }
                _ => s += &format!("@{:<4} {:>8.2} GFLOPs  (not timed)\n", r.resolution, r.gflops),
            }
        }
        if let Some(f) = report.flop_ratio {
            s += &format!("flop ratio {f:.4} (total {:.4})", report.total_flop_ratio.unwrap_or(f));
            if let Some(t) = report.time_ratio {
                s += &format!("  time ratio {t:.3}");
            }
            s += "\n";
        }
        s
    })?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    steps: usize,
    precision: &'static str,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    min_loss: Option<f64>,
    seconds: f64,
}

fn train_with<T: Element>(a: &TrainArgs, cfg: &ToyConfig) -> anyhow::Result<Vec<f64>> {
    let run = train_toy::<T>(cfg)?;
    if let Some(dir) = &a.save {
        checkpoint::save(dir, &run.model, &run.store, cfg.seed)?;
    }
    Ok(run.losses)
}

fn train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg = ToyConfig { seed: a.seed, steps: a.steps, ..ToyConfig::default() };
    let t = Instant::now();
    let losses = if use_f64() { train_with::<f64>(&a, &cfg)? } else { train_with::<f32>(&a, &cfg)? };
    let seconds = t.elapsed().as_secs_f64();
    if let Some(path) = &a.out {
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace_csv(std::io::BufWriter::new(f), &losses)?;
    }
    let report = TrainReport {
        seed: a.seed,
        steps: a.steps,
        precision: precision(),
        initial_loss: losses.first().copied(),
        final_loss: losses.last().copied(),
        min_loss: losses.iter().copied().reduce(f64::min),
        seconds,
    };
    if a.json {
        say(&format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    } else {
        if a.out.is_none() {
            let mut out = std::io::stdout().lock();
            write_trace_csv(&mut out, &losses)?;
            out.flush()?;
        }
        match (report.initial_loss, report.final_loss) {
            (Some(i), Some(f)) => eprintln!("{} steps in {seconds:.1}s: loss {i:.4} -> {f:.6}", a.steps),
            _ => eprintln!("0 steps: nothing trained"),
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DumpReport {
    kind: &'static str,
    h: usize,
    w: usize,
    size: usize,
    /// `groups[i][j]` is the row-major pixel index of token `j` in group `i`.
    groups: Vec<Vec<usize>>,
}

fn dump(a: DumpArgs) -> anyhow::Result<ExitCode> {
    let (kind, name) = match a.kind {
        Kind::Block => (PartitionKind::Block, "block"),
        Kind::Grid => (PartitionKind::Grid, "grid"),
    };
    if a.size == 0 {
        bail!(Usage("size must be positive".into()));
    }
    let groups = axes::partition_indices(kind, a.h, a.w, a.size).map_err(|e| Usage(e.to_string()))?;
    let report = DumpReport { kind: name, h: a.h, w: a.w, size: a.size, groups };
    if a.json {
        say(&format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    } else {
        for (i, g) in report.groups.iter().enumerate() {
            say(&format!("{name} {i}: {g:?}\n"))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
