//! Command-line front end: derive, optimize, generate, verify, report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use nttgen::ring::{self, Direction, RingParams, Scheme, Variant};
use nttgen::rtl::{self, PipelinePolicy};
use nttgen::sim;
use nttgen::verilog;
use nttgen::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "nttgen", version, about = "Constant-folded NTT datapath generator")]
struct Cli {
    /// Flat key=value config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Derive the ring constants and export them as a key-value file
    Params(JobArgs),
    /// Decompose constant multipliers into shift-add graphs
    Mcm(McmArgs),
    /// Generate the Verilog datapath plus its metrics report
    Generate(JobArgs),
    /// Prove the generated datapath equal to the golden model
    Verify(VerifyArgs),
    /// Print the structural metrics report
    Report(JobArgs),
}

#[derive(Args, Clone, Default)]
struct JobArgs {
    /// Preset: kyber, dilithium, falcon512, falcon1024
    #[arg(long)]
    scheme: Option<String>,
    /// Explicit coefficient modulus (with --n)
    #[arg(long)]
    q: Option<u64>,
    /// Explicit polynomial length (with --q)
    #[arg(long)]
    n: Option<usize>,
    /// full or incomplete (explicit parameters only)
    #[arg(long)]
    variant: Option<String>,
    /// RNG seed for verification stimulus
    #[arg(long)]
    seed: Option<u64>,
    /// Random vectors per verification mode
    #[arg(long)]
    trials: Option<u64>,
    /// Output directory (or env NTTGEN_OUT)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum adders between pipeline registers
    #[arg(long)]
    max_adder_depth: Option<u32>,
}

#[derive(Args)]
struct McmArgs {
    #[command(flatten)]
    job: JobArgs,
    /// Decompose a single constant instead of a scheme's twiddle set
    #[arg(long = "const")]
    constant: Option<u64>,
    /// Input width for a single-constant decomposition
    #[arg(long)]
    width: Option<u32>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    job: JobArgs,
    /// Cross-check a previously emitted Verilog file against the datapath
    #[arg(long)]
    verilog: Option<PathBuf>,
}

/// Fully resolved job settings: defaults, then config file, then environment
/// (output directory only), then command-line flags.
struct JobConfig {
    scheme: Option<String>,
    q: Option<u64>,
    n: Option<usize>,
    variant: Variant,
    seed: u64,
    trials: u64,
    out: PathBuf,
    max_adder_depth: u32,
    register_inputs: bool,
    register_outputs: bool,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            scheme: None,
            q: None,
            n: None,
            variant: Variant::Full,
            seed: 1,
            trials: 1000,
            out: PathBuf::from("."),
            max_adder_depth: 2,
            register_inputs: true,
            register_outputs: true,
        }
    }
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse { what: "config", detail: format!("bad boolean for {key}: {v}") }),
    }
}

impl JobConfig {
    fn load(config_path: Option<&Path>, args: &JobArgs) -> Result<JobConfig> {
        let mut cfg = JobConfig::default();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    what: "config",
                    detail: format!("line {}: expected key = value", lineno + 1),
                })?;
                let (key, value) = (key.trim(), value.trim());
                let badval = |d: String| Error::Parse { what: "config", detail: d };
                match key {
                    "scheme" => cfg.scheme = Some(value.to_string()),
                    "q" => cfg.q = Some(value.parse().map_err(|_| badval(format!("q: {value}")))?),
                    "n" => cfg.n = Some(value.parse().map_err(|_| badval(format!("n: {value}")))?),
                    "variant" => cfg.variant = Variant::from_str(value)?,
                    "seed" => {
                        cfg.seed = value.parse().map_err(|_| badval(format!("seed: {value}")))?
                    }
                    "trials" => {
                        cfg.trials =
                            value.parse().map_err(|_| badval(format!("trials: {value}")))?
                    }
                    "out" => cfg.out = PathBuf::from(value),
                    "max_adder_depth" => {
                        cfg.max_adder_depth =
                            value.parse().map_err(|_| badval(format!("depth: {value}")))?
                    }
                    "reg_inputs" => cfg.register_inputs = parse_bool(value, key)?,
                    "reg_outputs" => cfg.register_outputs = parse_bool(value, key)?,
                    other => {
                        return Err(badval(format!("unknown key {other}")));
                    }
                }
            }
        }
        if let Ok(dir) = std::env::var("NTTGEN_OUT") {
            cfg.out = PathBuf::from(dir);
        }
        if let Some(s) = &args.scheme {
            cfg.scheme = Some(s.clone());
        }
        if let Some(q) = args.q {
            cfg.q = Some(q);
        }
        if let Some(n) = args.n {
            cfg.n = Some(n);
        }
        if let Some(v) = &args.variant {
            cfg.variant = Variant::from_str(v)?;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(t) = args.trials {
            cfg.trials = t;
        }
        if let Some(o) = &args.out {
            cfg.out = o.clone();
        }
        if let Some(d) = args.max_adder_depth {
            cfg.max_adder_depth = d;
        }
        Ok(cfg)
    }

    /// (label, params) for the configured target.
    fn resolve(&self) -> Result<(String, RingParams)> {
        match (&self.scheme, self.q, self.n) {
            (Some(name), None, None) => {
                let scheme = Scheme::from_str(name)?;
                Ok((scheme.name().to_string(), scheme.params()))
            }
            (None, Some(q), Some(n)) => {
                Ok((format!("q{q}"), ring::derive_params(q, n, self.variant)?))
            }
            _ => Err(Error::Parse {
                what: "config",
                detail: "give either --scheme or both --q and --n".into(),
            }),
        }
    }

    fn policy(&self) -> PipelinePolicy {
        PipelinePolicy {
            max_adder_depth: self.max_adder_depth,
            register_inputs: self.register_inputs,
            register_outputs: self.register_outputs,
        }
    }

    fn echo(&self, label: &str) -> String {
        format!(
            "# nttgen {VERSION}\n# target = {label}, seed = {}, trials = {}, max_adder_depth = {}\n",
            self.seed, self.trials, self.max_adder_depth
        )
    }
}

/// Write via a temp file in the same directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_params(cfg: &JobConfig) -> Result<()> {
    let (label, params) = cfg.resolve()?;
    let text = params.to_text(&label);
    print!("{text}");
    let path = cfg.out.join(format!("{label}_params.txt"));
    write_atomic(&path, &text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_mcm(cfg: &JobConfig, constant: Option<u64>, width: Option<u32>) -> Result<()> {
    if let Some(c) = constant {
        let w = width.unwrap_or_else(|| 64 - c.leading_zeros());
        let graph = nttgen::mcm::scm_decompose(c, w, 3)?;
        let csd = nttgen::mcm::csd_recode(c)?;
        println!("constant = {c}");
        println!("csd = {} ({} adders)", csd.digits, csd.adder_cost());
        println!("adders = {}", graph.cost());
        println!(
            "optimal = {}",
            matches!(graph.optimality, nttgen::mcm::Optimality::Optimal(_))
        );
        let path = cfg.out.join(format!("const_{c}.ag"));
        write_atomic(&path, &graph.to_exchange())?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let (label, params) = cfg.resolve()?;
    let fwd = ring::twiddle_schedule(&params, Direction::Forward);
    let mut summary = cfg.echo(&label);
    let mut total_csd = 0u64;
    let mut total_opt = 0u64;
    let mut cache: BTreeMap<u64, nttgen::mcm::ButterflyPlan> = BTreeMap::new();
    let mut count = 0u64;
    for (s, stage) in fwd.stages.iter().enumerate() {
        for entry in stage {
            let w = entry.constant;
            let plan = match cache.get(&w) {
                Some(p) => p.clone(),
                None => {
                    let p = nttgen::mcm::optimize_butterfly_constants(
                        w,
                        ring::mod_inverse(w, params.q),
                        &params,
                    )?;
                    cache.insert(w, p.clone());
                    p
                }
            };
            let w_inv = ring::mod_inverse(w, params.q);
            let csd = nttgen::mcm::csd_recode(w)?.adder_cost() as u64
                + nttgen::mcm::csd_recode(w_inv)?.adder_cost() as u64;
            let opt = plan.costs.mult1 as u64;
            total_csd += csd;
            total_opt += opt;
            count += 1;
            let _ = writeln!(
                summary,
                "stage {s} butterfly {} : w={w} w_inv={w_inv} csd={csd} opt={opt}",
                entry.butterfly
            );
        }
    }
    let _ = writeln!(summary, "pairs = {count}");
    let _ = writeln!(summary, "csd_adders = {total_csd}");
    let _ = writeln!(summary, "opt_adders = {total_opt}");
    println!("pairs = {count}");
    println!("csd_adders = {total_csd}");
    println!("opt_adders = {total_opt}");

    let dir = cfg.out.join(format!("{label}_graphs"));
    for (w, plan) in &cache {
        write_atomic(&dir.join(format!("pair_{w}.ag")), &plan.mult1.to_exchange())?;
    }
    let shared = cache.values().next().expect("at least one pair");
    write_atomic(&dir.join("mult2_r.ag"), &shared.mult2.to_exchange())?;
    write_atomic(&dir.join("mult3_q.ag"), &shared.mult3.to_exchange())?;
    write_atomic(&dir.join("inv_scale.ag"), &shared.inv_scale.to_exchange())?;
    let path = cfg.out.join(format!("{label}_mcm_summary.txt"));
    write_atomic(&path, &summary)?;
    eprintln!("wrote {} and {}", path.display(), dir.display());
    Ok(())
}

fn generate_ir(cfg: &JobConfig) -> Result<(String, RingParams, rtl::DatapathIr)> {
    let (label, params) = cfg.resolve()?;
    let ir = rtl::generate(&params, &cfg.policy())?;
    Ok((label, params, ir))
}

fn metrics_text(cfg: &JobConfig, label: &str, ir: &rtl::DatapathIr) -> String {
    format!("{}{}", cfg.echo(label), rtl::structural_report(ir))
}

fn cmd_generate(cfg: &JobConfig) -> Result<()> {
    let (label, params, ir) = generate_ir(cfg)?;
    let module = format!("{label}_ntt{}", params.n);
    let text = verilog::emit_verilog(&ir, &module)?;
    verilog::assert_multiplier_free(&text)?;
    let vpath = cfg.out.join(format!("{module}.v"));
    write_atomic(&vpath, &text)?;
    let mpath = cfg.out.join(format!("{label}_metrics.txt"));
    write_atomic(&mpath, &metrics_text(cfg, &label, &ir))?;
    let report = rtl::structural_report(&ir);
    println!("module = {module}");
    println!("butterflies = {}", report.butterflies);
    println!("latency = {}", report.latency);
    println!("adders = {}", report.adders);
    println!("verilog = {}", vpath.display());
    println!("metrics = {}", mpath.display());
    Ok(())
}

fn cmd_report(cfg: &JobConfig) -> Result<()> {
    let (label, _, ir) = generate_ir(cfg)?;
    let text = metrics_text(cfg, &label, &ir);
    print!("{text}");
    let path = cfg.out.join(format!("{label}_metrics.txt"));
    write_atomic(&path, &text)?;
    Ok(())
}

/// Ok(true) pass, Ok(false) verification mismatch.
fn cmd_verify(cfg: &JobConfig, verilog_file: Option<&Path>) -> Result<bool> {
    let (label, params, ir) = generate_ir(cfg)?;
    let report = sim::check_equivalence(&ir, &params, cfg.trials, cfg.seed)?;
    let mut text = cfg.echo(&label);
    let _ = write!(text, "{report}");

    let mut text_ok = true;
    if let Some(path) = verilog_file {
        let source = std::fs::read_to_string(path)?;
        match check_verilog_file(&ir, &params, &source, cfg.seed) {
            Ok(()) => {
                let _ = writeln!(text, "verilog_file = match");
            }
            Err(e) => {
                text_ok = false;
                let _ = writeln!(text, "verilog_file = mismatch ({e})");
            }
        }
    }

    print!("{text}");
    let path = cfg.out.join(format!("{label}_verify.txt"));
    write_atomic(&path, &text)?;

    // Interchange vectors for external simulators: the corner set plus a
    // few seeded vectors, with expected outputs for both modes.
    let mut vectors = sim::corner_vectors(&params);
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..16 {
        vectors.push((0..params.n).map(|_| rng.gen_range(0..params.q)).collect());
    }
    let fwd = vectors
        .iter()
        .map(|v| ring::ntt_forward(v, &params))
        .collect::<Result<Vec<_>>>()?;
    let inv = fwd
        .iter()
        .map(|v| ring::ntt_inverse(v, &params))
        .collect::<Result<Vec<_>>>()?;
    write_atomic(
        &cfg.out.join(format!("{label}_vectors.txt")),
        &sim::write_vectors(&vectors, &format!("{label} inputs, seed {}", cfg.seed)),
    )?;
    write_atomic(
        &cfg.out.join(format!("{label}_expected_fwd.txt")),
        &sim::write_vectors(&fwd, &format!("{label} forward outputs")),
    )?;
    write_atomic(
        &cfg.out.join(format!("{label}_expected_inv.txt")),
        &sim::write_vectors(&inv, &format!("{label} inverse of forward outputs")),
    )?;

    Ok(report.passed && text_ok)
}

/// Reparse an emitted file and demand structural and behavioral equality
/// with the freshly built IR.
fn check_verilog_file(
    ir: &rtl::DatapathIr,
    params: &RingParams,
    source: &str,
    seed: u64,
) -> Result<()> {
    verilog::assert_multiplier_free(source)?;
    let parsed = verilog::parse_netlist(source)?;
    verilog::verify_structure(ir, &parsed)?;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7665_7269);
    let vectors: Vec<Vec<u64>> = (0..8)
        .map(|_| (0..params.n).map(|_| rng.gen_range(0..params.q)).collect())
        .collect();
    for dir in [Direction::Forward, Direction::Inverse] {
        let stim = sim::Stimulus::back_to_back(&vectors, dir);
        let ir_run = sim::simulate(ir, &stim)?;
        let text_run = parsed.simulate(&stim, ir_run.observed.len() as u64)?;
        for (cycle, (_, want)) in ir_run.observed.iter().enumerate() {
            if &text_run[cycle] != want {
                return Err(Error::IrInvariant(format!(
                    "text simulation diverges at cycle {cycle}"
                )));
            }
        }
    }
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::WidthOverflow { .. } | Error::Underflow { .. } | Error::IrInvariant(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<bool> {
        match &cli.cmd {
            Cmd::Params(a) => {
                cmd_params(&JobConfig::load(cli.config.as_deref(), a)?)?;
                Ok(true)
            }
            Cmd::Mcm(a) => {
                cmd_mcm(&JobConfig::load(cli.config.as_deref(), &a.job)?, a.constant, a.width)?;
                Ok(true)
            }
            Cmd::Generate(a) => {
                cmd_generate(&JobConfig::load(cli.config.as_deref(), a)?)?;
                Ok(true)
            }
            Cmd::Report(a) => {
                cmd_report(&JobConfig::load(cli.config.as_deref(), a)?)?;
                Ok(true)
            }
            Cmd::Verify(a) => {
                cmd_verify(&JobConfig::load(cli.config.as_deref(), &a.job)?, a.verilog.as_deref())
            }
        }
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
