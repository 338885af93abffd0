use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polar_ssd::codes::{bit_reverse_permute, construct_polar, construct_rm, encode, CodeSpec};
use polar_ssd::decoder::{DecoderOptions, StackSphereDecoder};
use polar_ssd::metrics::MetricKind;
use polar_ssd::sim::{
    run_sweep, write_csv, CodeConfig, CodeFamily, OutputFormat, SweepConfig,
};
use polar_ssd::ebn0_to_params;

/// Environment variable naming the default directory for sweep output.
const OUT_DIR_ENV: &str = "POLAR_SSD_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "polar-ssd", version, about = "Polar/RM codes with stack sphere decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the code specification as JSON.
    Construct(CodeArgs),
    /// Encode one block.
    Encode(EncodeArgs),
    /// Decode one received block read from a file of reals.
    Decode(DecodeArgs),
    /// Run a Monte-Carlo BLER / complexity sweep.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct CodeArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// log2 of the block length.
    #[arg(long)]
    n: u32,
    /// Information length.
    #[arg(long)]
    k: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Family {
    Polar,
    Rm,
}

impl From<Family> for CodeFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Polar => CodeFamily::Polar,
            Family::Rm => CodeFamily::Rm,
        }
    }
}

impl CodeArgs {
    fn build(&self) -> Result<CodeSpec> {
        Ok(match self.family {
            Family::Polar => construct_polar(self.n, self.k)?,
            Family::Rm => construct_rm(self.n, self.k)?,
        })
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BitFormat {
    Bits,
    Hex,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// K information bits (binary string or 0x-prefixed hex), placed in the
    /// information positions of v in ascending order.
    #[arg(long, conflicts_with = "source", required_unless_present = "source")]
    info: Option<String>,
    /// Full N-bit source block u.
    #[arg(long)]
    source: Option<String>,
    #[arg(long, value_enum, default_value = "bits")]
    format: BitFormat,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Eb/N0 in dB used to set N0 (E = 1).
    #[arg(long, allow_hyphen_values = true)]
    ebn0: f64,
    #[arg(long, default_value = "m1")]
    metric: MetricKind,
    /// File holding N reals separated by whitespace or commas.
    #[arg(long)]
    input: PathBuf,
    /// Write the per-pop decoder trace to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    max_stack: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// JSON sweep configuration; excludes the code and sweep flags below.
    #[arg(long, conflicts_with_all = ["family", "n", "k", "ebn0", "metric", "trials", "seed", "min_errors"])]
    config: Option<PathBuf>,
    #[arg(long, value_enum, required_unless_present = "config")]
    family: Option<Family>,
    #[arg(long, required_unless_present = "config")]
    n: Option<u32>,
    #[arg(long, required_unless_present = "config")]
    k: Option<usize>,
    /// Comma-separated Eb/N0 points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "config")]
    ebn0: Vec<f64>,
    /// Comma-separated metrics (m0, m1, m2, m3).
    #[arg(long, value_delimiter = ',', default_value = "m0,m1,m2")]
    metric: Vec<MetricKind>,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop a point after this many block errors (0 = run all trials).
    #[arg(long, default_value_t = 100)]
    min_errors: u64,
    /// Output file; relative paths resolve against $POLAR_SSD_OUT_DIR when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write wall_time_s as 0 so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    max_stack: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn parse_bits(text: &str, len: usize) -> Result<Vec<u8>> {
    let text = text.trim();
    let bits: Vec<u8> = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        let mut bits = Vec::with_capacity(4 * hex.len());
        for c in hex.chars() {
            let v = c.to_digit(16).with_context(|| format!("bad hex digit {c:?}"))?;
            bits.extend((0..4).map(|b| (v >> (3 - b) & 1) as u8));
        }
        if bits.len() < len || bits.len() >= len + 4 || bits[len..].iter().any(|&b| b != 0) {
            bail!("hex input must hold exactly {len} bits (zero padded at the end)");
        }
        bits.truncate(len);
        bits
    } else {
        text.chars()
            .filter(|c| !c.is_whitespace() && *c != ',' && *c != '_')
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => bail!("bad bit {other:?}"),
            })
            .collect::<Result<_>>()?
    };
    if bits.len() != len {
        bail!("expected {len} bits, got {}", bits.len());
    }
    Ok(bits)
}

fn format_bits(bits: &[u8], format: BitFormat) -> String {
    match format {
        BitFormat::Bits => bits.iter().map(|&b| char::from(b'0' + b)).collect(),
        BitFormat::Hex => {
            let digits: String = bits
                .chunks(4)
                .map(|nib| {
                    let v = nib.iter().enumerate().fold(0u32, |a, (i, &b)| a | (b as u32) << (3 - i));
                    char::from_digit(v, 16).unwrap()
                })
                .collect();
            format!("0x{digits}")
        }
    }
}

fn cmd_construct(args: &CodeArgs) -> Result<()> {
    println!("{}", args.build()?.to_json()?);
    Ok(())
}

fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let spec = args.code.build()?;
    let u = match (&args.info, &args.source) {
        (Some(info), _) => {
            let v = spec.scatter_info(&parse_bits(info, spec.dimension())?)?;
            bit_reverse_permute(&v)?
        }
        (None, Some(src)) => parse_bits(src, spec.len())?,
        (None, None) => unreachable!("clap requires one of --info/--source"),
    };
    let block = encode(&u, &spec)?;
    let out = serde_json::json!({
        "u": format_bits(&block.u, args.format),
        "v": format_bits(&block.v, args.format),
        "x": format_bits(&block.x, args.format),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn read_reals(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad real {t:?} in {}", path.display())))
        .collect()
}

fn cmd_decode(args: &DecodeArgs) -> Result<()> {
    let spec = args.code.build()?;
    let y = read_reals(&args.input)?;
    let params = ebn0_to_params::<f64>(args.ebn0, spec.len(), spec.dimension())?;
    let options = DecoderOptions {
        max_stack: args.max_stack,
        check_unique: false,
    };
    let decoder = StackSphereDecoder::with_options(&spec, params, args.metric, options);
    let result = match &args.trace {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut sink = BufWriter::new(file);
            let r = decoder.decode_traced(&y, &mut sink)?;
            sink.flush().with_context(|| format!("writing {}", path.display()))?;
            r
        }
        None => decoder.decode(&y)?,
    };
    let out = serde_json::json!({
        "metric": args.metric,
        "u_hat": format_bits(&result.u_hat, BitFormat::Bits),
        "v_hat": format_bits(&result.v_hat, BitFormat::Bits),
        "final_radius_sq": result.final_radius_sq,
        "node_visits": result.stats.node_visits,
        "pops": result.stats.pops,
        "max_stack": result.stats.max_stack,
        "radius_updates": result.stats.radius_updates,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn resolve_out(path: Option<PathBuf>, format: OutputFormat) -> Option<PathBuf> {
    let dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match (path, dir) {
        (Some(p), Some(d)) if p.is_relative() => Some(d.join(p)),
        (Some(p), _) => Some(p),
        (None, Some(d)) => Some(d.join(match format {
            OutputFormat::Csv => "sweep.csv",
            OutputFormat::Json => "sweep.json",
        })),
        (None, None) => None,
    }
}

fn infer_format(path: Option<&Path>) -> OutputFormat {
    match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("json") => OutputFormat::Json,
        _ => OutputFormat::Csv,
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            SweepConfig::from_json(&text)?
        }
        None => {
            let code = CodeConfig {
                family: args.family.expect("required by clap").into(),
                n: args.n.expect("required by clap"),
                k: args.k.expect("required by clap"),
            };
            let mut c = SweepConfig::new(code, args.ebn0.clone(), args.metric.clone());
            c.trials_per_point = args.trials;
            c.master_seed = args.seed;
            c.min_block_errors = args.min_errors;
            c
        }
    };
    if args.out.is_some() {
        config.output_path = args.out.clone();
    }
    if let Some(f) = args.format {
        config.format = f.into();
    } else if args.config.is_none() {
        config.format = infer_format(config.output_path.as_deref());
    }
    if args.no_timing {
        config.record_timing = false;
    }
    if args.max_stack.is_some() {
        config.max_stack = args.max_stack;
    }
    config.output_path = resolve_out(config.output_path.take(), config.format);

    let records = run_sweep(&config)?;
    match &config.output_path {
        Some(path) => eprintln!("wrote {} records to {}", records.len(), path.display()),
        None => match config.format {
            OutputFormat::Csv => write_csv(&records, io::stdout().lock())?,
            OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&records)?),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Construct(a) => cmd_construct(&a),
        Command::Encode(a) => cmd_encode(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
