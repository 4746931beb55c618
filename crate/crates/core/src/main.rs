use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use umdam_sim::config::SystemConfig;
use umdam_sim::exec::Exec;
use umdam_sim::experiment::{
    write_sweep_csv, RelayoutPolicy, Scenario, Simulator, SweepSpec, Variant,
};
use umdam_sim::layout::{plan_layout, WeightLayout};
use umdam_sim::mapping::{AddressMapper, DramCoord, Scheme};
use umdam_sim::report;
use umdam_sim::timing::{npu_stream, replay_iter};
use umdam_sim::verify::{verify_plan, VerifyOptions};
use umdam_sim::workload::ModelSpec;
use umdam_sim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "umdam-sim",
    version,
    about = "Unified NPU/PIM weight layout and DRAM mapping simulator"
)]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// System configuration JSON (defaults to the bundled lpddr5-table1.json).
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<SystemConfig> {
        SystemConfig::resolve(self.config.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Translate between linear addresses and DRAM coordinates.
    Map {
        /// umdam, conventional or pim_opt.
        scheme: Scheme,
        /// Linear address, decimal or 0x-prefixed hex.
        address: Option<String>,
        /// Coordinate to encode: row,col_m,bank,rank,channel,col_l,offset.
        #[arg(long, conflicts_with = "address")]
        coord: Option<String>,
        /// Print the first N addresses and their coordinates.
        #[arg(long)]
        table: Option<u64>,
        /// Address step for --table (defaults to the burst size).
        #[arg(long)]
        stride: Option<String>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Place a K x N weight matrix and summarize the plan.
    Layout {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        /// Base address, tile aligned.
        #[arg(long, default_value = "0")]
        base: String,
        /// Write one row per element to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Check column locality, collisions and tile contiguity.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Sequential-read bandwidth for each scheme and stream size.
    BenchBandwidth {
        /// Schemes to measure (default: all).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<Scheme>,
        /// Stream sizes in bytes.
        #[arg(long, value_delimiter = ',', default_values_t = [65536u64, 1 << 20, 4 << 20, 16 << 20])]
        sizes: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Single-query latency for one variant.
    Run {
        #[arg(long)]
        variant: Variant,
        /// Built-in model name or a model JSON file.
        #[arg(long)]
        model: String,
        #[arg(long)]
        prefill: u64,
        #[arg(long, default_value_t = 0)]
        decode: u64,
        #[arg(long)]
        no_attention: bool,
        /// Add the d x vocab output projection.
        #[arg(long)]
        include_lm_head: bool,
        /// both, prefill-only or none.
        #[arg(long, default_value = "both")]
        relayout: RelayoutPolicy,
        /// Also run the other variant and fill in speedups.
        #[arg(long)]
        paired: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Paired baseline/UMDAM runs over a figure grid.
    Sweep {
        /// 3 (TTFT over models and prefill lengths) or 4 (TTLT over prefill and decode lengths).
        #[arg(long)]
        figure: u32,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        prefill: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        decode: Vec<u64>,
        #[arg(long)]
        no_attention: bool,
        #[arg(long, default_value = "both")]
        relayout: RelayoutPolicy,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Summarize a sweep CSV and write plot-ready files next to it.
    Report { csv: PathBuf },
}

fn parse_u64(s: &str) -> Result<u64> {
    let t = s.trim().replace('_', "");
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|_| Error::Argument(format!("`{s}` is not a decimal or 0x-hex integer")))
}

fn parse_coord(s: &str) -> Result<DramCoord> {
    let v: Vec<u32> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Argument(format!("bad coordinate component `{p}`")))
        })
        .collect::<Result<_>>()?;
    let [row, col_m, bank, rank, channel, col_l, offset] = v[..] else {
        return Err(Error::Argument(
            "coordinate needs 7 values: row,col_m,bank,rank,channel,col_l,offset".into(),
        ));
    };
    Ok(DramCoord {
        row,
        col_m,
        bank,
        rank,
        channel,
        col_l,
        offset,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_map(
    scheme: Scheme,
    address: Option<String>,
    coord: Option<String>,
    table: Option<u64>,
    stride: Option<String>,
    cfg: &SystemConfig,
) -> Result<()> {
    let mapper = AddressMapper::new(scheme, &cfg.dram)?;
    let mut out = io::stdout().lock();
    if let Some(a) = address {
        let addr = parse_u64(&a)?;
        writeln!(out, "{addr:#x} -> {}", mapper.encode(addr)?)?;
    }
    if let Some(c) = coord {
        let c = parse_coord(&c)?;
        let addr = mapper.decode(&c)?;
        writeln!(out, "{c} -> {addr:#x}")?;
    }
    if let Some(n) = table {
        let step = match stride {
            Some(s) => parse_u64(&s)?,
            None => cfg.dram.burst_size_bytes,
        };
        writeln!(
            out,
            "{:>12}  {:>6} {:>5} {:>4} {:>4} {:>7} {:>5} {:>6}",
            "address", "row", "col_M", "bank", "rank", "channel", "col_L", "offset"
        )?;
        for i in 0..n {
            let addr = i * step;
            let c = mapper.encode(addr)?;
            writeln!(
                out,
                "{:>#12x}  {:>6} {:>5} {:>4} {:>4} {:>7} {:>5} {:>6}",
                addr, c.row, c.col_m, c.bank, c.rank, c.channel, c.col_l, c.offset
            )?;
        }
    }
    Ok(())
}

/// Matrices above this many elements are not dumped element by element.
const CSV_ELEMENT_LIMIT: u64 = 1 << 22;

#[derive(Serialize)]
struct LayoutSummary {
    scheme: Scheme,
    k: u64,
    n: u64,
    padded_k: u64,
    padded_n: u64,
    base: u64,
    tile_height_elems: u64,
    tile_width_elems: u64,
    tiles: u64,
    footprint_bytes: u64,
    end_address: u64,
    lanes: u32,
    columns_per_lane_max: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<umdam_sim::verify::VerifyReport>,
}

fn cmd_layout(
    k: u64,
    n: u64,
    base: &str,
    csv_path: Option<&Path>,
    verify: bool,
    cfg: &SystemConfig,
    exec: Exec,
) -> Result<()> {
    let plan = plan_layout(&cfg.dram, k, n, parse_u64(base)?)?;
    let g = plan.geometry();
    let dims = plan.dims();
    let lanes = umdam_sim::compute::lane_columns(&plan, n);
    let report = verify.then(|| {
        verify_plan(
            &plan,
            &VerifyOptions {
                exec,
                ..Default::default()
            },
        )
    });
    let summary = LayoutSummary {
        scheme: Scheme::Umdam,
        k,
        n,
        padded_k: dims.padded_rows,
        padded_n: dims.padded_cols,
        base: plan.base(),
        tile_height_elems: g.tile_height_elems,
        tile_width_elems: g.tile_width_elems,
        tiles: g.num_tiles(),
        footprint_bytes: plan.footprint_bytes(),
        end_address: plan.base() + plan.footprint_bytes(),
        lanes: cfg.dram.total_banks(),
        columns_per_lane_max: lanes.iter().copied().max().unwrap_or(0),
        verify: report.clone(),
    };
    write_json(None, &summary)?;
    if let Some(p) = csv_path {
        if k * n > CSV_ELEMENT_LIMIT {
            return Err(Error::Argument(format!(
                "{k}x{n} is too large for a per-element CSV (limit {CSV_ELEMENT_LIMIT} elements)"
            )));
        }
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "i",
            "j",
            "linear_addr",
            "row",
            "col_M",
            "bank",
            "rank",
            "channel",
            "col_L",
            "offset",
        ])?;
        for j in 0..n {
            for i in 0..k {
                let c = plan.coord(i, j);
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    plan.linear_address(i, j).to_string(),
                    c.row.to_string(),
                    c.col_m.to_string(),
                    c.bank.to_string(),
                    c.rank.to_string(),
                    c.channel.to_string(),
                    c.col_l.to_string(),
                    c.offset.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    if report.is_some_and(|r| !r.is_clean()) {
        eprintln!("verification found locality violations or collisions");
    }
    Ok(())
}

fn cmd_bench(
    schemes: Vec<Scheme>,
    sizes: Vec<u64>,
    out: Option<&Path>,
    cfg: &SystemConfig,
) -> Result<()> {
    let schemes = if schemes.is_empty() {
        Scheme::ALL.to_vec()
    } else {
        schemes
    };
    let mut w = csv::Writer::from_writer(output(out)?);
    w.write_record([
        "scheme",
        "bytes",
        "cycles",
        "effective_GBps",
        "row_hit_rate",
    ])?;
    for &scheme in &schemes {
        for &bytes in &sizes {
            let stream = npu_stream(&cfg.dram, scheme, 0, bytes)?;
            let r = replay_iter(&cfg.dram, &cfg.timing, &cfg.controller, stream)?;
            w.write_record([
                scheme.to_string(),
                bytes.to_string(),
                r.total_cycles.to_string(),
                format!("{:.4}", r.effective_bw_bytes_per_s / 1e9),
                format!("{:.6}", r.row_hit_rate),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn resolve_models(names: &[String]) -> Result<Vec<ModelSpec>> {
    names.iter().map(|n| ModelSpec::resolve(n)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Map {
            scheme,
            address,
            coord,
            table,
            stride,
            config,
        } => {
            if address.is_none() && coord.is_none() && table.is_none() {
                return Err(Error::Argument(
                    "give an address, --coord or --table".into(),
                ));
            }
            cmd_map(scheme, address, coord, table, stride, &config.load()?)
        }
        Command::Layout {
            k,
            n,
            base,
            csv,
            verify,
            config,
        } => cmd_layout(k, n, &base, csv.as_deref(), verify, &config.load()?, exec),
        Command::BenchBandwidth {
            schemes,
            sizes,
            out,
            config,
        } => cmd_bench(schemes, sizes, out.as_deref(), &config.load()?),
        Command::Run {
            variant,
            model,
            prefill,
            decode,
            no_attention,
            include_lm_head,
            relayout,
            paired,
            out,
            config,
        } => {
            let sim = Simulator::new(config.load()?, exec)?;
            let mut s = Scenario::new(variant, ModelSpec::resolve(&model)?, prefill, decode);
            s.include_attention = !no_attention;
            s.include_lm_head = include_lm_head;
            s.relayout_policy = relayout;
            let report = if paired {
                let pair = sim.run_pair(&s)?;
                match variant {
                    Variant::Baseline => pair.baseline,
                    Variant::Umdam => pair.umdam,
                }
            } else {
                sim.run(&s)?
            };
            write_json(out.as_deref(), &report)?;
            if out.is_some() {
                println!(
                    "{} {} P={} D={}: ttft {:.6} s, ttlt {:.6} s",
                    report.variant, report.model, prefill, decode, report.ttft_s, report.ttlt_s
                );
            }
            Ok(())
        }
        Command::Sweep {
            figure,
            models,
            prefill,
            decode,
            no_attention,
            relayout,
            out,
            config,
        } => {
            let sim = Simulator::new(config.load()?, exec)?;
            let mut spec = SweepSpec::figure(figure)?;
            if !models.is_empty() {
                spec.models = resolve_models(&models)?;
            }
            if !prefill.is_empty() {
                spec.prefill_lens = prefill;
            }
            if !decode.is_empty() {
                spec.decode_lens = decode;
            }
            spec.include_attention = !no_attention;
            spec.relayout_policy = relayout;
            let start = Instant::now();
            let rows = sim.sweep(&spec)?;
            write_sweep_csv(&rows, output(out.as_deref())?)?;
            eprintln!(
                "{} cells in {:.1} s",
                rows.len(),
                start.elapsed().as_secs_f64()
            );
            Ok(())
        }
        Command::Report { csv } => {
            let rows = report::read_rows(File::open(&csv)?)?;
            let summary = report::summarize(&rows);
            print!("{}", report::render_text(&summary));
            for p in report::write_outputs(&csv, &rows, &summary)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
