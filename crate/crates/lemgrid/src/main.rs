//! Command-line front end: run simulated days, dump sensitivity tables,
//! and generate synthetic input profiles.

// `!(x > 0.0)` deliberately rejects NaN, which `x <= 0.0` would wave through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lemgrid::agents::Census;
use lemgrid::io::{self, RunConfig, RunManifest};
use lemgrid::net::{build_matrices, solve_power_flow, Network};
use lemgrid::scenario::{run_scenario, ScenarioKind, ScenarioReport, Scheme};
use lemgrid::sensitivity::SensitivityBundle;
use num_complex::Complex64;
use rayon::prelude::*;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "lemgrid",
    version,
    about = "Local energy market simulator on radial LV feeders"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one day under the selected scheme(s) and write the reports.
    Run(RunArgs),
    /// Dump voltage/flow/loss sensitivity tables for a network.
    Sensitivity(SensArgs),
    /// Generate a synthetic household profile table.
    GenProfiles(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured study variant (I or II).
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioKind>,
    /// Scheme to simulate, or `all` for the four-scheme comparison.
    #[arg(long, default_value = "p2p", value_parser = parse_schemes)]
    scheme: SchemeSelection,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for multi-scheme runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct SensArgs {
    /// Network description file.
    #[arg(long)]
    network: PathBuf,
    /// Nodal injections CSV (node,p_kw,q_kvar); defaults to no load.
    #[arg(long)]
    injections: Option<PathBuf>,
    /// Output directory for the coefficient tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Verify the coefficients against central finite differences of the
    /// AC power flow and fail above 1e-3 relative error.
    #[arg(long)]
    check: bool,
    /// Evaluate one hypothetical transfer, e.g. `--trade 3:4:2` for 2 kW
    /// sent from node 3 to node 4.
    #[arg(long, value_name = "SELLER:BUYER:KW")]
    trade: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 50)]
    consumers: usize,
    #[arg(long, default_value_t = 40)]
    prosumers1: usize,
    #[arg(long, default_value_t = 10)]
    prosumers2: usize,
    #[arg(long, default_value_t = 96)]
    slots: usize,
    #[arg(long, default_value_t = 0.25)]
    slot_hours: f64,
    /// Installed PV peak power per prosumer.
    #[arg(long, default_value_t = 5.0)]
    pv_kwp: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct SchemeSelection(Vec<Scheme>);

fn parse_schemes(s: &str) -> Result<SchemeSelection, String> {
    let schemes = match s {
        "p2p" => vec![Scheme::P2P],
        "redcap" => vec![Scheme::RedCap],
        "tripping" => vec![Scheme::Tripping],
        "apcolp" => vec![Scheme::ApcOlp],
        "all" => vec![
            Scheme::P2P,
            Scheme::RedCap,
            Scheme::Tripping,
            Scheme::ApcOlp,
        ],
        other => {
            return Err(format!(
                "unknown scheme {other:?} (p2p|redcap|tripping|apcolp|all)"
            ))
        }
    };
    Ok(SchemeSelection(schemes))
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    match s {
        "I" | "i" | "1" => Ok(ScenarioKind::I),
        "II" | "ii" | "2" => Ok(ScenarioKind::II),
        other => Err(format!("unknown scenario {other:?} (I or II)")),
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sensitivity(a) => cmd_sensitivity(a),
        Cmd::GenProfiles(a) => cmd_gen_profiles(a),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_run(a: RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let (mut cfg, base) = RunConfig::load(&a.config)?;
    if let Some(kind) = a.scenario {
        cfg.run.scenario = kind;
    }
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    let day = cfg.resolve(&base)?;
    let schemes = a.scheme.0;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let reports: Vec<ScenarioReport> = if a.parallel > 1 && schemes.len() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(a.parallel)
            .build()
            .context("building the worker pool")?;
        pool.install(|| {
            schemes
                .par_iter()
                .map(|&s| run_scenario(&day, s))
                .collect::<Result<_, _>>()
        })?
    } else {
        schemes
            .iter()
            .map(|&s| run_scenario(&day, s))
            .collect::<Result<_, _>>()?
    };

    for report in &reports {
        io::write_report_files(&a.out, report)?;
        let t = &report.totals;
        println!(
            "{:<9} peer {:>9.3} kWh  export {:>9.3} kWh  spilled {:>9.3} kWh  rejected {}",
            report.scheme.name(),
            t.p2p_kwh,
            t.export_kwh,
            t.spilled_kwh,
            report.slots.iter().map(|m| m.rejected).sum::<usize>(),
        );
        if let Some(benefit) = report.market_benefit {
            println!("          market benefit {benefit:.2}");
        }
    }
    if reports.len() > 1 {
        io::write_comparison(&a.out, &reports)?;
        print!("{}", io::format_comparison(&io::comparison_rows(&reports)));
    }

    let manifest = RunManifest::new(&cfg, &base, &schemes, started.elapsed().as_secs_f64())?;
    manifest.write(&a.out)?;
    println!(
        "wrote {} (digest {})",
        a.out.display(),
        &manifest.digest[..12]
    );
    Ok(())
}

fn cmd_sensitivity(a: SensArgs) -> anyhow::Result<()> {
    let net = Network::from_file(&a.network)?;
    let mats = build_matrices(&net)?;
    let injections = match &a.injections {
        Some(path) => io::read_injections(path, &net)?,
        None => vec![Complex64::new(0.0, 0.0); net.n_nodes()],
    };
    let op = solve_power_flow(&net, &mats, &injections)?;
    let bundle = SensitivityBundle::compute(&net, &mats, &op)?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_sensitivity_tables(&a.out, &net, &bundle)?;
    println!(
        "wrote vsc.csv, isf.csv, lsf.csv for {} nodes / {} lines to {}",
        net.n_nodes(),
        net.lines().len(),
        a.out.display()
    );

    if let Some(spec) = &a.trade {
        print_trade_effect(spec, &net, &op, &bundle)?;
    }

    if a.check {
        let (vsc_err, lsf_err) = finite_difference_errors(&net, &mats, &injections, &bundle)?;
        println!("max VSC relative error vs finite differences: {vsc_err:.3e}");
        println!("max LSF relative error vs finite differences: {lsf_err:.3e}");
        if vsc_err > 1e-3 || lsf_err > 1e-3 {
            bail!("sensitivity check failed: error above 1e-3");
        }
        println!("check passed (tolerance 1e-3)");
    }
    Ok(())
}

fn write_sensitivity_tables(
    out: &std::path::Path,
    net: &Network,
    bundle: &SensitivityBundle,
) -> anyhow::Result<()> {
    let n = net.n_nodes();

    let path = out.join("vsc.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["observed_node", "injection_node", "dvmag_dp"])?;
    for i in 0..n {
        for k in 0..n {
            w.write_record(&[i.to_string(), k.to_string(), bundle.dvmag(i, k).to_string()])?;
        }
    }
    w.flush()?;

    let path = out.join("isf.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["line", "from", "to", "injection_node", "isf"])?;
    for (l, line) in net.lines().iter().enumerate() {
        for k in 0..n {
            w.write_record(&[
                l.to_string(),
                line.from.to_string(),
                line.to.to_string(),
                k.to_string(),
                bundle.shift_factors().value(l, k).to_string(),
            ])?;
        }
    }
    w.flush()?;

    let path = out.join("lsf.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["injection_node", "dploss_dp"])?;
    for k in 0..n {
        w.write_record(&[k.to_string(), bundle.dploss(k).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn print_trade_effect(
    spec: &str,
    net: &Network,
    op: &lemgrid::net::OperatingPoint,
    bundle: &SensitivityBundle,
) -> anyhow::Result<()> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("--trade expects SELLER:BUYER:KW, got {spec:?}");
    }
    let seller: usize = parts[0].parse().context("seller node")?;
    let buyer: usize = parts[1].parse().context("buyer node")?;
    let kw: f64 = parts[2].parse().context("transfer size (kW)")?;
    let n = net.n_nodes();
    if seller >= n || buyer >= n {
        bail!("trade nodes must be below {n}");
    }
    let dp = net.kw_to_pu(kw);

    println!("transfer {kw} kW from node {seller} to node {buyer}:");
    let prediction = bundle.predict_voltage_change(op, seller, buyer, dp)?;
    for (node, (dv, v)) in prediction
        .delta
        .iter()
        .zip(&prediction.magnitudes)
        .enumerate()
    {
        println!("  node {node:>3}  d|V| {dv:>+12.3e} pu   |V| -> {v:.6} pu");
    }
    let ptdf = bundle.shift_factors().ptdf(seller, buyer);
    for (l, (line, phi)) in net.lines().iter().zip(&ptdf).enumerate() {
        println!(
            "  line {l:>3} ({:>3} -> {:<3})  ptdf {phi:>+6.3}",
            line.from, line.to
        );
    }
    println!(
        "  marginal loss share (bec): {:+.6e} per unit transferred",
        bundle.bec(seller, buyer)
    );
    Ok(())
}

/// Compare every analytic voltage/loss sensitivity against a central finite
/// difference of the full AC power flow; returns the worst relative errors
/// over entries of meaningful size.
fn finite_difference_errors(
    net: &Network,
    mats: &lemgrid::net::NetworkMatrices,
    injections: &[Complex64],
    bundle: &SensitivityBundle,
) -> anyhow::Result<(f64, f64)> {
    let n = net.n_nodes();
    let h = 1e-5;
    let mut vsc_err = 0.0f64;
    let mut lsf_err = 0.0f64;
    for k in 1..n {
        let mut up = injections.to_vec();
        let mut dn = injections.to_vec();
        up[k] += Complex64::new(h, 0.0);
        dn[k] -= Complex64::new(h, 0.0);
        let sol_up = solve_power_flow(net, mats, &up)?;
        let sol_dn = solve_power_flow(net, mats, &dn)?;
        let mag_up = sol_up.voltage_magnitudes();
        let mag_dn = sol_dn.voltage_magnitudes();
        for i in 0..n {
            let numeric = (mag_up[i] - mag_dn[i]) / (2.0 * h);
            let analytic = bundle.dvmag(i, k);
            if analytic.abs() > 1e-8 {
                vsc_err = vsc_err.max((numeric - analytic).abs() / analytic.abs());
            }
        }
        let numeric = (sol_up.p_loss - sol_dn.p_loss) / (2.0 * h);
        let analytic = bundle.dploss(k);
        if analytic.abs() > 1e-8 {
            lsf_err = lsf_err.max((numeric - analytic).abs() / analytic.abs());
        }
    }
    Ok((vsc_err, lsf_err))
}

fn cmd_gen_profiles(a: GenArgs) -> anyhow::Result<()> {
    let census = Census {
        consumers: a.consumers,
        prosumers1: a.prosumers1,
        prosumers2: a.prosumers2,
    };
    if a.slots == 0 || !(a.slot_hours > 0.0) {
        bail!("profiles need a positive horizon");
    }
    let households =
        lemgrid::agents::generate_profiles(&census, a.slots, a.slot_hours, a.pv_kwp, a.seed);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_profiles(&a.out, &households)?;
    println!(
        "wrote {} households x {} slots to {}",
        households.len(),
        a.slots,
        a.out.display()
    );
    Ok(())
}
