use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use isde::bounds::{
    bc_envelope, estimate_bounding_constant, final_bound_terms, selection_bound, uc_threshold,
    BoundParams,
};
use isde::combinatorics::enumerate_subsets;
use isde::gaussian_oracle::{
    block_perturbed_eigenvalues, det_block_perturbed, det_equicorrelated, enumerate_structures,
    kl_almost_independent, kl_equicorrelated_structure, optimal_structure,
    sample_gaussian_copula_block, GaussianBlockSpec, GaussianCopula,
};
use isde::io::{read_csv, read_json, to_json_string, write_csv, write_json};
use isde::isde::{
    assemble, evaluate_joint, fit_all, risk_decomposition_report, IsdeConfig, IsdeResult,
};
use isde::partition_solver::solve_dp_traced;
use isde::{IsdeError, KernelKind, Result};

#[derive(Parser)]
#[command(name = "isde", version, about = "Independence-structure density estimation on [0,1]^d")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to CSV data and write it as JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Largest block size.
        #[arg(long)]
        k: usize,
        /// Share of rows used for fitting; the rest is the hold-out.
        #[arg(long, default_value_t = 0.5)]
        split: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value = "epanechnikov")]
        kernel: KernelKind,
        #[arg(long, default_value_t = 1.0)]
        bandwidth_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep the row order instead of shuffling before the split.
        #[arg(long)]
        no_shuffle: bool,
        /// Min-max rescale every column onto [0, 1] first.
        #[arg(long)]
        rescale: bool,
        #[arg(long)]
        output: PathBuf,
        /// Also dump the partition solver's state table.
        #[arg(long)]
        dp_trace: Option<PathBuf>,
    },
    /// Evaluate a fitted model at the rows of a CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Write log-densities instead of densities.
        #[arg(long)]
        log: bool,
    },
    /// Sample the Gaussian copula with block covariance as CSV.
    Synth {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        kstar: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Closed-form Gaussian tables.
    Oracle {
        #[arg(long, value_enum)]
        table: OracleTable,
        #[arg(long, default_value_t = 8)]
        d_max: usize,
        /// Comma-separated correlations.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9")]
        sigma: Vec<f64>,
        /// Comma-separated cross-block perturbations.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05")]
        epsilon: Vec<f64>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Fit on synthetic Gaussian-copula data and report the risk terms and bounds.
    Diagnose {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        kstar: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Number of observations (split into fitting and hold-out halves).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 20_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bounding constant; estimated heuristically from the fit when absent.
        #[arg(long)]
        a: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        c_k: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleTable {
    Determinants,
    AlmostIndependence,
    Structures,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // reader closed stdout early, e.g. `isde synth ... | head`
        Err(IsdeError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("isde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            input,
            k,
            split,
            beta,
            kernel,
            bandwidth_scale,
            seed,
            no_shuffle,
            rescale,
            output,
            dp_trace,
        } => {
            let raw = read_csv(&input)?;
            let (data, map) = if rescale {
                let (d, m) = raw.min_max_rescale();
                (d, Some(m))
            } else {
                (raw, None)
            };
            let config = IsdeConfig {
                k,
                split_fraction: split,
                beta,
                kernel: isde::Kernel::new(kernel),
                bandwidth_scale,
                seed,
                shuffle: !no_shuffle,
            };
            let fitted = fit_all(&data, &config)?;
            let (solution, trace) = solve_dp_traced(&fitted.table)?;
            let mut result = assemble(fitted, solution, &config);
            result.rescale = map;
            for w in &result.warnings {
                eprintln!("isde: warning: {w}");
            }
            write_json(&output, &result)?;
            if let Some(path) = dp_trace {
                write_json(&path, &trace)?;
            }
            Ok(())
        }
        Command::Eval { model, points, log } => {
            let result: IsdeResult = read_json(&model)?;
            let pts = read_csv(&points)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for row in pts.rows() {
                let x = result.prepare_point(row);
                let v = if log { result.log_evaluate(&x)? } else { evaluate_joint(&result, &x)? };
                writeln!(out, "{v}")?;
            }
            Ok(())
        }
        Command::Synth { d, kstar, sigma, epsilon, n, seed, output } => {
            let spec = GaussianBlockSpec::new(d, kstar, sigma, epsilon)?;
            let data = sample_gaussian_copula_block(&spec, n, seed)?;
            let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
            match output {
                Some(path) => write_csv(std::fs::File::create(path)?, &data, Some(&header)),
                None => write_csv(std::io::stdout().lock(), &data, Some(&header)),
            }
        }
        Command::Oracle { table, d_max, sigma, epsilon, format } => {
            let rows = oracle_rows(table, d_max, &sigma, &epsilon)?;
            emit_rows(&rows, format)
        }
        Command::Diagnose { d, kstar, sigma, epsilon, n, k, n_mc, seed, a, delta, c_k } => {
            let spec = GaussianBlockSpec::new(d, kstar, sigma, epsilon)?;
            let truth = GaussianCopula::from_spec(&spec)?;
            let data = sample_gaussian_copula_block(&spec, n, seed)?;
            let config = IsdeConfig { seed, ..IsdeConfig::new(k) };
            let report = risk_decomposition_report(&truth, &data, &config, n_mc, seed.wrapping_add(1))?;
            let (a_value, a_source) = match a {
                Some(v) => (v, "user"),
                None => {
                    let fitted = fit_all(&data, &config)?;
                    let est = estimate_bounding_constant(&fitted.models, 32)?;
                    (est, "heuristic: max |ln f| / (2|S|) over a grid of fitted block estimates")
                }
            };
            let theory = theory_json(d, k, report.n, report.m, a_value, delta, c_k, report.partition_star.len())?;
            let out = json!({
                "spec": spec,
                "config": config,
                "risk": report,
                "theory": {
                    "a": a_value,
                    "a_source": a_source,
                    "bounds": theory,
                },
            });
            print!("{}", to_json_string(&out)?);
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn theory_json(
    d: usize,
    k: usize,
    n: usize,
    m: usize,
    a: f64,
    delta: f64,
    c_k: f64,
    p_star_blocks: usize,
) -> Result<serde_json::Value> {
    if !a.is_finite() {
        return Ok(json!({ "note": "bounding constant is infinite; bounds are vacuous" }));
    }
    let params = BoundParams { d, k, n, m, a, delta_n: delta, delta_m: delta, beta: 2.0, c_k };
    let (estimation, selection) = final_bound_terms(&params, p_star_blocks)?;
    let per_size: Vec<serde_json::Value> = (1..=k)
        .map(|s| -> Result<serde_json::Value> {
            let (lo, hi) = bc_envelope(a, s, false)?;
            let (hlo, hhi) = bc_envelope(a, s, true)?;
            Ok(json!({
                "subset_size": s,
                "bc_envelope": [lo, hi],
                "bc_envelope_estimator": [hlo, hhi],
                "uc_threshold": uc_threshold(a, s)?,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(json!({
        "params": params,
        "n_subsets": enumerate_subsets(d, k)?.len(),
        "selection_bound": selection_bound(&params)?,
        "final_bound": estimation + selection,
        "final_bound_estimation_term": estimation,
        "final_bound_selection_term": selection,
        "envelopes": per_size,
    }))
}

fn oracle_rows(
    table: OracleTable,
    d_max: usize,
    sigmas: &[f64],
    epsilons: &[f64],
) -> Result<Vec<serde_json::Map<String, serde_json::Value>>> {
    if d_max == 0 || d_max > 16 {
        return Err(IsdeError::Parameter(format!("d-max must be in 1..=16, got {d_max}")));
    }
    let mut rows = Vec::new();
    let obj = |v: serde_json::Value| v.as_object().cloned().expect("object literal");
    for d in 1..=d_max {
        for &sigma in sigmas {
            match table {
                OracleTable::Determinants => {
                    rows.push(obj(json!({
                        "kind": "equicorrelated", "d": d, "k_star": d, "sigma": sigma,
                        "epsilon": 0.0, "determinant": det_equicorrelated(d, sigma)?,
                    })));
                    for k_star in (1..=d).filter(|k| d % k == 0) {
                        for &eps in epsilons {
                            let Ok(spec) = GaussianBlockSpec::new(d, k_star, sigma, eps) else {
                                continue;
                            };
                            let eig: Vec<serde_json::Value> = block_perturbed_eigenvalues(&spec)?
                                .into_iter()
                                .map(|(v, m)| json!([v, m]))
                                .collect();
                            rows.push(obj(json!({
                                "kind": "block_perturbed", "d": d, "k_star": k_star,
                                "sigma": sigma, "epsilon": eps,
                                "determinant": det_block_perturbed(&spec)?,
                                "eigenvalues": eig,
                            })));
                        }
                    }
                }
                OracleTable::AlmostIndependence => {
                    for k_star in (1..d).filter(|k| d % k == 0) {
                        for &eps in epsilons {
                            let Ok(spec) = GaussianBlockSpec::new(d, k_star, sigma, eps) else {
                                continue;
                            };
                            let (exact, leading) = kl_almost_independent(&spec)?;
                            rows.push(obj(json!({
                                "d": d, "k_star": k_star, "sigma": sigma, "epsilon": eps,
                                "kl_exact": exact, "kl_leading": leading,
                            })));
                        }
                    }
                }
                OracleTable::Structures => {
                    for k in 1..=d {
                        let best = optimal_structure(d, k, sigma)?;
                        let mut brute: Option<(f64, Vec<usize>)> = None;
                        for s in enumerate_structures(d, k) {
                            let v = kl_equicorrelated_structure(d, sigma, &s)?;
                            if brute.as_ref().is_none_or(|(b, _)| v < *b) {
                                brute = Some((v, s.sorted()));
                            }
                        }
                        let (kl_min, brute_sizes) = brute.expect("at least one structure");
                        rows.push(obj(json!({
                            "d": d, "k": k, "sigma": sigma,
                            "optimal_structure": best.sizes,
                            "kl": kl_equicorrelated_structure(d, sigma, &best)?,
                            "brute_force_structure": brute_sizes,
                            "brute_force_kl": kl_min,
                        })));
                    }
                }
            }
        }
    }
    Ok(rows)
}

fn emit_rows(rows: &[serde_json::Map<String, serde_json::Value>], format: Format) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match format {
        Format::Json => write!(out, "{}", to_json_string(&rows)?)?,
        Format::Csv => {
            let mut columns: Vec<String> = Vec::new();
            for r in rows {
                for key in r.keys() {
                    if !columns.contains(key) {
                        columns.push(key.clone());
                    }
                }
            }
            writeln!(out, "{}", columns.join(","))?;
            for r in rows {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|c| match r.get(c) {
                        None => String::new(),
                        Some(serde_json::Value::String(s)) => s.clone(),
                        // nested lists are quoted so the row keeps its arity
                        Some(v @ serde_json::Value::Array(_)) => format!("\"{v}\""),
                        Some(v) => v.to_string(),
                    })
                    .collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
    }
    Ok(())
}
