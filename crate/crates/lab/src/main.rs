use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoslab::config::{
    BreuerParams, Bump, ExperimentConfig, Family, SheetParams, ToeplitzParams,
};
use chaoslab::experiment::{run_experiment, RunOutput};
use chaoslab::io::{load_chaos_vector, load_kernel, load_matrix, write_json, KernelFile};
use chaoslab::mc::{estimate_expectation, resolve_threads, with_threads, McConfig};
use chaoslab::rates::RateTable;
use chaoslab::testfn::GSpec;
use chaoslab::{selftest, LabError, LabResult};
use chaoslab_core::chaos::fourth_moment_diagnostics;
use chaoslab_core::edgeworth::{edgeworth3_terms, CumulantSet};
use chaoslab_core::families::{sheet_c_tilde, sheet_constant, SheetMode, SheetSpec, ToeplitzSpec};
use chaoslab_core::hermite::{GaussianQuadrature, GaussianSpec, DEFAULT_HERMITE_NODES};
use chaoslab_core::majorizing::{majorizing_integral, majorizing_profile, MajorizingSpec};
use chaoslab_core::tensor::{contract, contract_sym};
use chaoslab_core::MultiIndex;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "chaoslab", version, about = "Wiener chaos laboratory")]
struct Cli {
    /// Base seed for Monte Carlo streams.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads; falls back to CHAOSLAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for files written by the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contraction f ⊗_r g of two kernel files.
    Contract {
        #[arg(long)]
        f: PathBuf,
        #[arg(long)]
        g: PathBuf,
        #[arg(long)]
        r: usize,
        /// Symmetrize the result.
        #[arg(long)]
        sym: bool,
    },
    /// Joint cumulants of a chaos vector up to an order.
    Cumulants {
        #[arg(long)]
        vector: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Third-order Edgeworth value, optionally against a Monte Carlo estimate.
    Edgeworth {
        #[arg(long)]
        vector: PathBuf,
        /// Test function selector, e.g. '{"kind":"sin","a":[0.5,0.5]}'.
        #[arg(long)]
        g: String,
        /// Target covariance matrix file; defaults to the vector's covariance.
        #[arg(long)]
        cov: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// κ_4, contraction norms and Var Γ along a sequence of chaos vectors.
    FourthMoment {
        #[arg(required = true)]
        vectors: Vec<PathBuf>,
    },
    /// Majorizing integrals M_r(f, m) of a kernel file.
    Majorizing {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        r: usize,
        /// A single m; all admissible m when omitted.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Sheet constants and cumulants, or a rate run when --scales is given.
    Sheet {
        /// ε values (exact mode) or the ratios ξ (rate mode).
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        l: u32,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Toeplitz cumulants and limits, or a rate run when --horizons is given.
    Toeplitz {
        /// Spectral density, `gaussian:SCALE` or `cauchy:SCALE`.
        #[arg(long)]
        density: String,
        /// Test functions in the same syntax.
        #[arg(long, value_delimiter = ',', required = true)]
        tests: Vec<String>,
        #[arg(long = "T", default_value_t = 48.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.25)]
        step: f64,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Breuer-Major rate run over horizons like `64..1024` (doubling) or `64,128`.
    Breuer {
        #[arg(long = "H")]
        hurst: f64,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        q: Vec<usize>,
        #[arg(long = "T")]
        horizons: String,
        #[arg(long)]
        g: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Log-log slopes of a rate table.
    Rates {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Exact-identity checks.
    Selftest,
    /// Run an experiment config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn key(a: &MultiIndex) -> String {
    a.counts()
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_bump(s: &str) -> LabResult<Bump> {
    let bad = || LabError::config(s, "expected gaussian:SCALE or cauchy:SCALE");
    let (kind, scale) = s.split_once(':').ok_or_else(bad)?;
    let scale: f64 = scale.parse().map_err(|_| bad())?;
    match kind {
        "gaussian" => Ok(Bump::Gaussian {
            scale,
            amplitude: 1.0,
        }),
        "cauchy" => Ok(Bump::Cauchy {
            scale,
            amplitude: 1.0,
        }),
        _ => Err(bad()),
    }
}

/// `a..b` doubles from `a` up to `b`; otherwise a comma list.
fn parse_horizons(s: &str) -> LabResult<Vec<usize>> {
    let bad = || LabError::config("T", format!("cannot parse {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        if a < 2 || b < a {
            return Err(bad());
        }
        let mut out = vec![a];
        while out.last().expect("nonempty") * 2 <= b {
            out.push(out.last().expect("nonempty") * 2);
        }
        Ok(out)
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
    }
}

fn default_g(d: usize) -> GSpec {
    GSpec::Sin { a: vec![0.5; d] }
}

fn out_dir(cli_out: &Option<PathBuf>, name: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn finish(run: RunOutput, dir: &Path) -> LabResult<()> {
    let (csv, json) = run.write(dir)?;
    run.table.write_to(std::io::stdout())?;
    let s = &run.report.slopes;
    print(&json!({
        "csv": csv, "report": json,
        "slopes": s,
        "improvement_within_2se": run.table.improvement_holds(2.0),
    }));
    Ok(())
}

fn execute(cli: &Cli) -> LabResult<()> {
    match &cli.command {
        Command::Contract { f, g, r, sym } => {
            let (f, g) = (load_kernel(f)?, load_kernel(g)?);
            let t = if *sym {
                contract_sym(&f, &g, *r)?.into_tensor()
            } else {
                contract(f.tensor(), g.tensor(), *r)?
            };
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
                let path = dir.join("contraction.json");
                let k = KernelFile {
                    dim: t.dim(),
                    order: t.order(),
                    coeffs: t.data().to_vec(),
                };
                write_json(&path, &k)?;
            }
            print(&json!({"dim": t.dim(), "order": t.order(), "norm_sq": t.norm_sq(), "max_asymmetry": t.max_asymmetry()}));
        }
        Command::Cumulants { vector, order } => {
            let v = load_chaos_vector(vector)?;
            let mut map = serde_json::Map::new();
            for a in MultiIndex::up_to(v.len(), 1, *order) {
                map.insert(key(&a), json!(v.joint_cumulant(&a)?));
            }
            print(&Value::Object(map));
        }
        Command::Edgeworth {
            vector,
            g,
            cov,
            samples,
        } => {
            let v = load_chaos_vector(vector)?;
            let gs = GSpec::parse(g)?;
            gs.check_dim(v.len())?;
            let g = gs.build()?;
            let c = match cov {
                Some(p) => load_matrix(p)?,
                None => v.covariance()?,
            };
            let z = GaussianSpec::new(c)?;
            let k = CumulantSet::from_fn(v.len(), 3, |a| v.joint_cumulant(a))?;
            let quad = GaussianQuadrature::new(&z, None, DEFAULT_HERMITE_NODES)?;
            let terms = edgeworth3_terms(&k, &z, g.as_ref(), &quad)?;
            let mut out = json!({"e_g_z": terms[0], "terms": terms, "edgeworth3": terms.iter().sum::<f64>()});
            if *samples > 0 {
                let est = estimate_expectation(&v, g.as_ref(), &McConfig::new(*samples, cli.seed))?;
                out["estimate"] = json!(est);
            }
            print(&out);
        }
        Command::FourthMoment { vectors } => {
            let seq = vectors
                .iter()
                .map(|p| load_chaos_vector(p))
                .collect::<LabResult<Vec<_>>>()?;
            let rows = fourth_moment_diagnostics(&seq)?;
            let out: Vec<Value> = rows
                .iter()
                .zip(vectors)
                .map(|(r, p)| {
                    json!({"file": p, "components": r.iter().map(|c| json!({
                        "component": c.component, "kappa4": c.kappa4,
                        "contraction_norms": c.contraction_norms, "var_gamma": c.var_gamma,
                    })).collect::<Vec<_>>()})
                })
                .collect();
            print(&Value::Array(out));
        }
        Command::Majorizing { kernel, r, m } => {
            let f = load_kernel(kernel)?;
            let out = match m {
                Some(m) => json!({"r": r, "m": m, "value": majorizing_integral(&MajorizingSpec::new(&f, *r, *m)?)?}),
                None => json!({"r": r, "profile": majorizing_profile(&f, *r)?}),
            };
            print(&out);
        }
        Command::Sheet {
            eps,
            l,
            scales,
            g,
            samples,
        } => match scales {
            None => {
                let spec = SheetSpec::new(*l, eps.clone())?;
                let d = eps.len();
                let mut cum = serde_json::Map::new();
                for a in MultiIndex::up_to(d, 2, 4) {
                    cum.insert(key(&a), json!(spec.cumulant(&a)?));
                }
                let fm = (0..d)
                    .map(|i| spec.fourth_moment(i).map(|f| json!({"kappa4": f.kappa4, "contraction_norm_sq": f.contraction_norm_sq, "var_gamma": f.var_gamma})))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut out = json!({
                    "constant": sheet_constant(eps, SheetMode::Closed)?,
                    "c_tilde": sheet_c_tilde(eps)?,
                    "cumulants": cum,
                    "fourth_moment": fm,
                });
                if eps.len() <= 4 {
                    out["constant_quadrature"] = json!(sheet_constant(eps, SheetMode::Quadrature)?);
                }
                print(&out);
            }
            Some(scales) => {
                let g = match g {
                    Some(s) => GSpec::parse(s)?,
                    None => default_g(eps.len()),
                };
                let cfg = ExperimentConfig {
                    family: Family::Sheet(SheetParams {
                        l: *l,
                        xi: eps.clone(),
                        scales: scales.clone(),
                        step: 0.25,
                        horizon_factor: 25.0,
                    }),
                    g,
                    mc: McConfig::new(*samples, cli.seed),
                    control_variates: true,
                };
                finish(run_experiment(&cfg, Path::new("."))?, &out_dir(&cli.out, "sheet"))?;
            }
        },
        Command::Toeplitz {
            density,
            tests,
            horizon,
            step,
            horizons,
            g,
            samples,
        } => {
            let density = parse_bump(density)?;
            let tests = tests.iter().map(|t| parse_bump(t)).collect::<LabResult<Vec<_>>>()?;
            match horizons {
                None => {
                    let spec = ToeplitzSpec::new(
                        density.build()?,
                        tests.iter().map(|t| t.build()).collect::<LabResult<_>>()?,
                        *horizon,
                        *step,
                    )?;
                    let d = spec.len();
                    let mut out = Vec::new();
                    for a in MultiIndex::up_to(d, 2, 4) {
                        out.push(json!({
                            "alpha": key(&a),
                            "cumulant": spec.cumulant(&a)?,
                            "cumulant_exact": spec.cumulant_exact(&a)?,
                            "ordering_spread": spec.ordering_spread(&a)?,
                            "limit": spec.limit(&a)?,
                        }));
                    }
                    print(&Value::Array(out));
                }
                Some(hs) => {
                    let g = match g {
                        Some(s) => GSpec::parse(s)?,
                        None => default_g(tests.len()),
                    };
                    let cfg = ExperimentConfig {
                        family: Family::Toeplitz(ToeplitzParams {
                            density,
                            tests,
                            horizons: hs.clone(),
                            step: *step,
                        }),
                        g,
                        mc: McConfig::new(*samples, cli.seed),
                        control_variates: true,
                    };
                    finish(run_experiment(&cfg, Path::new("."))?, &out_dir(&cli.out, "toeplitz"))?;
                }
            }
        }
        Command::Breuer {
            hurst,
            q,
            horizons,
            g,
            samples,
        } => {
            let g = match g {
                Some(s) => GSpec::parse(s)?,
                None => GSpec::Trig {
                    a: vec![0.5; q.len()],
                    phase: 0.3,
                },
            };
            let cfg = ExperimentConfig {
                family: Family::Breuer(BreuerParams {
                    hurst: *hurst,
                    orders: q.clone(),
                    horizons: parse_horizons(horizons)?,
                }),
                g,
                mc: McConfig::new(*samples, cli.seed).with_chunk(1024),
                control_variates: true,
            };
            finish(run_experiment(&cfg, Path::new("."))?, &out_dir(&cli.out, "breuer"))?;
        }
        Command::Rates { csv } => {
            let t = RateTable::read_csv(csv)?;
            print(&json!({"slopes": t.slopes(), "improvement_within_2se": t.improvement_holds(2.0)}));
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(LabError::Numerical(format!("{failed} selftest checks failed")));
            }
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let run = run_experiment(&cfg, base)?;
            finish(run, &out_dir(&cli.out, cfg.family.name()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = resolve_threads(cli.threads).and_then(|t| with_threads(t, || execute(&cli))?);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
