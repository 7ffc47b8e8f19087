//! Batch front-end: weight audits, certified approximation runs and
//! convergence tables for scenario files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cvdense::funcmodel::{FactorSource, MultiIndex, SeminormIndex};
use cvdense::geometry::{AxisBox, Region};
use cvdense::mollify::{regularization_error, Mollifier, MAX_MOLLIFIER_ORDER};
use cvdense::pipeline::{approximate_full, audit_weights, verify_ledger, Scenario};
use cvdense::tensorapprox::finite_rank_c0_approx;
use cvdense::weights::WeightIndex;
use cvdense::{cutoff::apply_cutoff, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXIT_CERTIFIED: u8 = 0;
const EXIT_UNCERTIFIED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CRITERION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cvdense",
    version,
    about = "Certified finite-rank approximation in weighted C^k spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the weight family of a scenario.
    CheckWeights(RunArgs),
    /// Run the certified approximation for each eps.
    Approximate(RunArgs),
    /// Regularization curve (n, error) and rank curve (eps, rank).
    Convergence(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated targets; defaults to the scenario's eps.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long)]
    j: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    /// `sup`, `sub:0,2` or `wsup:1,0.5,...`.
    #[arg(long)]
    alpha: Option<String>,
    /// Grid points per axis, overriding the scenario.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for the randomized compacts of the weight audit.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refinement factor of the independent ledger check.
    #[arg(long, default_value_t = 2)]
    refine: usize,
}

struct Run {
    scn: Scenario,
    eps: Vec<f64>,
    idx: WeightIndex,
    alpha: SeminormIndex,
}

fn exit_for(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_)
        | Error::Io(_)
        | Error::UnknownIndex { .. }
        | Error::DimensionMismatch { .. } => EXIT_USAGE,
        Error::CriterionFailure { .. }
        | Error::ConvergenceFailure { .. }
        | Error::Precondition(_) => EXIT_CRITERION,
        _ => EXIT_NUMERIC,
    }
}

fn prepare(a: &RunArgs) -> Result<Run, Error> {
    let mut scn = Scenario::load(&a.scenario)?;
    if let Some(n) = a.grid {
        if n < 2 {
            return Err(Error::Config("--grid needs at least 2 points".into()));
        }
        scn = scn.with_grid(n);
    }
    let eps = if a.eps.is_empty() {
        vec![scn.run.eps]
    } else {
        a.eps.clone()
    };
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("eps entries must be positive".into()));
    }
    let idx = WeightIndex::new(a.j.unwrap_or(scn.run.j), a.l.unwrap_or(scn.run.l));
    let alpha = SeminormIndex::parse(a.alpha.as_deref().unwrap_or(&scn.run.alpha))?;
    alpha.validate(scn.function.value_dim())?;
    fs::create_dir_all(&a.out)?;
    Ok(Run {
        scn,
        eps,
        idx,
        alpha,
    })
}

fn write(path: &Path, body: &str) -> Result<(), Error> {
    fs::write(path, body).map_err(Error::from)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Random sub-boxes of the domain used as extra compacts.
fn random_compacts(dom: &Region, seed: u64, count: usize) -> Vec<Region> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = dom.step();
    (0..count)
        .filter_map(|_| {
            let b = &dom.boxes[rng.random_range(0..dom.boxes.len())];
            let (lo, hi): (Vec<f64>, Vec<f64>) = (0..b.dim())
                .map(|k| {
                    let u: f64 = rng.random();
                    let v: f64 = rng.random();
                    let (p, q) = (b.lo[k] + u * b.extent(k), b.lo[k] + v * b.extent(k));
                    (p.min(q), p.max(q))
                })
                .unzip();
            Region::with_step(vec![AxisBox { lo, hi }], &step).ok()
        })
        .collect()
}

fn cmd_check_weights(a: &RunArgs) -> Result<u8, Error> {
    let run = prepare(a)?;
    let extra = random_compacts(&run.scn.domain, a.seed, 5);
    let audit = audit_weights(&run.scn, &extra)?;
    write(&a.out.join("weights.json"), &json(&audit))?;
    println!(
        "{}: weight audit {}",
        run.scn.name,
        if audit.pass { "passed" } else { "FAILED" }
    );
    if let Some(p) = audit.directed.failures().next() {
        println!(
            "  no dominator for {:?},{:?}; witness {:?}",
            p.first, p.second, p.witness
        );
    }
    for r in &audit.ratios {
        println!(
            "  ratio {:?} <= {}·{:?}: K radius {:?}, closed form {:?} ({:?}), step {}",
            r.claim.first,
            r.claim.eps,
            r.claim.second,
            r.measured_radius,
            r.predicted_radius,
            r.claim.predicted,
            r.grid_step
        );
    }
    Ok(if audit.pass {
        EXIT_CERTIFIED
    } else {
        EXIT_CRITERION
    })
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:e}")
}

fn dump_factors(
    path: &Path,
    source: &dyn FactorSource,
    dom: &Region,
    limit: usize,
) -> Result<(), Error> {
    let d = dom.dim();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = vec!["factor".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.push("value".into());
    w.write_record(&header)
        .map_err(|e| Error::Io(e.to_string()))?;
    let zero = MultiIndex::zero(d);
    let mut act = Vec::new();
    for i in 0..source.len().min(limit) {
        let Some(b) = source.support(i) else { continue };
        let Ok(r) = Region::with_step(vec![b], &dom.step()) else {
            continue;
        };
        for x in r.grid_points().iter() {
            source.active(&zero, x, &mut act);
            let v = act.iter().find(|e| e.0 == i).map_or(0.0, |e| e.1);
            let mut row = vec![i.to_string()];
            row.extend(x.iter().map(|c| c.to_string()));
            row.push(v.to_string());
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_approximate(a: &RunArgs) -> Result<u8, Error> {
    let run = prepare(a)?;
    let f = run.scn.build_function()?;
    let mut code = EXIT_CERTIFIED;
    for &eps in &run.eps {
        let tag = eps_tag(eps);
        let out = match approximate_full(&f, &run.scn, run.idx, &run.alpha, eps) {
            Ok(out) => out,
            Err(e) => {
                let body = json(&serde_json::json!({ "eps": eps, "error": e.to_string() }));
                write(&a.out.join(format!("error_{tag}.json")), &body)?;
                eprintln!("eps={eps}: {e}");
                code = code.max(exit_for(&e));
                continue;
            }
        };
        let stale = a.out.join(format!("error_{tag}.json"));
        if stale.exists() {
            std::fs::remove_file(&stale)?;
        }
        let ledger = &out.ledger;
        write(
            &a.out.join(format!("ledger_{tag}.json")),
            &(ledger.to_json() + "\n"),
        )?;
        write(&a.out.join(format!("ledger_{tag}.csv")), &ledger.to_csv())?;
        let check = verify_ledger(
            &out.result,
            ledger,
            &f,
            &run.scn,
            run.idx,
            &run.alpha,
            a.refine,
        )?;
        write(&a.out.join(format!("verify_{tag}.json")), &json(&check))?;
        dump_factors(
            &a.out.join(format!("factors_{tag}.csv")),
            out.result.source().as_ref(),
            f.domain(),
            8,
        )?;
        let mut vw = csv::Writer::from_path(a.out.join(format!("vectors_{tag}.csv")))
            .map_err(|e| Error::Io(e.to_string()))?;
        for (i, v) in out.result.vectors().iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(v.iter().map(|c| c.to_string()));
            vw.write_record(&row)
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        vw.flush()?;
        let summary = serde_json::json!({
            "eps": eps,
            "rank": ledger.rank,
            "n2": ledger.stage2.n2,
            "total_measured": ledger.total_measured,
            "stage_sum": ledger.total_bound,
            "certified": ledger.certified,
            "missed_stages": ledger.missed_stages(),
            "verified": check.pass(),
        });
        write(&a.out.join(format!("summary_{tag}.json")), &json(&summary))?;
        println!(
            "{} eps={eps}: rank {} total {:.3e} (stages {:.3e} {:.3e} {:.3e}) {}",
            run.scn.name,
            ledger.rank,
            ledger.total_measured,
            ledger.stage1.measured,
            ledger.stage2.measured.value,
            ledger.stage3.measured.value,
            if ledger.certified {
                "certified"
            } else {
                "UNCERTIFIED"
            }
        );
        if !ledger.certified {
            code = code.max(EXIT_UNCERTIFIED);
        }
    }
    Ok(code)
}

fn cmd_convergence(a: &RunArgs) -> Result<u8, Error> {
    let run = prepare(a)?;
    let scn = &run.scn;
    let f = scn.build_function()?;
    let fam = scn.family()?;
    let eps0 = run.eps[0];
    let delta = scn.delta.delta(run.idx.j);
    let (ft, _) = apply_cutoff(
        &f,
        &fam,
        run.idx,
        &run.alpha,
        eps0,
        delta,
        &scn.search_region(),
        &scn.quad,
    )?;

    let mut w = csv::Writer::from_path(a.out.join("regularization.csv"))
        .map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["n", "error"])
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut n = 2u32;
    while n <= scn.n_max {
        let moll = Mollifier::build(
            f.dim(),
            n,
            &scn.quad,
            run.idx.l.clamp(1, MAX_MOLLIFIER_ORDER),
        )?;
        let v = regularization_error(&ft, &moll, &fam, run.idx, &run.alpha)?;
        w.write_record([n.to_string(), v.value.to_string()])
            .map_err(|e| Error::Io(e.to_string()))?;
        println!("n={n}: {:.6e}", v.value);
        n *= 2;
    }
    w.flush()?;

    let mut w =
        csv::Writer::from_path(a.out.join("rank.csv")).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["eps", "rank", "measured"])
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut eps_list = run.eps.clone();
    eps_list.sort_by(|p, q| q.total_cmp(p));
    for eps in eps_list {
        let (g, rep) = finite_rank_c0_approx(&ft, &fam, run.idx.j, &run.alpha, eps, None)?;
        w.write_record([
            eps.to_string(),
            g.rank().to_string(),
            rep.measured_error.value.to_string(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
        println!("eps={eps}: rank {}", g.rank());
    }
    w.flush()?;
    Ok(EXIT_CERTIFIED)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::CheckWeights(a) => cmd_check_weights(a),
        Command::Approximate(a) => cmd_approximate(a),
        Command::Convergence(a) => cmd_convergence(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
