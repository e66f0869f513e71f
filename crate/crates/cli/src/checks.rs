//! `check` subcommands: hypothesis audits and validation studies. Each writes
//! a CSV table (one row per sample, `k` or pair) and a JSON verdict.

use clap::{Args, ValueEnum};
use impulseflow::export::{csv_table, numbered};
use impulseflow::validation::{
    continuous_dependence_check, convergence_check, ordinary_control_continuity_check,
    random_pairs, shifted_switches, ApproximationScheme, SchemeKind, DEFAULT_CONVERGENCE_TARGET,
};
use impulseflow::{audit_commutativity, audit_growth, pushforward_check, Chart, HypothesisReport};
use serde::Serialize;

use crate::config::Resolved;
use crate::{to_json, write_file, CliError, CommonArgs, Format, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    /// Lie brackets of the impulse fields vanish on the scenario region.
    Commute,
    /// Growth bound on the impulse fields.
    Growth,
    /// The chart straightens every impulse field.
    Pushforward,
    /// Classical solutions for smooth approximations converge to the limit.
    Converge,
    /// Empirical constant of the L1 continuous-dependence estimate.
    #[value(name = "estL1")]
    EstL1,
    /// Continuity in the ordinary control.
    Vcont,
}

impl CheckKind {
    fn name(self) -> &'static str {
        match self {
            CheckKind::Commute => "commute",
            CheckKind::Growth => "growth",
            CheckKind::Pushforward => "pushforward",
            CheckKind::Converge => "converge",
            CheckKind::EstL1 => "estL1",
            CheckKind::Vcont => "vcont",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Mesh,
    Mollify,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Anchor time of the approximations (default: interval midpoint).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Mesh counts of the approximations.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32, 64])]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value = "mesh")]
    pub scheme: SchemeArg,
    /// Largest acceptable final combined error of `converge`.
    #[arg(long, default_value_t = DEFAULT_CONVERGENCE_TARGET)]
    pub target: f64,
    /// Number of random control pairs for `estL1`.
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
    /// Radius of the ball of random initial states for `estL1`.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Sample count: audit points, or anchor times for `estL1`.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed for random pair generation and growth sampling.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Switch-time shifts for `vcont`, as fractions of the interval length.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.05, 0.025, 0.0125])]
    pub shifts: Vec<f64>,
}

#[derive(Serialize)]
struct VerdictRecord<'a, T: Serialize> {
    check: &'a str,
    scenario: &'a str,
    controls: &'a str,
    passed: bool,
    report: &'a T,
}

struct Outcome {
    passed: bool,
    csv: String,
    json: String,
    summary: String,
}

fn outcome<T: Serialize>(
    kind: CheckKind,
    run: &Resolved,
    passed: bool,
    report: &T,
    csv: String,
    summary: String,
) -> Outcome {
    let record = VerdictRecord {
        check: kind.name(),
        scenario: &run.scenario.name,
        controls: &run.controls.name,
        passed,
        report,
    };
    Outcome {
        passed,
        csv,
        json: to_json(&record),
        summary,
    }
}

pub fn run(kind: CheckKind, args: &CheckArgs) -> Result<Verdict, CliError> {
    let solver_tol = !matches!(kind, CheckKind::Commute | CheckKind::Pushforward);
    let run = args.common.resolve(solver_tol)?;
    let out = match kind {
        CheckKind::Commute => commute(&run, args)?,
        CheckKind::Growth => growth(&run, args)?,
        CheckKind::Pushforward => pushforward(&run, args)?,
        CheckKind::Converge => converge(&run, args)?,
        CheckKind::EstL1 => est_l1(&run, args)?,
        CheckKind::Vcont => vcont(&run, args)?,
    };
    if let Some(dir) = &args.common.out {
        write_file(dir, "report.csv", &out.csv)?;
        write_file(dir, "verdict.json", &out.json)?;
    }
    match args.common.format {
        Some(Format::Csv) => print!("{}", out.csv),
        Some(Format::Json) => print!("{}", out.json),
        None if args.common.out.is_none() => print!("{}", out.csv),
        None => {}
    }
    eprintln!(
        "check {} on {}: {} ({})",
        kind.name(),
        run.scenario.name,
        if out.passed { "PASS" } else { "FAIL" },
        out.summary
    );
    Ok(Verdict::from_bool(out.passed))
}

fn violations_csv(report: &HypothesisReport, n: usize, bracket: bool) -> String {
    let list = if bracket {
        &report.bracket_violations
    } else {
        &report.growth_violations
    };
    let mut header = numbered("x", n);
    header.push("value".into());
    let rows: Vec<Vec<f64>> = list
        .iter()
        .map(|v| v.point.iter().copied().chain([v.value]).collect())
        .chain(
            report
                .domain_failures
                .iter()
                .map(|p| p.iter().copied().chain([f64::NAN]).collect()),
        )
        .collect();
    csv_table(&header, &rows)
}

fn commute(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let tol = args.common.tol.unwrap_or(1e-8);
    let report = audit_commutativity(&sc.spec, &sc.region, args.samples.unwrap_or(512), tol)?;
    if !sc.commuting {
        eprintln!("warning: scenario {} is registered as non-commuting; see the audit around its singular set", sc.name);
    }
    let summary = format!(
        "max bracket norm {:e}, {} violations, {} domain failures",
        report.max_bracket_norm,
        report.bracket_violations.len(),
        report.domain_failures.len()
    );
    let csv = violations_csv(&report, sc.spec.n(), true);
    Ok(outcome(
        CheckKind::Commute,
        run,
        report.passed(),
        &report,
        csv,
        summary,
    ))
}

fn growth(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let report = audit_growth(
        &sc.spec,
        Some(&sc.region),
        args.samples.unwrap_or(512),
        args.seed,
    )?;
    let summary = format!(
        "max growth ratio {:e} against A = {}, {} violations",
        report.max_growth_ratio,
        sc.spec.growth_constant(),
        report.growth_violations.len()
    );
    let csv = violations_csv(&report, sc.spec.n(), false);
    Ok(outcome(
        CheckKind::Growth,
        run,
        report.passed(),
        &report,
        csv,
        summary,
    ))
}

fn pushforward(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let chart = Chart::new(&sc.spec, run.cfg.chart.clone())?;
    let report = pushforward_check(&chart, &sc.region, args.samples.unwrap_or(64))?;
    let tol = args.common.tol.unwrap_or(1e-6);
    let passed = report.max_deviation <= tol;
    let mut header = numbered("x", sc.spec.n());
    header.extend(numbered("z", sc.spec.m()));
    header.extend(["alpha".to_string(), "deviation".to_string()]);
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            r.x.iter()
                .chain(&r.z)
                .copied()
                .chain([(r.alpha + 1) as f64, r.deviation])
                .collect()
        })
        .collect();
    let summary = format!(
        "max deviation {:e} (tolerance {tol:e})",
        report.max_deviation
    );
    Ok(outcome(
        CheckKind::Pushforward,
        run,
        passed,
        &report,
        csv_table(&header, &rows),
        summary,
    ))
}

fn converge(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let iv = sc.spec.interval();
    let tau = args.tau.unwrap_or(0.5 * (iv.a + iv.b));
    let kind = match args.scheme {
        SchemeArg::Mesh => SchemeKind::MeshInterpolation,
        SchemeArg::Mollify => SchemeKind::Mollification,
    };
    let scheme = ApproximationScheme::new(kind, args.k.clone(), tau)?;
    let report = convergence_check(
        &sc.spec,
        &sc.x0,
        &run.controls.u,
        &run.controls.v,
        &scheme,
        &run.cfg,
        args.target,
    )?;
    let header = [
        "k",
        "pointwise_error",
        "control_l1_error",
        "state_l1_error",
        "endpoint_error",
        "combined",
    ];
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k as f64,
                r.pointwise_error,
                r.control_l1_error,
                r.state_l1_error,
                r.endpoint_error,
                r.combined,
            ]
        })
        .collect();
    let summary = format!(
        "{} at tau = {tau}, final combined error {:e}",
        kind.name(),
        report.final_combined()
    );
    Ok(outcome(
        CheckKind::Converge,
        run,
        report.passed,
        &report,
        csv_table(&header, &rows),
        summary,
    ))
}

fn est_l1(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let iv = sc.spec.interval();
    let count = args.samples.unwrap_or(5).max(2);
    let anchors: Vec<f64> = (0..count)
        .map(|i| iv.a + iv.length() * i as f64 / (count - 1) as f64)
        .collect();
    let pairs = random_pairs(&sc.spec, args.radius, args.pairs, args.seed)?;
    let report =
        continuous_dependence_check(&sc.spec, &pairs, &run.controls.v, &anchors, &run.cfg, 10.0)?;
    let header = ["pair", "anchor", "numerator", "denominator", "ratio"];
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.pair as f64, r.anchor, r.numerator, r.denominator, r.ratio])
        .collect();
    let summary = format!(
        "M_hat = {}, refined {}, relative change {:e}",
        report.m_hat, report.m_hat_refined, report.relative_change
    );
    Ok(outcome(
        CheckKind::EstL1,
        run,
        report.passed,
        &report,
        csv_table(&header, &rows),
        summary,
    ))
}

fn vcont(run: &Resolved, args: &CheckArgs) -> Result<Outcome, CliError> {
    let sc = &run.scenario;
    let len = sc.spec.interval().length();
    let shifts: Vec<f64> = args.shifts.iter().map(|s| s * len).collect();
    let v_seq = shifted_switches(&run.controls.v, sc.spec.v_set(), &shifts)?;
    let report = ordinary_control_continuity_check(
        &sc.spec,
        &sc.x0,
        &run.controls.u,
        &run.controls.v,
        &v_seq,
        &run.cfg,
    )?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.l1_distance, r.sup_error])
        .collect();
    let last = report.rows.last().map_or(f64::NAN, |r| r.sup_error);
    let summary = format!(
        "{} shifted controls, last sup error {last:e}",
        report.rows.len()
    );
    Ok(outcome(
        CheckKind::Vcont,
        run,
        report.passed,
        &report,
        csv_table(&["l1_distance", "sup_error"], &rows),
        summary,
    ))
}
