//! `macrofin` command-line driver. Each subcommand writes its artifacts and a
//! `manifest.txt` into the output directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure,
//! 4 post-solve invariant failure, 5 file format or I/O error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use macrofin::checkpoint::Checkpoint;
use macrofin::equilibrium::{solve_equilibrium, EquilibriumSolution, GridSpec, NoTaxes, SolverConfig, TaxSchedule};
use macrofin::first_best::{solve_first_best, FirstBestConfig, FirstBestSolution};
use macrofin::keyvalue::{fmt_f64, KeyValues};
use macrofin::policy_rules::{optimize_rule, RuleSearchConfig, SimpleRule};
use macrofin::ramsey::{solve_ramsey, RamseyConfig, RamseySolution};
use macrofin::simulation::{
    ergodic_stats, identify_crises, matched_comparison, simulate, simulate_shocks, draw_shocks, Regime, SimConfig,
    SimPath, SimState, Var,
};
use macrofin::welfare::{decentralization_residual, decompose_gains, regime_welfare_slice, EquilibriumWelfare, PlannerValue, WelfareSlice};
use macrofin::{Error, ModelParams};

#[derive(Parser, Debug)]
#[command(name = "macrofin", version, about = "Solve, simulate and compare policy regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Model parameters (flat `key = value` file); defaults when omitted.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Solver and run settings, keys prefixed `ce.`, `fb.`, `ramsey.`, `sim.`,
    /// `rule.`, `check.`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    ce: Option<PathBuf>,
    #[arg(long, global = true)]
    fb: Option<PathBuf>,
    #[arg(long, global = true)]
    ramsey: Option<PathBuf>,
    /// Rule checkpoint (a competitive equilibrium solved under a rule).
    #[arg(long, global = true)]
    rule: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    SolveCe,
    SolveFb,
    SolveRamsey,
    /// Simulates the first given regime and writes the path and its statistics.
    Simulate,
    /// Writes the ergodic statistics table only.
    ErgodicStats,
    EventStudy,
    Welfare,
    Decompose,
    OptimizeRule,
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SolveCe => "solve-ce",
            Command::SolveFb => "solve-fb",
            Command::SolveRamsey => "solve-ramsey",
            Command::Simulate => "simulate",
            Command::ErgodicStats => "ergodic-stats",
            Command::EventStudy => "event-study",
            Command::Welfare => "welfare",
            Command::Decompose => "decompose",
            Command::OptimizeRule => "optimize-rule",
            Command::Verify => "verify",
        }
    }
}

enum Failure {
    Config(String),
    Solver(String),
    Invariant(String),
    Format(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Config(msg),
            Error::Domain { .. } | Error::Convergence { .. } => Failure::Solver(msg),
            Error::Invariant(_) => Failure::Invariant(msg),
            Error::Format(_) | Error::Io(_) => Failure::Format(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Format(e.to_string())
    }
}

type Run<T> = std::result::Result<T, Failure>;

struct Ctx {
    cli: Cli,
    params: ModelParams,
    settings: KeyValues,
    manifest: KeyValues,
    /// Invariant failures found after the artifacts were written.
    violations: Vec<String>,
}

fn read_params(path: &Path) -> Run<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    ModelParams::from_text(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

impl Ctx {
    fn new(cli: Cli) -> Run<Ctx> {
        let params = match &cli.params {
            Some(p) => read_params(p)?,
            None => ModelParams::default(),
        };
        params.validate()?;
        let settings = match &cli.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                KeyValues::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
            }
            None => KeyValues::new(),
        };
        std::fs::create_dir_all(&cli.out)
            .map_err(|e| Failure::Config(format!("output directory {}: {e}", cli.out.display())))?;
        let mut manifest = KeyValues::new();
        manifest.set("command", cli.command.name());
        manifest.set("version", env!("CARGO_PKG_VERSION"));
        manifest.set("params_hash", params.hash());
        manifest.extend(&params.to_key_values(), "param.");
        manifest.extend(&settings, "config.");
        Ok(Ctx {
            cli,
            params,
            settings,
            manifest,
            violations: Vec::new(),
        })
    }

    fn section(&self, prefix: &str) -> KeyValues {
        self.settings.clone().take_prefixed(prefix)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Run<T> {
        Ok(self.settings.clone().take(key)?.unwrap_or(default))
    }

    fn sim_config(&self) -> Run<SimConfig> {
        let d = SimConfig::default();
        Ok(SimConfig {
            periods: self.get("sim.periods", d.periods)?,
            burn_in: self.get("sim.burn_in", d.burn_in)?,
            seed: match self.cli.seed {
                Some(s) => s,
                None => self.get("sim.seed", d.seed)?,
            },
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cli.out.join(name)
    }

    fn create(&mut self, name: &str) -> Run<BufWriter<File>> {
        self.manifest.set(&format!("artifact.{name}"), name);
        Ok(BufWriter::new(File::create(self.out(name))?))
    }

    fn load(&self, path: &Option<PathBuf>, what: &str) -> Run<Checkpoint> {
        let path = path
            .as_ref()
            .ok_or_else(|| Failure::Config(format!("this command needs --{what}")))?;
        if !path.exists() {
            return Err(Failure::Config(format!("checkpoint {} does not exist", path.display())));
        }
        let c = Checkpoint::load(path)?;
        c.expect_params_hash(&self.params.hash()).map_err(|e| Failure::Config(e.to_string()))?;
        Ok(c)
    }

    fn load_ce(&self) -> Run<EquilibriumSolution> {
        Ok(EquilibriumSolution::from_checkpoint(&self.load(&self.cli.ce, "ce")?)?)
    }

    fn load_fb(&self) -> Run<FirstBestSolution> {
        Ok(FirstBestSolution::from_checkpoint(&self.load(&self.cli.fb, "fb")?)?)
    }

    fn load_ramsey(&self) -> Run<RamseySolution> {
        Ok(RamseySolution::from_checkpoint(&self.load(&self.cli.ramsey, "ramsey")?)?)
    }

    fn load_rule(&self) -> Run<EquilibriumSolution> {
        Ok(EquilibriumSolution::from_checkpoint(&self.load(&self.cli.rule, "rule")?)?)
    }

    fn check(&mut self, what: &str, value: f64, limit: f64) {
        self.manifest.set(&format!("check.{what}"), fmt_f64(value));
        self.manifest.set(&format!("check.{what}.limit"), fmt_f64(limit));
        if !(value <= limit) {
            self.violations.push(format!("{what} = {value:.3e} exceeds {limit:.1e}"));
        }
    }
}

fn regimes(ctx: &Ctx) -> Run<Vec<Box<dyn Regime>>> {
    let mut out: Vec<Box<dyn Regime>> = Vec::new();
    if ctx.cli.ce.is_some() {
        out.push(Box::new(ctx.load_ce()?));
    }
    if ctx.cli.rule.is_some() {
        out.push(Box::new(ctx.load_rule()?));
    }
    if ctx.cli.fb.is_some() {
        out.push(Box::new(ctx.load_fb()?));
    }
    if ctx.cli.ramsey.is_some() {
        out.push(Box::new(ctx.load_ramsey()?));
    }
    if out.is_empty() {
        return Err(Failure::Config("no checkpoint given (--ce, --rule, --fb or --ramsey)".into()));
    }
    Ok(out)
}

fn solve_ce(ctx: &mut Ctx) -> Run<()> {
    let cfg = SolverConfig::take_from(&mut ctx.section("ce."), "")?;
    let (t1, t2) = (ctx.get("rule.tau_d1", 0.0)?, ctx.get("rule.tau_d2", 0.0)?);
    let taxes: Arc<dyn TaxSchedule> = if t1 == 0.0 {
        Arc::new(NoTaxes)
    } else {
        Arc::new(SimpleRule::new(t1, t2))
    };
    let sol = solve_equilibrium(&ctx.params, taxes, &cfg)?;
    sol.to_checkpoint().save(&ctx.out("ce.ckpt"))?;
    ctx.manifest.set("artifact.ce.ckpt", "ce.ckpt");
    ctx.manifest.extend(&cfg.to_key_values(""), "solver.");
    ctx.manifest.extend(&sol.report.to_key_values(), "");
    let limit = ctx.get("check.ce_residual", 1e-5)?;
    ctx.check("ce_residual", sol.report.overall_max(), limit);
    Ok(())
}

fn solve_fb(ctx: &mut Ctx) -> Run<()> {
    let cfg = FirstBestConfig::take_from(&mut ctx.section("fb."))?;
    let sol = solve_first_best(&ctx.params, &cfg)?;
    sol.to_checkpoint().save(&ctx.out("fb.ckpt"))?;
    ctx.manifest.set("artifact.fb.ckpt", "fb.ckpt");
    ctx.manifest.extend(&cfg.to_key_values(), "solver.");
    Ok(())
}

fn solve_ramsey_cmd(ctx: &mut Ctx) -> Run<()> {
    let cfg = RamseyConfig::take_from(&mut ctx.section("ramsey."), "")?;
    let sol = solve_ramsey(&ctx.params, &cfg)?;
    sol.to_checkpoint().save(&ctx.out("ramsey.ckpt"))?;
    ctx.manifest.set("artifact.ramsey.ckpt", "ramsey.ckpt");
    ctx.manifest.extend(&sol.meta(), "ramsey.");
    if !sol.log.converged {
        ctx.violations.push(format!(
            "planner time iteration stopped at {} iterations with {} failed nodes",
            sol.log.ti_iterations, sol.log.point_failures
        ));
    }
    Ok(())
}

fn write_stats(ctx: &mut Ctx, path: &SimPath) -> Run<()> {
    let stats = ergodic_stats(path);
    let name = format!("ergodic-stats-{}.csv", path.label);
    std::fs::write(ctx.out(&name), stats.to_csv())?;
    ctx.manifest.set(&format!("artifact.{name}"), &name);
    ctx.manifest.extend(&stats.to_key_values(), &format!("stats.{}.", path.label));
    Ok(())
}

fn simulate_cmd(ctx: &mut Ctx, write_path: bool) -> Run<()> {
    let cfg = ctx.sim_config()?;
    ctx.manifest.set("seed", cfg.seed);
    for regime in regimes(ctx)? {
        let path = simulate(regime.as_ref(), &cfg)?;
        if write_path {
            let name = format!("path-{}.csv", path.label);
            let w = ctx.create(&name)?;
            path.write_csv(w)?;
        }
        write_stats(ctx, &path)?;
    }
    Ok(())
}

fn event_study(ctx: &mut Ctx) -> Run<()> {
    let cfg = ctx.sim_config()?;
    ctx.manifest.set("seed", cfg.seed);
    let rs = regimes(ctx)?;
    let path = simulate(rs[0].as_ref(), &cfg)?;
    let crises = identify_crises(&path);
    ctx.manifest.set("crisis_count", crises.count());
    let w = ctx.create("fig-crises.csv")?;
    crises.write_csv(w)?;
    if let Some(b) = rs.get(1) {
        let cmp = matched_comparison(rs[0].as_ref(), b.as_ref(), &cfg)?;
        let w = ctx.create("fig-crisis-comparison.csv")?;
        cmp.write_csv(w)?;
    }
    Ok(())
}

fn slice_of(ctx: &Ctx, chain_init: SimState) -> Run<WelfareSlice> {
    let n = ctx.get("welfare.n_d", 41usize)?;
    let (lo, hi) = (ctx.get("welfare.lev_lo", 0.35)?, ctx.get("welfare.lev_hi", 0.85)?);
    let k = ctx.get("welfare.k", GridSpec::reference_capital(&ctx.params))?;
    let d_values = (0..n).map(|j| k * (lo + (hi - lo) * j as f64 / (n.max(2) - 1) as f64)).collect();
    Ok(WelfareSlice {
        name: "fig-welfare-slice".into(),
        k,
        shock: ctx.get("welfare.shock", chain_init.shock)?,
        d_values,
    })
}

fn welfare(ctx: &mut Ctx) -> Run<()> {
    let tol = ctx.get("welfare.value_tol", 1e-9)?;
    let ce = ctx.cli.ce.as_ref().map(|_| ctx.load_ce()).transpose()?;
    let rule = ctx.cli.rule.as_ref().map(|_| ctx.load_rule()).transpose()?;
    let fb = ctx.cli.fb.as_ref().map(|_| ctx.load_fb()).transpose()?;
    let ramsey = ctx.cli.ramsey.as_ref().map(|_| ctx.load_ramsey()).transpose()?;
    let ce_w = ce.as_ref().map(|s| EquilibriumWelfare::new(s, "no_policy", tol, 200_000)).transpose()?;
    let rule_w = rule.as_ref().map(|s| EquilibriumWelfare::new(s, "simple_rule", tol, 200_000)).transpose()?;
    let mut list: Vec<&dyn PlannerValue> = Vec::new();
    if let Some(f) = &fb {
        list.push(f);
    }
    if let Some(r) = &ramsey {
        list.push(r);
    }
    if let Some(r) = &rule_w {
        list.push(r);
    }
    if let Some(c) = &ce_w {
        list.push(c);
    }
    if list.is_empty() {
        return Err(Failure::Config("welfare needs at least one checkpoint".into()));
    }
    let init = match (&ce, &fb) {
        (Some(c), _) => c.initial_state(),
        (_, Some(f)) => f.initial_state(),
        _ => ramsey.as_ref().or(None).map(|r| r.initial_state()).unwrap_or(SimState {
            k: 1.0,
            d: 0.0,
            mu: 0.0,
            shock: 0,
        }),
    };
    let slice = slice_of(ctx, init)?;
    let report = regime_welfare_slice(&list, &slice)?;
    let w = ctx.create("fig-welfare-slice.csv")?;
    report.write_csv(w)?;
    Ok(())
}

fn decompose(ctx: &mut Ctx) -> Run<()> {
    let cfg = ctx.sim_config()?;
    ctx.manifest.set("seed", cfg.seed);
    let rs = regimes(ctx)?;
    if rs.len() != 2 {
        return Err(Failure::Config("decompose needs exactly two checkpoints".into()));
    }
    let init = rs[0].initial_state();
    let shocks = draw_shocks(rs[0].chain(), init.shock, cfg.burn_in + cfg.periods, cfg.seed);
    let pa = simulate_shocks(rs[0].as_ref(), init, &shocks, cfg.burn_in)?;
    let mut init_b = rs[1].initial_state();
    init_b.k = init.k;
    init_b.d = init.d;
    let pb = simulate_shocks(rs[1].as_ref(), init_b, &shocks, cfg.burn_in)?;
    let g = decompose_gains(&pa, &pb, &ctx.params)?;
    let text = format!(
        "from,to,total,efficiency,redistribution,insurance\n{},{},{},{},{},{}\n",
        pa.label,
        pb.label,
        fmt_f64(g.total),
        fmt_f64(g.efficiency),
        fmt_f64(g.redistribution),
        fmt_f64(g.insurance)
    );
    std::fs::write(ctx.out("decomposition.csv"), text)?;
    ctx.manifest.set("artifact.decomposition.csv", "decomposition.csv");
    Ok(())
}

fn optimize(ctx: &mut Ctx) -> Run<()> {
    let base = ctx.load_ce()?;
    let mut sim = ctx.sim_config()?;
    sim.periods = ctx.get("rule.sample_periods", 20_000usize)?;
    ctx.manifest.set("seed", sim.seed);
    let sample_path = simulate(&base, &sim)?;
    let sample: Vec<SimState> = (0..sample_path.len())
        .map(|t| SimState {
            k: sample_path.col(Var::K)[t],
            d: sample_path.col(Var::D)[t],
            mu: 0.0,
            shock: sample_path.shocks[t],
        })
        .collect();
    let d = RuleSearchConfig::default();
    let cfg = RuleSearchConfig {
        tau_d1: (ctx.get("rule.tau_d1_lo", d.tau_d1.0)?, ctx.get("rule.tau_d1_hi", d.tau_d1.1)?),
        tau_d2: (ctx.get("rule.tau_d2_lo", d.tau_d2.0)?, ctx.get("rule.tau_d2_hi", d.tau_d2.1)?),
        grid_points: ctx.get("rule.grid_points", d.grid_points)?,
        simplex_tol: ctx.get("rule.simplex_tol", d.simplex_tol)?,
        simplex_max_iter: ctx.get("rule.simplex_max_iter", d.simplex_max_iter)?,
        n_states: ctx.get("rule.n_states", d.n_states)?,
        seed: ctx.cli.seed.unwrap_or(d.seed),
        value_tol: ctx.get("rule.value_tol", d.value_tol)?,
    };
    let opt = optimize_rule(&base, &sample, &cfg)?;
    let w = ctx.create("rule-audit.csv")?;
    opt.write_audit_csv(w)?;
    let text = format!(
        "tau_d1,tau_d2,criterion,no_policy_criterion\n{},{},{},{}\n",
        fmt_f64(opt.rule.tau_d1),
        fmt_f64(opt.rule.tau_d2),
        fmt_f64(opt.criterion),
        fmt_f64(opt.baseline)
    );
    std::fs::write(ctx.out("rule.csv"), text)?;
    ctx.manifest.set("artifact.rule.csv", "rule.csv");
    ctx.check("rule_dominance", opt.baseline - opt.criterion, 0.0);
    Ok(())
}

fn verify(ctx: &mut Ctx) -> Run<()> {
    let mut any = false;
    if ctx.cli.ce.is_some() {
        any = true;
        let sol = ctx.load_ce()?;
        let density = ctx.get("check.density", 10usize)?;
        let report = sol.residual_report(density);
        ctx.manifest.extend(&report.to_key_values(), "ce.");
        let limit = ctx.get("check.ce_residual", 1e-5)?;
        ctx.check("ce_residual", report.overall_max(), limit);
    }
    if ctx.cli.ramsey.is_some() {
        any = true;
        let sol = ctx.load_ramsey()?;
        let mut cfg = ctx.sim_config()?;
        cfg.periods = ctx.get("check.ramsey_states", 1000usize)?;
        cfg.burn_in = ctx.get("check.ramsey_burn_in", 200usize)?;
        let path = simulate(&sol, &cfg)?;
        let (mut tau_k, mut dec, mut imp) = (0.0f64, 0.0f64, 0.0f64);
        for t in 0..path.len() {
            let (k, d, mu, s) = (path.col(Var::K)[t], path.col(Var::D)[t], path.col(Var::Mu)[t], path.shocks[t]);
            tau_k = tau_k.max(sol.backout_taxes(k, d, mu, s)?.tau_k.abs());
            dec = dec.max(decentralization_residual(&sol, k, d, mu, s)?);
            imp = imp.max(sol.implementability_residual(k, d, mu, s)?.abs());
        }
        ctx.check("ramsey_tau_k", tau_k, ctx.get("check.tau_k", 1e-5)?);
        ctx.check("ramsey_decentralization", dec, ctx.get("check.decentralization", 1e-4)?);
        ctx.check("ramsey_implementability", imp, ctx.get("check.implementability", 1e-6)?);
    }
    if !any {
        return Err(Failure::Config("verify needs --ce or --ramsey".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Run<Vec<String>> {
    let mut ctx = Ctx::new(cli)?;
    let result = match ctx.cli.command {
        Command::SolveCe => solve_ce(&mut ctx),
        Command::SolveFb => solve_fb(&mut ctx),
        Command::SolveRamsey => solve_ramsey_cmd(&mut ctx),
        Command::Simulate => simulate_cmd(&mut ctx, true),
        Command::ErgodicStats => simulate_cmd(&mut ctx, false),
        Command::EventStudy => event_study(&mut ctx),
        Command::Welfare => welfare(&mut ctx),
        Command::Decompose => decompose(&mut ctx),
        Command::OptimizeRule => optimize(&mut ctx),
        Command::Verify => verify(&mut ctx),
    };
    ctx.manifest.set("status", if result.is_ok() { "ok" } else { "failed" });
    ctx.manifest.set("violations", ctx.violations.len());
    ctx.manifest.write(&ctx.out("manifest.txt"))?;
    result.map(|_| ctx.violations)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) if v.is_empty() => ExitCode::SUCCESS,
        Ok(v) => {
            for m in v {
                eprintln!("invariant failure: {m}");
            }
            ExitCode::from(4)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant failure: {m}");
            ExitCode::from(4)
        }
        Err(Failure::Format(m)) => {
            eprintln!("format error: {m}");
            ExitCode::from(5)
        }
    }
}
