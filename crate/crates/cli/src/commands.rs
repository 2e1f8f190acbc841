use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result, bail};
use rayon::prelude::*;
use serde_json::json;

use taxopt::backtest::{BacktestConfig, SyntheticSpec, TradeRecord, report_metrics, run_backtest, synthetic_market};
use taxopt::conic::ConicSolver;
use taxopt::heuristic::{RoundingConfig, RoundingMode, heuristic_solve};
use taxopt::instance::{InstanceSpec, random_instance};
use taxopt::io::{self, InstanceFiles, InstanceParams};
use taxopt::ledger::{LotTrade, TaxParameters, apply_trade, liability_pwl_capped, ltfo_allocate};
use taxopt::oracle::{OracleError, enumerate_signs_solve};
use taxopt::piecewise::{AssetCostInputs, approximate_tax, build_separable_cost, convex_envelope};
use taxopt::tam::TamProblemData;

use crate::exit::InputError;
use crate::{BacktestArgs, CompareArgs, DataKind, EnvelopeArgs, GenDataArgs, ModeArg, Rounding, SolveArgs, Tuning};

const TIGHT_BP: f64 = 0.05;

impl Tuning {
    fn apply_params(&self, p: &mut InstanceParams) {
        if let Some(v) = self.eta {
            p.eta = v;
        }
        if let Some(v) = self.gamma_risk {
            p.gamma_risk_tilde = v;
        }
        if let Some(v) = self.gamma_tc {
            p.gamma_tc = v;
        }
        if let Some(v) = self.gamma_tax {
            p.gamma_tax = v;
        }
        self.apply_tax(&mut p.tax);
    }

    fn apply_tax(&self, tax: &mut TaxParameters) {
        if let Some(v) = self.rho_lt {
            tax.rho_lt = v;
        }
        if let Some(v) = self.rho_st {
            tax.rho_st = v;
        }
    }
}

impl Rounding {
    fn config(&self) -> RoundingConfig {
        RoundingConfig {
            mode: match self.mode {
                ModeArg::Det => RoundingMode::Deterministic,
                ModeArg::Rand => RoundingMode::Randomized,
            },
            candidates: self.candidates,
            rng_seed: self.seed,
            fallback_to_deterministic: true,
        }
    }
}

fn load_problem(dir: &Path, tuning: &Tuning, cash: Option<f64>) -> Result<TamProblemData> {
    let mut files = io::read_instance(dir).with_context(|| format!("reading instance {}", dir.display()))?;
    tuning.apply_params(&mut files.params);
    if let Some(c) = cash {
        files.params.cash_init = c;
    }
    Ok(files.to_problem()?)
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn bp(v: Option<f64>) -> String {
    v.map_or_else(String::new, bp2)
}

fn bp2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

pub fn solve(a: &SolveArgs, solver: &dyn ConicSolver) -> Result<()> {
    let data = load_problem(&a.input, &a.tuning, a.cash)?;
    let out = heuristic_solve(&data, &a.rounding.config(), solver)?;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (i, pos) in data.positions.iter().enumerate() {
        let u = out.trade.u[i];
        let (next, fills, _) = if u < 0.0 {
            let alloc = ltfo_allocate(pos, -u, data.asof, &data.tax)?;
            apply_trade(pos, &LotTrade::Sell(&alloc), data.asof, pos.price, &data.tax)?
        } else if u > 0.0 {
            let buy = LotTrade::Buy {
                dollars: u,
                lot_id: format!("{}-{}", pos.asset_id, data.asof),
            };
            apply_trade(pos, &buy, data.asof, pos.price, &data.tax)?
        } else {
            (pos.clone(), Vec::new(), 0.0)
        };
        let side = if u < 0.0 { taxopt::backtest::Side::Sell } else { taxopt::backtest::Side::Buy };
        records.extend(fills.into_iter().map(|fl| TradeRecord::from_fill(data.asof, &pos.asset_id, side, fl)));
        rows.push(vec![pos.asset_id.clone(), f(data.initial_holdings[i]), f(u), f(next.holding())]);
    }

    let report = json!({
        "utility": out.report.utility,
        "upper_bound": out.report.upper_bound,
        "gap": out.report.gap,
        "gap_bp": out.report.gap_bp(),
        "method": out.report.method.tag(),
        "account_value": out.report.account_value,
        "loss_assets": data.loss_assets().len(),
        "solves": out.report.solves,
        "seconds": out.report.seconds,
        "fallback_used": out.fallback_used,
        "candidate_utilities": out.candidate_utilities,
        "realized_tax": records.iter().map(|r| r.realized_tax).sum::<f64>(),
    });
    if let Some(dir) = &a.out {
        io::write_trades(&dir.join("trades.csv"), &records)?;
        io::write_table(
            &dir.join("holdings.csv"),
            "holdings",
            &["asset_id", "initial", "trade", "post"],
            &rows,
        )?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", dir.join("report.json").display()))?;
    }
    println!("{report}");
    Ok(())
}

pub fn backtest(a: &BacktestArgs, solver: &dyn ConicSolver) -> Result<()> {
    let market = io::read_market(&a.input).with_context(|| format!("reading market {}", a.input.display()))?;
    let lots_path = a.input.join("lots.csv");
    let initial_lots = if lots_path.exists() { io::read_lots(&lots_path)? } else { Vec::new() };
    let mut cfg = BacktestConfig {
        start: a.start,
        end: a.end,
        initial_cash: a.cash,
        initial_lots,
        kappa: a.kappa,
        rounding: a.rounding.config(),
        ..BacktestConfig::default()
    };
    let t = &a.tuning;
    cfg.eta = t.eta.unwrap_or(cfg.eta);
    cfg.gamma_risk_tilde = t.gamma_risk.unwrap_or(cfg.gamma_risk_tilde);
    cfg.gamma_tc = t.gamma_tc.unwrap_or(cfg.gamma_tc);
    cfg.gamma_tax = t.gamma_tax.unwrap_or(cfg.gamma_tax);
    t.apply_tax(&mut cfg.tax);

    let result = run_backtest(&cfg, &market, solver)?;
    let metrics = report_metrics(&result);
    io::write_trades(&a.out.join("trades.csv"), &result.trades)?;
    io::write_metrics(&a.out.join("metrics.csv"), &metrics)?;
    let final_value: f64 = result.final_cash + result.final_positions.iter().map(|p| p.holding()).sum::<f64>();
    let mean_risk = if metrics.is_empty() {
        0.0
    } else {
        metrics.iter().map(|m| m.active_risk).sum::<f64>() / metrics.len() as f64
    };
    let summary = json!({
        "periods": result.periods.len(),
        "trades": result.trades.len(),
        "final_cash": result.final_cash,
        "final_value": final_value,
        "cum_tax_liability": result.cum_tax_liability,
        "mean_active_risk": mean_risk,
        "seconds": result.seconds,
    });
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", a.out.join("summary.json").display()))?;
    println!("{summary}");
    Ok(())
}

pub fn envelope(a: &EnvelopeArgs) -> Result<()> {
    if a.grid < 2 {
        bail!(InputError("--grid must be at least 2".into()));
    }
    let data = load_problem(&a.input, &a.tuning, a.cash)?;
    let i = match &a.asset {
        Some(id) => data
            .positions
            .iter()
            .position(|p| &p.asset_id == id)
            .ok_or_else(|| InputError(format!("unknown asset {id}")))?,
        None => *data
            .loss_assets()
            .first()
            .ok_or_else(|| InputError("no asset holds a loss lot; pass --asset".into()))?,
    };
    let pos = &data.positions[i];
    let cap = data.buy_caps()[i];
    let liability = liability_pwl_capped(pos, data.asof, &data.tax, cap)?;
    let inputs = AssetCostInputs {
        alpha: data.alpha[i],
        gamma_risk: data.gamma_risk,
        specific_var: data.risk_model.specific_var[i],
        h_init: data.initial_holdings[i],
        h_bench: data.benchmark[i],
        gamma_tc: data.gamma_tc,
        kappa: data.spreads[i],
        gamma_tax: data.gamma_tax,
    };
    let cost = build_separable_cost(&inputs, pos, data.asof, &data.tax, cap)?.to_pwq()?;
    let cost_env = convex_envelope(&cost)?;
    let liability_env = convex_envelope(&liability)?;
    let l_hat = approximate_tax(&liability, &cost, &cost_env, data.gamma_tax)?;

    let holding = pos.holding();
    let reach = cost_env.bridge().map_or(0.0, |b| 2.0 * b.buy_point);
    let upper = cap.min(holding.max(reach).max(1.0));
    let mut text = String::from("u,L,L_env,f,f_env,L_hat\n");
    for x in cost.grid(a.grid, upper) {
        writeln!(
            text,
            "{x},{},{},{},{},{}",
            liability.eval(x)?,
            liability_env.eval(x)?,
            cost.eval(x)?,
            cost_env.eval(x)?,
            l_hat.eval(x)?
        )?;
    }
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    if let Some(b) = cost_env.bridge() {
        eprintln!(
            "{}: bridge [{:.2}, {:.2}] slope {:.6}",
            pos.asset_id, b.sell_point, b.buy_point, b.slope
        );
    }
    Ok(())
}

struct CompareRow {
    label: String,
    loss_assets: usize,
    heuristic: f64,
    oracle: Option<f64>,
    bound: f64,
    account_value: f64,
    status: &'static str,
}

impl CompareRow {
    fn heuristic_gap_bp(&self) -> Option<f64> {
        self.oracle.map(|o| 1e4 * (o - self.heuristic) / self.account_value)
    }

    fn bound_gap_bp(&self) -> f64 {
        1e4 * (self.bound - self.heuristic) / self.account_value
    }
}

fn compare_one(
    label: String,
    data: &TamProblemData,
    a: &CompareArgs,
    solver: &dyn ConicSolver,
) -> Result<CompareRow> {
    let h = heuristic_solve(data, &a.rounding.config(), solver).with_context(|| format!("instance {label}"))?;
    let m = data.loss_assets().len();
    let (oracle, status) = match enumerate_signs_solve(data, a.oracle_max_m, solver) {
        Ok(o) => (Some(o.best_utility), "ok"),
        Err(OracleError::Refused { .. }) => (None, "refused"),
        Err(e) => return Err(anyhow::Error::new(e).context(format!("instance {label}"))),
    };
    Ok(CompareRow {
        label,
        loss_assets: m,
        heuristic: h.report.utility,
        oracle,
        bound: h.relaxation.upper_bound,
        account_value: data.account_value(),
        status,
    })
}

pub fn compare(a: &CompareArgs, solver: &dyn ConicSolver) -> Result<()> {
    let problems: Vec<(String, TamProblemData)> = match &a.input {
        Some(dir) => vec![(dir.display().to_string(), load_problem(dir, &a.tuning, a.cash)?)],
        None => (0..a.instances)
            .map(|j| {
                let seed = a.rounding.seed + j as u64;
                let mut spec = InstanceSpec {
                    n: a.n,
                    k: a.k,
                    loss_assets: (seed as usize) % (a.loss_assets.min(a.n) + 1),
                    ..InstanceSpec::default()
                };
                if let Some(c) = a.cash {
                    spec.account_value = c;
                }
                spec.eta = a.tuning.eta.unwrap_or(spec.eta);
                spec.gamma_risk_tilde = a.tuning.gamma_risk.unwrap_or(spec.gamma_risk_tilde);
                spec.gamma_tc = a.tuning.gamma_tc.unwrap_or(spec.gamma_tc);
                spec.gamma_tax = a.tuning.gamma_tax.unwrap_or(spec.gamma_tax);
                let mut data = random_instance(&spec, seed);
                a.tuning.apply_tax(&mut data.tax);
                (seed.to_string(), data)
            })
            .collect(),
    };
    let rows: Vec<CompareRow> = problems
        .into_par_iter()
        .map(|(label, data)| compare_one(label, &data, a, solver))
        .collect::<Result<_>>()?;

    let mut text = String::from("instance,loss_assets,heuristic,oracle,bound,heuristic_gap_bp,bound_gap_bp,status\n");
    for r in &rows {
        writeln!(
            text,
            "{},{},{:.6},{},{:.6},{},{},{}",
            r.label,
            r.loss_assets,
            r.heuristic,
            r.oracle.map_or_else(String::new, |o| format!("{o:.6}")),
            r.bound,
            bp(r.heuristic_gap_bp()),
            bp2(r.bound_gap_bp()),
            r.status
        )?;
    }
    let solved: Vec<f64> = rows.iter().filter_map(CompareRow::heuristic_gap_bp).collect();
    let tight = solved.iter().filter(|g| **g <= TIGHT_BP).count();
    let bound_tight = rows.iter().filter(|r| r.bound_gap_bp() <= TIGHT_BP).count();
    let worst = solved.iter().copied().fold(f64::NAN, f64::max);
    let refused = rows.len() - solved.len();
    let summary = format!(
        "heuristic within {TIGHT_BP} bp of the optimum: {tight}/{}; bound within {TIGHT_BP} bp: {bound_tight}/{}; worst gap {} bp; refused {refused}",
        solved.len(),
        rows.len(),
        bp(Some(worst).filter(|w| !w.is_nan())),
    );
    match &a.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("{summary}");
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    match a.kind {
        DataKind::Market => {
            let spec = SyntheticSpec {
                non_members: a.non_members,
                delistings: a.delistings,
                ..SyntheticSpec::new(a.seed, a.n, a.k, a.months)
            };
            let market = synthetic_market(&spec)?;
            io::write_market(&a.out, &market)?;
        }
        DataKind::Instance => {
            let spec = InstanceSpec {
                n: a.n,
                k: a.k,
                loss_assets: a.loss_assets,
                buy_restricted: a.buy_restricted,
                account_value: a.cash,
                ..InstanceSpec::default()
            };
            let data = random_instance(&spec, a.seed);
            io::write_instance(&a.out, &InstanceFiles::from_problem(&data))?;
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
