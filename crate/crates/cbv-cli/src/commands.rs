use std::fs;
use std::path::Path;

use cbv_core::clearing::{clear, net_boundary_flows, FixedPointSelection};
use cbv_core::control::{select_perimeter, ControlOption, ControlRuleSpec};
use cbv_core::cut::evaluate;
use cbv_core::fisher::{cross_priced_quad, elementary_indices, fisher_combine, CrossPricing, FisherIndices, RegimeBPricing};
use cbv_core::robustness::{monte_carlo_band, EntryRef, NoiseSpec};
use cbv_core::scl::delta_max;
use cbv_core::{
    CutStatistics, NodeId, Observer, OwnershipNetwork, Perimeter, Regime, SolverConfig, SolverMethod, ValidationReport,
    ValuationResult,
};
use cbv_report::clearing_spec::ClearingSpec;
use cbv_report::csvio::read_matrix;
use cbv_report::cut_summary::CutSummaryDoc;
use cbv_report::disclosure::{render_disclosure_sheet, DisclosureInputs};
use cbv_report::package::{load_package, validate_directory, Package};
use cbv_report::pov::PovDoc;
use serde_json::{json, Value};

use crate::{
    ClearingArgs, Cli, Command, ComputeArgs, ControlArgs, Failure, FisherArgs, Format, ReportArgs, SolverArgs,
};

type Outcome = Result<(), Failure>;

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Validate { package } => validate(package, cli.format),
        Command::Compute(a) => compute(a, cli.format),
        Command::Fisher(a) => fisher(a, cli.format),
        Command::Clearing(a) => clearing(a, cli.format),
        Command::Control(a) => control(a, cli.format),
        Command::Pwa { eps, gamma } => pwa(*eps, *gamma, cli.format),
        Command::Report(a) => report(a, cli.format),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Compute {
            code: "io".into(),
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

/// Flag-level checks on solver overrides; nothing is read or written yet.
fn parse_solver(a: &SolverArgs) -> Result<(Option<Regime>, Option<SolverMethod>), Failure> {
    let regime = a
        .regime
        .as_deref()
        .map(|r| Regime::parse(r).map_err(|e| usage(e.to_string())))
        .transpose()?;
    let method = a
        .method
        .as_deref()
        .map(|m| SolverMethod::parse(m).map_err(|e| usage(e.to_string())))
        .transpose()?;
    if a.eps.is_some_and(|e| !(e > 0.0)) {
        return Err(usage("--eps must be > 0"));
    }
    if a.max_iters == Some(0) {
        return Err(usage("--max-iters must be >= 1"));
    }
    if a.damping.is_some_and(|d| !(d > 0.0 && d <= 1.0)) {
        return Err(usage("--damping must be in (0, 1]"));
    }
    Ok((regime, method))
}

fn solver_config(a: &SolverArgs, method: Option<SolverMethod>, observer: &Observer) -> SolverConfig {
    SolverConfig {
        method,
        eps: a.eps.unwrap_or(observer.tolerances.solver_eps),
        max_iters: a.max_iters.unwrap_or(observer.tolerances.max_iters),
        damping: a.damping,
        ..SolverConfig::default()
    }
}

struct Loaded {
    package: Package,
    stats: CutStatistics,
    observer: Observer,
}

fn load(dir: &Path, pov: Option<&Path>, regime: Option<Regime>) -> Result<Loaded, Failure> {
    let package = load_package(dir)?;
    let stats = package.cut_statistics()?;
    let mut observer = match pov {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Compute {
                code: "io".into(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
            let mut o = PovDoc::parse(&text)?.to_observer()?;
            o.perimeter_ref = package.manifest.perimeter.p_ref.clone();
            o
        }
        None => package.observer()?,
    };
    if let Some(r) = regime {
        observer.regime = r;
    }
    Ok(Loaded {
        package,
        stats,
        observer,
    })
}

fn value(l: &Loaded, cfg: &SolverConfig) -> Result<ValuationResult, Failure> {
    Ok(evaluate(
        &l.stats,
        l.observer.regime,
        cfg,
        l.observer.tolerances.rounding_threshold,
    )?)
}

fn validate(dir: &Path, format: Format) -> Outcome {
    let report: ValidationReport = validate_directory(dir);
    match format {
        Format::Json => {
            let findings: Vec<Value> = report
                .findings
                .iter()
                .map(|f| {
                    json!({"rule": f.rule.as_str(), "severity": f.severity.as_str(),
                           "message": f.message, "location": f.location})
                })
                .collect();
            println!("{}", pretty(&json!({"passes": report.passes(), "findings": findings})));
        }
        Format::Table => {
            for f in &report.findings {
                println!("{:<7} {:<8} {:<24} {}", f.rule.as_str(), f.severity.as_str(), f.location, f.message);
            }
            println!(
                "{} finding(s); package {}",
                report.findings.len(),
                if report.passes() { "passes" } else { "fails" }
            );
        }
    }
    if report.passes() {
        Ok(())
    } else {
        Err(Failure::Findings)
    }
}

fn boundary_entries(stats: &CutStatistics) -> Vec<EntryRef> {
    stats
        .o_po
        .iter()
        .map(|(i, k, _)| EntryRef::Outgoing(i, k))
        .chain(stats.o_op.iter().map(|(k, j, _)| EntryRef::Incoming(k, j)))
        .collect()
}

fn compute(a: &ComputeArgs, format: Format) -> Outcome {
    let (regime, method) = parse_solver(&a.solver)?;
    let mc = match (a.mc_draws, a.mc_amplitude, a.seed) {
        (None, None, _) => None,
        (Some(_), _, None) | (_, Some(_), None) => return Err(usage("Monte Carlo flags require --seed")),
        (Some(d), Some(amp), Some(seed)) => {
            if d == 0 || !(amp >= 0.0) {
                return Err(usage("--mc-draws must be >= 1 and --mc-amplitude >= 0"));
            }
            Some((d, amp, seed))
        }
        _ => return Err(usage("--mc-draws and --mc-amplitude go together")),
    };

    let l = load(&a.package, a.pov.as_deref(), regime)?;
    let cfg = solver_config(&a.solver, method, &l.observer);
    let result = value(&l, &cfg)?;
    let mut doc = CutSummaryDoc::from_valuation(&result, &l.stats, &l.observer, &l.package.manifest.perimeter.p_ref);
    let mut band_line = None;
    if let Some((draws, amp, seed)) = mc {
        let noise = NoiseSpec::independent(amp, &boundary_entries(&l.stats));
        let tau = l.observer.tolerances.rounding_threshold;
        let band = monte_carlo_band(&l.stats, l.observer.regime, &cfg, tau, &noise, draws, seed)?;
        band_line = Some(format!("W band  [{}, {}] over {} evaluations", band.w_low, band.w_high, band.evaluated));
        doc.extra.insert(
            "mc_band".into(),
            json!({"w_low": band.w_low, "w_high": band.w_high, "draws": draws, "seed": seed,
                   "amplitude": amp, "evaluated": band.evaluated, "excluded": band.excluded.len()}),
        );
    }
    let text = doc.to_json();
    match format {
        Format::Json => write_or_print(a.out.as_deref(), &text),
        Format::Table => {
            if let Some(out) = &a.out {
                write_or_print(Some(out), &text)?;
            }
            println!("perimeter   {}", doc.perimeter);
            println!("regime      {}", result.regime.as_str());
            println!("W           {}", result.w);
            println!("base total  {}", result.base_total);
            println!("T_out       {}", result.t_out);
            println!("T_in        {}", result.t_in);
            println!("currency    {}", doc.currency);
            if let Some(m) = result.solver_log.method {
                println!(
                    "solver      {} ({} iterations, residual {:e})",
                    m.as_str(),
                    result.solver_log.iterations,
                    result.solver_log.residual
                );
            }
            for w in &result.solver_log.warnings {
                println!("warning     {w}");
            }
            if let Some(b) = band_line {
                println!("{b}");
            }
            Ok(())
        }
    }
}

fn fisher_indices(prev: &Loaded, curr: &Loaded, cfg: &SolverConfig, pricing: RegimeBPricing) -> Result<(cbv_core::fisher::FisherQuad, FisherIndices), Failure> {
    let quad = cross_priced_quad(
        &prev.stats,
        &curr.stats,
        &prev.observer,
        &curr.observer,
        &CrossPricing {
            solver: cfg.clone(),
            regime_b: pricing,
        },
    )?;
    let idx = fisher_combine(&elementary_indices(&quad)?)?;
    Ok((quad, idx))
}

fn fisher_json(quad: &cbv_core::fisher::FisherQuad, f: &FisherIndices) -> Value {
    json!({
        "W": {"prev_under_prev": quad.w_prev_prev_obs, "curr_under_prev": quad.w_curr_prev_obs,
              "prev_under_curr": quad.w_prev_curr_obs, "curr_under_curr": quad.w_curr_curr_obs},
        "indices": {"IV_L": f.iv_l, "IP_L": f.ip_l, "IV_P": f.iv_p, "IP_P": f.ip_p,
                    "IV_F": f.iv_f, "IP_F": f.ip_f, "G_F": f.g_f},
        "excluded": quad.excluded.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
    })
}

fn parse_pricing(s: &str) -> Result<RegimeBPricing, Failure> {
    match s {
        "reestimate" => Ok(RegimeBPricing::Reestimate),
        "reprice" => Ok(RegimeBPricing::RepriceEstimate),
        other => Err(usage(format!("unknown --regime-b-pricing {other:?} (reestimate or reprice)"))),
    }
}

fn fisher(a: &FisherArgs, format: Format) -> Outcome {
    let (regime, method) = parse_solver(&a.solver)?;
    let pricing = parse_pricing(&a.regime_b_pricing)?;
    let prev = load(&a.prev, None, regime)?;
    let curr = load(&a.curr, None, regime)?;
    let cfg = solver_config(&a.solver, method, &curr.observer);
    let (quad, f) = fisher_indices(&prev, &curr, &cfg, pricing)?;
    let doc = fisher_json(&quad, &f);
    match format {
        Format::Json => write_or_print(a.out.as_deref(), &pretty(&doc)),
        Format::Table => {
            if let Some(out) = &a.out {
                write_or_print(Some(out), &pretty(&doc))?;
            }
            for (k, v) in [
                ("IV_L", f.iv_l),
                ("IP_L", f.ip_l),
                ("IV_P", f.iv_p),
                ("IP_P", f.ip_p),
                ("IV_F", f.iv_f),
                ("IP_F", f.ip_f),
                ("G_F", f.g_f),
            ] {
                println!("{k:<6} {v}");
            }
            if !quad.excluded.is_empty() {
                let names: Vec<String> = quad.excluded.iter().map(|x| x.to_string()).collect();
                println!("excluded (turnover): {}", names.join(", "));
            }
            Ok(())
        }
    }
}

fn node_list(s: &str) -> Result<Vec<NodeId>, Failure> {
    s.split(',')
        .map(|x| NodeId::new(x.trim()).map_err(|e| usage(e.to_string())))
        .collect()
}

fn clearing(a: &ClearingArgs, format: Format) -> Outcome {
    let selection = a
        .selection
        .as_deref()
        .map(|s| FixedPointSelection::parse(s).map_err(|e| usage(e.to_string())))
        .transpose()?;
    let perimeter = a.perimeter.as_deref().map(node_list).transpose()?;
    let bytes = fs::read(&a.spec).map_err(|e| Failure::Compute {
        code: "io".into(),
        message: format!("cannot read {}: {e}", a.spec.display()),
    })?;
    let spec = ClearingSpec::parse(&bytes)?;
    let problem = spec.to_problem()?;
    let selection = match selection {
        Some(s) => s,
        None => spec.selection()?,
    };
    let outcome = clear(
        &problem,
        selection,
        a.eps.unwrap_or(spec.params.eps),
        a.max_iters.unwrap_or(spec.params.max_iters),
    )?;
    let nodes: Vec<String> = problem.nodes().iter().map(|x| x.to_string()).collect();
    let mut doc = json!({
        "engine": spec.engine,
        "selection": selection.as_str(),
        "iterations": outcome.iterations,
        "residual": outcome.residual,
        "nodes": nodes,
        "payments": outcome.payments,
        "ratios": outcome.ratios,
    });
    if let Some(members) = perimeter {
        let net = net_boundary_flows(&problem, &outcome, &Perimeter::new(members))?;
        let edges = |m: &cbv_core::SparseMatrix, from: &[NodeId], to: &[NodeId]| -> Vec<Value> {
            m.iter()
                .map(|(i, j, v)| json!({"from": from[i].to_string(), "to": to[j].to_string(), "amount": v}))
                .collect()
        };
        doc["post_clearing"] = json!({
            "edges_PO": edges(&net.x_po, &net.p_ids, &net.o_ids),
            "edges_OP": edges(&net.x_op, &net.o_ids, &net.p_ids),
        });
    }
    match format {
        Format::Json => write_or_print(a.out.as_deref(), &pretty(&doc)),
        Format::Table => {
            if let Some(out) = &a.out {
                write_or_print(Some(out), &pretty(&doc))?;
            }
            println!(
                "{} fixed point after {} iterations (residual {:e})",
                selection.as_str(),
                outcome.iterations,
                outcome.residual
            );
            for (l, (p, th)) in outcome.payments.iter().zip(&outcome.ratios).enumerate() {
                for (k, id) in nodes.iter().enumerate() {
                    println!("class {}  {id:<12} paid {}  ratio {}", l + 1, p[k], th[k]);
                }
            }
            if let Some(pc) = doc.get("post_clearing") {
                println!("post-clearing boundary flows: {pc}");
            }
            Ok(())
        }
    }
}

fn control(a: &ControlArgs, format: Format) -> Outcome {
    let option = ControlOption::parse(&a.option).map_err(|e| usage(e.to_string()))?;
    let seed = a.select.as_deref().map(node_list).transpose()?;
    let spec = ControlRuleSpec {
        option,
        tau: a.tau,
        alpha: a.alpha,
        normalize: a.normalize,
        reachability_depth: a.depth,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let bytes = fs::read(&a.network).map_err(|e| Failure::Compute {
        code: "io".into(),
        message: format!("cannot read {}: {e}", a.network.display()),
    })?;
    let name = a.network.display().to_string();
    let m = read_matrix(&bytes, &name, "id")?;
    if m.row_ids != m.col_ids {
        return Err(Failure::Compute {
            code: "validation".into(),
            message: format!("{name}: row and column ids must match in the same order"),
        });
    }
    let ids = m
        .row_ids
        .iter()
        .map(|s| NodeId::new(s.as_str()))
        .collect::<cbv_core::Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for (r, row) in m.values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if *v != 0.0 {
                entries.push((ids[r].clone(), ids[c].clone(), *v));
            }
        }
    }
    let network = OwnershipNetwork::new(ids, entries)?;
    let omega = spec.apply(&network)?;
    let nodes: Vec<String> = omega.nodes.iter().map(|x| x.to_string()).collect();
    let rows: Vec<Vec<f64>> = (0..omega.weights.nrows())
        .map(|r| (0..omega.weights.ncols()).map(|c| omega.weights[(r, c)]).collect())
        .collect();
    let mut doc = json!({"option": option.as_str(), "nodes": nodes, "omega": rows});
    if let Some(seed) = seed {
        let p = select_perimeter(&omega, &Perimeter::new(seed), a.tau_p)?;
        doc["perimeter"] = json!(p.members().iter().map(|x| x.to_string()).collect::<Vec<_>>());
    }
    match format {
        Format::Json => write_or_print(a.out.as_deref(), &pretty(&doc)),
        Format::Table => {
            if let Some(out) = &a.out {
                write_or_print(Some(out), &pretty(&doc))?;
            }
            println!("omega (row controls column), option {}", option.as_str());
            println!("{:<12}{}", "", nodes.iter().map(|n| format!("{n:>12}")).collect::<String>());
            for (n, row) in nodes.iter().zip(&rows) {
                println!("{n:<12}{}", row.iter().map(|x| format!("{x:>12.6}")).collect::<String>());
            }
            if let Some(p) = doc.get("perimeter") {
                println!("perimeter: {p}");
            }
            Ok(())
        }
    }
}

fn pwa(eps: f64, gamma: f64, format: Format) -> Outcome {
    if !(eps > 0.0) || !(gamma > 0.0) {
        return Err(usage("--eps and --gamma must be > 0"));
    }
    let g = delta_max(eps, gamma)?;
    match format {
        Format::Json => println!("{}", pretty(&json!({"delta_max": g.delta_max, "segments": g.segments}))),
        Format::Table => println!("Δ_max={:.4}, N={}", g.delta_max, g.segments),
    }
    Ok(())
}

fn report(a: &ReportArgs, format: Format) -> Outcome {
    let (regime, method) = parse_solver(&a.solver)?;
    if a.period.is_some() && a.prev.is_none() {
        return Err(usage("--period needs --prev"));
    }
    let curr = load(&a.package, None, regime)?;
    let cfg = solver_config(&a.solver, method, &curr.observer);
    let valuation = value(&curr, &cfg)?;
    let fisher = match &a.prev {
        Some(dir) => {
            let prev = load(dir, None, regime)?;
            Some(fisher_indices(&prev, &curr, &cfg, RegimeBPricing::default())?.1)
        }
        None => None,
    };
    let w = valuation.w;
    let sheet = render_disclosure_sheet(
        &curr.package,
        &DisclosureInputs {
            valuation,
            period: a.period.clone(),
            fisher,
        },
    );
    match format {
        Format::Json => write_or_print(a.out.as_deref(), &pretty(&json!({"W": w, "sheet": sheet}))),
        Format::Table => write_or_print(a.out.as_deref(), sheet.trim_end()),
    }
}
