//! Command bodies. Each takes resolved settings and an output directory and
//! returns whether the run passed; the caller writes the manifest.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dflprivacy::attack::{attack_sweep, AttackSweep, AttackSweepError, AttackTopologies};
use dflprivacy::leakage::{
    graph_seed, run_analytic, run_experiment_with_progress, verify_proposition1, ChainTolerance, ChainVerdict,
    LeakageError, SummaryTable,
};
use dflprivacy::protocol::{run_protocol, GossipDepth, ModelState, ProtocolConfig, QuadraticModel};
use dflprivacy::seeds::derive_seed;
use dflprivacy::topology::{generate_graph, graph_density, metropolis_weights, Graph};
use dflprivacy::{Mode, Topology};

use crate::error::CliError;
use crate::output::OutputDir;
use crate::settings::{AnalyticSettings, AttackSettings, SimulateSettings, TraceSettings, VerifySettings};
use crate::svg::{LineChart, Series};

pub const RELATIVE_MI_LABEL: &str = "Relative mutual information I_FL^mode/I_CFL";

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Success,
    /// The run completed but a checked property does not hold.
    Failed(String),
}

fn leakage_error(e: LeakageError) -> CliError {
    match e {
        LeakageError::InvalidConfig(_) | LeakageError::Topology(_) => CliError::usage(e),
        _ => CliError::runtime(e),
    }
}

fn progress(quiet: bool, line: &str) {
    if !quiet {
        eprintln!("{line}");
    }
}

fn series_name(mode: Mode, density: Option<f64>) -> String {
    match density {
        Some(d) if mode.is_decentralized() => format!("{} (density {d})", mode.title()),
        _ => mode.title().to_string(),
    }
}

/// One series per centralized mode and one per (decentralized mode, density).
fn leakage_chart(
    table: &SummaryTable,
    modes: &[Mode],
    densities: &[f64],
    value: fn(&dflprivacy::leakage::SummaryRow) -> Option<f64>,
) -> Vec<Series> {
    let mut series = Vec::new();
    for &mode in modes {
        let keys: Vec<Option<f64>> = if mode.is_decentralized() {
            densities.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for key in keys {
            let density = key.unwrap_or(densities[0]);
            let mut points: Vec<(f64, f64)> = table
                .rows
                .iter()
                .filter(|r| r.mode == mode && r.density == density)
                .map(|r| (r.n as f64, value(r).unwrap_or(f64::NAN)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push(Series {
                name: series_name(mode, key),
                points,
            });
        }
    }
    series
}

fn write_graphs(out: &mut OutputDir, s: &dflprivacy::leakage::ExperimentConfig) -> Result<(), CliError> {
    if !s.modes.iter().any(|m| m.is_decentralized()) {
        return Ok(());
    }
    for &n in &s.n_values {
        for &d in &s.densities {
            let g = generate_graph(n, d, graph_seed(s.seed, n, d)).map_err(CliError::usage)?;
            out.write(&format!("graphs/n{n}_d{d}.txt"), &g.to_edge_list())?;
        }
    }
    Ok(())
}

pub fn simulate(s: &SimulateSettings, out: &mut OutputDir, quiet: bool) -> Result<Outcome, CliError> {
    let cfg = &s.experiment;
    cfg.validate().map_err(leakage_error)?;
    if s.analytic_only {
        return analytic_outputs(cfg, out);
    }
    let total = cfg.n_values.len() * cfg.densities.len();
    let mut done = 0;
    let report = run_experiment_with_progress(cfg, |cell| {
        done += 1;
        progress(
            quiet,
            &format!("simulate: n={} density={} done ({done}/{total})", cell.n, cell.density),
        );
    })
    .map_err(leakage_error)?;
    let summary = report.summary();
    out.write("summary.csv", &summary.to_csv())?;
    out.write("pairs.csv", &report.pairs_csv())?;
    let chart = LineChart {
        title: "Leakage relative to CFL without SA".into(),
        x_label: "Number of nodes n".into(),
        y_label: RELATIVE_MI_LABEL.into(),
        series: leakage_chart(&summary, &cfg.modes, &cfg.densities, |r| r.relative),
    };
    out.write("relative_mi.svg", &chart.render())?;
    write_graphs(out, cfg)?;
    Ok(Outcome::Success)
}

fn analytic_outputs(cfg: &dflprivacy::leakage::ExperimentConfig, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let report = run_analytic(cfg).map_err(leakage_error)?;
    let summary = report.analytic_summary();
    out.write("summary.csv", &summary.to_csv())?;
    let chart = LineChart {
        title: "Closed-form leakage (infinite values omitted)".into(),
        x_label: "Number of nodes n".into(),
        y_label: "Mutual information (nats)".into(),
        series: leakage_chart(&summary, &cfg.modes, &cfg.densities, |r| Some(r.mi)),
    };
    out.write("analytic_mi.svg", &chart.render())?;
    write_graphs(out, cfg)?;
    Ok(Outcome::Success)
}

pub fn analytic(s: &AnalyticSettings, out: &mut OutputDir) -> Result<Outcome, CliError> {
    s.experiment.validate().map_err(leakage_error)?;
    analytic_outputs(&s.experiment, out)
}

fn read_graph(path: &std::path::Path) -> Result<Graph, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read graph {}: {e}", path.display())))?;
    Graph::from_edge_list(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn topology_of(graph: Graph) -> Result<Topology, CliError> {
    let weights = metropolis_weights(&graph).map_err(CliError::usage)?;
    Ok(Topology { graph, weights })
}

fn fmt_density(d: Option<f64>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

pub fn attack(s: &AttackSettings, out: &mut OutputDir, quiet: bool) -> Result<Outcome, CliError> {
    s.validate()?;
    let config = s.attack;
    let topologies = if let Some(path) = &s.graph {
        let graph = read_graph(path)?;
        if graph.node_count() != config.nodes {
            return Err(CliError::Usage(format!(
                "graph {} has {} nodes but --n is {}",
                path.display(),
                graph.node_count(),
                config.nodes
            )));
        }
        AttackTopologies::Fixed(topology_of(graph)?)
    } else if s.densities.is_empty() {
        AttackTopologies::None
    } else {
        AttackTopologies::Densities(s.densities.clone())
    };
    let labels: Vec<Option<f64>> = match &topologies {
        AttackTopologies::None => vec![None],
        AttackTopologies::Densities(ds) => ds.iter().copied().map(Some).collect(),
        AttackTopologies::Fixed(t) => vec![Some(graph_density(&t.graph))],
    };
    progress(
        quiet,
        &format!(
            "attack: {} mode(s), {} topolog(ies), {} run(s), {} targets each",
            s.modes.len(),
            labels.len(),
            s.runs,
            config.nodes - 1
        ),
    );
    let sweep = attack_sweep(&s.modes, &topologies, s.runs, &config, s.seed).map_err(|e| match e {
        AttackSweepError::Topology(t) => CliError::usage(t),
        AttackSweepError::Attack(a) => CliError::runtime(a),
    })?;
    write_attack_outputs(s, &sweep, &labels, out)?;
    progress(quiet, "attack: done");
    Ok(Outcome::Success)
}

fn write_attack_outputs(
    s: &AttackSettings,
    sweep: &AttackSweep,
    labels: &[Option<f64>],
    out: &mut OutputDir,
) -> Result<(), CliError> {
    let mut rows = String::from("mode,density,node,neighbor_flag,ssim,run\n");
    let mut summary = String::from("mode,density,mean_ssim,runs\n");
    let mut series = Vec::new();
    for &mode in &s.modes {
        let mut points = Vec::new();
        for &label in labels {
            let key = if mode.is_decentralized() { label } else { None };
            for cell in sweep.cells.iter().filter(|c| c.mode == mode && c.density == key) {
                for t in &cell.result.targets {
                    let flag = match t.neighbor {
                        Some(true) => "1",
                        Some(false) => "0",
                        None => "",
                    };
                    let _ = writeln!(
                        rows,
                        "{mode},{},{},{flag},{:.10},{}",
                        fmt_density(label),
                        t.node,
                        t.ssim,
                        cell.run
                    );
                }
            }
            let mean = sweep.mean_ssim(mode, key).unwrap_or(f64::NAN);
            let _ = writeln!(summary, "{mode},{},{mean:.10},{}", fmt_density(label), s.runs);
            points.push((label.unwrap_or(1.0), mean));
        }
        series.push(Series {
            name: mode.title().to_string(),
            points,
        });
    }
    out.write("ssim.csv", &rows)?;
    out.write("ssim_summary.csv", &summary)?;
    let chart = LineChart {
        title: format!("Gradient inversion, n = {}, {} run(s)", s.attack.nodes, s.runs),
        x_label: "Network density".into(),
        y_label: "Average SSIM".into(),
        series,
    };
    out.write("ssim.svg", &chart.render())?;

    let mut truths_written = vec![false; s.runs];
    for cell in &sweep.cells {
        if !truths_written[cell.run] {
            for t in &cell.result.targets {
                out.write(&format!("pgm/truth_r{}_n{}.pgm", cell.run, t.node), &t.truth.to_pgm())?;
            }
            truths_written[cell.run] = true;
        }
        let tag = match cell.density {
            Some(d) => format!("{}_d{d}", cell.mode),
            None => cell.mode.to_string(),
        };
        for t in &cell.result.targets {
            out.write(
                &format!("pgm/{tag}_r{}_n{}.pgm", cell.run, t.node),
                &t.reconstructed.to_pgm(),
            )?;
        }
    }
    for (run, d, topo) in &sweep.graphs {
        out.write(&format!("graphs/run{run}_d{d}.txt"), &topo.graph.to_edge_list())?;
    }
    Ok(())
}

fn verdict_text(verdict: &ChainVerdict) -> String {
    let mut text = format!("{:<5} {:<8} {:<48} {:>12}  result\n", "n", "density", "relation", "gap");
    for cell in &verdict.cells {
        for c in &cell.checks {
            let _ = writeln!(
                text,
                "{:<5} {:<8} {:<48} {:>12.6}  {}",
                cell.n,
                cell.density,
                c.relation.describe(),
                c.gap,
                if c.holds { "ok" } else { "VIOLATED" }
            );
        }
    }
    text.push('\n');
    for cell in &verdict.cells {
        if cell.holds() {
            let _ = writeln!(text, "n={} density={}: CHAIN HOLDS", cell.n, cell.density);
        } else {
            let names: Vec<&str> = cell.violations().map(|c| c.relation.describe()).collect();
            let _ = writeln!(
                text,
                "n={} density={}: CHAIN VIOLATED: {}",
                cell.n,
                cell.density,
                names.join("; ")
            );
        }
    }
    for (n, d) in &verdict.incomplete {
        let _ = writeln!(text, "n={n} density={d}: INCOMPLETE (needs all four modes)");
    }
    let holding = verdict.cells.iter().filter(|c| c.holds()).count();
    let total = verdict.cells.len() + verdict.incomplete.len();
    let _ = writeln!(
        text,
        "overall: {} ({holding}/{total} cells hold)",
        if verdict.holds() {
            "CHAIN HOLDS"
        } else {
            "CHAIN VIOLATED"
        }
    );
    text
}

pub fn verify(s: &VerifySettings, out: &mut OutputDir) -> Result<Outcome, CliError> {
    let path = s
        .report
        .as_ref()
        .ok_or_else(|| CliError::Usage("verify needs a report: pass REPORT or --report".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read report {}: {e}", path.display())))?;
    let table = SummaryTable::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    for t in [Some(s.tol), s.gap_tol, s.eq_tol].into_iter().flatten() {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("tolerances must be finite and >= 0, got {t}")));
        }
    }
    let tol = ChainTolerance {
        noise: s.tol,
        strict_gap: s.gap_tol.unwrap_or(s.tol),
        equality: s.eq_tol.unwrap_or(s.tol),
    };
    let verdict = verify_proposition1(&table, &tol);
    let text = verdict_text(&verdict);
    print!("{text}");
    out.write("verdict.txt", &text)?;
    Ok(if verdict.holds() {
        Outcome::Success
    } else {
        Outcome::Failed("leakage ordering does not hold".into())
    })
}

pub fn trace(s: &TraceSettings, out: &mut OutputDir) -> Result<Outcome, CliError> {
    if s.nodes == 0 || s.dim == 0 || s.rounds == 0 {
        return Err(CliError::Usage("trace needs n, dim and rounds >= 1".into()));
    }
    if s.corrupt >= s.nodes {
        return Err(CliError::Usage(format!(
            "--corrupt {} is outside 0..{}",
            s.corrupt, s.nodes
        )));
    }
    let topology = if s.mode.is_decentralized() {
        let graph = match &s.graph {
            Some(p) => {
                let g = read_graph(p)?;
                if g.node_count() != s.nodes {
                    return Err(CliError::Usage(format!(
                        "graph {} has {} nodes but --n is {}",
                        p.display(),
                        g.node_count(),
                        s.nodes
                    )));
                }
                g
            }
            None => generate_graph(s.nodes, s.density, derive_seed(s.seed, &[0x7ace])).map_err(CliError::usage)?,
        };
        Some(topology_of(graph)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[0x7ace, 1]));
    let model = QuadraticModel {
        curvature: (0..s.dim).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    let targets: Vec<Vec<f64>> = (0..s.nodes)
        .map(|_| (0..s.dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let config = ProtocolConfig {
        mode: s.mode,
        corrupt_node: s.corrupt,
        rounds: s.rounds,
        eta: s.eta,
        depth: if s.converge {
            GossipDepth::Converge {
                tol: s.gossip_tol,
                max_rounds: s.max_gossip_rounds,
            }
        } else {
            GossipDepth::Single
        },
    };
    let initial = ModelState::new(vec![0.0; s.dim]);
    let trace = run_protocol(&config, &model, &targets, &initial, topology.as_ref()).map_err(CliError::usage)?;
    out.write("trace_states.csv", &trace.states_csv())?;
    out.write("trace_observations.csv", &trace.observations_csv())?;
    if let Some(t) = &topology {
        out.write("graph.txt", &t.graph.to_edge_list())?;
    }
    Ok(Outcome::Success)
}
