//! Executes a [`ScenarioConfig`] and writes its artifacts.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::export::{
    comparison_svg, heatmap_pgm, policy_svg, report_toml, training_log_csv, trajectory_csv,
    values_csv,
};
use crate::mdp::{build_gridworld, GridWorld};
use crate::preserving::{
    compute_thresholds, preserving_rvi, PreservationThresholds, PreservingConfig, RadiusField,
};
use crate::properties::{
    check_preference_condition, check_structure_preservation, DestroyAdversary,
};
use crate::scenario::{ScenarioConfig, SolverKind};
use crate::sinkhorn::{RadiusMap, SinkhornFamily};
use crate::solvers::{robust_value_iteration, value_iteration, SolverReport};
use crate::tables::{greedy_policy, greedy_rollout, GreedyPolicy, QTable};
use crate::training::{train, AttackSurface};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run value iteration, robust value iteration and preserving robust value
    /// iteration on the same world, whatever the configured solver.
    pub compare: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// Human-readable results, also written to `summary.txt`.
    pub lines: Vec<String>,
    /// Files written, in order.
    pub artifacts: Vec<PathBuf>,
    /// False when a requested check failed.
    pub checks_passed: bool,
}

struct Sink<'a> {
    dir: &'a Path,
    summary: RunSummary,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.summary.artifacts.push(path);
        Ok(())
    }

    fn say(&mut self, line: String) {
        self.summary.lines.push(line);
    }
}

/// Greedy-path budget used for every trajectory: `4 (width + height)` moves.
pub fn trajectory_budget(world: &GridWorld) -> usize {
    4 * (world.spec().width + world.spec().height) as usize
}

fn reaches_goal(world: &GridWorld, path: &[usize]) -> bool {
    let last = world.cell(*path.last().expect("paths include the start"));
    world.spec().goals.iter().any(|g| g.cell == last)
}

fn describe_path(world: &GridWorld, path: &[usize]) -> String {
    let end = world.cell(*path.last().expect("paths include the start"));
    let verdict = if reaches_goal(world, path) {
        "reaches the goal"
    } else {
        "does not reach the goal"
    };
    format!(
        "greedy path of {} moves ends at {:?}, {verdict}",
        path.len() - 1,
        end
    )
}

fn export_table(
    sink: &mut Sink<'_>,
    world: &GridWorld,
    name: &str,
    q: &QTable,
    radii: Option<&RadiusField>,
) -> Result<Vec<usize>> {
    let path = greedy_rollout(
        world.mdp(),
        &greedy_policy(q),
        world.mdp().start_state(),
        trajectory_budget(world),
    );
    sink.write(
        &format!("{name}_values.csv"),
        &values_csv(world, q, radii.map(|r| r.as_slice()))?,
    )?;
    sink.write(
        &format!("{name}_heatmap.pgm"),
        &heatmap_pgm(world, &q.state_values().values),
    )?;
    sink.write(
        &format!("{name}_policy.svg"),
        &policy_svg(world, q, &path, name),
    )?;
    sink.write(
        &format!("{name}_trajectory.csv"),
        &trajectory_csv(world, &path)?,
    )?;
    sink.say(format!("{name}: {}", describe_path(world, &path)));
    Ok(path)
}

fn solve_preserving(
    cfg: &ScenarioConfig,
    world: &GridWorld,
    family: &SinkhornFamily,
) -> Result<(PreservationThresholds, QTable, RadiusField, SolverReport)> {
    let mdp = world.mdp();
    let opts = cfg.tolerances.solver_options();
    let thresholds = compute_thresholds(
        mdp,
        &family.at(RadiusMap::Uniform(cfg.eta_b)),
        cfg.alpha,
        opts,
    )?;
    let pcfg = PreservingConfig {
        eta_b: cfg.eta_b,
        schedule: cfg.schedule,
        iters: cfg.preserving.iters,
        tol: cfg.tolerances.preserving_tol,
        threshold_slack: cfg.tolerances.solver_tol,
    };
    let (q, radii, report) = preserving_rvi(mdp, &thresholds, family, &pcfg)?;
    Ok((thresholds, q, radii, report))
}

/// Runs the scenario, writing artifacts into `out_dir` (created if needed).
/// Artifacts depend only on the configuration, seed included.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let world = build_gridworld(&cfg.world)?;
    let mdp = world.mdp();
    let coords = world.coords();
    let family = SinkhornFamily::for_mdp(mdp, &coords, cfg.sinkhorn)?;
    let solver_opts = cfg.tolerances.solver_options();
    let mut sink = Sink {
        dir: out_dir,
        summary: RunSummary {
            checks_passed: true,
            ..RunSummary::default()
        },
    };
    sink.say(format!(
        "scenario: solver {}, {}x{} world, {} states, alpha {}, gamma {}, eta_b {}, seed {}",
        if opts.compare {
            "compare"
        } else {
            cfg.solver.name()
        },
        cfg.world.width,
        cfg.world.height,
        mdp.n_states(),
        cfg.alpha,
        cfg.gamma,
        cfg.eta_b,
        cfg.seed
    ));

    if opts.compare {
        let (th, q, radii, report) = solve_preserving(cfg, &world, &family)?;
        let p_vi = export_table(&mut sink, &world, "vi", &th.q_nominal, None)?;
        let p_rvi = export_table(&mut sink, &world, "rvi", &th.q_worst, None)?;
        let p_pr = export_table(&mut sink, &world, "preserving-rvi", &q, Some(&radii))?;
        sink.say(format!(
            "preserving-rvi: trailing residual {:e}",
            report.final_residual
        ));
        let svg = comparison_svg(
            &world,
            &[
                ("vi", &th.q_nominal, &p_vi),
                ("rvi", &th.q_worst, &p_rvi),
                ("preserving-rvi", &q, &p_pr),
            ],
        );
        sink.write("compare.svg", &svg)?;
        return finish(sink);
    }

    match cfg.solver {
        SolverKind::Vi => {
            let (q, report) = value_iteration(mdp, solver_opts)?;
            require_converged(&report, "value iteration")?;
            sink.say(format!("vi: converged in {} sweeps", report.iterations));
            export_table(&mut sink, &world, "vi", &q, None)?;
        }
        SolverKind::Rvi => {
            let adversary = family.at(RadiusMap::Uniform(cfg.eta_b));
            let (q, report) = robust_value_iteration(mdp, &adversary, solver_opts)?;
            require_converged(&report, "robust value iteration")?;
            sink.say(format!("rvi: converged in {} sweeps", report.iterations));
            export_table(&mut sink, &world, "rvi", &q, None)?;
        }
        SolverKind::PreservingRvi => {
            let (_, q, radii, report) = solve_preserving(cfg, &world, &family)?;
            sink.say(format!(
                "preserving-rvi: {} sweeps, trailing residual {:e}, mean radius {}",
                report.iterations,
                report.final_residual,
                radii.mean()
            ));
            export_table(&mut sink, &world, "preserving-rvi", &q, Some(&radii))?;
        }
        SolverKind::TrainDynamics | SolverKind::TrainObservations => {
            let name = cfg.solver.name();
            let surface = match cfg.solver {
                SolverKind::TrainDynamics => AttackSurface::Dynamics,
                _ => AttackSurface::Observations(&world),
            };
            let tcfg = cfg.train_config()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let outcome = train(mdp, surface, &tcfg, &mut rng)?;
            sink.write(
                &format!("{name}_log.csv"),
                &training_log_csv(&outcome.log.rows)?,
            )?;
            sink.write(
                &format!("{name}_critic.csv"),
                &values_csv(&world, &outcome.state.critic, None)?,
            )?;
            let policy = &outcome.state.policy;
            let greedy = GreedyPolicy {
                actions: (0..mdp.n_states())
                    .map(|s| policy.greedy_action(s))
                    .collect(),
            };
            let path = greedy_rollout(mdp, &greedy, mdp.start_state(), trajectory_budget(&world));
            sink.write(
                &format!("{name}_trajectory.csv"),
                &trajectory_csv(&world, &path)?,
            )?;
            sink.say(format!(
                "{name}: mean sampled magnitude {}",
                outcome.log.mean_sampled_eta()
            ));
            if let Some(last) = outcome.log.rows.last().map(|r| r.cycle) {
                for row in outcome.log.rows.iter().filter(|r| r.cycle == last) {
                    sink.say(format!(
                        "{name}: cycle {last}, return {} at eta {}",
                        row.mean_return, row.eval_eta
                    ));
                }
            }
            sink.say(format!("{name}: {}", describe_path(&world, &path)));
        }
        SolverKind::CheckProperties => {
            let destroy = DestroyAdversary::new(cfg.properties.r_min);
            let structure = check_structure_preservation(
                mdp,
                cfg.alpha,
                &destroy,
                cfg.tolerances.property_tol,
            )?;
            sink.write("structure_report.toml", &report_toml(&structure)?)?;
            let ok = structure.passed();
            sink.say(format!(
                "structure: {} (applicable {}, gap error {:e}, {} ordering violations)",
                verdict(ok),
                structure.applicable,
                structure.max_gap_error,
                structure.violations.len()
            ));
            sink.summary.checks_passed &= ok;
            if cfg.alpha > 0.0 && cfg.alpha < 1.0 {
                let (th, q, _, _) = solve_preserving(cfg, &world, &family)?;
                let pref = check_preference_condition(&th.q_nominal, &th.q_worst, &q, cfg.alpha)?;
                sink.write("preference_report.toml", &report_toml(&pref)?)?;
                sink.say(format!(
                    "preference: {} ({} ordered pairs, {} reversals, {} biconditional failures)",
                    verdict(pref.holds),
                    pref.pairs_tested,
                    pref.reversals.len(),
                    pref.biconditional_failures
                ));
                sink.summary.checks_passed &= pref.holds;
            } else {
                sink.say("preference: skipped, alpha must lie strictly inside (0, 1)".into());
            }
        }
    }
    finish(sink)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn require_converged(report: &SolverReport, solver: &'static str) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::NotConverged {
            solver,
            iterations: report.iterations,
            residual: report.final_residual,
        })
    }
}

fn finish(mut sink: Sink<'_>) -> Result<RunSummary> {
    let mut text = sink.summary.lines.join("\n");
    text.push('\n');
    sink.write("summary.txt", &text)?;
    Ok(sink.summary)
}
