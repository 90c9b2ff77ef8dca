//! Subcommand orchestration: builds the problem once, caches the grid /
//! operator / solve across stages, writes reports, and returns the overall
//! check verdict that drives the process exit code.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DVector;

use hjbc_core::catalog::{catalog_spec, ProblemSpec};
use hjbc_core::geometry::Domain;
use hjbc_core::grid::{build_grid, Grid, ValueFunction};
use hjbc_core::policy::FeedbackPolicy;
use hjbc_core::problem::ControlProblem;
use hjbc_core::sim::{estimate_cost, simulate_path, test_z_process, Direction, ValueField, Z_99};
use hjbc_core::solver::{
    discretize, policy_iteration, value_iteration, DiscreteOperator, DiscretizeOptions,
    SolveOptions, SolveResult,
};
use hjbc_core::verify::{check_sandwich, check_subsolution, check_supersolution};
use hjbc_core::viability::{construct_feedback, scan_boundary};

use crate::config::{RunConfig, SolveMethod};
use crate::report::{
    describe_estimate, describe_sandwich, fmt_f64, write_history_csv, write_path_csv,
    write_value_csv, write_viability_csv, write_violations_csv, write_ztest_csv, Summary,
};

/// Pipeline stages addressable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Simulate,
    Ztest,
    Verify,
    Viability,
    Sandwich,
    All,
}

/// Lazily built shared state for one run.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    problem: Arc<ControlProblem>,
    domain: Domain,
    grid: Option<Arc<Grid>>,
    op: Option<DiscreteOperator>,
    solved: Option<SolveResult>,
}

impl Context {
    pub fn new(cfg: RunConfig, hash: String, out: PathBuf) -> anyhow::Result<Self> {
        let spec: ProblemSpec = match (&cfg.problem.catalog, &cfg.problem.inline) {
            (Some(name), None) => catalog_spec(name, &cfg.problem.params)?,
            (None, Some(inline)) => inline.clone(),
            _ => anyhow::bail!("exactly one of problem.catalog / problem.inline required"),
        };
        let domain = spec.domain.clone();
        let problem = spec.build()?;
        std::fs::create_dir_all(&out)
            .map_err(|e| anyhow::anyhow!("cannot create output dir {}: {e}", out.display()))?;
        Ok(Self {
            cfg,
            hash,
            out,
            problem,
            domain,
            grid: None,
            op: None,
            solved: None,
        })
    }

    pub fn problem(&self) -> &Arc<ControlProblem> {
        &self.problem
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    fn ensure_grid(&mut self) -> anyhow::Result<()> {
        if self.grid.is_none() {
            self.grid = Some(build_grid(
                &self.domain,
                self.cfg.grid.h,
                self.cfg.grid.boundary_band,
            )?);
        }
        Ok(())
    }

    fn ensure_op(&mut self) -> anyhow::Result<()> {
        self.ensure_grid()?;
        if self.op.is_none() {
            let opts = DiscretizeOptions {
                degeneracy_tol: self.cfg.solver.degeneracy_tol,
                ..Default::default()
            };
            self.op = Some(discretize(
                &self.problem,
                self.grid.as_ref().unwrap(),
                &opts,
            )?);
        }
        Ok(())
    }

    fn ensure_solved(&mut self) -> anyhow::Result<()> {
        self.ensure_op()?;
        if self.solved.is_none() {
            let opts = SolveOptions {
                tol: self.cfg.solver.tol,
                max_iter: self.cfg.solver.max_iter,
            };
            let op = self.op.as_ref().unwrap();
            let res = match self.cfg.solver.method {
                SolveMethod::Value => value_iteration(op, &opts)?,
                SolveMethod::Policy => policy_iteration(op, &opts)?,
            };
            self.solved = Some(res);
        }
        Ok(())
    }

    /// Simulation start point: configured, or the in-domain node nearest the
    /// origin.
    fn start_point(&mut self) -> anyhow::Result<DVector<f64>> {
        if let Some(x) = &self.cfg.sim.start {
            let x = DVector::from_vec(x.clone());
            anyhow::ensure!(
                self.domain.signed_distance(&x)? >= 0.0,
                "sim.start lies outside the constraint set"
            );
            return Ok(x);
        }
        self.ensure_grid()?;
        let grid = self.grid.as_ref().unwrap();
        let ci = grid.nearest_in_domain_compact(&DVector::zeros(self.domain.dim()));
        Ok(grid.coord(grid.nodes[ci]))
    }

    /// Constant zero-control policy (first control when zero is absent).
    fn fallback_policy(&self) -> FeedbackPolicy {
        let cs = self.problem.control_set();
        let idx = (0..cs.len())
            .find(|&i| cs.point(i).iter().all(|&c| c == 0.0))
            .unwrap_or(0);
        FeedbackPolicy::Constant(cs.point(idx).clone())
    }

    pub fn run(&mut self, cmd: Command) -> anyhow::Result<bool> {
        match cmd {
            Command::Solve => self.cmd_solve(),
            Command::Simulate => self.cmd_simulate(),
            Command::Ztest => self.cmd_ztest(),
            Command::Verify => self.cmd_verify(),
            Command::Viability => self.cmd_viability(),
            Command::Sandwich => self.cmd_sandwich(),
            Command::All => {
                let mut all = true;
                let mut summary = Summary::new(&self.hash);
                for (name, sub) in [
                    ("solve", Command::Solve),
                    ("viability", Command::Viability),
                    ("verify", Command::Verify),
                    ("simulate", Command::Simulate),
                    ("ztest", Command::Ztest),
                    ("sandwich", Command::Sandwich),
                ] {
                    let pass = self.run(sub)?;
                    summary.kv(name, if pass { "pass" } else { "fail" });
                    all = all && pass;
                }
                summary.line(format!(
                    "full pipeline: {}",
                    if all { "all stages passed" } else { "at least one stage failed" }
                ));
                summary.kv("overall", if all { "pass" } else { "fail" });
                summary.write(&self.out.join("all_summary.txt"))?;
                Ok(all)
            }
        }
    }

    fn cmd_solve(&mut self) -> anyhow::Result<bool> {
        self.ensure_solved()?;
        let res = self.solved.as_ref().unwrap();
        write_value_csv(
            &res.value,
            &res.policy,
            &self.hash,
            &self.out.join("value.csv"),
        )?;
        write_history_csv(res, &self.hash, &self.out.join("history.csv"))?;
        let mut s = Summary::new(&self.hash);
        s.line(format!(
            "solved on {} in-domain nodes ({} iterations, final residual {})",
            res.value.grid.n_in_domain(),
            res.iterations,
            fmt_f64(res.final_residual)
        ));
        s.kv("converged", res.converged.to_string());
        s.kv("iterations", res.iterations.to_string());
        s.kv("final_residual", fmt_f64(res.final_residual));
        s.kv("nodes", res.value.grid.n_in_domain().to_string());
        s.write(&self.out.join("solve_summary.txt"))?;
        Ok(res.converged)
    }

    fn cmd_viability(&mut self) -> anyhow::Result<bool> {
        self.ensure_grid()?;
        let tols = self.cfg.viability.tols();
        // the feedback construction itself fails on non-viable dynamics;
        // fall back to the bare scan so the report still explains why
        let psi = match construct_feedback(&self.problem, &self.domain, self.grid.as_ref().unwrap(), &tols)
        {
            Ok(fm) => Some(FeedbackPolicy::Grid(fm.policy)),
            Err(_) => None,
        };
        let report = scan_boundary(
            &self.problem,
            &self.domain,
            self.cfg.viability.n_samples,
            &tols,
            psi.as_ref(),
        )?;
        write_viability_csv(&report, &self.hash, &self.out.join("viability.csv"))?;
        let pass = report.all_pass();
        let mut s = Summary::new(&self.hash);
        s.line(format!(
            "boundary scan: {}/{} samples viable (worst tangency {}, worst inward {})",
            report.n_pass,
            report.samples.len(),
            fmt_f64(report.worst_tangency),
            fmt_f64(report.worst_inward)
        ));
        if let Some(strong) = report.n_strong_pass {
            s.line(format!(
                "strong boundary conditions under constructed feedback: {}/{}",
                strong,
                report.samples.len()
            ));
            s.kv("n_strong_pass", strong.to_string());
        } else {
            s.line("no viable feedback map could be constructed".to_string());
        }
        s.kv("n_samples", report.samples.len().to_string());
        s.kv("n_pass", report.n_pass.to_string());
        s.kv("pass", pass.to_string());
        s.write(&self.out.join("viability_summary.txt"))?;
        Ok(pass)
    }

    fn cmd_verify(&mut self) -> anyhow::Result<bool> {
        self.ensure_solved()?;
        let op = self.op.as_ref().unwrap();
        let res = self.solved.as_ref().unwrap();
        let tol = self
            .cfg
            .verify
            .tol
            .unwrap_or(10.0 * self.cfg.solver.tol);
        let frac = self.cfg.verify.pass_fraction;
        let beta = self.problem.discount();

        // residual surrogate disclaimers are part of the report contract
        let mut s = Summary::new(&self.hash);
        s.line(
            "viscosity inequalities checked via monotone-scheme residuals \
             (computable surrogate for the test-function definition)"
                .to_string(),
        );

        let hi = ValueFunction::constant(op.grid.clone(), self.problem.upper_constant() + 1.0);
        let lo = ValueFunction::constant(op.grid.clone(), self.problem.lower_constant() - 1.0);
        let ctol = beta / 2.0;
        let hi_super = check_supersolution(&hi, op, ctol)?.pass_with(1.0);
        let hi_sub = check_subsolution(&hi, op, ctol)?.pass_with(1.0);
        let lo_sub = check_subsolution(&lo, op, ctol)?.pass_with(1.0);
        let lo_super = check_supersolution(&lo, op, ctol)?.pass_with(1.0);
        let duality = hi_super && !hi_sub && lo_sub && !lo_super;
        s.line(format!(
            "constant duality (f̄/β+1 super-only, f̲/β−1 sub-only): {}",
            if duality { "consistent" } else { "violated" }
        ));

        let sub = check_subsolution(&res.value, op, tol)?;
        let sup = check_supersolution(&res.value, op, tol)?;
        write_violations_csv(&sub, &self.hash, &self.out.join("verify_sub_violations.csv"))?;
        write_violations_csv(&sup, &self.hash, &self.out.join("verify_super_violations.csv"))?;
        let solved_ok = sub.pass_with(frac) && sup.pass_with(frac);
        s.line(format!(
            "solved value: interior subsolution pass fraction {}, supersolution (boundary included) {}",
            fmt_f64(sub.pass_fraction),
            fmt_f64(sup.pass_fraction)
        ));
        let pass = duality && solved_ok;
        s.kv("duality", duality.to_string());
        s.kv("sub_pass_fraction", fmt_f64(sub.pass_fraction));
        s.kv("super_pass_fraction", fmt_f64(sup.pass_fraction));
        s.kv("tol", fmt_f64(tol));
        s.kv("pass", pass.to_string());
        s.write(&self.out.join("verify_summary.txt"))?;
        Ok(pass)
    }

    fn cmd_simulate(&mut self) -> anyhow::Result<bool> {
        self.ensure_solved()?;
        let x0 = self.start_point()?;
        let res = self.solved.as_ref().unwrap();
        let policy = FeedbackPolicy::Grid(res.policy.clone());
        let params = self.cfg.sim.params();
        let est = estimate_cost(&self.problem, &self.domain, &policy, &x0, &params)?;
        let (v0, _) = res.value.interpolate(&x0);

        let mut s = Summary::new(&self.hash);
        s.line(format!(
            "cost under extracted policy from {:?}: {}",
            x0.iter().collect::<Vec<_>>(),
            describe_estimate(&est)
        ));
        s.line(format!("solver value at start: {}", fmt_f64(v0)));
        // one-sided consistency: the policy cost cannot significantly
        // undercut the solved value (weak-error allowance not subtracted
        // here; this is a report, not a gate)
        s.kv("estimate_mean", fmt_f64(est.mean));
        s.kv("estimate_se", fmt_f64(est.std_error));
        s.kv("bias_bound", fmt_f64(est.bias_bound));
        s.kv("value_at_start", fmt_f64(v0));
        if self.cfg.output.write_paths {
            let sample =
                simulate_path(&self.problem, &self.domain, &policy, &x0, &params, 0)?;
            write_path_csv(&sample, &self.hash, &self.out.join("path_0.csv"))?;
            s.kv("projections_path_0", sample.projections.to_string());
        }
        s.kv("pass", "true");
        s.write(&self.out.join("simulate_summary.txt"))?;
        Ok(true)
    }

    fn cmd_ztest(&mut self) -> anyhow::Result<bool> {
        let x0 = self.start_point()?;
        let policy = self.fallback_policy();
        let params = self.cfg.sim.params();
        let checkpoints = self.cfg.ztest.checkpoints.clone();
        let upper = ValueField::Constant(self.problem.upper_constant());
        let lower = ValueField::Constant(self.problem.lower_constant());
        let rep_super = test_z_process(
            &self.problem,
            &self.domain,
            &upper,
            &policy,
            &x0,
            &checkpoints,
            &params,
            Direction::Super,
        )?;
        let rep_sub = test_z_process(
            &self.problem,
            &self.domain,
            &lower,
            &policy,
            &x0,
            &checkpoints,
            &params,
            Direction::Sub,
        )?;
        write_ztest_csv(
            &[("upper-constant", &rep_super), ("lower-constant", &rep_sub)],
            &self.hash,
            &self.out.join("ztest.csv"),
        )?;
        let pass = rep_super.overall && rep_sub.overall;
        let mut s = Summary::new(&self.hash);
        s.line(format!(
            "Z-process evidence at z = {Z_99} (99% two-sided): statistical, \
             reported as consistency, not proof"
        ));
        s.line(format!(
            "upper constant {} consistent with supersolution bound: {}",
            fmt_f64(rep_super.reference),
            rep_super.overall
        ));
        s.line(format!(
            "lower constant {} consistent with subsolution bound: {}",
            fmt_f64(rep_sub.reference),
            rep_sub.overall
        ));
        s.line(format!(
            "tested family: {}, deterministic start, checkpoints {:?}",
            self.fallback_policy().describe(),
            checkpoints
        ));
        s.kv("super_overall", rep_super.overall.to_string());
        s.kv("sub_overall", rep_sub.overall.to_string());
        s.kv("off_hull", (rep_super.off_hull + rep_sub.off_hull).to_string());
        s.kv("pass", pass.to_string());
        s.write(&self.out.join("ztest_summary.txt"))?;
        Ok(pass)
    }

    fn cmd_sandwich(&mut self) -> anyhow::Result<bool> {
        self.ensure_solved()?;
        let op = self.op.as_ref().unwrap();
        let res = self.solved.as_ref().unwrap();
        let lo = ValueFunction::constant(op.grid.clone(), self.problem.lower_constant());
        let hi = ValueFunction::constant(op.grid.clone(), self.problem.upper_constant());
        let rep = check_sandwich(&lo, &res.value, &hi, 1e-9)?;
        let mut s = Summary::new(&self.hash);
        s.line(format!(
            "sandwich f̲/β ≤ v ≤ f̄/β: {}",
            describe_sandwich(&rep)
        ));
        s.kv("lower_worst_margin", fmt_f64(rep.lower.worst_margin));
        s.kv("upper_worst_margin", fmt_f64(rep.upper.worst_margin));
        s.kv("pass", rep.pass.to_string());
        s.write(&self.out.join("sandwich_summary.txt"))?;
        Ok(rep.pass)
    }
}
