//! Experiment harness: the four-site golden fixture, suite runs over
//! generated instances, and gap tables.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{io_err, Error, Result};
use crate::exact::{self, DEFAULT_EXACT_CAP};
use crate::instance::{Instance, InstanceSpec};
use crate::neural::ActorCritic;
use crate::objective::{self, near_pairs};
use crate::policy::{self, GreedyPolicy};
use crate::ppo;

/// Distances of the four-site walkthrough instance, 1-based as in the narrative.
pub const FIGURE1_EDGES: [((usize, usize), f64); 6] = [
    ((1, 2), 3.0),
    ((1, 3), 5.0),
    ((2, 3), 6.0),
    ((3, 4), 50.0),
    ((1, 4), 240.0),
    ((2, 4), 240.0),
];

pub const FIGURE1_THRESHOLD: f64 = 60.0;

/// Builds a 4-site instance from 1-based edge distances.
pub fn four_site_instance(edges: &[((usize, usize), f64)], threshold: f64) -> Result<Instance> {
    let mut rows = vec![vec![0.0; 4]; 4];
    for &((a, b), d) in edges {
        rows[a - 1][b - 1] = d;
        rows[b - 1][a - 1] = d;
    }
    Instance::new(threshold, rows)
}

/// The golden fixture. Internally sites are 0-based: site `k` here is `k + 1` in the narrative.
pub fn figure1_instance() -> Instance {
    four_site_instance(&FIGURE1_EDGES, FIGURE1_THRESHOLD).expect("fixture is a valid instance")
}

/// One scripted check of the walkthrough.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        write!(f, "{}", if self.passed() { "walkthrough verified" } else { "walkthrough FAILED" })
    }
}

fn one_based(edges: &[(usize, usize)]) -> String {
    let parts: Vec<String> = edges.iter().map(|(a, b)| format!("({},{})", a + 1, b + 1)).collect();
    format!("{{{}}}", parts.join(","))
}

pub fn verify_figure1() -> VerifyReport {
    verify_walkthrough(&figure1_instance())
}

/// Replays the walkthrough on `inst`. Stops at the first failed check since
/// later steps depend on earlier state.
pub fn verify_walkthrough(inst: &Instance) -> VerifyReport {
    let mut checks = Vec::new();
    let mut check = |name: &'static str, passed: bool, detail: String| {
        checks.push(CheckResult { name, passed, detail });
        passed
    };
    let mut state = EnvState::reset(Arc::new(inst.clone()));

    let initial = state.legal_actions();
    let expected = vec![(0, 1), (0, 2), (1, 2), (2, 3)];
    if !check("initial availability", initial == expected, format!("available {}", one_based(&initial))) {
        return VerifyReport { checks };
    }

    let first = match state.step((1, 2)) {
        Ok(o) => o,
        Err(e) => {
            check("select (2,3)", false, e.to_string());
            return VerifyReport { checks };
        }
    };
    if !check(
        "(3,4) removed",
        first.removed_edges == vec![(2, 3)] && first.added_edges == vec![(1, 2)],
        format!("added {}, removed {}", one_based(&first.added_edges), one_based(&first.removed_edges)),
    ) {
        return VerifyReport { checks };
    }

    let second = match state.step((0, 2)) {
        Ok(o) => o,
        Err(e) => {
            check("select (1,3)", false, e.to_string());
            return VerifyReport { checks };
        }
    };
    if !check(
        "(1,2) auto-added",
        second.added_edges == vec![(0, 1), (0, 2)],
        format!("added {}", one_based(&second.added_edges)),
    ) {
        return VerifyReport { checks };
    }
    if !check("terminal", second.terminal, format!("{} edges left", state.available_count())) {
        return VerifyReport { checks };
    }
    let value = state.objective();
    if !check("objective 74", value == 74.0, format!("objective {value}")) {
        return VerifyReport { checks };
    }
    match exact::solve_exact_dp(inst) {
        Ok(sol) => check("exact optimum 74", sol.objective == 74.0, format!("optimum {}", sol.objective)),
        Err(e) => check("exact optimum 74", false, e.to_string()),
    };
    VerifyReport { checks }
}

/// Solver or agent under evaluation.
#[derive(Clone, Debug)]
pub enum Method {
    /// Best of `episodes` uniform random rollouts.
    Random { episodes: usize },
    Greedy,
    Exact { cap: usize },
    Policy { label: String, model: Arc<ActorCritic> },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Random { .. } => "random".into(),
            Method::Greedy => "greedy".into(),
            Method::Exact { .. } => "exact".into(),
            Method::Policy { label, .. } => label.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Exact DP optimum; requires `n <= cap`.
    ExactDp,
    /// Best objective any evaluated method reached.
    BestKnown,
}

/// Whether gaps are true optimality gaps or regret against the best known solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapKind {
    OptimalityGap,
    RegretVsBestKnown,
}

impl GapKind {
    fn row_label(self) -> &'static str {
        match self {
            GapKind::OptimalityGap => "opt. gap",
            GapKind::RegretVsBestKnown => "regret vs best-known",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub instance_id: usize,
    pub method: String,
    pub objective: f64,
    pub reference: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodAggregate {
    pub method: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub kind: GapKind,
    pub rows: Vec<GapRow>,
}

impl GapReport {
    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn gaps_of(&self, method: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method).map(|r| r.gap).collect()
    }

    pub fn aggregates(&self) -> Vec<MethodAggregate> {
        self.methods()
            .into_iter()
            .map(|m| {
                let gaps = self.gaps_of(&m);
                let s = summarize(&gaps);
                MethodAggregate {
                    method: m,
                    count: gaps.len(),
                    mean: s.0,
                    median: s.1,
                    min: s.2,
                    max: s.3,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, method: &str) -> Option<MethodAggregate> {
        self.aggregates().into_iter().find(|a| a.method == method)
    }

    /// Four-row text table: mean, median, min and max gap per method, in percent.
    pub fn table(&self) -> String {
        let aggs = self.aggregates();
        let label = self.kind.row_label();
        let row_names = [
            format!("Mean {label}"),
            format!("Median {label}"),
            format!("Min {label}"),
            format!("Max {label}"),
        ];
        let first_width = row_names.iter().map(String::len).max().unwrap_or(0);
        let widths: Vec<usize> = aggs.iter().map(|a| a.method.len().max(8)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:first_width$}", "");
        for (a, w) in aggs.iter().zip(&widths) {
            let _ = write!(out, "  {:>w$}", a.method);
        }
        out.push('\n');
        for (k, name) in row_names.iter().enumerate() {
            let _ = write!(out, "{name:first_width$}");
            for (a, w) in aggs.iter().zip(&widths) {
                let v = [a.mean, a.median, a.min, a.max][k];
                let _ = write!(out, "  {:>w$}", format!("{:.2}%", 100.0 * v));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: "<memory>".into(),
            source: e.into_error(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str, kind: GapKind) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader.deserialize().collect::<std::result::Result<Vec<GapRow>, _>>()?;
        Ok(Self { kind, rows })
    }
}

/// (mean, median, min, max); median averages the two middle values for even counts.
pub fn summarize(values: &[f64]) -> (f64, f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let mean = sorted.iter().sum::<f64>() / k as f64;
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    (mean, median, sorted[0], sorted[k - 1])
}

/// Objective reached by `method` on one instance. Stochastic methods use `seed`.
pub fn solve_with(method: &Method, inst: &Arc<Instance>, seed: u64) -> Result<f64> {
    match method {
        Method::Random { episodes } => Ok(policy::best_of_random(inst.clone(), *episodes, seed)?.objective),
        Method::Greedy => Ok(policy::rollout(inst.clone(), &GreedyPolicy, seed)?.objective),
        Method::Exact { cap } => Ok(exact::solve_exact_dp_with_cap(inst, *cap)?.objective),
        Method::Policy { model, .. } => Ok(ppo::evaluate_model(model, std::slice::from_ref(inst))?[0]),
    }
}

/// Runs every method on every instance and prices the results against `reference`.
///
/// Instance `k` uses seed `seed_base + k` for stochastic methods.
pub fn run_suite(methods: &[Method], instances: &[Arc<Instance>], reference: ReferenceMode, seed_base: u64) -> Result<GapReport> {
    for m in methods {
        if let Method::Policy { model, .. } = m {
            if let Some(bad) = instances.iter().find(|i| i.n() != model.critic.n) {
                return Err(Error::Dimension {
                    expected: model.critic.n,
                    actual: bad.n(),
                });
            }
        }
    }
    if reference == ReferenceMode::ExactDp {
        if let Some(big) = instances.iter().find(|i| i.n() > DEFAULT_EXACT_CAP) {
            return Err(Error::SizeLimit {
                n: big.n(),
                cap: DEFAULT_EXACT_CAP,
            });
        }
    }
    let per_instance: Vec<(Vec<f64>, Option<f64>)> = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| {
            let seed = seed_base.wrapping_add(k as u64);
            let values = methods.iter().map(|m| solve_with(m, inst, seed)).collect::<Result<Vec<_>>>()?;
            let exact_ref = match reference {
                ReferenceMode::ExactDp => Some(exact::solve_exact_dp(inst)?.objective),
                ReferenceMode::BestKnown => None,
            };
            Ok((values, exact_ref))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(instances.len() * methods.len());
    for (k, (values, exact_ref)) in per_instance.into_iter().enumerate() {
        let reference_value = exact_ref.unwrap_or_else(|| values.iter().copied().fold(f64::INFINITY, f64::min));
        for (m, v) in methods.iter().zip(values) {
            rows.push(GapRow {
                instance_id: k,
                method: m.label(),
                objective: v,
                reference: reference_value,
                gap: objective::optimality_gap(v, reference_value)?,
            });
        }
    }
    Ok(GapReport {
        kind: match reference {
            ReferenceMode::ExactDp => GapKind::OptimalityGap,
            ReferenceMode::BestKnown => GapKind::RegretVsBestKnown,
        },
        rows,
    })
}

/// Generates `count` instances from `spec` and runs [`run_suite`] on them.
pub fn run_generated_suite(methods: &[Method], spec: &InstanceSpec, count: usize, reference: ReferenceMode) -> Result<GapReport> {
    let instances: Vec<Arc<Instance>> = spec.generate_many(count)?.into_iter().map(Arc::new).collect();
    run_suite(methods, &instances, reference, spec.seed_base)
}

/// Writes `<path>.csv` with every row and `<path>.txt` with the aggregate table.
pub fn export_tables(report: &GapReport, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let csv_path = path.with_extension("csv");
    let txt_path = path.with_extension("txt");
    fs::write(&csv_path, report.to_csv()?).map_err(io_err(&csv_path))?;
    fs::write(&txt_path, report.table()).map_err(io_err(&txt_path))?;
    Ok(())
}

/// Near pairs of the fixture as 1-based labels, for display.
pub fn figure1_near_pairs_one_based() -> Vec<(usize, usize)> {
    near_pairs(&figure1_instance()).into_iter().map(|(a, b)| (a + 1, b + 1)).collect()
}
