use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::solvers::{Algorithm, Form, RunConfig, ScheduleSpec};
use crate::spectral::DEFAULT_PSD_SHIFT;
use crate::topology::TopologySpec;

const BUNDLED: [(&str, &str); 4] = [
    ("fig1", include_str!("../../suites/fig1.suite")),
    ("fig2", include_str!("../../suites/fig2.suite")),
    ("fig3", include_str!("../../suites/fig3.suite")),
    ("fig5", include_str!("../../suites/fig5.suite")),
];

/// Names of the suites compiled into the library.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Source text of a bundled suite, by name with or without `.suite`.
pub fn bundled_suite(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".suite").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Settings shared by the run groups; each group may override them.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    form: Option<Form>,
    psd_shift: Option<f64>,
    schedule: Option<ScheduleSpec>,
    iterations: Option<usize>,
    record_every: Option<usize>,
    sigma_n2: Option<f64>,
    theorem_mode: Option<bool>,
    x0: Option<f64>,
    monitors: Option<bool>,
    mean_suboptimality: Option<bool>,
}

impl Overrides {
    fn or(self, base: &Overrides) -> Overrides {
        Overrides {
            form: self.form.or(base.form),
            psd_shift: self.psd_shift.or(base.psd_shift),
            schedule: self.schedule.or_else(|| base.schedule.clone()),
            iterations: self.iterations.or(base.iterations),
            record_every: self.record_every.or(base.record_every),
            sigma_n2: self.sigma_n2.or(base.sigma_n2),
            theorem_mode: self.theorem_mode.or(base.theorem_mode),
            x0: self.x0.or(base.x0),
            monitors: self.monitors.or(base.monitors),
            mean_suboptimality: self.mean_suboptimality.or(base.mean_suboptimality),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunGroup {
    /// Prefix of the entry ids of this group.
    id: Option<String>,
    methods: Vec<Algorithm>,
    topologies: Vec<TopologySpec>,
    form: Option<Form>,
    psd_shift: Option<f64>,
    schedule: Option<ScheduleSpec>,
    iterations: Option<usize>,
    record_every: Option<usize>,
    sigma_n2: Option<f64>,
    theorem_mode: Option<bool>,
    x0: Option<f64>,
    monitors: Option<bool>,
    mean_suboptimality: Option<bool>,
}

impl RunGroup {
    // `#[serde(flatten)]` would disable unknown-key rejection, so the
    // overridable keys are repeated here.
    fn overrides(&self) -> Overrides {
        Overrides {
            form: self.form,
            psd_shift: self.psd_shift,
            schedule: self.schedule.clone(),
            iterations: self.iterations,
            record_every: self.record_every,
            sigma_n2: self.sigma_n2,
            theorem_mode: self.theorem_mode,
            x0: self.x0,
            monitors: self.monitors,
            mean_suboptimality: self.mean_suboptimality,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    name: String,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    output: Option<PathBuf>,
    problem: ProblemSpec,
    #[serde(default)]
    defaults: Overrides,
    #[serde(default)]
    runs: Vec<RunGroup>,
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

/// One configuration of a suite; it runs once per suite seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteEntry {
    /// Unique within the suite and safe as a file name.
    pub id: String,
    pub config: RunConfig,
}

/// A resolved sweep over methods, topologies and seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSuite {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Output directory from the suite file, relative to the file.
    pub output: Option<PathBuf>,
    /// Shared by every entry so all methods see the same data.
    pub problem: ProblemSpec,
    pub entries: Vec<SuiteEntry>,
}

impl ExperimentSuite {
    /// Parses suite TOML. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let file: SuiteFile = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let bad = |why: String| Error::Config(format!("{origin}: {why}"));
        if file.seeds.is_empty() {
            return Err(bad("`seeds` is empty".into()));
        }
        if file.seeds.iter().collect::<BTreeSet<_>>().len() != file.seeds.len() {
            return Err(bad("`seeds` has duplicates".into()));
        }
        let mut entries = Vec::new();
        for (g, group) in file.runs.into_iter().enumerate() {
            if group.methods.is_empty() || group.topologies.is_empty() {
                return Err(bad(format!("run group {} has no methods or no topologies", g + 1)));
            }
            let o = group.overrides().or(&file.defaults);
            let schedule = o.schedule.clone().ok_or_else(|| bad(format!("run group {} has no schedule", g + 1)))?;
            let iterations = o.iterations.ok_or_else(|| bad(format!("run group {} has no iterations", g + 1)))?;
            for &method in &group.methods {
                for topology in &group.topologies {
                    let base = format!("{method}@{}", topology.file_stem());
                    let id = match &group.id {
                        Some(prefix) => format!("{prefix}-{base}"),
                        None => base,
                    };
                    let config = RunConfig {
                        method,
                        form: o.form.unwrap_or_default(),
                        topology: topology.clone(),
                        psd_shift: o.psd_shift.unwrap_or(DEFAULT_PSD_SHIFT),
                        problem: file.problem.clone(),
                        schedule: schedule.clone(),
                        iterations,
                        record_every: o.record_every,
                        sigma_n2: o.sigma_n2.unwrap_or(0.0),
                        seed: 0,
                        theorem_mode: o.theorem_mode.unwrap_or(true),
                        x0: o.x0.unwrap_or(0.0),
                        monitors: o.monitors.unwrap_or(true),
                        mean_suboptimality: o.mean_suboptimality.unwrap_or(true),
                        label: Some(id.clone()),
                    };
                    entries.push(SuiteEntry { id, config });
                }
            }
        }
        if entries.is_empty() {
            return Err(bad("suite has no runs".into()));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(bad(format!("duplicate run id '{}'", dup.id)));
        }
        Ok(Self { name: file.name, seeds: file.seeds, output: file.output, problem: file.problem, entries })
    }

    /// Number of runs, counting seeds.
    pub fn run_count(&self) -> usize {
        self.entries.len() * self.seeds.len()
    }

    pub fn entry(&self, id: &str) -> Option<&SuiteEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Reads a suite file; a path that does not exist but names a bundled suite
/// (`fig2` or `fig2.suite`) loads the bundled copy.
pub fn load_suite(path: &Path) -> Result<ExperimentSuite> {
    match std::fs::read_to_string(path) {
        Ok(text) => {
            let mut suite = ExperimentSuite::parse(&text, &path.display().to_string())?;
            if let (Some(out), Some(dir)) = (&suite.output, path.parent()) {
                if out.is_relative() {
                    suite.output = Some(dir.join(out));
                }
            }
            Ok(suite)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let name = path.to_string_lossy();
            match bundled_suite(&name) {
                Some(text) => ExperimentSuite::parse(text, &format!("bundled {name}")),
                None => Err(Error::Config(format!(
                    "{name}: no such file or bundled suite (bundled: {})",
                    bundled_names().collect::<Vec<_>>().join(", ")
                ))),
            }
        }
        Err(e) => Err(Error::Config(format!("{}: {e}", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
seeds = [3]
[problem]
kind = "pl-toy"
sigma_h2 = 1.0
[defaults]
iterations = 10
schedule = { kind = "constant", alpha = 0.01 }
[[runs]]
methods = ["ed", "dsgd"]
topologies = ["ring:8", "complete:8"]
"#;

    #[test]
    fn expands_methods_by_topologies() {
        let s = ExperimentSuite::parse(MINIMAL, "mini").unwrap();
        assert_eq!(s.entries.len(), 4);
        assert_eq!(s.run_count(), 4);
        assert_eq!(s.entries[0].id, "ed@ring_8");
        assert!(s.entries.iter().all(|e| e.config.problem == s.problem));
    }

    #[test]
    fn group_overrides_defaults() {
        let text = format!("{MINIMAL}\n[[runs]]\nid = \"long\"\nmethods = [\"psgd\"]\ntopologies = [\"ring:8\"]\niterations = 50\n");
        let s = ExperimentSuite::parse(&text, "mini").unwrap();
        let e = s.entry("long-psgd@ring_8").unwrap();
        assert_eq!(e.config.iterations, 50);
        assert_eq!(s.entry("ed@ring_8").unwrap().config.iterations, 10);
    }

    #[test]
    fn rejects_unknown_keys_with_line() {
        let err = ExperimentSuite::parse(&MINIMAL.replace("seeds = [3]", "seeds = [3]\ncolour = 1"), "mini").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("colour") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn rejects_empty_suite() {
        let text = MINIMAL.split("[[runs]]").next().unwrap();
        assert!(matches!(ExperimentSuite::parse(text, "mini"), Err(Error::Config(_))));
        let text = MINIMAL.replace(r#"["ed", "dsgd"]"#, "[]");
        assert!(ExperimentSuite::parse(&text, "mini").is_err());
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = MINIMAL.replace(r#"["ring:8", "complete:8"]"#, r#"["ring:8", "ring:8"]"#);
        assert!(ExperimentSuite::parse(&text, "mini").unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn bundled_suites_parse() {
        for name in bundled_names() {
            let s = load_suite(Path::new(name)).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.seeds.len(), 5);
        }
        let fig2 = load_suite(Path::new("fig2.suite")).unwrap();
        assert_eq!(fig2.entries.len(), 4);
        assert!(fig2.entries.iter().all(|e| e.config.topology.to_string() == "ring:32"));
        let fig3 = load_suite(Path::new("fig3")).unwrap();
        let topologies: BTreeSet<String> = fig3.entries.iter().map(|e| e.config.topology.to_string()).collect();
        assert_eq!(topologies.len(), 4);
    }
}
