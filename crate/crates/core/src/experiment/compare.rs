use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::execute::Summary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Gt,
    Ge,
    Lt,
    Le,
    /// `|lhs − rhs| ≤ tol · |rhs|`.
    Within,
    /// `range[0] ≤ lhs ≤ range[1]`.
    In,
}

/// One declarative check.
///
/// Operands are a number, a reference `<summary>:<entry id>.<field>`, or two
/// of those joined by ` * ` or ` / `. Fields are `plateau.<metric>`,
/// `final.<metric>`, `lambda`, `topology_lambda`, `alpha0`, `l_smooth` and
/// `f_star`. The `<summary>:` prefix may be dropped when only one summary is
/// loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub name: Option<String>,
    pub lhs: String,
    pub op: Op,
    pub rhs: Option<String>,
    pub range: Option<[f64; 2]>,
    pub tol: Option<f64>,
}

impl Assertion {
    fn title(&self) -> String {
        self.name.clone().unwrap_or_else(|| match (&self.rhs, self.range) {
            (Some(r), _) => format!("{} {:?} {r}", self.lhs, self.op),
            (None, Some([lo, hi])) => format!("{} in [{lo}, {hi}]", self.lhs),
            _ => self.lhs.clone(),
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Config(format!("assertion '{}': {why}", self.title())));
        match self.op {
            Op::In if self.range.is_none() => bad("`in` needs `range`"),
            Op::In => Ok(()),
            Op::Within if self.tol.is_none() => bad("`within` needs `tol`"),
            _ if self.rhs.is_none() => bad("comparison needs `rhs`"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Summary files by name, relative to the spec file.
    #[serde(default)]
    pub summaries: BTreeMap<String, PathBuf>,
    #[serde(rename = "assert", default)]
    pub assertions: Vec<Assertion>,
}

impl CompareSpec {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let spec: CompareSpec = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        if spec.assertions.is_empty() {
            return Err(Error::Config(format!("{origin}: no assertions")));
        }
        for a in &spec.assertions {
            a.validate().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub reason: Option<String>,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}", self.name)?;
        match (self.lhs, self.rhs) {
            (Some(l), Some(r)) => write!(f, " (lhs {l:.6e}, rhs {r:.6e})")?,
            (Some(l), None) => write!(f, " (lhs {l:.6e})")?,
            _ => {}
        }
        if let Some(why) = &self.reason {
            write!(f, ": {why}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub outcomes: Vec<Outcome>,
}

impl CompareReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Loaded summaries, or why one could not be loaded.
pub type SummarySet = BTreeMap<String, std::result::Result<Summary, String>>;

fn resolve_ref(reference: &str, summaries: &SummarySet) -> std::result::Result<f64, String> {
    let (name, path) = match reference.split_once(':') {
        Some((name, rest)) if summaries.contains_key(name) => (name.to_string(), rest),
        _ if summaries.len() == 1 => (summaries.keys().next().cloned().unwrap_or_default(), reference),
        _ => return Err(format!("'{reference}' does not name a loaded summary")),
    };
    let summary = summaries[&name].as_ref().map_err(|e| format!("summary '{name}': {e}"))?;
    let scalar = |id: &str, field: &str| -> Option<std::result::Result<f64, String>> {
        let e = summary.entry(id)?;
        let v = match field {
            "lambda" => e.lambda,
            "topology_lambda" => e.topology_lambda,
            "alpha0" => e.alpha0,
            "l_smooth" => e.l_smooth,
            "f_star" => e.f_star,
            _ => return None,
        };
        Some(v.ok_or_else(|| format!("'{reference}': {field} is missing (entry status {:?})", e.status)))
    };
    if let Some((id, field)) = path.rsplit_once('.') {
        if let Some(v) = scalar(id, field) {
            return v;
        }
    }
    let mut parts = path.rsplitn(3, '.');
    let (Some(metric), Some(kind), Some(id)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("'{reference}' is not <entry>.<field>"));
    };
    let entry = summary.entry(id).ok_or_else(|| format!("'{reference}': no entry '{id}' in summary '{name}'"))?;
    let table = match kind {
        "plateau" => &entry.plateau,
        "final" => &entry.final_value,
        _ => return Err(format!("'{reference}': unknown field '{kind}'")),
    };
    table.get(metric).copied().ok_or_else(|| {
        let why = if entry.failures.is_empty() { "not recorded".to_string() } else { format!("{} failed seeds", entry.failures.len()) };
        format!("'{reference}': series '{metric}' missing ({why})")
    })
}

fn eval_operand(expr: &str, summaries: &SummarySet) -> std::result::Result<f64, String> {
    let atom = |t: &str| t.parse::<f64>().or_else(|_| resolve_ref(t, summaries));
    let tokens: Vec<&str> = expr.split_whitespace().collect();
    match tokens.as_slice() {
        [a] => atom(a),
        [a, "*", b] => Ok(atom(a)? * atom(b)?),
        [a, "/", b] => Ok(atom(a)? / atom(b)?),
        _ => Err(format!("cannot parse operand '{expr}'")),
    }
}

/// Evaluates every assertion; unresolvable operands fail with a reason.
pub fn compare(spec: &CompareSpec, summaries: &SummarySet) -> CompareReport {
    let outcomes = spec
        .assertions
        .iter()
        .map(|a| {
            let mut o = Outcome { name: a.title(), passed: false, lhs: None, rhs: None, reason: None };
            let lhs = match eval_operand(&a.lhs, summaries) {
                Ok(v) => v,
                Err(why) => {
                    o.reason = Some(why);
                    return o;
                }
            };
            o.lhs = Some(lhs);
            if a.op == Op::In {
                let [lo, hi] = a.range.unwrap_or([f64::NAN; 2]);
                o.passed = lo <= lhs && lhs <= hi;
                return o;
            }
            let rhs = match a.rhs.as_deref().map(|r| eval_operand(r, summaries)) {
                Some(Ok(v)) => v,
                Some(Err(why)) => {
                    o.reason = Some(why);
                    return o;
                }
                None => {
                    o.reason = Some("missing rhs".into());
                    return o;
                }
            };
            o.rhs = Some(rhs);
            o.passed = match a.op {
                Op::Gt => lhs > rhs,
                Op::Ge => lhs >= rhs,
                Op::Lt => lhs < rhs,
                Op::Le => lhs <= rhs,
                Op::Within => (lhs - rhs).abs() <= a.tol.unwrap_or(0.0) * rhs.abs(),
                Op::In => unreachable!(),
            };
            if !lhs.is_finite() || !rhs.is_finite() {
                o.passed = false;
                o.reason = Some("non-finite operand".into());
            }
            o
        })
        .collect();
    CompareReport { outcomes }
}

/// Reads a compare spec and the summaries it names, then evaluates it.
pub fn compare_file(path: &Path) -> Result<CompareReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec = CompareSpec::parse(&text, &path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let summaries = spec
        .summaries
        .iter()
        .map(|(name, p)| (name.clone(), Summary::read(&base.join(p)).map_err(|e| e.to_string())))
        .collect();
    Ok(compare(&spec, &summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::execute::{EntrySummary, Status, SUMMARY_SCHEMA_VERSION};
    use crate::problems::{ProblemKind, ProblemSpec};
    use crate::solvers::Algorithm;

    fn summary() -> Summary {
        let entry = |id: &str, method: Algorithm, p: f64| EntrySummary {
            id: id.into(),
            method,
            topology: "ring:32".into(),
            n: 32,
            topology_lambda: Some(0.98719),
            lambda: Some(0.98719),
            psd_shift: None,
            alpha0: Some(0.01),
            l_smooth: Some(1.0),
            f_star: None,
            status: Status::Ok,
            failures: vec![],
            plateau: [("grad_norm_avg_sq".to_string(), p)].into(),
            final_value: [("grad_norm_avg_sq".to_string(), p)].into(),
            seed_plateau: BTreeMap::new(),
        };
        Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            suite: "fig2".into(),
            seeds: vec![1],
            problem: ProblemSpec { kind: ProblemKind::PlToy, d: 1, samples: 0, rho: 0.0, sigma_h2: 0.0, curvature_spread: 0.0, seed: 0 },
            status: Status::Ok,
            entries: vec![entry("dsgd@ring_32", Algorithm::Dsgd, 3e-3), entry("ed@er_32_0.8_7", Algorithm::Dsgd, 1e-3)],
        }
    }

    fn check(spec: &str) -> CompareReport {
        let set: SummarySet = [("fig2".to_string(), Ok(summary()))].into();
        compare(&CompareSpec::parse(spec, "t").unwrap(), &set)
    }

    #[test]
    fn ratio_and_interval() {
        let r = check(
            r#"
[[assert]]
lhs = "fig2:dsgd@ring_32.plateau.grad_norm_avg_sq"
op = "gt"
rhs = "2 * fig2:ed@er_32_0.8_7.plateau.grad_norm_avg_sq"
[[assert]]
lhs = "dsgd@ring_32.lambda"
op = "in"
range = [0.98, 0.995]
[[assert]]
lhs = "fig2:dsgd@ring_32.plateau.grad_norm_avg_sq / fig2:ed@er_32_0.8_7.final.grad_norm_avg_sq"
op = "within"
rhs = "3"
tol = 1e-9
"#,
        );
        assert!(r.passed(), "{:?}", r.outcomes);
    }

    #[test]
    fn self_comparison_passes() {
        let r = check("[[assert]]\nlhs = \"dsgd@ring_32.plateau.grad_norm_avg_sq\"\nop = \"le\"\nrhs = \"dsgd@ring_32.plateau.grad_norm_avg_sq\"\n");
        assert!(r.passed());
    }

    #[test]
    fn missing_series_fails_with_reason() {
        let r = check("[[assert]]\nlhs = \"dsgd@ring_32.plateau.subopt_avg\"\nop = \"gt\"\nrhs = \"0\"\n");
        assert!(!r.passed());
        assert!(r.outcomes[0].reason.as_ref().unwrap().contains("missing"));
        let r = check("[[assert]]\nlhs = \"nope@ring_32.lambda\"\nop = \"gt\"\nrhs = \"0\"\n");
        assert!(!r.passed());
    }

    #[test]
    fn malformed_specs_are_config_errors() {
        assert!(CompareSpec::parse("[[assert]]\nlhs = \"1\"\nop = \"in\"\n", "t").is_err());
        assert!(CompareSpec::parse("[[assert]]\nlhs = \"1\"\nop = \"gt\"\n", "t").is_err());
        assert!(CompareSpec::parse("", "t").is_err());
        assert!(CompareSpec::parse("[[assert]]\nlhs = \"1\"\nop = \"gt\"\nrhs = \"0\"\nextra = 1\n", "t").is_err());
    }
}
