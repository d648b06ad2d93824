//! TOML run configuration: grid, model family, per-command sections and
//! dotted `key=value` overrides.
//!
//! ```toml
//! [grid]
//! start = -10.0
//! step = 0.1
//! n = 200            # or: coords = [0.0, 0.5, 1.5]
//!
//! [model]
//! family = "cressie"
//! ordering = "component-major"
//!
//! [cressie]          # one table named after the family
//! ...
//! ```

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::builders::{CovarianceModel, ModelRegistry};
use crate::cokrige::{Entry, ExperimentConfig};
use crate::error::{Error, Result, Violation};
use crate::joint::{LocationGrid, Ordering};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub start: Option<f64>,
    pub step: Option<f64>,
    pub n: Option<usize>,
    pub coords: Option<Vec<f64>>,
}

impl GridSection {
    fn build(&self, out: &mut Vec<Violation>) -> Option<LocationGrid> {
        let grid = match (self.coords.as_ref(), self.start, self.step, self.n) {
            (Some(c), None, None, None) => LocationGrid::new(c.clone()),
            (None, Some(start), Some(step), Some(n)) => LocationGrid::regular(start, step, n),
            _ => {
                out.push(Violation::new(
                    "grid",
                    "give either coords or all of start, step, n",
                ));
                return None;
            }
        };
        grid.map_err(|e| out.push(Violation::new("grid", e.to_string())))
            .ok()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: String,
    #[serde(default)]
    pub ordering: Ordering,
}

/// Inclusive 1-based site range of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetRange {
    pub component: usize,
    pub sites: [usize; 2],
}

impl TargetRange {
    pub fn entries(&self) -> Vec<Entry> {
        (self.sites[0]..=self.sites[1])
            .map(|i| (self.component, i))
            .collect()
    }

    fn check(&self, field: &str, n: usize, p: usize, out: &mut Vec<Violation>) {
        if self.component == 0 || self.component > p {
            out.push(Violation::new(
                format!("{field}.component"),
                format!("must be in [1,{p}], got {}", self.component),
            ));
        }
        let [a, b] = self.sites;
        if a == 0 || a > b || b > n {
            out.push(Violation::new(
                format!("{field}.sites"),
                format!("need 1 <= first <= last <= {n}, got [{a},{b}]"),
            ));
        }
    }
}

fn one() -> usize {
    1
}

fn first_fifty() -> [usize; 2] {
    [1, 50]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Noise variance added to every entry; none when absent.
    pub tau2: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            replicates: 1,
            seed: 0,
            tau2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Number of seeds; seed values are `seed, seed + 1, ...`.
    #[serde(default = "twenty")]
    pub seeds: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    #[serde(default = "one")]
    pub component: usize,
    #[serde(default = "first_fifty")]
    pub sites: [usize; 2],
    /// Defaults to 5% of the mean marginal variance of the true model.
    pub tau2: Option<f64>,
}

fn twenty() -> usize {
    20
}

fn one_u64() -> u64 {
    1
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: 20,
            seed: 1,
            component: 1,
            sites: first_fifty(),
            tau2: None,
        }
    }
}

impl ExperimentSection {
    pub fn targets(&self) -> TargetRange {
        TargetRange {
            component: self.component,
            sites: self.sites,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed + k).collect()
    }
}

/// Draws one truth with `seed`, observes every entry outside the target
/// range (with `tau2` noise, default 5%) and predicts the targets.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub component: usize,
    #[serde(default = "first_fifty")]
    pub sites: [usize; 2],
    pub tau2: Option<f64>,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            seed: 0,
            component: 1,
            sites: first_fifty(),
            tau2: None,
        }
    }
}

impl PredictSection {
    pub fn targets(&self) -> TargetRange {
        TargetRange {
            component: self.component,
            sites: self.sites,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripsSection {
    /// Inclusive site ranges; the whole grid when empty.
    #[serde(default)]
    pub ranges: Vec<[usize; 2]>,
    /// `(l, k)` blocks to export; `(1, 2)` (or `(1, 1)` for one component)
    /// when empty.
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
struct Header {
    grid: GridSection,
    model: ModelSection,
    #[serde(default)]
    simulate: SimulateSection,
    experiment: Option<ExperimentSection>,
    predict: Option<PredictSection>,
    #[serde(default)]
    strips: StripsSection,
}

/// A parsed and validated configuration.
#[derive(Debug)]
pub struct Config {
    pub grid: LocationGrid,
    pub model: Box<dyn CovarianceModel>,
    pub ordering: Ordering,
    pub simulate: SimulateSection,
    /// Absent sections take their defaults and are only range-checked
    /// when present.
    pub experiment: Option<ExperimentSection>,
    pub predict: Option<PredictSection>,
    pub strips: StripsSection,
}

impl Config {
    pub fn p(&self) -> usize {
        self.model.components()
    }

    pub fn strip_ranges(&self) -> Vec<(usize, usize)> {
        if self.strips.ranges.is_empty() {
            vec![(1, self.grid.len())]
        } else {
            self.strips.ranges.iter().map(|r| (r[0], r[1])).collect()
        }
    }

    pub fn strip_pairs(&self) -> Vec<(usize, usize)> {
        if self.strips.pairs.is_empty() {
            vec![if self.p() > 1 { (1, 2) } else { (1, 1) }]
        } else {
            self.strips.pairs.iter().map(|r| (r[0], r[1])).collect()
        }
    }

    pub fn experiment(&self) -> ExperimentSection {
        self.experiment.clone().unwrap_or_default()
    }

    pub fn predict(&self) -> PredictSection {
        self.predict.clone().unwrap_or_default()
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let section = self.experiment();
        let registry = ModelRegistry::builtin();
        let truth = registry.parse(self.model.family(), self.model.to_section())?;
        Ok(ExperimentConfig {
            grid: self.grid.clone(),
            truth,
            with_shift: None,
            without_shift: None,
            targets: section.targets().entries(),
            tau2: section.tau2,
            seeds: section.seed_list(),
            ordering: self.ordering,
        })
    }

    fn check_sections(&self, out: &mut Vec<Violation>) {
        let (n, p) = (self.grid.len(), self.p());
        if let Some(e) = &self.experiment {
            e.targets().check("experiment", n, p, out);
            if e.seeds == 0 {
                out.push(Violation::new("experiment.seeds", "must be >= 1"));
            }
        }
        if let Some(r) = &self.predict {
            r.targets().check("predict", n, p, out);
        }
        if self.simulate.replicates == 0 {
            out.push(Violation::new("simulate.replicates", "must be >= 1"));
        }
        for (field, tau2) in [
            ("simulate.tau2", self.simulate.tau2),
            (
                "experiment.tau2",
                self.experiment.as_ref().and_then(|e| e.tau2),
            ),
            ("predict.tau2", self.predict.as_ref().and_then(|e| e.tau2)),
        ] {
            if let Some(t) = tau2.filter(|t| !(*t >= 0.0 && t.is_finite())) {
                out.push(Violation::new(field, format!("must be >= 0, got {t}")));
            }
        }
        let ranges = self.strip_ranges();
        for (k, &(a, b)) in ranges.iter().enumerate() {
            let field = format!("strips.ranges[{}]", k + 1);
            if a == 0 || a > b || b > n {
                out.push(Violation::new(
                    &field,
                    format!("need 1 <= first <= last <= {n}, got [{a},{b}]"),
                ));
            } else if ranges[..k].iter().any(|&(c, d)| a <= d && c <= b) {
                out.push(Violation::new(&field, "overlaps an earlier range"));
            }
        }
        for (k, (l, m)) in self.strip_pairs().into_iter().enumerate() {
            if l == 0 || m == 0 || l > p || m > p {
                out.push(Violation::new(
                    format!("strips.pairs[{}]", k + 1),
                    format!("components must be in [1,{p}], got ({l},{m})"),
                ));
            }
        }
    }
}

/// Parses `text`, applies `overrides` (`dotted.path=value`), then validates
/// every section, reporting all violations together.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<Config> {
    let doc;
    let text = if overrides.is_empty() {
        text
    } else {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::from_toml(text, &e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        doc = toml::to_string(&table).map_err(|e| Error::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        doc.as_str()
    };
    let header: Header = toml::from_str(text).map_err(|e| Error::from_toml(text, &e))?;
    let registry = ModelRegistry::builtin();
    if !registry.contains(&header.model.family) {
        return Err(Error::UnknownFamily(header.model.family));
    }
    let model = registry.parse_document(&header.model.family, text)?;

    let mut violations = Vec::new();
    let Some(grid) = header.grid.build(&mut violations) else {
        return Err(Error::InvalidSpec(violations));
    };
    violations.extend(
        model
            .validate(&grid)
            .into_iter()
            .map(|v| Violation::new(format!("{}.{}", header.model.family, v.field), v.message)),
    );
    let config = Config {
        grid,
        model,
        ordering: header.model.ordering,
        simulate: header.simulate,
        experiment: header.experiment,
        predict: header.predict,
        strips: header.strips,
    };
    config.check_sections(&mut violations);
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(Error::InvalidSpec(violations))
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<Config> {
    parse_config(&fs::read_to_string(path)?, overrides)
}

/// Full parse and invariant check of a config file.
pub fn validate_config(path: &Path) -> Result<Config> {
    load_config(path, &[])
}

enum Step<'a> {
    Key(&'a str),
    /// 1-based array position.
    Index(usize),
}

fn bad_override(text: &str, why: impl Into<String>) -> Error {
    Error::InvalidSpec(vec![Violation::new(format!("--set {text}"), why)])
}

fn parse_path<'a>(text: &str, path: &'a str) -> Result<Vec<Step<'a>>> {
    let mut steps = Vec::new();
    for part in path.split('.') {
        let (key, mut rest) = part.split_at(part.find('[').unwrap_or(part.len()));
        if key.is_empty() {
            return Err(bad_override(text, "empty key in path"));
        }
        steps.push(Step::Key(key));
        while !rest.is_empty() {
            let close = rest.find(']').filter(|_| rest.starts_with('['));
            let Some(close) = close else {
                return Err(bad_override(text, "malformed index"));
            };
            match rest[1..close].parse::<usize>() {
                Ok(k) if k >= 1 => steps.push(Step::Index(k)),
                _ => return Err(bad_override(text, "indices are 1-based integers")),
            }
            rest = &rest[close + 1..];
        }
    }
    Ok(steps)
}

/// Sets `path = value` in `table`. Indices in the path are 1-based; missing
/// tables along the path are created. The value is read as TOML, falling back
/// to a bare string.
pub fn apply_override(table: &mut toml::Table, text: &str) -> Result<()> {
    let Some((path, raw)) = text.split_once('=') else {
        return Err(bad_override(text, "expected key=value"));
    };
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let steps = parse_path(text, path.trim())?;
    let mut slot: &mut toml::Value = {
        let Step::Key(first) = steps[0] else {
            unreachable!()
        };
        table
            .entry(first.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
    };
    for step in &steps[1..] {
        slot = match (step, slot) {
            (Step::Key(k), toml::Value::Table(t)) => t
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            (Step::Index(k), toml::Value::Array(a)) => {
                let len = a.len();
                match a.get_mut(k - 1) {
                    Some(v) => v,
                    None => {
                        return Err(bad_override(
                            text,
                            format!("index {k} past array length {len}"),
                        ))
                    }
                }
            }
            (Step::Key(k), _) => {
                return Err(bad_override(text, format!("'{k}' is not inside a table")))
            }
            (Step::Index(k), _) => {
                return Err(bad_override(text, format!("[{k}] applied to a non-array")))
            }
        };
    }
    *slot = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[grid]
start = 0.0
step = 0.5
n = 10

[model]
family = "multivariate-matern"
ordering = "location-major"

[multivariate-matern]
nus = [1.5, 1.5]
kappa = 1.0
betas = [[1.0, 0.5], [0.5, 1.0]]
marginal_sds = [1.0, 2.0]
shifts = [[0.0, 0.5], [-0.5, 0.0]]

[experiment]
seeds = 3
sites = [1, 4]
"#;

    #[test]
    fn parses_sections_and_defaults() {
        let c = parse_config(BASE, &[]).unwrap();
        assert_eq!(c.grid.len(), 10);
        assert_eq!(c.ordering, Ordering::LocationMajor);
        assert_eq!(c.p(), 2);
        assert!(c.model.is_shifted());
        assert_eq!(c.experiment().seed_list(), vec![1, 2, 3]);
        assert_eq!(
            c.experiment().targets().entries(),
            vec![(1, 1), (1, 2), (1, 3), (1, 4)]
        );
        assert_eq!(c.simulate, SimulateSection::default());
        assert_eq!(c.strip_ranges(), vec![(1, 10)]);
        assert_eq!(c.strip_pairs(), vec![(1, 2)]);
    }

    #[test]
    fn overrides_apply_before_validation() {
        let c = parse_config(
            BASE,
            &[
                "multivariate-matern.kappa=2.5".into(),
                "multivariate-matern.shifts[1][2]=0.0".into(),
                "multivariate-matern.shifts[2][1]=-0.0".into(),
                "simulate.seed=42".into(),
                "model.ordering=component-major".into(),
            ],
        )
        .unwrap();
        assert!(!c.model.is_shifted());
        assert_eq!(c.simulate.seed, 42);
        assert_eq!(c.ordering, Ordering::ComponentMajor);
        assert_eq!(c.model.to_section()["kappa"].as_float(), Some(2.5));
    }

    #[test]
    fn bad_override_paths() {
        let mut t: toml::Table = toml::from_str(BASE).unwrap();
        assert!(apply_override(&mut t, "no-equals").is_err());
        assert!(apply_override(&mut t, "multivariate-matern.nus[3]=0.5").is_err());
        assert!(apply_override(&mut t, "multivariate-matern.nus[0]=0.5").is_err());
        assert!(apply_override(&mut t, "grid.n.deeper=1").is_err());
    }

    #[test]
    fn every_violation_is_reported() {
        let err = parse_config(
            BASE,
            &[
                "multivariate-matern.kappa=-1".into(),
                "multivariate-matern.shifts[1][1]=0.3".into(),
                "experiment.sites=[5, 11]".into(),
                "strips.ranges=[[1, 5], [5, 8]]".into(),
            ],
        )
        .unwrap_err();
        let Error::InvalidSpec(v) = err else {
            panic!("{err:?}")
        };
        let fields: Vec<_> = v.iter().map(|v| v.field.as_str()).collect();
        assert!(fields.contains(&"multivariate-matern.kappa"), "{fields:?}");
        assert!(
            fields.contains(&"multivariate-matern.shifts[1][1]"),
            "{fields:?}"
        );
        assert!(fields.contains(&"experiment.sites"), "{fields:?}");
        assert!(fields.contains(&"strips.ranges[2]"), "{fields:?}");
        assert!(v
            .iter()
            .any(|v| v.message.contains("diagonal shift must be zero")));
    }

    #[test]
    fn syntax_and_type_errors_have_positions() {
        let broken = BASE.replace("kappa = 1.0", "kappa = 1.0 1.0");
        match parse_config(&broken, &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 13),
            other => panic!("{other:?}"),
        }
        let typed = BASE.replace("seeds = 3", "seeds = \"three\"");
        match parse_config(&typed, &[]) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (19, 9)),
            other => panic!("{other:?}"),
        }
        let unknown = BASE.replace("family = \"multivariate-matern\"", "family = \"lmc\"");
        assert!(matches!(
            parse_config(&unknown, &[]),
            Err(Error::UnknownFamily(_))
        ));
        let typo = BASE.replace("seeds = 3", "sedes = 3");
        assert!(matches!(parse_config(&typo, &[]), Err(Error::Parse { .. })));
    }

    #[test]
    fn grid_needs_one_form() {
        let both = BASE.replace("n = 10", "n = 10\ncoords = [0.0, 1.0]");
        let Err(Error::InvalidSpec(v)) = parse_config(&both, &[]) else {
            panic!()
        };
        assert_eq!(v[0].field, "grid");
        let irregular = BASE.replace(
            "start = 0.0\nstep = 0.5\nn = 10",
            "coords = [0.0, 1.0, 1.5, 3.0, 4.0]",
        );
        let c = parse_config(&irregular.replace("sites = [1, 4]", "sites = [1, 2]"), &[]).unwrap();
        assert_eq!(c.grid.len(), 5);
    }

    #[test]
    fn shipped_configs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut families = Vec::new();
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            let c = validate_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            c.model
                .build(&c.grid, c.ordering)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            families.push(c.model.family());
        }
        families.sort();
        families.dedup();
        assert_eq!(
            families,
            ModelRegistry::builtin().families().collect::<Vec<_>>()
        );
    }
}
