//! Joint covariance builders, one per model family.
//!
//! Every family implements [`CovarianceModel`] and is registered by name in a
//! [`ModelRegistry`], so configs and the CLI pick a family at runtime from the
//! `[model] family = "..."` key and the matching config section.

mod cressie;
mod intrinsic;
mod kernel_conv;
mod mardia;
mod multi_matern;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use std::marker::PhantomData;

use serde::de::{DeserializeOwned, DeserializeSeed, Deserializer, IgnoredAny, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::joint::{JointCovariance, LocationGrid, Ordering};
use crate::kernels::{MaternParams, Shift};
use crate::linalg::{self, JitterPolicy};

pub use cressie::{build_cressie, cressie_support, CouplingFn, CressieSpec, FieldCov, Support};
pub use intrinsic::{build_intrinsic, kron_logdet_inverse, spatial_correlation, IntrinsicSpec};
pub use kernel_conv::{build_kernel_conv, ConvMethod, KernelConvSpec};
pub use mardia::{
    build_mardia_precision, ChainBetas, MardiaModel, MardiaSpec, NeighborBeta, SiteMatrices,
};
pub use multi_matern::{build_multi_matern, MultiMaternSpec};

/// Row-major matrix as it appears in config files.
pub type RowMatrix = Vec<Vec<f64>>;

/// A covariance model family: validates its own parameters and builds the
/// joint covariance on a grid.
pub trait CovarianceModel: fmt::Debug + Send + Sync {
    /// Registry name, also the config section name.
    fn family(&self) -> &'static str;

    /// Number of components `p`.
    fn components(&self) -> usize;

    /// Every invariant violation for this spec on `grid`; empty when valid.
    fn validate(&self, grid: &LocationGrid) -> Vec<Violation>;

    fn build(&self, grid: &LocationGrid, ordering: Ordering) -> Result<JointCovariance>;

    /// Whether any shift parameter is non-zero.
    fn is_shifted(&self) -> bool;

    /// Same model with every shift set to zero.
    fn without_shift(&self) -> Box<dyn CovarianceModel>;

    /// Config section contents; parsing it back yields an identical spec.
    fn to_section(&self) -> toml::Table;
}

fn to_table<T: Serialize>(spec: &T) -> toml::Table {
    match toml::Value::try_from(spec) {
        Ok(toml::Value::Table(t)) => t,
        // Specs are plain structs of numbers and arrays.
        other => panic!("spec did not serialize to a table: {other:?}"),
    }
}

/// Parses the family's section out of a whole config document.
pub type ModelParser = fn(document: &str, section: &str) -> Result<Box<dyn CovarianceModel>>;

/// Pulls one top-level table out of a document, deserializing it as `T` and
/// skipping every other key, so errors keep their position in the document.
struct SectionSeed<'a, T> {
    name: &'a str,
    _spec: PhantomData<T>,
}

impl<'de, T: Deserialize<'de>> DeserializeSeed<'de> for SectionSeed<'_, T> {
    type Value = Option<T>;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> std::result::Result<Option<T>, D::Error> {
        d.deserialize_map(self)
    }
}

impl<'de, T: Deserialize<'de>> Visitor<'de> for SectionSeed<'_, T> {
    type Value = Option<T>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a document with a [{}] table", self.name)
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Option<T>, A::Error> {
        let mut found = None;
        while let Some(key) = map.next_key::<String>()? {
            if key == self.name {
                found = Some(map.next_value()?);
            } else {
                map.next_value::<IgnoredAny>()?;
            }
        }
        Ok(found)
    }
}

fn parse_as<T>(document: &str, section: &str) -> Result<Box<dyn CovarianceModel>>
where
    T: DeserializeOwned + CovarianceModel + 'static,
{
    let located = |e: toml::de::Error| Error::from_toml(document, &e);
    let de = toml::de::Deserializer::parse(document).map_err(located)?;
    let seed = SectionSeed::<T> {
        name: section,
        _spec: PhantomData,
    };
    match seed.deserialize(de).map_err(located)? {
        Some(spec) => Ok(Box::new(spec)),
        None => Err(Error::InvalidSpec(vec![Violation::new(
            section,
            "section is missing",
        )])),
    }
}

/// Name → parser table for model families.
pub struct ModelRegistry {
    parsers: BTreeMap<&'static str, ModelParser>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            parsers: BTreeMap::new(),
        }
    }

    /// All five built-in families.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(IntrinsicSpec::FAMILY, parse_as::<IntrinsicSpec>);
        r.register(KernelConvSpec::FAMILY, parse_as::<KernelConvSpec>);
        r.register(MultiMaternSpec::FAMILY, parse_as::<MultiMaternSpec>);
        r.register(MardiaSpec::FAMILY, parse_as::<MardiaSpec>);
        r.register(CressieSpec::FAMILY, parse_as::<CressieSpec>);
        r
    }

    pub fn register(&mut self, family: &'static str, parser: ModelParser) {
        self.parsers.insert(family, parser);
    }

    pub fn families(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.parsers.keys().copied()
    }

    pub fn contains(&self, family: &str) -> bool {
        self.parsers.contains_key(family)
    }

    /// Parses the `[family]` table of a config document.
    pub fn parse_document(&self, family: &str, document: &str) -> Result<Box<dyn CovarianceModel>> {
        let parser = self
            .parsers
            .get(family)
            .ok_or_else(|| Error::UnknownFamily(family.to_string()))?;
        parser(document, family)
    }

    /// Parses a bare section, e.g. the output of [`CovarianceModel::to_section`].
    pub fn parse(&self, family: &str, section: toml::Table) -> Result<Box<dyn CovarianceModel>> {
        let mut doc = toml::Table::new();
        doc.insert(family.to_string(), toml::Value::Table(section));
        let text = toml::to_string(&doc).map_err(|e| Error::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        self.parse_document(family, &text)
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Checks that a shift matrix is `p x p`, zero on the diagonal and
/// antisymmetric. An empty matrix means "no shifts".
pub(crate) fn check_shifts(shifts: &[Vec<Shift>], p: usize, field: &str, out: &mut Vec<Violation>) {
    if shifts.is_empty() {
        return;
    }
    if shifts.len() != p || shifts.iter().any(|r| r.len() != p) {
        out.push(Violation::new(field, format!("must be a {p}x{p} matrix")));
        return;
    }
    for l in 0..p {
        if shifts[l][l].delta != 0.0 {
            out.push(Violation::new(
                format!("{field}[{}][{}]", l + 1, l + 1),
                "diagonal shift must be zero",
            ));
        }
        if !shifts[l].iter().all(|s| s.delta.is_finite()) {
            out.push(Violation::new(
                format!("{field}[{}]", l + 1),
                "shift must be finite",
            ));
        }
        for k in 0..l {
            if shifts[l][k].delta != -shifts[k][l].delta {
                out.push(Violation::new(
                    format!("{field}[{}][{}]", l + 1, k + 1),
                    "shifts must be antisymmetric (delta_lk = -delta_kl)",
                ));
            }
        }
    }
}

/// Antisymmetric shift matrix with `delta` above the diagonal.
pub fn broadcast_shift(p: usize, delta: f64) -> Vec<Vec<Shift>> {
    (0..p)
        .map(|l| {
            (0..p)
                .map(|k| match l.cmp(&k) {
                    std::cmp::Ordering::Less => Shift::new(delta),
                    std::cmp::Ordering::Equal => Shift::ZERO,
                    std::cmp::Ordering::Greater => Shift::new(-delta),
                })
                .collect()
        })
        .collect()
}

pub(crate) fn shift_at(shifts: &[Vec<Shift>], l: usize, k: usize) -> Shift {
    if shifts.is_empty() {
        Shift::ZERO
    } else {
        shifts[l][k]
    }
}

pub(crate) fn check_matern(m: &MaternParams, field: &str, out: &mut Vec<Violation>) {
    if !(m.kappa > 0.0 && m.kappa.is_finite()) {
        out.push(Violation::new(
            format!("{field}.kappa"),
            format!("must be > 0, got {}", m.kappa),
        ));
    }
}

pub(crate) fn check_positive(value: f64, field: &str, out: &mut Vec<Violation>) {
    if !(value > 0.0 && value.is_finite()) {
        out.push(Violation::new(field, format!("must be > 0, got {value}")));
    }
}

/// Parses a `p x p` row matrix, recording a violation on shape errors.
pub(crate) fn check_square(
    rows: &RowMatrix,
    field: &str,
    out: &mut Vec<Violation>,
) -> Option<DMatrix<f64>> {
    match linalg::from_rows(rows) {
        Some(m) if m.nrows() == m.ncols() && m.nrows() > 0 => Some(m),
        _ => {
            out.push(Violation::new(field, "must be a non-empty square matrix"));
            None
        }
    }
}

pub(crate) fn fail_on(violations: Vec<Violation>) -> Result<()> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(violations))
    }
}

/// Validates a numerically assembled covariance; on failure retries with the
/// jitter ridge and finally reports `on_fail(min_eig, max_eig)`.
pub(crate) fn finalize(
    mut m: DMatrix<f64>,
    n: usize,
    p: usize,
    ordering: Ordering,
    on_fail: impl Fn(f64, f64) -> Error,
) -> Result<JointCovariance> {
    linalg::symmetrize(&mut m);
    let (min_eig, max_eig) = linalg::eigen_extremes(&m);
    if linalg::is_psd(min_eig, max_eig) {
        return JointCovariance::new(m, n, p, ordering);
    }
    Err(on_fail(min_eig, max_eig))
}

/// As [`finalize`], but a failed PSD check is retried with the default jitter
/// ridge before giving up with `NotPD`.
pub(crate) fn finalize_jittered(
    mut m: DMatrix<f64>,
    n: usize,
    p: usize,
    ordering: Ordering,
) -> Result<JointCovariance> {
    linalg::symmetrize(&mut m);
    let policy = JitterPolicy::default();
    let mut ridge = 1e-10 * m.trace() / (n * p) as f64;
    for attempt in 0..=policy.max_retries {
        let (min_eig, max_eig) = linalg::eigen_extremes(&m);
        if linalg::is_psd(min_eig, max_eig) {
            return JointCovariance::new(m, n, p, ordering);
        }
        if attempt == policy.max_retries {
            return Err(Error::NotPD(format!(
                "min eigenvalue {min_eig:e} after {} jitter retries",
                policy.max_retries
            )));
        }
        for k in 0..m.nrows() {
            m[(k, k)] += ridge;
        }
        ridge *= 2.0;
    }
    unreachable!()
}
