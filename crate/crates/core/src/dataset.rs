//! Binary-labelled tabular data: CSV ingestion, missing-value handling,
//! standardization, polynomial basis expansion, splitting and synthetic
//! Gaussian fixtures.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{from_usize, Scalar};

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-12;

/// Feature matrix (row-major) with `{0, 1}` labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    features: Vec<Vec<T>>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset; empty `feature_names` get `x0, x1, ...`.
    pub fn new(
        features: Vec<Vec<T>>,
        labels: Vec<u8>,
        mut feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Data("dataset must contain at least one row".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let width = features[0].len();
        if width == 0 {
            return Err(Error::Data("rows must have at least one feature".into()));
        }
        if let Some((i, row)) = features.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(Error::Data(format!(
                "row {i} has {} features, expected {width}",
                row.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y > 1) {
            return Err(Error::NonBinaryLabel {
                row: i,
                value: y.to_string(),
            });
        }
        if feature_names.is_empty() {
            feature_names = (0..width).map(|j| format!("x{j}")).collect();
        } else if feature_names.len() != width {
            return Err(Error::Data(format!(
                "{} feature names for {width} columns",
                feature_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of feature columns.
    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<T>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> (&[T], u8) {
        (&self.features[i], self.labels[i])
    }

    pub fn has_missing(&self) -> bool {
        self.features.iter().flatten().any(|v| v.is_nan())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.feature_names.clone(),
        )
    }

    fn map_rows(&self, names: Vec<String>, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        Self::new(
            self.features.iter().map(|r| f(r)).collect(),
            self.labels.clone(),
            names,
        )
    }

    /// Per-column mean over non-missing entries.
    pub fn observed_means(&self) -> Result<Vec<T>> {
        (0..self.dim())
            .map(|j| {
                let (sum, count) = self
                    .features
                    .iter()
                    .map(|r| r[j])
                    .filter(|v| !v.is_nan())
                    .fold((T::zero(), 0usize), |(s, c), v| (s + v, c + 1));
                if count == 0 {
                    Err(Error::Data(format!(
                        "column `{}` has no observed values",
                        self.feature_names[j]
                    )))
                } else {
                    Ok(sum / from_usize(count))
                }
            })
            .collect()
    }

    /// Replaces missing entries with the given per-column values.
    pub fn impute_with(&self, means: &[T]) -> Result<Self> {
        if means.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: means.len(),
            });
        }
        self.map_rows(self.feature_names.clone(), |r| {
            r.iter()
                .zip(means)
                .map(|(&v, &m)| if v.is_nan() { m } else { v })
                .collect()
        })
    }

    /// Drops every row with at least one missing entry.
    pub fn drop_missing(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.features[i].iter().all(|v| !v.is_nan()))
            .collect();
        if keep.is_empty() {
            return Err(Error::Data(
                "no complete rows remain after dropping missing values".into(),
            ));
        }
        self.subset(&keep)
    }
}

/// How rows with missing feature values are handled at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    Drop,
    #[default]
    MeanImpute,
}

fn is_missing_cell(cell: &str) -> bool {
    cell.is_empty() || cell == "NaN" || cell == "nan"
}

/// Reads a headed CSV, leaving missing feature cells as NaN.
pub fn load_csv_raw<T: Scalar>(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Data(format!(
                "label column `{label_column}` not found in {}",
                path.display()
            ))
        })?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Row numbers count data rows from 1; the header is row 0.
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(parse_label(cell, row)?);
                continue;
            }
            if is_missing_cell(cell) {
                values.push(T::nan());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].to_string(),
                msg: format!("`{cell}` is not a number"),
            })?;
            values.push(T::lit(v));
        }
        features.push(values);
    }
    if features.is_empty() {
        return Err(Error::Data(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    Dataset::new(features, labels, names)
}

fn parse_label(cell: &str, row: usize) -> Result<u8> {
    match cell.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        _ => Err(Error::NonBinaryLabel {
            row,
            value: cell.to_string(),
        }),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        let row = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            row,
            column: "*".into(),
            msg: e.to_string(),
        }
    }
}

/// Reads a headed CSV and resolves missing values per `policy`.
///
/// `MeanImpute` here uses the means of the whole file; experiment runs
/// instead impute with training-split means via [`Preprocessor`].
pub fn load_csv<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: &str,
    policy: MissingPolicy,
) -> Result<Dataset<T>> {
    let raw = load_csv_raw::<T>(path, label_column)?;
    let resolved = match policy {
        MissingPolicy::Drop => raw.drop_missing()?,
        MissingPolicy::MeanImpute => {
            let means = raw.observed_means()?;
            raw.impute_with(&means)?
        }
    };
    if resolved.len() < 2 {
        return Err(Error::Data(format!(
            "only {} usable row(s); need at least 2",
            resolved.len()
        )));
    }
    Ok(resolved)
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats<T> {
    pub means: Vec<T>,
    pub std_devs: Vec<T>,
}

pub fn fit_standardizer<T: Scalar>(train: &Dataset<T>) -> Result<StandardizationStats<T>> {
    if train.len() < 2 {
        return Err(Error::Data(
            "standardization needs at least two rows".into(),
        ));
    }
    if train.has_missing() {
        return Err(Error::Data(
            "missing values must be resolved before standardization".into(),
        ));
    }
    let m: T = from_usize(train.len());
    let floor = T::lit(STD_FLOOR);
    let mut means = Vec::with_capacity(train.dim());
    let mut std_devs = Vec::with_capacity(train.dim());
    for j in 0..train.dim() {
        let mean = train.features.iter().map(|r| r[j]).sum::<T>() / m;
        let var = train
            .features
            .iter()
            .map(|r| (r[j] - mean) * (r[j] - mean))
            .sum::<T>()
            / m;
        means.push(mean);
        std_devs.push(var.sqrt().max(floor));
    }
    Ok(StandardizationStats { means, std_devs })
}

impl<T: Scalar> StandardizationStats<T> {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    fn check(&self, width: usize) -> Result<()> {
        if width != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: width,
            });
        }
        Ok(())
    }

    pub fn standardize_row(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.std_devs))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    pub fn unstandardize_row(&self, z: &[T]) -> Result<Vec<T>> {
        self.check(z.len())?;
        Ok(z.iter()
            .zip(self.means.iter().zip(&self.std_devs))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect())
    }

    pub fn apply(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        self.check(data.dim())?;
        data.map_rows(data.feature_names.clone(), |r| {
            self.standardize_row(r).expect("width checked")
        })
    }
}

/// Polynomial basis of total degree at most `degree`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionSpec {
    pub degree: usize,
    pub include_bias: bool,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// `C(n, k)`, saturating on overflow.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

impl ExpansionSpec {
    pub fn new(input_dim: usize, degree: usize, include_bias: bool) -> Result<Self> {
        if input_dim == 0 || degree == 0 {
            return Err(Error::domain(
                "ExpansionSpec::new",
                format!("need input_dim >= 1 and degree >= 1, got {input_dim} and {degree}"),
            ));
        }
        let with_bias = binomial(input_dim + degree, degree);
        if with_bias == usize::MAX {
            return Err(Error::domain(
                "ExpansionSpec::new",
                "expanded dimension overflows",
            ));
        }
        Ok(Self {
            degree,
            include_bias,
            input_dim,
            output_dim: if include_bias {
                with_bias
            } else {
                with_bias - 1
            },
        })
    }
}

/// Evaluation plan for an [`ExpansionSpec`].
///
/// Monomials are listed in graded lexicographic order: by total degree, then
/// by decreasing exponent of the first variable, then the second, and so on.
/// For two inputs and degree 2 that is `1, x1, x2, x1^2, x1 x2, x2^2`. Every
/// monomial of positive degree is its parent (one power of its first
/// variable removed) times that variable, so evaluation costs one multiply
/// per output.
#[derive(Debug, Clone)]
pub struct PolynomialBasis {
    spec: ExpansionSpec,
    exponents: Vec<Vec<u16>>,
    plan: Vec<(usize, usize)>,
}

impl PolynomialBasis {
    pub fn new(spec: ExpansionSpec) -> Self {
        let n = spec.input_dim;
        let mut exponents: Vec<Vec<u16>> = Vec::new();
        for total in 0..=spec.degree {
            let mut current = vec![0u16; n];
            push_compositions(total, 0, &mut current, &mut exponents);
        }
        let index: HashMap<&[u16], usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_slice(), i))
            .collect();
        let plan = exponents
            .iter()
            .map(|e| match e.iter().position(|&p| p > 0) {
                None => (0, usize::MAX),
                Some(var) => {
                    let mut parent = e.clone();
                    parent[var] -= 1;
                    (index[parent.as_slice()], var)
                }
            })
            .collect();
        Self {
            spec,
            exponents,
            plan,
        }
    }

    pub fn spec(&self) -> &ExpansionSpec {
        &self.spec
    }

    fn skip(&self) -> usize {
        usize::from(!self.spec.include_bias)
    }

    /// Exponent vectors of the emitted monomials.
    pub fn exponents(&self) -> &[Vec<u16>] {
        &self.exponents[self.skip()..]
    }

    pub fn expand<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                found: x.len(),
            });
        }
        let mut values = Vec::with_capacity(self.plan.len());
        values.push(T::one());
        for &(parent, var) in &self.plan[1..] {
            let v = values[parent] * x[var];
            values.push(v);
        }
        if !self.spec.include_bias {
            values.remove(0);
        }
        Ok(values)
    }

    pub fn term_names(&self, inputs: &[String]) -> Vec<String> {
        self.exponents()
            .iter()
            .map(|e| {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(j, &p)| {
                        if p == 1 {
                            inputs[j].clone()
                        } else {
                            format!("{}^{p}", inputs[j])
                        }
                    })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            })
            .collect()
    }

    pub fn expand_dataset<T: Scalar>(&self, data: &Dataset<T>) -> Result<Dataset<T>> {
        if data.dim() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                found: data.dim(),
            });
        }
        let names = self.term_names(data.feature_names());
        data.map_rows(names, |r| self.expand(r).expect("width checked"))
    }
}

fn push_compositions(
    remaining: usize,
    pos: usize,
    current: &mut Vec<u16>,
    out: &mut Vec<Vec<u16>>,
) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining as u16;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        current[pos] = p as u16;
        push_compositions(remaining - p, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// All monomials `x^alpha` with `|alpha| <= degree`, graded lexicographic.
pub fn expand_polynomial<T: Scalar>(x: &[T], spec: &ExpansionSpec) -> Result<Vec<T>> {
    PolynomialBasis::new(*spec).expand(x)
}

/// Shuffled split with `ceil(m (1 - f))` training rows.
pub fn split<T: Scalar>(
    data: &Dataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::domain(
            "split",
            format!("test fraction must lie in (0, 1), got {test_fraction}"),
        ));
    }
    let m = data.len();
    let n_train = ((m as f64) * (1.0 - test_fraction) - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::Data(format!(
            "split of {m} rows at test fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::seeded(seed));
    Ok((
        data.subset(&order[..n_train])?,
        data.subset(&order[n_train..])?,
    ))
}

/// Two isotropic unit-variance Gaussian classes with means at
/// `-(separation/2) e_1` (label 0) and `+(separation/2) e_1` (label 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub separation: f64,
    /// Fraction of labels flipped after sampling (rounded to a count).
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 4 || !self.m.is_multiple_of(2) {
            return Err(Error::config(
                "synthetic.m",
                format!("must be even and at least 4, got {}", self.m),
            ));
        }
        if self.n == 0 {
            return Err(Error::config("synthetic.n", "must be at least 1"));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::config(
                "synthetic.separation",
                "must be finite and nonnegative",
            ));
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return Err(Error::config(
                "synthetic.label_noise",
                "must lie in [0, 0.5]",
            ));
        }
        Ok(())
    }

    pub fn generate<T: Scalar>(&self) -> Result<Dataset<T>> {
        self.validate()?;
        let mut rng = rng::seeded(rng::derive_seed(self.seed, rng::tag::SYNTHETIC));
        let half = self.m / 2;
        let shift = T::lit(self.separation / 2.0);
        let mut features = Vec::with_capacity(self.m);
        let mut labels = Vec::with_capacity(self.m);
        for i in 0..self.m {
            let label = u8::from(i >= half);
            let mut row: Vec<T> = (0..self.n)
                .map(|_| T::sample_standard_normal(&mut rng))
                .collect();
            row[0] += if label == 1 { shift } else { -shift };
            features.push(row);
            labels.push(label);
        }
        let flips = (self.label_noise * self.m as f64).round() as usize;
        if flips > 0 {
            let mut order: Vec<usize> = (0..self.m).collect();
            order.shuffle(&mut rng);
            for &i in &order[..flips] {
                labels[i] = 1 - labels[i];
            }
        }
        Dataset::new(features, labels, Vec::new())
    }
}

pub fn make_synthetic_gaussians<T: Scalar>(
    m: usize,
    n: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    SyntheticSpec {
        m,
        n,
        separation,
        label_noise: 0.0,
        seed,
    }
    .generate()
}

/// Train-fitted preprocessing: imputation, standardization, expansion,
/// applied in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor<T> {
    pub impute_means: Option<Vec<T>>,
    pub standardizer: Option<StandardizationStats<T>>,
    pub expansion: Option<ExpansionSpec>,
}

impl<T: Scalar> Preprocessor<T> {
    /// Fits on the raw training split. `expansion_degree` is `(degree, include_bias)`.
    pub fn fit(
        train_raw: &Dataset<T>,
        policy: MissingPolicy,
        standardize: bool,
        expansion_degree: Option<(usize, bool)>,
    ) -> Result<Self> {
        let impute_means = match policy {
            MissingPolicy::MeanImpute if train_raw.has_missing() => {
                Some(train_raw.observed_means()?)
            }
            _ => None,
        };
        let resolved = match &impute_means {
            Some(means) => train_raw.impute_with(means)?,
            None if train_raw.has_missing() => train_raw.drop_missing()?,
            None => train_raw.clone(),
        };
        let standardizer = if standardize {
            Some(fit_standardizer(&resolved)?)
        } else {
            None
        };
        let expansion = expansion_degree
            .map(|(d, bias)| ExpansionSpec::new(train_raw.dim(), d, bias))
            .transpose()?;
        Ok(Self {
            impute_means,
            standardizer,
            expansion,
        })
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.expansion.map_or(input_dim, |e| e.output_dim)
    }

    pub fn apply(&self, raw: &Dataset<T>) -> Result<Dataset<T>> {
        let mut data = match &self.impute_means {
            Some(means) => raw.impute_with(means)?,
            None if raw.has_missing() => raw.drop_missing()?,
            None => raw.clone(),
        };
        if let Some(stats) = &self.standardizer {
            data = stats.apply(&data)?;
        }
        if let Some(spec) = self.expansion {
            data = PolynomialBasis::new(spec).expand_dataset(&data)?;
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const FOUR_ROWS: &str = "a,b,label\n1,2,0\n3,,1\n5,6,1\nNaN,8,0\n";

    #[test]
    fn csv_drop_policy() {
        let f = write_csv(FOUR_ROWS);
        let d: Dataset<f64> = load_csv(f.path(), "label", MissingPolicy::Drop).unwrap();
        assert_eq!(d.len(), 2);
        let f = write_csv("a,b,label\n1,2,0\n3,,1\n5,6,1\n7,8,0\n");
        let d: Dataset<f64> = load_csv(f.path(), "label", MissingPolicy::Drop).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_names(), ["a", "b"]);
    }

    #[test]
    fn csv_mean_impute_policy() {
        let f = write_csv("a,b,label\n1,2,0\n3,,1\n5,6,1\n7,8,0\n");
        let d: Dataset<f64> = load_csv(f.path(), "label", MissingPolicy::MeanImpute).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.row(1).0[1], (2.0 + 6.0 + 8.0) / 3.0);
        assert_eq!(d.labels(), [0, 1, 1, 0]);
    }

    #[test]
    fn csv_label_column_anywhere() {
        let f = write_csv("label,a\n1,0.5\n0,1.5\n");
        let d: Dataset<f64> = load_csv(f.path(), "label", MissingPolicy::Drop).unwrap();
        assert_eq!(d.features(), [vec![0.5], vec![1.5]]);
        assert_eq!(d.labels(), [1, 0]);
    }

    #[test]
    fn csv_errors() {
        let f = write_csv("a,label\n1,0\n2,2\n");
        assert!(matches!(
            load_csv::<f64>(f.path(), "label", MissingPolicy::Drop),
            Err(Error::NonBinaryLabel { row: 2, .. })
        ));
        let f = write_csv("a,label\n1,0\nx,1\n");
        match load_csv::<f64>(f.path(), "label", MissingPolicy::Drop) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_csv("a,label\n1,0\n,1\n");
        assert!(load_csv::<f64>(f.path(), "label", MissingPolicy::Drop).is_err());
        let f = write_csv("a,b\n1,0\n");
        assert!(load_csv::<f64>(f.path(), "label", MissingPolicy::Drop).is_err());
        assert!(matches!(
            load_csv::<f64>("/nonexistent/file.csv", "label", MissingPolicy::Drop),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn standardizer_examples() {
        let d = Dataset::new(vec![vec![1.0, 5.0], vec![3.0, 5.0]], vec![0, 1], vec![]).unwrap();
        let s = fit_standardizer(&d).unwrap();
        assert_eq!(s.means, [2.0, 5.0]);
        assert_eq!(s.std_devs, [1.0, STD_FLOOR]);
        let z = s.apply(&d).unwrap();
        assert_eq!(z.row(0).0, [-1.0, 0.0]);
        assert_eq!(z.row(1).0, [1.0, 0.0]);
    }

    #[test]
    fn standardized_train_split_has_zero_mean_unit_std() {
        let d: Dataset<f64> = make_synthetic_gaussians(200, 3, 3.0, 4).unwrap();
        let s = fit_standardizer(&d).unwrap();
        let z = s.apply(&d).unwrap();
        let again = fit_standardizer(&z).unwrap();
        for j in 0..3 {
            assert!(again.means[j].abs() < 1e-12);
            assert!((again.std_devs[j] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn standardizer_needs_two_rows() {
        let d = Dataset::new(vec![vec![1.0]], vec![0], vec![]).unwrap();
        assert!(fit_standardizer(&d).is_err());
    }

    #[test]
    fn expansion_two_by_two() {
        let spec = ExpansionSpec::new(2, 2, true).unwrap();
        assert_eq!(spec.output_dim, 6);
        let v = expand_polynomial(&[2.0, 3.0], &spec).unwrap();
        assert_eq!(v, [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
        let basis = PolynomialBasis::new(spec);
        assert_eq!(
            basis.term_names(&["a".into(), "b".into()]),
            ["1", "a", "b", "a^2", "a*b", "b^2"]
        );
        let no_bias = ExpansionSpec::new(2, 2, false).unwrap();
        assert_eq!(
            expand_polynomial(&[2.0, 3.0], &no_bias).unwrap(),
            [2.0, 3.0, 4.0, 6.0, 9.0]
        );
    }

    #[test]
    fn expansion_nine_by_six() {
        let spec = ExpansionSpec::new(9, 6, true).unwrap();
        assert_eq!(spec.output_dim, 5005);
        let v = expand_polynomial(&[0.0f64; 9], &spec).unwrap();
        assert_eq!(v.len(), 5005);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn expansion_counts_match_binomial() {
        for n in 1..=10 {
            for d in 1..=6 {
                let spec = ExpansionSpec::new(n, d, true).unwrap();
                let basis = PolynomialBasis::new(spec);
                assert_eq!(basis.exponents().len(), binomial(n + d, d));
                assert_eq!(spec.output_dim, binomial(n + d, d));
            }
        }
    }

    #[test]
    fn expansion_values_match_exponents() {
        let spec = ExpansionSpec::new(3, 4, true).unwrap();
        let basis = PolynomialBasis::new(spec);
        let x = [1.3f64, -0.7, 2.1];
        let v = basis.expand(&x).unwrap();
        for (e, &got) in basis.exponents().iter().zip(&v) {
            let want: f64 = e
                .iter()
                .zip(&x)
                .map(|(&p, &xi)| xi.powi(i32::from(p)))
                .product();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        }
        // Graded: degrees never decrease along the list.
        let degrees: Vec<u16> = basis.exponents().iter().map(|e| e.iter().sum()).collect();
        assert!(degrees.windows(2).all(|w| w[0] <= w[1]));
        assert!(basis.expand(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d: Dataset<f64> = make_synthetic_gaussians(10, 2, 1.0, 0).unwrap();
        let (tr, te) = split(&d, 0.2, 9).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, te2) = split(&d, 0.2, 9).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let (tr3, _) = split(&d, 0.2, 10).unwrap();
        assert_ne!(tr, tr3);
        assert!(split(&d, 0.0, 1).is_err());
        assert!(split(&d, 1.0, 1).is_err());
        let tiny = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0, 1], vec![]).unwrap();
        assert!(split(&tiny, 0.01, 1).is_err());
    }

    #[test]
    fn synthetic_fixture_properties() {
        let a: Dataset<f64> = make_synthetic_gaussians(100, 3, 4.0, 1).unwrap();
        let b: Dataset<f64> = make_synthetic_gaussians(100, 3, 4.0, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().iter().filter(|&&y| y == 1).count(), 50);
        let noisy: Dataset<f64> = SyntheticSpec {
            m: 100,
            n: 3,
            separation: 4.0,
            label_noise: 0.1,
            seed: 1,
        }
        .generate()
        .unwrap();
        let flipped = noisy
            .labels()
            .iter()
            .zip(a.labels())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(flipped, 10);
        assert!(make_synthetic_gaussians::<f64>(5, 2, 1.0, 0).is_err());
        assert!(make_synthetic_gaussians::<f64>(2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn preprocessor_imputes_with_train_means() {
        let train = Dataset::new(
            vec![vec![1.0, 10.0], vec![f64::NAN, 20.0], vec![3.0, 30.0]],
            vec![0, 1, 0],
            vec![],
        )
        .unwrap();
        let test = Dataset::new(
            vec![vec![f64::NAN, 0.0], vec![5.0, 5.0]],
            vec![1, 0],
            vec![],
        )
        .unwrap();
        let pre = Preprocessor::fit(&train, MissingPolicy::MeanImpute, false, None).unwrap();
        assert_eq!(pre.impute_means.as_deref(), Some(&[2.0, 20.0][..]));
        let t = pre.apply(&test).unwrap();
        assert_eq!(t.row(0).0, [2.0, 0.0]);
        let dropped =
            Preprocessor::fit(&train, MissingPolicy::Drop, true, Some((2, true))).unwrap();
        let out = dropped.apply(&test).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.dim(), 6);
    }

    proptest! {
        #[test]
        fn standardize_roundtrip(rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 2..20)) {
            let m = rows.len();
            let d = Dataset::new(rows, vec![0; m], vec![]).unwrap();
            let s = fit_standardizer(&d).unwrap();
            for r in d.features() {
                let back = s.unstandardize_row(&s.standardize_row(r).unwrap()).unwrap();
                for (j, (&a, &b)) in r.iter().zip(&back).enumerate() {
                    if s.std_devs[j] > STD_FLOOR {
                        prop_assert!((a - b).abs() <= 1e-9);
                    }
                }
            }
        }

        #[test]
        fn split_partitions_rows(m in 4usize..60, f in 0.1f64..0.9, seed in any::<u64>()) {
            let rows: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64]).collect();
            let d = Dataset::new(rows, vec![0; m], vec![]).unwrap();
            if let Ok((tr, te)) = split(&d, f, seed) {
                let mut all: Vec<f64> = tr.features().iter().chain(te.features()).map(|r| r[0]).collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                prop_assert_eq!(all, (0..m).map(|i| i as f64).collect::<Vec<_>>());
                prop_assert_eq!(tr.len(), ((m as f64) * (1.0 - f) - 1e-9).ceil() as usize);
            }
        }
    }
}
