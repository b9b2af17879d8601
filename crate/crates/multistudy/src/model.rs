//! Data model: studies, random-effect structure, and the synthetic generator.
//!
//! The generating model for study `k` with design `X_k` is
//!
//! ```text
//! Y_k = X_k beta + Z_k gamma_k + eps_k,
//! gamma_k ~ N(0, G),   eps_k ~ N(0, sigma_eps2 I),
//! ```
//!
//! where `Z_k` consists of the design columns selected by the random-effect
//! structure and `G` is diagonal. The scalar heterogeneity summary is
//! `sigma_bar2 = tr(G) / p`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

/// Design matrix and outcome vector for a single study.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyData {
    id: String,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl StudyData {
    /// # Errors
    ///
    /// Rejects empty designs, row-count mismatches between `x` and `y`, and
    /// non-finite entries.
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let id = id.into();
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InsufficientData {
                context: format!("study {id}"),
                detail: "design matrix is empty".to_string(),
            });
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                context: format!("study {id}: outcome length vs design rows"),
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("study {id}"),
            });
        }
        Ok(Self { id, x, y })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of design columns.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Gram matrix `X^T X`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x)
    }

    /// Moment vector `X^T Y`.
    pub fn xty(&self) -> DVector<f64> {
        self.x.tr_mul(&self.y)
    }
}

/// One group of random-effect columns sharing a variance.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceGroup {
    variance: f64,
    columns: Vec<usize>,
}

impl VarianceGroup {
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Design-column indices belonging to this group.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Group size `m_j`.
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Which design columns carry random effects and with what variances.
///
/// Groups of columns sharing exactly the same variance value are tracked
/// explicitly; the interval forms of the transition theory are indexed by
/// these groups.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomEffectsStructure {
    columns: Vec<usize>,
    variances: Vec<f64>,
    groups: Vec<VarianceGroup>,
}

impl RandomEffectsStructure {
    /// # Errors
    ///
    /// Rejects empty or duplicated column sets, length mismatches, and
    /// negative or non-finite variances.
    pub fn new(columns: Vec<usize>, variances: Vec<f64>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidConfig {
                context: "random-effect column set is empty".to_string(),
            });
        }
        if variances.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                context: "random-effect variances vs columns".to_string(),
                expected: columns.len(),
                found: variances.len(),
            });
        }
        for (i, &a) in columns.iter().enumerate() {
            if columns[i + 1..].contains(&a) {
                return Err(Error::InvalidConfig {
                    context: format!("random-effect column {a} listed twice"),
                });
            }
        }
        for &v in &variances {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidVariance { value: v });
            }
        }
        // Partition columns by exact variance equality, first-appearance order.
        let mut groups: Vec<VarianceGroup> = Vec::new();
        for (&col, &v) in columns.iter().zip(&variances) {
            match groups.iter_mut().find(|g| g.variance == v) {
                Some(g) => g.columns.push(col),
                None => groups.push(VarianceGroup {
                    variance: v,
                    columns: alloc::vec![col],
                }),
            }
        }
        Ok(Self {
            columns,
            variances,
            groups,
        })
    }

    /// Every listed column gets the same variance (a single group).
    pub fn uniform(columns: Vec<usize>, variance: f64) -> Result<Self> {
        let k = columns.len();
        Self::new(columns, alloc::vec![variance; k])
    }

    /// Number of random-effect columns `q`.
    pub fn q(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Equal-variance groups in first-appearance order.
    pub fn groups(&self) -> &[VarianceGroup] {
        &self.groups
    }

    /// `tr(G)`.
    pub fn trace_g(&self) -> f64 {
        self.variances.iter().sum()
    }

    /// Checks that all columns fit a design with `p` columns.
    pub fn validate_p(&self, p: usize) -> Result<()> {
        if let Some(&bad) = self.columns.iter().find(|&&c| c >= p) {
            return Err(Error::DimensionMismatch {
                context: format!("random-effect column {bad} vs design width"),
                expected: p,
                found: bad,
            });
        }
        Ok(())
    }

    /// Same columns and grouping proportions, rescaled so that
    /// `tr(G)/p = sigma_bar2`. Columns keep their relative allocation; an
    /// all-zero structure is rescaled uniformly.
    pub fn scaled_to(&self, sigma_bar2: f64, p: usize) -> Result<Self> {
        if !sigma_bar2.is_finite() || sigma_bar2 < 0.0 {
            return Err(Error::InvalidVariance { value: sigma_bar2 });
        }
        let total = self.trace_g();
        let target = sigma_bar2 * p as f64;
        let variances: Vec<f64> = if total > 0.0 {
            self.variances.iter().map(|v| v * target / total).collect()
        } else {
            alloc::vec![target / self.q() as f64; self.q()]
        };
        Self::new(self.columns.clone(), variances)
    }
}

/// Scalar heterogeneity summary of a random-effect structure.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct HeterogeneitySummary {
    /// `tr(G) / p`.
    pub sigma_bar2: f64,
    /// `tr(G)`.
    pub trace_g: f64,
    /// Number of random-effect columns.
    pub q: usize,
    /// Number of equal-variance groups.
    pub groups: usize,
}

/// Computes `sigma_bar2 = tr(G)/p` and companion counts.
///
/// # Errors
///
/// Rejects `p = 0` and structures whose columns do not fit width `p`.
pub fn heterogeneity_summary(
    re: &RandomEffectsStructure,
    p: usize,
) -> Result<HeterogeneitySummary> {
    if p == 0 {
        return Err(Error::InvalidConfig {
            context: "design width p = 0".to_string(),
        });
    }
    re.validate_p(p)?;
    let trace_g = re.trace_g();
    Ok(HeterogeneitySummary {
        sigma_bar2: trace_g / p as f64,
        trace_g,
        q: re.q(),
        groups: re.groups().len(),
    })
}

/// Fixed designs plus model parameters for synthetic data generation.
///
/// Training studies occupy indices `0..n_train()`, test studies follow at
/// `n_train()..study_count()`. Designs are held fixed across replicates; only
/// `gamma_k` and `eps_k` are redrawn.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    beta: DVector<f64>,
    re: RandomEffectsStructure,
    sigma_eps2: f64,
    train_designs: Vec<DMatrix<f64>>,
    test_designs: Vec<DMatrix<f64>>,
    seed: u64,
}

impl GeneratorConfig {
    /// # Errors
    ///
    /// Rejects empty design lists, designs whose width disagrees with
    /// `beta`, random-effect columns outside the design, and negative or
    /// non-finite `sigma_eps2`.
    pub fn new(
        beta: DVector<f64>,
        re: RandomEffectsStructure,
        sigma_eps2: f64,
        train_designs: Vec<DMatrix<f64>>,
        test_designs: Vec<DMatrix<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if train_designs.is_empty() || test_designs.is_empty() {
            return Err(Error::EmptyStudies);
        }
        let p = beta.len();
        if p == 0 {
            return Err(Error::InvalidConfig {
                context: "coefficient vector is empty".to_string(),
            });
        }
        for (i, x) in train_designs.iter().chain(test_designs.iter()).enumerate() {
            if x.ncols() != p {
                return Err(Error::DimensionMismatch {
                    context: format!("design {i} width vs beta"),
                    expected: p,
                    found: x.ncols(),
                });
            }
            if x.nrows() == 0 {
                return Err(Error::InsufficientData {
                    context: format!("design {i}"),
                    detail: "no rows".to_string(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("design {i}"),
                });
            }
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "beta".to_string(),
            });
        }
        re.validate_p(p)?;
        if !sigma_eps2.is_finite() || sigma_eps2 < 0.0 {
            return Err(Error::InvalidVariance { value: sigma_eps2 });
        }
        Ok(Self {
            beta,
            re,
            sigma_eps2,
            train_designs,
            test_designs,
            seed,
        })
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn re(&self) -> &RandomEffectsStructure {
        &self.re
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_eps2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_designs.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_designs.len()
    }

    /// Total number of studies across the unified train-then-test index space.
    pub fn study_count(&self) -> usize {
        self.n_train() + self.n_test()
    }

    pub fn train_designs(&self) -> &[DMatrix<f64>] {
        &self.train_designs
    }

    pub fn test_designs(&self) -> &[DMatrix<f64>] {
        &self.test_designs
    }

    /// Design of the study at a unified index (train first, then test).
    pub fn design(&self, study_index: usize) -> Result<&DMatrix<f64>> {
        let k = self.n_train();
        if study_index < k {
            Ok(&self.train_designs[study_index])
        } else if study_index < self.study_count() {
            Ok(&self.test_designs[study_index - k])
        } else {
            Err(Error::StudyIndex {
                index: study_index,
                count: self.study_count(),
            })
        }
    }

    /// Same designs and noise level with a different random-effect structure.
    pub fn with_re(&self, re: RandomEffectsStructure) -> Result<Self> {
        Self::new(
            self.beta.clone(),
            re,
            self.sigma_eps2,
            self.train_designs.clone(),
            self.test_designs.clone(),
            self.seed,
        )
    }

    /// Same configuration under a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out
    }
}

/// Draws one realization of the study at `study_index`.
///
/// The substream is a pure function of `(config seed, study_index,
/// replicate)`; within it, the `q` random effects are drawn first, then the
/// `n` noise terms.
pub fn generate_study(
    config: &GeneratorConfig,
    study_index: usize,
    replicate: u64,
) -> Result<StudyData> {
    let x = config.design(study_index)?;
    let mut rng = seed::stream_rng(config.seed, study_index as u64, replicate);
    let mut y = x * &config.beta;
    for (&col, &var) in config.re.columns().iter().zip(config.re.variances()) {
        let z: f64 = rng.sample(StandardNormal);
        let gamma = z * libm::sqrt(var);
        y.axpy(gamma, &x.column(col).into_owned(), 1.0);
    }
    let sd_eps = libm::sqrt(config.sigma_eps2);
    for v in y.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += z * sd_eps;
    }
    let label = if study_index < config.n_train() {
        format!("train-{study_index}")
    } else {
        format!("test-{}", study_index - config.n_train())
    };
    StudyData::new(label, x.clone(), y)
}

/// A merged study with enough bookkeeping to recover the originals.
#[derive(Clone, Debug)]
pub struct StackedStudies {
    data: StudyData,
    ids: Vec<String>,
    offsets: Vec<usize>,
}

impl StackedStudies {
    /// The row-stacked study.
    pub fn data(&self) -> &StudyData {
        &self.data
    }

    /// Start row of each constituent study.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Splits the stack back into the original studies.
    pub fn unstack(&self) -> Vec<StudyData> {
        let mut out = Vec::with_capacity(self.offsets.len());
        let n = self.data.n();
        for (i, &start) in self.offsets.iter().enumerate() {
            let end = self.offsets.get(i + 1).copied().unwrap_or(n);
            let x = self.data.x().rows(start, end - start).into_owned();
            let y = self.data.y().rows(start, end - start).into_owned();
            let study = StudyData::new(self.ids[i].clone(), x, y)
                .expect("slices of valid studies are valid");
            out.push(study);
        }
        out
    }
}

/// Stacks studies row-wise in the given order.
///
/// # Errors
///
/// Rejects an empty collection and width mismatches.
pub fn stack_studies(studies: &[StudyData]) -> Result<StackedStudies> {
    let first = studies.first().ok_or(Error::EmptyStudies)?;
    let p = first.p();
    let mut n_total = 0;
    let mut offsets = Vec::with_capacity(studies.len());
    let mut ids = Vec::with_capacity(studies.len());
    for s in studies {
        if s.p() != p {
            return Err(Error::DimensionMismatch {
                context: format!("study {} width vs first study", s.id()),
                expected: p,
                found: s.p(),
            });
        }
        offsets.push(n_total);
        ids.push(s.id().to_string());
        n_total += s.n();
    }
    let mut x = DMatrix::zeros(n_total, p);
    let mut y = DVector::zeros(n_total);
    for (s, &start) in studies.iter().zip(&offsets) {
        x.rows_mut(start, s.n()).copy_from(s.x());
        y.rows_mut(start, s.n()).copy_from(s.y());
    }
    Ok(StackedStudies {
        data: StudyData::new("merged", x, y)?,
        ids,
        offsets,
    })
}
