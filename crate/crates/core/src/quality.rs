//! Rendering-quality and compression domain, and the `(RQ, QP) -> VMAF`
//! predictor used by the optimizer.
//!
//! Two predictor variants are provided. [`LookupTable`] maps each render
//! quality and compression preset to a measured VMAF value and refuses any
//! other QP. [`RegressionTree`] is a CART regressor trained on
//! [`QualitySample`] rows and answers any QP inside its training range.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tree::{RegressionTree, TreeError};

/// Rendering-quality preset of a game instance, ordered from cheapest to most
/// expensive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderQuality {
    Low,
    Medium,
    High,
    VeryHigh,
}

impl RenderQuality {
    pub const ALL: [RenderQuality; 4] = [
        RenderQuality::Low,
        RenderQuality::Medium,
        RenderQuality::High,
        RenderQuality::VeryHigh,
    ];
    pub const MIN: RenderQuality = RenderQuality::Low;
    pub const MAX: RenderQuality = RenderQuality::VeryHigh;

    /// Position in the total order, `Low = 0`.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<RenderQuality> {
        Self::ALL.get(ordinal).copied()
    }

    /// One level up, or `None` at `VeryHigh`.
    pub fn next_up(self) -> Option<RenderQuality> {
        Self::from_ordinal(self.ordinal() + 1)
    }

    /// One level down, or `None` at `Low`.
    pub fn next_down(self) -> Option<RenderQuality> {
        self.ordinal().checked_sub(1).and_then(Self::from_ordinal)
    }

    /// True when `other` is exactly one level away.
    pub fn is_adjacent(self, other: RenderQuality) -> bool {
        self.ordinal().abs_diff(other.ordinal()) == 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RenderQuality::Low => "low",
            RenderQuality::Medium => "medium",
            RenderQuality::High => "high",
            RenderQuality::VeryHigh => "very_high",
        }
    }
}

impl fmt::Display for RenderQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RenderQuality {
    type Err = QualityError;

    /// Case-insensitive; accepts `very_high`, `very-high`, `very high` and
    /// `veryhigh`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "low" => Ok(RenderQuality::Low),
            "medium" => Ok(RenderQuality::Medium),
            "high" => Ok(RenderQuality::High),
            "veryhigh" => Ok(RenderQuality::VeryHigh),
            _ => Err(QualityError::UnknownRenderQuality(s.to_string())),
        }
    }
}

/// Codec quantization parameter in `[0, 51]`; higher means lossier.
///
/// The three presets stand in for network conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QpLevel(u8);

impl QpLevel {
    pub const MAX_QP: u8 = 51;
    pub const GOOD: QpLevel = QpLevel(10);
    pub const FAIR: QpLevel = QpLevel(30);
    pub const POOR: QpLevel = QpLevel(40);
    pub const PRESETS: [QpLevel; 3] = [QpLevel::GOOD, QpLevel::FAIR, QpLevel::POOR];

    pub fn new(qp: u8) -> Result<QpLevel, QualityError> {
        if qp > Self::MAX_QP {
            return Err(QualityError::QpOutOfRange(qp as i64));
        }
        Ok(QpLevel(qp))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Resolves `good`/`fair`/`poor` (case-insensitive) or a bare integer.
    pub fn parse_preset(s: &str) -> Result<QpLevel, QualityError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" | "g" => Ok(QpLevel::GOOD),
            "fair" | "f" => Ok(QpLevel::FAIR),
            "poor" | "p" => Ok(QpLevel::POOR),
            other => {
                let qp: i64 = other
                    .parse()
                    .map_err(|_| QualityError::UnknownQpPreset(s.to_string()))?;
                if !(0..=Self::MAX_QP as i64).contains(&qp) {
                    return Err(QualityError::QpOutOfRange(qp));
                }
                Ok(QpLevel(qp as u8))
            }
        }
    }

    fn preset_index(self) -> Option<usize> {
        Self::PRESETS.iter().position(|p| *p == self)
    }
}

impl TryFrom<u8> for QpLevel {
    type Error = QualityError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        QpLevel::new(value)
    }
}

impl From<QpLevel> for u8 {
    fn from(qp: QpLevel) -> u8 {
        qp.0
    }
}

impl fmt::Display for QpLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QualityError {
    #[error("unknown render quality `{0}`")]
    UnknownRenderQuality(String),
    #[error("unknown compression preset `{0}`")]
    UnknownQpPreset(String),
    #[error("qp {0} outside [0, 51]")]
    QpOutOfRange(i64),
    #[error("unsupported compression level: qp {0}")]
    UnsupportedQp(u8),
    #[error("vmaf {0} outside [0, 100]")]
    VmafOutOfRange(f64),
    #[error("lookup table is not monotone: {0}")]
    NonMonotoneTable(String),
    #[error("unknown RQ at line {line}")]
    UnknownRqAtLine { line: u64 },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("vmaf {vmaf} outside [0, 100] at line {line}")]
    VmafOutOfRangeAtLine { line: u64, vmaf: f64 },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("predictor file: {0}")]
    Format(#[from] serde_json::Error),
}

/// One measured `(RQ, QP, VMAF)` point captured at a scene location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySample {
    pub rq: RenderQuality,
    pub qp: QpLevel,
    pub vmaf: f64,
    pub scene_id: String,
    pub location_id: String,
}

impl QualitySample {
    pub fn new(
        rq: RenderQuality,
        qp: QpLevel,
        vmaf: f64,
        scene_id: impl Into<String>,
        location_id: impl Into<String>,
    ) -> Result<QualitySample, QualityError> {
        if !(0.0..=100.0).contains(&vmaf) {
            return Err(QualityError::VmafOutOfRange(vmaf));
        }
        Ok(QualitySample {
            rq,
            qp,
            vmaf,
            scene_id: scene_id.into(),
            location_id: location_id.into(),
        })
    }
}

/// Anything that predicts user-side visual quality from `(RQ, QP)`.
///
/// [`rmse`] and the optimizer only depend on this contract, so other
/// regressors can be benchmarked next to the built-in ones.
pub trait QualityModel {
    fn predict_vq(&self, rq: RenderQuality, qp: QpLevel) -> Result<f64, QualityError>;
}

/// Twelve-entry map from `RQ x {Good, Fair, Poor}` to VMAF.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    /// Indexed `[rq ordinal][preset index]`.
    values: [[f64; 3]; 4],
}

impl LookupTable {
    /// Measured user-side VMAF for each render quality at Good/Fair/Poor.
    pub const DEFAULT_VALUES: [[f64; 3]; 4] = [
        [24.43, 22.76, 16.98],
        [51.01, 47.31, 38.10],
        [65.42, 59.64, 42.57],
        [81.71, 77.42, 44.84],
    ];

    /// Builds a custom table, rejecting values outside `[0, 100]` and, unless
    /// `allow_non_monotone` is set, any table where quality fails to rise
    /// strictly with RQ or fall strictly with QP.
    pub fn new(values: [[f64; 3]; 4], allow_non_monotone: bool) -> Result<LookupTable, QualityError> {
        for v in values.iter().flatten() {
            if !(0.0..=100.0).contains(v) {
                return Err(QualityError::VmafOutOfRange(*v));
            }
        }
        if !allow_non_monotone {
            for (q, qp) in QpLevel::PRESETS.iter().enumerate() {
                for r in 1..4 {
                    if values[r][q] <= values[r - 1][q] {
                        return Err(QualityError::NonMonotoneTable(format!(
                            "vq({}, qp {qp}) = {} does not exceed vq({}, qp {qp}) = {}",
                            RenderQuality::ALL[r],
                            values[r][q],
                            RenderQuality::ALL[r - 1],
                            values[r - 1][q]
                        )));
                    }
                }
            }
            for (r, rq) in RenderQuality::ALL.iter().enumerate() {
                for q in 1..3 {
                    if values[r][q] >= values[r][q - 1] {
                        return Err(QualityError::NonMonotoneTable(format!(
                            "vq({rq}, qp {}) = {} is not below vq({rq}, qp {}) = {}",
                            QpLevel::PRESETS[q],
                            values[r][q],
                            QpLevel::PRESETS[q - 1],
                            values[r][q - 1]
                        )));
                    }
                }
            }
        }
        Ok(LookupTable { values })
    }

    pub fn get(&self, rq: RenderQuality, qp: QpLevel) -> Result<f64, QualityError> {
        let q = qp.preset_index().ok_or(QualityError::UnsupportedQp(qp.value()))?;
        Ok(self.values[rq.ordinal()][q])
    }

    pub fn values(&self) -> &[[f64; 3]; 4] {
        &self.values
    }
}

impl Default for LookupTable {
    fn default() -> Self {
        LookupTable {
            values: Self::DEFAULT_VALUES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorModel {
    LookupTable(LookupTable),
    TrainedTree {
        tree: RegressionTree,
        /// Inclusive QP range seen during training.
        qp_range: (u8, u8),
    },
}

/// Visual-quality predictor together with its normalization range.
///
/// `vq_min` is the prediction at the lowest RQ and highest supported QP,
/// `vq_max` at the highest RQ and lowest supported QP. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityPredictor {
    model: PredictorModel,
    vq_min: f64,
    vq_max: f64,
}

impl QualityPredictor {
    pub fn lookup(table: LookupTable) -> QualityPredictor {
        let vq_min = table.values[RenderQuality::MIN.ordinal()][2];
        let vq_max = table.values[RenderQuality::MAX.ordinal()][0];
        QualityPredictor {
            model: PredictorModel::LookupTable(table),
            vq_min,
            vq_max,
        }
    }

    fn tree(tree: RegressionTree, qp_range: (u8, u8)) -> QualityPredictor {
        let eval = |rq: RenderQuality, qp: u8| tree.predict(&features(rq, qp)).clamp(0.0, 100.0);
        let vq_min = eval(RenderQuality::MIN, qp_range.1);
        let vq_max = eval(RenderQuality::MAX, qp_range.0);
        QualityPredictor {
            model: PredictorModel::TrainedTree { tree, qp_range },
            vq_min,
            vq_max,
        }
    }

    pub fn model(&self) -> &PredictorModel {
        &self.model
    }

    pub fn vq_min(&self) -> f64 {
        self.vq_min
    }

    pub fn vq_max(&self) -> f64 {
        self.vq_max
    }

    /// Predicted VMAF in `[0, 100]`.
    pub fn predict_vq(&self, rq: RenderQuality, qp: QpLevel) -> Result<f64, QualityError> {
        match &self.model {
            PredictorModel::LookupTable(table) => table.get(rq, qp),
            PredictorModel::TrainedTree { tree, qp_range } => {
                if qp.value() < qp_range.0 || qp.value() > qp_range.1 {
                    return Err(QualityError::UnsupportedQp(qp.value()));
                }
                Ok(tree.predict(&features(rq, qp.value())).clamp(0.0, 100.0))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), QualityError> {
        let text = serde_json::to_string_pretty(&PredictorFile::from(self))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QualityPredictor, QualityError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PredictorFile::from(self)).expect("predictor serializes")
    }

    pub fn from_json(text: &str) -> Result<QualityPredictor, QualityError> {
        let file: PredictorFile = serde_json::from_str(text)?;
        file.into_predictor()
    }
}

impl Default for QualityPredictor {
    fn default() -> Self {
        QualityPredictor::lookup(LookupTable::default())
    }
}

impl QualityModel for QualityPredictor {
    fn predict_vq(&self, rq: RenderQuality, qp: QpLevel) -> Result<f64, QualityError> {
        QualityPredictor::predict_vq(self, rq, qp)
    }
}

/// Regression features: RQ as its ordinal, QP as its raw integer value.
pub fn features(rq: RenderQuality, qp: u8) -> [f64; 2] {
    [rq.ordinal() as f64, qp as f64]
}

/// On-disk predictor format.
///
/// ```json
/// { "variant": "lookup_table",
///   "entries": { "low/10": 24.43, "low/30": 22.76, ... } }
///
/// { "variant": "trained_tree", "qp_range": [10, 40],
///   "nodes": [ { "split": { "feature": "rq", "threshold": 1.5 } },
///              { "leaf": 24.43 }, ... ] }
/// ```
///
/// Tree nodes are listed in preorder: a split node is followed by its whole
/// left (`feature <= threshold`) subtree, then its right subtree.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum PredictorFile {
    LookupTable {
        entries: BTreeMap<String, f64>,
        #[serde(default)]
        allow_non_monotone: bool,
    },
    TrainedTree {
        qp_range: (u8, u8),
        nodes: Vec<crate::tree::PreorderNode>,
    },
}

impl From<&QualityPredictor> for PredictorFile {
    fn from(p: &QualityPredictor) -> Self {
        match &p.model {
            PredictorModel::LookupTable(table) => {
                let mut entries = BTreeMap::new();
                for rq in RenderQuality::ALL {
                    for (q, qp) in QpLevel::PRESETS.iter().enumerate() {
                        entries.insert(format!("{rq}/{qp}"), table.values[rq.ordinal()][q]);
                    }
                }
                PredictorFile::LookupTable {
                    entries,
                    allow_non_monotone: false,
                }
            }
            PredictorModel::TrainedTree { tree, qp_range } => PredictorFile::TrainedTree {
                qp_range: *qp_range,
                nodes: tree.to_preorder(),
            },
        }
    }
}

impl PredictorFile {
    fn into_predictor(self) -> Result<QualityPredictor, QualityError> {
        match self {
            PredictorFile::LookupTable {
                entries,
                allow_non_monotone,
            } => {
                let mut values = [[f64::NAN; 3]; 4];
                for (key, vmaf) in &entries {
                    let (rq, qp) = key.split_once('/').ok_or_else(|| QualityError::MalformedRow {
                        line: 0,
                        reason: format!("lookup key `{key}` is not `rq/qp`"),
                    })?;
                    let rq: RenderQuality = rq.parse()?;
                    let qp = QpLevel::parse_preset(qp)?;
                    let q = qp.preset_index().ok_or(QualityError::UnsupportedQp(qp.value()))?;
                    values[rq.ordinal()][q] = *vmaf;
                }
                if values.iter().flatten().any(|v| v.is_nan()) {
                    return Err(QualityError::MalformedRow {
                        line: 0,
                        reason: "lookup table needs all 12 rq/qp entries".into(),
                    });
                }
                Ok(QualityPredictor::lookup(LookupTable::new(values, allow_non_monotone)?))
            }
            PredictorFile::TrainedTree { qp_range, nodes } => {
                let tree = RegressionTree::from_preorder(&nodes)?;
                Ok(QualityPredictor::tree(tree, qp_range))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct DatasetRow {
    scene: String,
    location: String,
    rq: String,
    qp: String,
    vmaf: String,
}

/// Reads a `scene,location,rq,qp,vmaf` CSV file.
pub fn load_quality_dataset(path: impl AsRef<Path>) -> Result<Vec<QualitySample>, QualityError> {
    let file = std::fs::File::open(path)?;
    read_quality_dataset(file)
}

pub fn read_quality_dataset<R: std::io::Read>(reader: R) -> Result<Vec<QualitySample>, QualityError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut samples = Vec::new();
    for record in csv.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: DatasetRow = record
            .deserialize(None)
            .map_err(|e| QualityError::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
        let rq: RenderQuality = row
            .rq
            .parse()
            .map_err(|_| QualityError::UnknownRqAtLine { line })?;
        let qp: u8 = row.qp.parse().map_err(|_| QualityError::MalformedRow {
            line,
            reason: format!("qp `{}` is not an integer", row.qp),
        })?;
        let qp = QpLevel::new(qp).map_err(|e| QualityError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let vmaf: f64 = row.vmaf.parse().map_err(|_| QualityError::MalformedRow {
            line,
            reason: format!("vmaf `{}` is not a number", row.vmaf),
        })?;
        if !(0.0..=100.0).contains(&vmaf) {
            return Err(QualityError::VmafOutOfRangeAtLine { line, vmaf });
        }
        samples.push(QualitySample {
            rq,
            qp,
            vmaf,
            scene_id: row.scene,
            location_id: row.location,
        });
    }
    Ok(samples)
}

/// Holds out every sample captured at `test_location`. Relative order is
/// preserved inside both partitions.
pub fn split_by_location(
    samples: &[QualitySample],
    test_location: &str,
) -> (Vec<QualitySample>, Vec<QualitySample>) {
    samples
        .iter()
        .cloned()
        .partition(|s| s.location_id != test_location)
}

/// Default tree depth when the caller does not pick one.
pub const DEFAULT_MAX_DEPTH: usize = 6;

/// Fits a squared-error CART tree on `(rq ordinal, qp)` features.
pub fn train_tree_predictor(
    train: &[QualitySample],
    max_depth: usize,
) -> Result<QualityPredictor, QualityError> {
    if train.is_empty() {
        return Err(QualityError::EmptyTrainingSet);
    }
    let xs: Vec<[f64; 2]> = train.iter().map(|s| features(s.rq, s.qp.value())).collect();
    let ys: Vec<f64> = train.iter().map(|s| s.vmaf).collect();
    let tree = RegressionTree::fit(&xs, &ys, max_depth)?;
    let lo = train.iter().map(|s| s.qp.value()).min().expect("non-empty");
    let hi = train.iter().map(|s| s.qp.value()).max().expect("non-empty");
    Ok(QualityPredictor::tree(tree, (lo, hi)))
}

/// Root-mean-square prediction error over `test`.
pub fn rmse<M: QualityModel + ?Sized>(model: &M, test: &[QualitySample]) -> Result<f64, QualityError> {
    if test.is_empty() {
        return Err(QualityError::EmptyTestSet);
    }
    let mut sum = 0.0;
    for s in test {
        let err = model.predict_vq(s.rq, s.qp)? - s.vmaf;
        sum += err * err;
    }
    Ok((sum / test.len() as f64).sqrt())
}

/// The twelve default table points as samples, one per `(RQ, preset)`.
pub fn default_table_samples(location: &str) -> Vec<QualitySample> {
    let mut out = Vec::with_capacity(12);
    for rq in RenderQuality::ALL {
        for (q, qp) in QpLevel::PRESETS.iter().enumerate() {
            out.push(QualitySample {
                rq,
                qp: *qp,
                vmaf: LookupTable::DEFAULT_VALUES[rq.ordinal()][q],
                scene_id: "default".into(),
                location_id: location.into(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(rq: RenderQuality, qp: u8, vmaf: f64, loc: &str) -> QualitySample {
        QualitySample::new(rq, QpLevel::new(qp).unwrap(), vmaf, "s", loc).unwrap()
    }

    #[test]
    fn rq_order_and_neighbours() {
        use RenderQuality::*;
        assert!(Low < Medium && Medium < High && High < VeryHigh);
        assert_eq!(VeryHigh.next_up(), None);
        assert_eq!(Low.next_down(), None);
        assert_eq!(Medium.next_up(), Some(High));
        assert_eq!(Medium.next_down(), Some(Low));
        assert!(High.is_adjacent(VeryHigh));
        assert!(!Low.is_adjacent(High));
        assert!(!Low.is_adjacent(Low));
    }

    #[test]
    fn rq_parsing() {
        assert_eq!("Very_High".parse::<RenderQuality>().unwrap(), RenderQuality::VeryHigh);
        assert_eq!("MEDIUM".parse::<RenderQuality>().unwrap(), RenderQuality::Medium);
        assert!("ultra".parse::<RenderQuality>().is_err());
    }

    #[test]
    fn qp_bounds() {
        assert!(QpLevel::new(51).is_ok());
        assert!(QpLevel::new(52).is_err());
        assert_eq!(QpLevel::parse_preset("Poor").unwrap().value(), 40);
        assert_eq!(QpLevel::parse_preset("22").unwrap().value(), 22);
        assert!(QpLevel::parse_preset("60").is_err());
    }

    #[test]
    fn default_table_examples() {
        let p = QualityPredictor::default();
        assert_eq!(p.predict_vq(RenderQuality::VeryHigh, QpLevel::GOOD).unwrap(), 81.71);
        assert_eq!(p.predict_vq(RenderQuality::Low, QpLevel::POOR).unwrap(), 16.98);
        assert_eq!(p.predict_vq(RenderQuality::Medium, QpLevel::FAIR).unwrap(), 47.31);
        assert_eq!(p.vq_max(), 81.71);
        assert_eq!(p.vq_min(), 16.98);
    }

    #[test]
    fn lookup_refuses_intermediate_qp() {
        let p = QualityPredictor::default();
        let err = p.predict_vq(RenderQuality::High, QpLevel::new(20).unwrap()).unwrap_err();
        assert!(matches!(err, QualityError::UnsupportedQp(20)));
        assert!(err.to_string().contains("unsupported compression level"));
    }

    #[test]
    fn default_table_is_strictly_monotone() {
        let v = LookupTable::DEFAULT_VALUES;
        for pair in v.windows(2) {
            assert!(pair[1].iter().zip(&pair[0]).all(|(hi, lo)| hi > lo));
        }
        for row in v {
            assert!(row[0] > row[1] && row[1] > row[2]);
        }
        assert!(LookupTable::new(v, false).is_ok());
    }

    #[test]
    fn custom_table_validation() {
        let mut v = LookupTable::DEFAULT_VALUES;
        v[2][0] = 90.0; // High/Good above VeryHigh/Good
        assert!(matches!(
            LookupTable::new(v, false),
            Err(QualityError::NonMonotoneTable(_))
        ));
        assert!(LookupTable::new(v, true).is_ok());
        v[0][0] = 101.0;
        assert!(LookupTable::new(v, true).is_err());
    }

    #[test]
    fn dataset_single_row() {
        let data = "scene,location,rq,qp,vmaf\ntown,loc1,very_high,10,91.1\n";
        let rows = read_quality_dataset(data.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rq, RenderQuality::VeryHigh);
        assert_eq!(rows[0].qp.value(), 10);
        assert_eq!(rows[0].vmaf, 91.1);
        assert_eq!(rows[0].location_id, "loc1");
    }

    #[test]
    fn dataset_header_only() {
        let rows = read_quality_dataset("scene,location,rq,qp,vmaf\n".as_bytes()).unwrap();
        assert!(rows.is_empty());
    }

    #[test]
    fn dataset_unknown_rq_names_line() {
        let data = "scene,location,rq,qp,vmaf\ntown,loc1,ultra,10,50\n";
        let err = read_quality_dataset(data.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "unknown RQ at line 2");
    }

    #[test]
    fn dataset_bad_vmaf_and_malformed() {
        let data = "scene,location,rq,qp,vmaf\na,b,low,10,50\na,b,low,10,150\n";
        let err = read_quality_dataset(data.as_bytes()).unwrap_err();
        assert!(matches!(err, QualityError::VmafOutOfRangeAtLine { line: 3, .. }));
        let data = "scene,location,rq,qp,vmaf\na,b,low,ten,50\n";
        let err = read_quality_dataset(data.as_bytes()).unwrap_err();
        assert!(matches!(err, QualityError::MalformedRow { line: 2, .. }));
        let data = "scene,location,rq,qp,vmaf\na,b,low\n";
        assert!(read_quality_dataset(data.as_bytes()).is_err());
    }

    #[test]
    fn split_counts() {
        let mut samples = Vec::new();
        for l in 1..=5 {
            samples.extend(default_table_samples(&format!("loc{l}")));
        }
        let (train, test) = split_by_location(&samples, "loc5");
        assert_eq!((train.len(), test.len()), (48, 12));
        let (train, test) = split_by_location(&samples, "nowhere");
        assert_eq!((train.len(), test.len()), (60, 0));
        let only = default_table_samples("x");
        let (train, test) = split_by_location(&only, "x");
        assert_eq!((train.len(), test.len()), (0, 12));
    }

    #[test]
    fn tree_memorizes_default_table() {
        let pts = default_table_samples("loc");
        let p = train_tree_predictor(&pts, 5).unwrap();
        assert!(rmse(&p, &pts).unwrap() < 1e-9);
        assert_eq!(p.vq_max(), 81.71);
        assert_eq!(p.vq_min(), 16.98);
    }

    #[test]
    fn tree_single_sample_is_constant() {
        let p = train_tree_predictor(&[sample(RenderQuality::Low, 40, 16.98, "l")], 3).unwrap();
        assert_eq!(p.predict_vq(RenderQuality::Low, QpLevel::POOR).unwrap(), 16.98);
    }

    #[test]
    fn tree_duplicate_features_average() {
        let train = [
            sample(RenderQuality::High, 30, 40.0, "l"),
            sample(RenderQuality::High, 30, 60.0, "l"),
        ];
        let p = train_tree_predictor(&train, 4).unwrap();
        assert_eq!(p.predict_vq(RenderQuality::High, QpLevel::FAIR).unwrap(), 50.0);
        assert!((rmse(&p, &train).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tree_interpolates_between_presets() {
        let p = train_tree_predictor(&default_table_samples("l"), 6).unwrap();
        let vq = p.predict_vq(RenderQuality::High, QpLevel::new(20).unwrap()).unwrap();
        assert!((0.0..=100.0).contains(&vq));
        assert!(p.predict_vq(RenderQuality::High, QpLevel::new(45).unwrap()).is_err());
    }

    #[test]
    fn training_errors() {
        assert!(matches!(train_tree_predictor(&[], 3), Err(QualityError::EmptyTrainingSet)));
        let s = [sample(RenderQuality::Low, 40, 10.0, "l")];
        assert!(train_tree_predictor(&s, 0).is_err());
        assert!(matches!(
            rmse(&QualityPredictor::default(), &[]),
            Err(QualityError::EmptyTestSet)
        ));
    }

    struct Fixed(Vec<f64>, std::cell::Cell<usize>);

    impl QualityModel for Fixed {
        fn predict_vq(&self, _: RenderQuality, _: QpLevel) -> Result<f64, QualityError> {
            let i = self.1.get();
            self.1.set(i + 1);
            Ok(self.0[i])
        }
    }

    #[test]
    fn rmse_hand_values() {
        let truths = [
            sample(RenderQuality::Low, 10, 1.0, "l"),
            sample(RenderQuality::Low, 10, 4.0, "l"),
        ];
        let m = Fixed(vec![1.0, 2.0], Default::default());
        assert!((rmse(&m, &truths).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);

        let truths = [
            sample(RenderQuality::Low, 10, 40.0, "l"),
            sample(RenderQuality::Low, 10, 60.0, "l"),
        ];
        let m = Fixed(vec![50.0, 50.0], Default::default());
        assert_eq!(rmse(&m, &truths).unwrap(), 10.0);

        let p = QualityPredictor::default();
        assert_eq!(rmse(&p, &default_table_samples("l")).unwrap(), 0.0);
    }

    #[test]
    fn predictor_file_round_trip() {
        let p = QualityPredictor::default();
        assert_eq!(QualityPredictor::from_json(&p.to_json()).unwrap(), p);
        let t = train_tree_predictor(&default_table_samples("l"), 6).unwrap();
        assert_eq!(QualityPredictor::from_json(&t.to_json()).unwrap(), t);
    }

    fn arb_sample() -> impl Strategy<Value = QualitySample> {
        (0usize..4, 0u8..=51, -20.0f64..120.0).prop_map(|(r, qp, v)| QualitySample {
            rq: RenderQuality::from_ordinal(r).unwrap(),
            qp: QpLevel::new(qp).unwrap(),
            vmaf: v.clamp(0.0, 100.0),
            scene_id: "s".into(),
            location_id: "l".into(),
        })
    }

    proptest! {
        #[test]
        fn trained_predictions_stay_in_range(
            train in prop::collection::vec(arb_sample(), 1..40),
            depth in 1usize..8,
            r in 0usize..4,
            qp in 0u8..=51,
        ) {
            let p = train_tree_predictor(&train, depth).unwrap();
            let rq = RenderQuality::from_ordinal(r).unwrap();
            if let Ok(v) = p.predict_vq(rq, QpLevel::new(qp).unwrap()) {
                prop_assert!((0.0..=100.0).contains(&v));
            }
            prop_assert!((0.0..=100.0).contains(&p.vq_min()));
            prop_assert!((0.0..=100.0).contains(&p.vq_max()));
        }

        #[test]
        fn split_is_an_ordered_partition(
            locs in prop::collection::vec(0u8..4, 0..30),
            pick in 0u8..5,
        ) {
            let samples: Vec<QualitySample> = locs
                .iter()
                .enumerate()
                .map(|(i, l)| sample(RenderQuality::Low, 10, i as f64, &format!("loc{l}")))
                .collect();
            let target = format!("loc{pick}");
            let (train, test) = split_by_location(&samples, &target);
            prop_assert_eq!(train.len() + test.len(), samples.len());
            prop_assert!(test.iter().all(|s| s.location_id == target));
            prop_assert!(train.iter().all(|s| s.location_id != target));
            // vmaf carries the original index, so order preservation is visible
            prop_assert!(train.windows(2).all(|w| w[0].vmaf < w[1].vmaf));
            prop_assert!(test.windows(2).all(|w| w[0].vmaf < w[1].vmaf));
        }
    }
}
