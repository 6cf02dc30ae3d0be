//! Python bindings: dataset generation, schedules, metrics, perturbations,
//! training and evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fairseg::datagen::{self, split_dataset, GenConfig};
use fairseg::dataio::{self, DatasetRecord, ImageTensor, MaskTensor};
use fairseg::evaluate;
use fairseg::homotopy::{self, ScheduleConfig, ScheduleKind};
use fairseg::losses::FairnessVariant;
use fairseg::metrics;
use fairseg::model::gradcheck::{gradcheck as run_gradcheck, GradcheckOptions};
use fairseg::model::{init_params, ModelParams};
use fairseg::perturb::{self, PerturbKind, PerturbSpec};
use fairseg::trainer::{self, TrainConfig, TrainMode};

fn to_py(err: fairseg::Error) -> PyErr {
    match err {
        fairseg::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = fairseg::Error>>(token: &str) -> PyResult<T> {
    token.parse().map_err(to_py)
}

type Weights = (f64, f64, f64);
type SweepRow = (String, f64, f64, f64, f64);

fn load_records(dir: &str) -> PyResult<Vec<DatasetRecord>> {
    let dir = PathBuf::from(dir);
    let classes = datagen::read_gen_config(&dir)
        .map_err(to_py)?
        .map_or(fairseg::DEFAULT_NUM_CLASSES, |c| c.class_count);
    dataio::read_dataset_dir(&dir, classes).map_err(to_py)
}

fn subset(
    records: Vec<DatasetRecord>,
    which: &str,
    fraction: f64,
    seed: u64,
) -> PyResult<Vec<DatasetRecord>> {
    match which {
        "all" => Ok(records),
        "train" | "test" => {
            let (train, test) = split_dataset(&records, fraction, seed).map_err(to_py)?;
            Ok(if which == "train" { train } else { test })
        }
        other => Err(PyValueError::new_err(format!(
            "unknown subset `{other}` (expected train, test or all)"
        ))),
    }
}

/// Trained or freshly initialized network weights.
#[pyclass(name = "Model", module = "fairseg_py")]
struct PyModel {
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (seed, num_classes = fairseg::DEFAULT_NUM_CLASSES))]
    fn init(seed: u64, num_classes: usize) -> Self {
        Self {
            params: init_params(seed, num_classes),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (params, _) = dataio::load_checkpoint(path.as_ref()).map_err(to_py)?;
        Ok(Self { params })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let meta = dataio::RunMeta {
            mode: "python".into(),
            schedule: "none".into(),
            epochs: 0,
            seed: 0,
        };
        dataio::save_checkpoint(&self.params, &meta, path.as_ref()).map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    /// Per-pixel argmax labels of an HxWx3 row-major image in [0, 1].
    fn predict(&self, image: Vec<f64>, height: usize, width: usize) -> PyResult<Vec<u8>> {
        let img = ImageTensor::new(height, width, image).map_err(to_py)?;
        Ok(evaluate::predict(&self.params, &img).labels().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(num_classes={}, params={})",
            self.params.num_classes(),
            self.params.len()
        )
    }
}

/// Writes a synthetic dataset to `out_dir`; returns the sample count.
#[pyfunction]
#[pyo3(signature = (out_dir, count = 200, seed = 0, size = 64, bias_contrast = 0.5, bias_noise = 0.05))]
fn generate_dataset(
    out_dir: &str,
    count: usize,
    seed: u64,
    size: usize,
    bias_contrast: f64,
    bias_noise: f64,
) -> PyResult<usize> {
    let cfg = GenConfig {
        count,
        seed,
        size,
        bias_contrast,
        bias_noise_sigma: bias_noise,
        ..GenConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    std::fs::create_dir_all(out_dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(datagen::write_dataset(&cfg, out_dir.as_ref())
        .map_err(to_py)?
        .len())
}

#[pyfunction]
fn weights_at(kind: &str, epochs: usize, t: usize) -> PyResult<Weights> {
    let w = homotopy::weights_at(
        &ScheduleConfig::new(parse::<ScheduleKind>(kind)?, epochs),
        t,
    )
    .map_err(to_py)?;
    Ok((w.alpha, w.beta, w.gamma))
}

#[pyfunction]
fn schedule_table(kind: &str, epochs: usize) -> PyResult<Vec<Weights>> {
    let table =
        homotopy::schedule_table(&ScheduleConfig::new(parse::<ScheduleKind>(kind)?, epochs))
            .map_err(to_py)?;
    Ok(table.iter().map(|w| (w.alpha, w.beta, w.gamma)).collect())
}

/// mIoU and Dice of two label maps, plus per-class values (NaN for absent classes).
#[pyfunction]
#[pyo3(signature = (pred, gt, height, width, num_classes = fairseg::DEFAULT_NUM_CLASSES))]
fn miou<'py>(
    py: Python<'py>,
    pred: Vec<u8>,
    gt: Vec<u8>,
    height: usize,
    width: usize,
    num_classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let pred = MaskTensor::new(height, width, num_classes, pred).map_err(to_py)?;
    let gt = MaskTensor::new(height, width, num_classes, gt).map_err(to_py)?;
    let r = metrics::miou(&pred, &gt).map_err(to_py)?;
    let nan = |v: &[Option<f64>]| v.iter().map(|x| x.unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let d = PyDict::new(py);
    d.set_item("miou", r.miou)?;
    d.set_item("dice", r.dice)?;
    d.set_item("per_class_iou", nan(&r.per_class_iou))?;
    d.set_item("per_class_dice", nan(&r.per_class_dice))?;
    Ok(d)
}

#[pyfunction]
fn fairness_variance(group_scores: Vec<f64>) -> PyResult<f64> {
    metrics::fairness_variance(&group_scores).map_err(to_py)
}

/// Perturbs an HxWx3 row-major image; returns the new pixel values.
#[pyfunction]
fn apply_perturbation(
    image: Vec<f64>,
    height: usize,
    width: usize,
    kind: &str,
    severity: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let img = ImageTensor::new(height, width, image).map_err(to_py)?;
    let spec = PerturbSpec::new(parse::<PerturbKind>(kind)?, severity, seed).map_err(to_py)?;
    Ok(perturb::apply_perturbation(&img, &spec)
        .map_err(to_py)?
        .data()
        .to_vec())
}

/// Trains on the training split of a dataset directory; returns the model and
/// one dict per epoch.
#[pyfunction]
#[pyo3(signature = (
    data_dir, mode = "multi", schedule = "linear", fairness = "variance", epochs = 30,
    batch = 8, lr = 1e-3, sigma_r = 0.1, seed = 0, train_fraction = 0.8, split_seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    data_dir: &str,
    mode: &str,
    schedule: &str,
    fairness: &str,
    epochs: usize,
    batch: usize,
    lr: f64,
    sigma_r: f64,
    seed: u64,
    train_fraction: f64,
    split_seed: u64,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let mut cfg = TrainConfig::new(
        parse::<TrainMode>(mode)?,
        parse::<ScheduleKind>(schedule)?,
        epochs,
        seed,
    );
    cfg.fairness_variant = parse::<FairnessVariant>(fairness)?;
    cfg.batch_size = batch;
    cfg.adam.learning_rate = lr;
    cfg.sigma_r = sigma_r;
    let records = subset(load_records(data_dir)?, "train", train_fraction, split_seed)?;
    cfg.num_classes = records[0].mask.num_classes();
    let outcome = py
        .detach(|| trainer::train(&cfg, &records))
        .map_err(to_py)?;
    let log = outcome
        .log
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("weights", (r.alpha, r.beta, r.gamma))?;
            d.set_item("l_acc", r.l_acc)?;
            d.set_item("l_rob", r.l_rob)?;
            d.set_item("l_fair", r.l_fair)?;
            d.set_item("l_total", r.l_total)?;
            d.set_item("train_miou", r.train_miou)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((
        PyModel {
            params: outcome.params,
        },
        log,
    ))
}

/// Clean row plus one row per (kind, severity): `(kind, severity, miou, dice, degradation)`.
#[pyfunction]
#[pyo3(signature = (
    model, data_dir, kinds = None, severities = vec![0.1, 0.3, 0.5], seed = 0,
    subset = "test", train_fraction = 0.8, split_seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn robustness_sweep(
    py: Python<'_>,
    model: &PyModel,
    data_dir: &str,
    kinds: Option<Vec<String>>,
    severities: Vec<f64>,
    seed: u64,
    subset: &str,
    train_fraction: f64,
    split_seed: u64,
) -> PyResult<Vec<SweepRow>> {
    let kinds = match kinds {
        None => PerturbKind::ALL.to_vec(),
        Some(k) => k
            .iter()
            .map(|t| parse::<PerturbKind>(t))
            .collect::<PyResult<_>>()?,
    };
    let records = self::subset(load_records(data_dir)?, subset, train_fraction, split_seed)?;
    let rows = py
        .detach(|| evaluate::robustness_sweep(&model.params, &records, &kinds, &severities, seed))
        .map_err(to_py)?;
    Ok(rows
        .iter()
        .map(|r| {
            (
                r.kind_token().to_owned(),
                r.severity,
                r.miou,
                r.dice,
                r.degradation,
            )
        })
        .collect())
}

/// Per-attribute `(attribute, miou_when_0, miou_when_1, gap, variance, count_0, count_1)`.
#[pyfunction]
#[pyo3(signature = (model, data_dir, attributes, subset = "test", train_fraction = 0.8, split_seed = 0))]
#[allow(clippy::type_complexity)]
fn fairness_report(
    model: &PyModel,
    data_dir: &str,
    attributes: Vec<String>,
    subset: &str,
    train_fraction: f64,
    split_seed: u64,
) -> PyResult<
    Vec<(
        String,
        Option<f64>,
        Option<f64>,
        Option<f64>,
        Option<f64>,
        usize,
        usize,
    )>,
> {
    let records = self::subset(load_records(data_dir)?, subset, train_fraction, split_seed)?;
    let reports = evaluate::fairness_report(&model.params, &records, &attributes).map_err(to_py)?;
    Ok(reports
        .into_iter()
        .map(|r| {
            let var = r.variance();
            (
                r.attribute,
                r.miou_when_0,
                r.miou_when_1,
                r.gap,
                var,
                r.count_0,
                r.count_1,
            )
        })
        .collect())
}

/// Finite-difference gradient check; returns `(passed, max_rel_error, worst_param)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, fairness = "variance", corrupt = false))]
fn gradcheck(seed: u64, fairness: &str, corrupt: bool) -> PyResult<(bool, f64, String)> {
    let report = run_gradcheck(&GradcheckOptions {
        seed,
        fairness: parse::<FairnessVariant>(fairness)?,
        corrupt_conv1: corrupt,
        ..GradcheckOptions::default()
    })
    .map_err(to_py)?;
    Ok((report.passed, report.max_rel_error, report.worst_param))
}

#[pymodule]
fn fairseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(weights_at, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_table, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(fairness_variance, m)?)?;
    m.add_function(wrap_pyfunction!(apply_perturbation, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(robustness_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fairness_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
