//! Python bindings. Tensors cross the boundary as `(shape, flat data)`
//! pairs in NCHW order; boxes as `(x_min, y_min, x_max, y_max, ...)` tuples.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ipgnet::data_synth;
use ipgnet::detector::{self, BBox, DetectionBox, GtBox};
use ipgnet::gradcheck as gc;
use ipgnet::harness::{self, Checkpoint, Config, Dataset, RunOptions, EXPERIMENTS};
use ipgnet::nn::Ctx;
use ipgnet::tensor::Shape;
use ipgnet::{Error, IpgNet, Mode, ParamStore, Tensor};

type Flat = (Vec<usize>, Vec<f64>);
type DetTuple = (f64, f64, f64, f64, usize, f64);
type GtTuple = (f64, f64, f64, f64, usize);

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_tensor(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Tensor> {
    let dims: [usize; 4] = shape
        .try_into()
        .map_err(|s: Vec<usize>| PyValueError::new_err(format!("expected a 4-d NCHW shape, got {} dims", s.len())))?;
    Tensor::from_vec(Shape(dims), data).map_err(err)
}

fn flat(t: &Tensor) -> Flat {
    (t.shape().0.to_vec(), t.data().to_vec())
}

fn config_from(json: Option<&str>) -> PyResult<Config> {
    Config::from_json(json.unwrap_or("{}")).map_err(err)
}

fn det_tuple(d: &DetectionBox) -> DetTuple {
    let b = d.bounds;
    (b.x_min, b.y_min, b.x_max, b.y_max, d.class_idx, d.score)
}

fn ap_dict<'py>(py: Python<'py>, r: &detector::ApReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("ap", r.ap)?;
    d.set_item("ap_small", r.ap_small)?;
    d.set_item("ap_medium", r.ap_medium)?;
    d.set_item("ap_large", r.ap_large)?;
    d.set_item("per_class", r.per_class.clone())?;
    Ok(d)
}

/// An IPG network (or the plain backbone network when `fusion_stages` is
/// empty) with its own parameters.
#[pyclass]
struct Network {
    store: ParamStore,
    net: IpgNet,
    config: Config,
}

#[pymethods]
impl Network {
    /// `config_json` is a full run config; only its `model` section is used.
    #[new]
    #[pyo3(signature = (config_json=None, seed=0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let config = config_from(config_json)?;
        let mut store = ParamStore::new(seed);
        let net = IpgNet::new(&config.model, &mut store).map_err(err)?;
        Ok(Network { store, net, config })
    }

    fn param_count(&self) -> usize {
        self.store.count_trainable("")
    }

    fn config_json(&self) -> String {
        self.config.to_json()
    }

    /// Stage outputs, FPN outputs and per-level head outputs for an image
    /// batch in eval mode.
    fn forward<'py>(&mut self, py: Python<'py>, shape: Vec<usize>, data: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let image = to_tensor(shape, data)?;
        let pyramid = ipgnet::build_pyramid(&image, self.config.model.pyramid_levels).map_err(err)?;
        let mut ctx = Ctx::new(&mut self.store, Mode::Eval);
        let out = self.net.forward(&mut ctx, &pyramid).map_err(err)?;
        let grab = |vs: &[ipgnet::Var]| vs.iter().map(|v| flat(ctx.value(*v))).collect::<Vec<_>>();
        let cls: Vec<_> = out.head.iter().map(|p| p.0).collect();
        let bx: Vec<_> = out.head.iter().map(|p| p.1).collect();
        let d = PyDict::new(py);
        d.set_item("stages", grab(&out.stages))?;
        d.set_item("fpn", grab(&out.fpn))?;
        d.set_item("cls", grab(&cls))?;
        d.set_item("box", grab(&bx))?;
        Ok(d)
    }
}

/// A training run on the synthetic dataset.
#[pyclass]
struct Trainer {
    inner: harness::Trainer,
    data: Dataset,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let config = config_from(config_json)?;
        let data = Dataset::synth(&config.data).map_err(err)?;
        let inner = harness::Trainer::new(&config).map_err(err)?;
        Ok(Trainer { inner, data })
    }

    /// Restores a run from a checkpoint written with the same model config.
    #[staticmethod]
    #[pyo3(signature = (path, config_json=None))]
    fn load(path: PathBuf, config_json: Option<&str>) -> PyResult<Self> {
        let config = config_from(config_json)?;
        let data = Dataset::synth(&config.data).map_err(err)?;
        let ckpt = Checkpoint::load(&path).map_err(err)?;
        let inner = harness::Trainer::from_checkpoint(&config, &ckpt).map_err(err)?;
        Ok(Trainer { inner, data })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iter
    }

    /// One pass over the training split; returns `(cls_loss, box_loss, lr)`.
    fn train_epoch(&mut self) -> PyResult<(f64, f64, f64)> {
        self.inner.train_epoch(&self.data.train).map_err(err)
    }

    /// Trains to the end of the schedule, writing metrics and checkpoints
    /// to `out_dir` when given. Returns the final validation AP.
    #[pyo3(signature = (out_dir=None))]
    fn run<'py>(&mut self, py: Python<'py>, out_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
        let opts = RunOptions {
            checkpoints: out_dir.is_some(),
            out_dir,
            ..RunOptions::default()
        };
        let res = self.inner.run(&self.data, &opts).map_err(err)?;
        let r = match res.final_report {
            Some(r) => r,
            None => self.inner.evaluate(&self.data.val).map_err(err)?,
        };
        ap_dict(py, &r)
    }

    fn evaluate<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.evaluate(&self.data.val).map_err(err)?;
        ap_dict(py, &r)
    }

    /// Detections for a normalised image batch, one list per image.
    fn detect(&mut self, shape: Vec<usize>, data: Vec<f64>) -> PyResult<Vec<Vec<DetTuple>>> {
        let images = to_tensor(shape, data)?;
        let dets = self.inner.detect(&images).map_err(err)?;
        Ok(dets.iter().map(|d| d.iter().map(det_tuple).collect()).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.checkpoint().save(&path).map_err(err)
    }
}

/// Synthetic scene: `(shape, data, boxes)` with boxes as
/// `(x_min, y_min, x_max, y_max, class)`.
#[pyfunction]
fn generate_scene(seed: u64) -> (Vec<usize>, Vec<f64>, Vec<GtTuple>) {
    let s = data_synth::generate_scene(seed);
    let (shape, data) = flat(&s.image);
    let boxes = s
        .boxes
        .iter()
        .map(|g| (g.bounds.x_min, g.bounds.y_min, g.bounds.x_max, g.bounds.y_max, g.class_idx))
        .collect();
    (shape, data, boxes)
}

#[pyfunction]
fn build_pyramid(shape: Vec<usize>, data: Vec<f64>, levels: usize) -> PyResult<Vec<Flat>> {
    let p = ipgnet::build_pyramid(&to_tensor(shape, data)?, levels).map_err(err)?;
    Ok(p.levels().iter().map(flat).collect())
}

#[pyfunction]
fn channel_interp(shape: Vec<usize>, data: Vec<f64>, out_channels: usize) -> PyResult<Flat> {
    let t = ipgnet::tensor::channel_interp(&to_tensor(shape, data)?, out_channels).map_err(err)?;
    Ok(flat(&t))
}

/// Learning rate of the schedule in `config_json` (defaults when omitted).
#[pyfunction]
#[pyo3(signature = (epoch, iteration, config_json=None, full_scale=false))]
fn lr_at(epoch: usize, iteration: usize, config_json: Option<&str>, full_scale: bool) -> PyResult<f64> {
    let schedule = if full_scale {
        harness::TrainSchedule::full_scale()
    } else {
        config_from(config_json)?.schedule
    };
    Ok(harness::lr_at(&schedule, epoch, iteration))
}

/// Greedy NMS over `(x_min, y_min, x_max, y_max)` boxes; returns kept
/// indices, highest score first.
#[pyfunction]
#[pyo3(signature = (boxes, scores, iou=0.5))]
fn nms(boxes: Vec<(f64, f64, f64, f64)>, scores: Vec<f64>, iou: f64) -> PyResult<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(PyValueError::new_err("boxes and scores differ in length"));
    }
    let b: Vec<BBox> = boxes.iter().map(|&(a, b, c, d)| BBox::new(a, b, c, d)).collect();
    Ok(detector::nms(&b, &scores, iou))
}

/// AP of per-image detections against per-image ground truth.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, n_classes, iou=detector::AP_IOU))]
fn evaluate_ap<'py>(
    py: Python<'py>,
    detections: Vec<Vec<DetTuple>>,
    ground_truth: Vec<Vec<GtTuple>>,
    n_classes: usize,
    iou: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let dets: Vec<Vec<DetectionBox>> = detections
        .iter()
        .map(|img| {
            img.iter()
                .map(|&(a, b, c, d, class_idx, score)| DetectionBox { bounds: BBox::new(a, b, c, d), class_idx, score })
                .collect()
        })
        .collect();
    let gts: Vec<Vec<GtBox>> = ground_truth
        .iter()
        .map(|img| {
            img.iter()
                .map(|&(a, b, c, d, class_idx)| GtBox { bounds: BBox::new(a, b, c, d), class_idx })
                .collect()
        })
        .collect();
    ap_dict(py, &detector::evaluate_ap(&dets, &gts, n_classes, iou))
}

/// Largest relative error of one named finite-difference check.
#[pyfunction]
#[pyo3(signature = (name, seed=0))]
fn gradcheck(name: &str, seed: u64) -> PyResult<f64> {
    Ok(gc::run_check(name, seed).map_err(err)?.max_rel_err())
}

#[pyfunction]
fn gradcheck_names() -> Vec<&'static str> {
    gc::CHECKS.to_vec()
}

#[pyfunction]
fn experiment_names() -> Vec<&'static str> {
    EXPERIMENTS.to_vec()
}

#[pymodule]
fn ipgnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(build_pyramid, m)?)?;
    m.add_function(wrap_pyfunction!(channel_interp, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_ap, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_names, m)?)?;
    m.add_function(wrap_pyfunction!(experiment_names, m)?)?;
    m.add("GRADCHECK_TOL", gc::GRADCHECK_TOL)?;
    Ok(())
}
