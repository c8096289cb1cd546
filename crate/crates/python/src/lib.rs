//! Python bindings: specs, models, synthetic data, beliefs, PCK and training.

use pyo3::prelude::*;

fn err(e: cpm_core::CpmError) -> PyErr {
    pyo3::exceptions::PyValueError::new_err(e.to_string())
}

type Points = Vec<Option<(f32, f32)>>;

fn to_keypoints(points: &Points) -> cpm_core::beliefs::Keypoints {
    cpm_core::beliefs::Keypoints::new(points.iter().map(|p| p.map(|(x, y)| [x, y])).collect())
}

fn from_keypoints(k: &cpm_core::beliefs::Keypoints) -> Points {
    k.points.iter().map(|p| p.map(|[x, y]| (x, y))).collect()
}

#[pymodule]
mod cpm {
    use std::path::PathBuf;

    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    use cpm_core::architecture::{build_cpm, design, receptive_field, CpmSpec, DesignOptions, Model as CoreModel, Init};
    use cpm_core::beliefs::{extract_keypoints as core_extract, ideal_beliefs as core_ideal, BeliefMode, BeliefStack};
    use cpm_core::evaluation::pck as core_pck;
    use cpm_core::synthdata::{sample_pose, DataConfig, Dataset, RenderConfig, Skeleton};
    use cpm_core::tensor::Tensor;
    use cpm_core::training::{self, Scheme, TrainConfig};

    use super::{err, from_keypoints, to_keypoints, Points};

    #[pyclass(from_py_object)]
    #[derive(Clone)]
    struct Spec {
        inner: CpmSpec,
    }

    #[pymethods]
    impl Spec {
        /// Toy geometry: 64×64 input, five parts.
        #[staticmethod]
        #[pyo3(signature = (stages = 3))]
        fn toy(stages: usize) -> PyResult<Self> {
            let opts = DesignOptions { init: Init::HeUniform, ..DesignOptions::toy(stages) };
            Ok(Self { inner: design(&opts).map_err(err)? })
        }

        #[staticmethod]
        fn from_toml(text: &str) -> PyResult<Self> {
            Ok(Self { inner: CpmSpec::from_toml_str(text).map_err(err)? })
        }

        fn to_toml(&self) -> PyResult<String> {
            self.inner.to_toml_string().map_err(err)
        }

        fn fingerprint(&self) -> String {
            self.inner.fingerprint()
        }

        /// Receptive field of the final output on the image, in pixels.
        fn receptive_field(&self) -> usize {
            receptive_field(&self.inner).receptive_field
        }

        fn stage_receptive_fields(&self) -> Vec<usize> {
            receptive_field(&self.inner).stages.iter().map(|s| s.image_rf).collect()
        }

        #[getter]
        fn stages(&self) -> usize {
            self.inner.stages
        }

        #[getter]
        fn parts(&self) -> usize {
            self.inner.parts
        }

        #[getter]
        fn input_size(&self) -> (usize, usize) {
            (self.inner.input_size[0], self.inner.input_size[1])
        }

        #[getter]
        fn heatmap_size(&self) -> (usize, usize) {
            self.inner.heatmap_size()
        }

        #[getter]
        fn heatmap_stride(&self) -> usize {
            self.inner.heatmap_stride
        }

        fn __repr__(&self) -> String {
            format!("Spec(stages={}, parts={}, fingerprint={})", self.inner.stages, self.inner.parts, self.inner.fingerprint())
        }
    }

    #[pyclass]
    struct Model {
        inner: CoreModel<f32>,
    }

    #[pymethods]
    impl Model {
        #[new]
        #[pyo3(signature = (spec, seed = 0))]
        fn new(spec: &Spec, seed: u64) -> PyResult<Self> {
            Ok(Self { inner: build_cpm(&spec.inner, seed).map_err(err)? })
        }

        #[staticmethod]
        fn load(spec: &Spec, path: PathBuf) -> PyResult<Self> {
            let (inner, _) = CoreModel::load(&spec.inner, &path).map_err(err)?;
            Ok(Self { inner })
        }

        fn save(&self, path: PathBuf) -> PyResult<()> {
            self.inner.save(&path, serde_json::Value::Null, &[]).map_err(err)
        }

        fn parameter_count(&self) -> usize {
            self.inner.parameter_count()
        }

        #[getter]
        fn spec(&self) -> Spec {
            Spec { inner: self.inner.spec().clone() }
        }

        /// Beliefs of every stage for one image given as a flat row-major
        /// `[C, H, W]` list. Returns `(shape, data)` per stage, shape `[P+1, h, w]`.
        #[pyo3(signature = (image, center = None))]
        fn forward(&self, image: Vec<f32>, center: Option<Vec<f32>>) -> PyResult<Vec<(Vec<usize>, Vec<f32>)>> {
            let spec = self.inner.spec();
            let [h, w] = spec.input_size;
            let image = Tensor::new(vec![1, spec.image_channels, h, w], image).map_err(err)?;
            let center = match (spec.use_center_map, center) {
                (true, Some(c)) => {
                    let (gh, gw) = spec.heatmap_size();
                    Some(Tensor::new(vec![1, 1, gh, gw], c).map_err(err)?)
                }
                (true, None) => return Err(PyValueError::new_err("this spec needs a center map")),
                (false, _) => None,
            };
            let stages = self.inner.forward(&image, center.as_ref()).map_err(err)?;
            Ok(stages.into_iter().map(|t| (t.shape()[1..].to_vec(), t.into_data())).collect())
        }
    }

    /// One synthetic sample as a dict with `image` (flat), `shape`,
    /// `keypoints`, `center` and `scale`.
    #[pyfunction]
    #[pyo3(signature = (seed, canvas = (64, 64)))]
    fn sample<'py>(py: Python<'py>, seed: u64, canvas: (usize, usize)) -> PyResult<Bound<'py, PyDict>> {
        let s = sample_pose(seed, &Skeleton::toy(), canvas, &RenderConfig::default());
        let d = PyDict::new(py);
        d.set_item("shape", s.image.shape().to_vec())?;
        d.set_item("image", s.image.data().to_vec())?;
        d.set_item("keypoints", from_keypoints(&s.keypoints))?;
        d.set_item("others", s.others.iter().map(from_keypoints).collect::<Vec<_>>())?;
        d.set_item("center", (s.center[0], s.center[1]))?;
        d.set_item("scale", s.scale)?;
        Ok(d)
    }

    /// Ideal belief maps for `people`; the first person is the primary one.
    /// Returns `(shape, data)` with the background channel last.
    #[pyfunction]
    #[pyo3(signature = (people, grid, sigma, stride, primary_only = false))]
    fn ideal_beliefs(people: Vec<Points>, grid: (usize, usize), sigma: f32, stride: usize, primary_only: bool) -> (Vec<usize>, Vec<f32>) {
        let people: Vec<_> = people.iter().map(to_keypoints).collect();
        let mode = if primary_only { BeliefMode::PrimaryOnly } else { BeliefMode::AllPeople };
        let b = core_ideal(&people, grid, sigma, stride, mode);
        (vec![b.channels, b.height, b.width], b.data)
    }

    /// Argmax of each part channel of a flat `[P+1, h, w]` stack.
    #[pyfunction]
    fn extract_keypoints(shape: (usize, usize, usize), data: Vec<f32>, stride: usize) -> PyResult<Points> {
        let (c, h, w) = shape;
        if data.len() != c * h * w {
            return Err(PyValueError::new_err(format!("{} values for shape {:?}", data.len(), shape)));
        }
        let stack = BeliefStack { channels: c, height: h, width: w, data };
        Ok(from_keypoints(&core_extract(&stack, stride)))
    }

    /// PCK of one prediction as `(radius, overall)` pairs.
    #[pyfunction]
    #[pyo3(signature = (pred, gt, normalizer, radii = vec![0.05, 0.1, 0.15, 0.2]))]
    fn pck(pred: Points, gt: Points, normalizer: f32, radii: Vec<f64>) -> Vec<(f64, f64)> {
        let narrow: Vec<f32> = radii.iter().map(|&r| r as f32).collect();
        let r = core_pck(&to_keypoints(&pred), &to_keypoints(&gt), &narrow, normalizer);
        radii.into_iter().zip(r.overall).collect()
    }

    #[pyfunction]
    fn stage_loss(pred: Vec<f32>, target: Vec<f32>) -> PyResult<f64> {
        let n = pred.len();
        let p = Tensor::new(vec![n], pred).map_err(err)?;
        let t = Tensor::new(vec![target.len()], target).map_err(err)?;
        training::stage_loss(&p, &t).map_err(err)
    }

    #[pyfunction]
    fn total_loss(per_stage: Vec<f64>) -> f64 {
        training::total_loss(&per_stage)
    }

    /// Trains `model` in place on a freshly generated dataset and returns
    /// the per-epoch metrics as dicts.
    #[pyfunction]
    #[pyo3(signature = (model, scheme = "i", epochs = 1, train = 64, test = 16, learning_rate = 3e-5, seed = 1))]
    fn train<'py>(
        py: Python<'py>,
        model: &mut Model,
        scheme: &str,
        epochs: usize,
        train: usize,
        test: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let scheme: Scheme = scheme.parse().map_err(err)?;
        let data = Dataset::generate(&DataConfig { train, test, ..DataConfig::default() }).map_err(err)?;
        let cfg = TrainConfig { scheme, epochs, learning_rate, seed, ..TrainConfig::default() };
        let out = training::train(model.inner.clone(), &data, &cfg, &Default::default()).map_err(err)?;
        model.inner = out.model;
        out.metrics
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("epoch", m.epoch)?;
                d.set_item("stage", m.stage)?;
                d.set_item("loss", m.loss)?;
                d.set_item("pck_at_0.2", m.pck_at_0_2)?;
                d.set_item("trained", m.trained)?;
                Ok(d)
            })
            .collect()
    }
}
