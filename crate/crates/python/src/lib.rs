//! Python module `basen`.

use basen_core::config::KeyValue;
use basen_core::eeg::{self, MuaConfig};
use basen_core::model::{self, BasenConfig, BasenModel};
use basen_core::signal::{self, MultiChannelSeries, SampleBuffer};
use basen_core::train::{self, Example, SyntheticTaskConfig, TrainConfig};
use pyo3::exceptions::{PyIndexError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: basen_core::BasenError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn series(channels: Vec<Vec<f64>>, rate: f64) -> PyResult<MultiChannelSeries> {
    MultiChannelSeries::new(channels, rate).map_err(err)
}

fn set_all(target: &mut impl KeyValue, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let Some(kwargs) = kwargs else { return Ok(()) };
    for (k, v) in kwargs.iter() {
        let key: String = k.extract()?;
        let value = v.str()?.to_string();
        if !target.set(&key, &value).map_err(err)? {
            return Err(PyKeyError::new_err(format!("unknown key {key}")));
        }
    }
    Ok(())
}

/// Network configuration. `preset` is "desk", "full" or "tiny"; keyword
/// arguments override single keys.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: BasenConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "desk", **kwargs))]
    fn new(preset: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = match preset {
            "desk" => BasenConfig::desk(),
            "full" => BasenConfig::default(),
            "tiny" => BasenConfig::tiny(),
            _ => return Err(PyValueError::new_err(format!("unknown preset {preset:?}"))),
        };
        set_all(&mut inner, kwargs)?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn __getitem__(&self, key: &str) -> PyResult<String> {
        self.inner
            .pairs()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyKeyError::new_err(key.to_owned()))
    }

    fn items(&self) -> Vec<(String, String)> {
        self.inner.pairs()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.inner.pairs().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", "))
    }
}

/// A BASEN network with 32-bit weights.
#[pyclass(name = "Model")]
struct PyModel {
    inner: BasenModel<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: BasenModel::new(config.inner.clone(), seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_checkpoint(path, &self.inner).map_err(err)
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// One estimate per talker, each as long as `audio`. `eeg` is a list of
    /// preprocessed channels at the configured EEG rate.
    fn forward(&self, audio: Vec<f64>, eeg: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let cfg = self.inner.config();
        let x = SampleBuffer::new(audio, cfg.audio_rate).map_err(err)?;
        let e = series(eeg, cfg.eeg_rate)?;
        let out = self.inner.forward(&x, &e).map_err(err)?;
        Ok(out.into_iter().map(SampleBuffer::into_samples).collect())
    }

    /// Trains in place; returns `(epoch, mean_loss, val_si_sdr, lr)` rows.
    #[pyo3(signature = (train_set, val_set, epochs = 60, batch_size = 8, lr = 2e-4, seed = 0))]
    fn fit(
        &mut self,
        train_set: &PyDataset,
        val_set: &PyDataset,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            max_lr: lr,
            seed,
            threads: train::threads_from_env().map_err(err)?,
            ..TrainConfig::default()
        };
        let log = train::train(&mut self.inner, &train_set.items, &val_set.items, &cfg, None).map_err(err)?;
        Ok(log.epochs.iter().map(|e| (e.epoch, e.mean_loss, e.val_si_sdr, e.lr)).collect())
    }

    /// Median, q1, q3 and mean SI-SDR improvement of output 0 on `data`.
    fn evaluate(&self, data: &PyDataset) -> PyResult<(f64, f64, f64, f64)> {
        let r = train::evaluate(&self.inner, &data.items, 1).map_err(err)?;
        let a = r.improvement;
        Ok((a.median, a.q1, a.q3, a.mean))
    }
}

/// Synthetic cued two-talker scenes with preprocessed EEG.
#[pyclass(name = "Dataset")]
struct PyDataset {
    items: Vec<Example>,
}

#[pymethods]
impl PyDataset {
    /// Scenes matching `config`'s rates and channel count. Keyword arguments
    /// set task keys such as `segment_seconds` or `cue_snr`.
    #[staticmethod]
    #[pyo3(signature = (config, seed, split, n, **kwargs))]
    fn synthetic(config: &PyConfig, seed: u64, split: &str, n: usize, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut task = SyntheticTaskConfig {
            audio_rate: config.inner.audio_rate,
            eeg_rate: config.inner.eeg_rate,
            eeg_channels: config.inner.eeg_channels,
            ..SyntheticTaskConfig::default()
        };
        set_all(&mut task, kwargs)?;
        task.validate().map_err(err)?;
        let items = train::synthetic_split(&task, seed, split, n, &MuaConfig::default()).map_err(err)?;
        Ok(Self { items })
    }

    fn __len__(&self) -> usize {
        self.items.len()
    }

    /// Dict with id, mixture, eeg, target, interferer and attended.
    fn __getitem__<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let ex = self.items.get(i).ok_or_else(|| PyIndexError::new_err(i))?;
        let d = PyDict::new(py);
        d.set_item("id", &ex.id)?;
        d.set_item("mixture", ex.mixture.samples())?;
        d.set_item("eeg", ex.eeg.channels())?;
        d.set_item("target", ex.target.samples())?;
        d.set_item("interferer", ex.interferer.samples())?;
        d.set_item("attended", ex.attended)?;
        Ok(d)
    }
}

/// Scale-invariant SDR of `estimate` against `reference`, dB.
#[pyfunction]
fn si_sdr(estimate: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    train::si_sdr_slice(&estimate, &reference).map_err(err)
}

/// Instantaneous amplitude and wrapped phase of `x`.
#[pyfunction]
fn analytic_signal(x: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let a = eeg::analytic_signal(&x);
    (a.amplitude, a.phase)
}

/// MUA front end over a list of channels sampled at `rate` Hz.
#[pyfunction]
#[pyo3(signature = (channels, rate, a_gamma = 0.5, a_delta = 0.5))]
fn preprocess_eeg(channels: Vec<Vec<f64>>, rate: f64, a_gamma: f64, a_delta: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = MuaConfig {
        a_gamma,
        a_delta,
        ..MuaConfig::default()
    };
    cfg.validate(rate).map_err(err)?;
    Ok(eeg::preprocess(&series(channels, rate)?, &cfg).map_err(err)?.into_channels())
}

#[pyfunction]
fn resample(x: Vec<f64>, old_rate: f64, new_rate: f64) -> PyResult<Vec<f64>> {
    signal::resample_slice(&x, old_rate, new_rate).map_err(err)
}

/// Samples in [-1, 1) and the sample rate.
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<f64>, f64)> {
    let x = signal::wav::read_wav(path).map_err(err)?;
    let rate = x.rate();
    Ok((x.into_samples(), rate))
}

#[pyfunction]
fn write_wav(path: &str, samples: Vec<f64>, rate: f64) -> PyResult<()> {
    signal::wav::write_wav(path, &SampleBuffer::new(samples, rate).map_err(err)?).map_err(err)
}

/// `(name, entries, max_abs_grad, rel_error)` per parameter tensor of a
/// fresh 64-bit model on random inputs.
#[pyfunction]
#[pyo3(signature = (config, seed = 0, seconds = 0.25))]
fn gradcheck(config: &PyConfig, seed: u64, seconds: f64) -> PyResult<Vec<(String, usize, f64, f64)>> {
    let r = model::model_gradcheck(&config.inner, seconds, seed).map_err(err)?;
    Ok(r.into_iter().map(|c| (c.name, c.entries, c.max_abs_grad, c.rel_error)).collect())
}

#[pymodule]
fn basen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(si_sdr, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_signal, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_eeg, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("GRADCHECK_TOLERANCE", model::GRADCHECK_TOLERANCE)?;
    Ok(())
}
