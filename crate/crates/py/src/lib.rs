//! Python bindings. Bit vectors cross the boundary as sequences of 0/1
//! integers on the way in and as `bytes` of 0/1 values on the way out.

use std::sync::Arc;

use polarqkd::codec::{assemble_message, channel_llr, extract_info, sc_decode_with, CheckNode};
use polarqkd::construct::{reliability_sequence, select_frozen, ChannelKind, ChannelParams};
use polarqkd::secrecy::{self, SecrecyBudget};
use polarqkd::{BitVector, ChannelInstance, Mode, QberMode};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: polarqkd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bits_in(bits: &[u8]) -> PyResult<BitVector> {
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(PyValueError::new_err(format!(
            "bit values must be 0 or 1, got {b}"
        )));
    }
    Ok(BitVector::from_bits(bits))
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn parse_kind(kind: &str) -> PyResult<ChannelKind> {
    kind.parse().map_err(err)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "full" => Ok(Mode::Full),
        "nakassis-mink" | "nm" => Ok(Mode::NakassisMink),
        _ => Err(PyValueError::new_err(format!("unknown mode {mode:?}"))),
    }
}

/// Reliability profile of the synthetic channels for one block length.
#[pyclass(name = "ReliabilityProfile", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Profile {
    inner: Arc<polarqkd::ReliabilityProfile>,
}

#[pymethods]
impl Profile {
    #[new]
    #[pyo3(signature = (p, n, kind = "bsc"))]
    pub fn new(p: f64, n: u32, kind: &str) -> PyResult<Self> {
        let params = ChannelParams::new(parse_kind(kind)?, p).map_err(err)?;
        let inner = reliability_sequence(params, n).map_err(err)?;
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    #[staticmethod]
    pub fn from_json(text: &str) -> PyResult<Self> {
        let inner = polarqkd::ReliabilityProfile::from_json(text).map_err(err)?;
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    pub fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    pub fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    pub fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    pub fn n(&self) -> u32 {
        self.inner.n
    }

    /// Indices from least to most reliable.
    #[getter]
    pub fn order(&self) -> Vec<usize> {
        self.inner.order.clone()
    }

    /// Natural log of the Bhattacharyya parameter of each index.
    #[getter]
    pub fn log_z(&self) -> Vec<f64> {
        self.inner.log_z.clone()
    }

    /// Code with the `k` most reliable indices carrying information.
    pub fn code(&self, k: usize) -> PyResult<PolarCode> {
        let spec = select_frozen(&self.inner, k).map_err(err)?;
        Ok(PolarCode {
            spec: Arc::new(spec),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.block_len()
    }

    fn __repr__(&self) -> String {
        format!(
            "ReliabilityProfile(kind={}, p={}, n={})",
            self.inner.kind, self.inner.p, self.inner.n
        )
    }
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PolarCode {
    spec: Arc<polarqkd::PolarCodeSpec>,
}

#[pymethods]
impl PolarCode {
    #[getter]
    pub fn n(&self) -> u32 {
        self.spec.n()
    }

    #[getter]
    pub fn block_len(&self) -> usize {
        self.spec.block_len()
    }

    #[getter]
    pub fn k(&self) -> usize {
        self.spec.k()
    }

    #[getter]
    pub fn info_set(&self) -> Vec<usize> {
        self.spec.info_set().to_vec()
    }

    #[getter]
    pub fn frozen_set(&self) -> Vec<usize> {
        self.spec.frozen_set().to_vec()
    }

    /// Codeword for `k` information bits.
    pub fn encode(&self, info: Vec<u8>) -> PyResult<Vec<u8>> {
        let u = assemble_message(&bits_in(&info)?, &self.spec).map_err(err)?;
        Ok(polarqkd::encode(&u, &self.spec).map_err(err)?.to_bits())
    }

    /// SC estimate of the information bits from a hard-decision word seen
    /// through a BSC with crossover `p`.
    #[pyo3(signature = (received, p, min_sum = false))]
    pub fn decode(&self, received: Vec<u8>, p: f64, min_sum: bool) -> PyResult<Vec<u8>> {
        let soft =
            channel_llr(&bits_in(&received)?, ChannelParams::bsc(p).map_err(err)?).map_err(err)?;
        let rule = if min_sum {
            CheckNode::MinSum
        } else {
            CheckNode::Exact
        };
        let u = sc_decode_with(&soft, &self.spec, rule).map_err(err)?;
        Ok(extract_info(&u, &self.spec).map_err(err)?.to_bits())
    }

    fn __repr__(&self) -> String {
        format!(
            "PolarCode(N={}, K={})",
            self.spec.block_len(),
            self.spec.k()
        )
    }
}

/// Flips each bit independently with probability `p`.
#[pyfunction]
#[pyo3(signature = (bits, p, seed = 0, trial = 0))]
pub fn bsc(bits: Vec<u8>, p: f64, seed: u64, trial: u64) -> PyResult<Vec<u8>> {
    let ch = ChannelInstance::new(ChannelParams::bsc(p).map_err(err)?, seed, 0);
    Ok(polarqkd::transmit(&bits_in(&bits)?, &ch, trial)
        .map_err(err)?
        .to_bits())
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct ProtocolOutcome {
    pub agreed: bool,
    pub verified: bool,
    pub leak_bits: usize,
    pub secret_len: usize,
    pub final_keys_equal: Option<bool>,
    pub bit_errors: usize,
    pub qber_estimate: Option<f64>,
}

#[pymethods]
impl ProtocolOutcome {
    fn __repr__(&self) -> String {
        format!(
            "ProtocolOutcome(agreed={}, verified={}, leak_bits={}, secret_len={})",
            py_bool(self.agreed),
            py_bool(self.verified),
            self.leak_bits,
            self.secret_len
        )
    }
}

/// One reconciliation setup; `run(trial)` plays a full session.
#[pyclass(frozen)]
pub struct Session {
    inner: polarqkd::Session,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (
        n, k, p, seed = 0, mode = "full", design_p = None, estimation_bits = None,
        estimated_qber = false, amplify = true,
        eps_cor = secrecy::DEFAULT_EPS_COR, eps_sec = secrecy::DEFAULT_EPS_SEC,
    ))]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: u32,
        k: usize,
        p: f64,
        seed: u64,
        mode: &str,
        design_p: Option<f64>,
        estimation_bits: Option<usize>,
        estimated_qber: bool,
        amplify: bool,
        eps_cor: f64,
        eps_sec: f64,
    ) -> PyResult<Self> {
        let config = polarqkd::ProtocolConfig {
            design_p,
            estimation_bits,
            qber_mode: if estimated_qber {
                QberMode::Estimated
            } else {
                QberMode::Exact
            },
            amplify,
            eps_cor,
            eps_sec,
            ..polarqkd::ProtocolConfig::new(n, k, p, parse_mode(mode)?, seed)
        };
        let inner = polarqkd::Session::new(config).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (trial = 0))]
    pub fn run(&self, trial: u64) -> PyResult<ProtocolOutcome> {
        let o = self.inner.run(trial).map_err(err)?;
        Ok(ProtocolOutcome {
            agreed: o.agreed,
            verified: o.verified,
            leak_bits: o.leak_bits,
            secret_len: o.secret_len,
            final_keys_equal: o.final_keys_equal,
            bit_errors: o.bit_errors,
            qber_estimate: o.qber_estimate,
        })
    }
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct FerEstimate {
    pub n: u32,
    pub k: usize,
    pub p: f64,
    pub trials: u64,
    pub failures: u64,
    pub fer: f64,
    pub fer_ci_low: f64,
    pub fer_ci_high: f64,
    pub avg_yield: f64,
    pub ell: usize,
}

#[pymethods]
impl FerEstimate {
    fn __repr__(&self) -> String {
        format!(
            "FerEstimate(n={}, k={}, p={}, fer={} [{}, {}])",
            self.n, self.k, self.p, self.fer, self.fer_ci_low, self.fer_ci_high
        )
    }
}

/// Monte-Carlo frame error rate of full reconciliation sessions.
#[pyfunction]
#[pyo3(signature = (n, k, p, trials = 50, seed = 0, design_p = None, threads = None))]
pub fn estimate_fer(
    n: u32,
    k: usize,
    p: f64,
    trials: u64,
    seed: u64,
    design_p: Option<f64>,
    threads: Option<usize>,
) -> PyResult<FerEstimate> {
    let plan = polarqkd::TrialPlan {
        trials,
        seed,
        design_p,
        threads,
        ..Default::default()
    };
    let r = polarqkd::estimate_fer(n, k, p, &plan).map_err(err)?;
    Ok(FerEstimate {
        n: r.n,
        k: r.k,
        p: r.p,
        trials: r.trials,
        failures: r.failures,
        fer: r.fer,
        fer_ci_low: r.fer_ci_low,
        fer_ci_high: r.fer_ci_high,
        avg_yield: r.avg_yield,
        ell: r.ell,
    })
}

/// Finite-key secret length for a block of `big_n` bits with `k` information
/// bits at the given QBER; `e` defaults to `big_n / 3`.
#[pyfunction]
#[pyo3(signature = (big_n, k, qber, e = None, eps_cor = secrecy::DEFAULT_EPS_COR, eps_sec = secrecy::DEFAULT_EPS_SEC))]
pub fn secret_key_length(
    big_n: usize,
    k: usize,
    qber: f64,
    e: Option<usize>,
    eps_cor: f64,
    eps_sec: f64,
) -> PyResult<usize> {
    let mut budget = SecrecyBudget {
        eps_cor,
        ..SecrecyBudget::with_defaults(big_n, k, qber).with_eps_sec(eps_sec)
    };
    if let Some(e) = e {
        budget.e = e;
    }
    budget.validate().map_err(err)?;
    Ok(secrecy::secret_key_length(&budget))
}

#[pyfunction]
pub fn h2(p: f64) -> f64 {
    secrecy::h2(p)
}

#[pymodule]
#[pyo3(name = "polarqkd")]
fn polarqkd_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Profile>()?;
    m.add_class::<PolarCode>()?;
    m.add_class::<Session>()?;
    m.add_class::<ProtocolOutcome>()?;
    m.add_class::<FerEstimate>()?;
    m.add_function(wrap_pyfunction!(bsc, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_fer, m)?)?;
    m.add_function(wrap_pyfunction!(secret_key_length, m)?)?;
    m.add_function(wrap_pyfunction!(h2, m)?)?;
    Ok(())
}
