//! Single-layer LSTM policy over the selected patch centers.
//!
//! Gate blocks are stacked in the order input, forget, cell candidate,
//! output, both in the weight matrices and in the genome.

use crate::error::{Error, Result};
use crate::linalg::{first_non_finite, Matrix};
use crate::scalar::Scalar;

/// Shape of the environment's action space.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpec {
    /// One `(lo, hi)` interval per action dimension.
    Continuous { bounds: Vec<(f64, f64)> },
    /// `n` mutually exclusive choices.
    Discrete { n: usize },
}

impl ActionSpec {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpec::Continuous { bounds } => bounds.len(),
            ActionSpec::Discrete { n } => *n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpec::Continuous { bounds } => {
                if bounds.is_empty() {
                    return Err(Error::Config("continuous action space has no dimensions".into()));
                }
                for (j, &(lo, hi)) in bounds.iter().enumerate() {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(Error::Config(format!(
                            "action bound {j} is invalid: [{lo}, {hi}]"
                        )));
                    }
                }
            }
            ActionSpec::Discrete { n } => {
                if *n == 0 {
                    return Err(Error::Config("discrete action space is empty".into()));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpec::Continuous { bounds }, Action::Continuous(values)) => {
                values.len() == bounds.len()
                    && values
                        .iter()
                        .zip(bounds)
                        .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
            }
            (ActionSpec::Discrete { n }, Action::Discrete(i)) => i < n,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// `4h × in`
    pub weight_ih: Matrix<T>,
    /// `4h × h`
    pub weight_hh: Matrix<T>,
    pub bias_ih: Vec<T>,
    pub bias_hh: Vec<T>,
    /// `A × h`
    pub weight_out: Matrix<T>,
    pub bias_out: Vec<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Self {
        LstmParams {
            weight_ih: Matrix::zeros(4 * hidden, input),
            weight_hh: Matrix::zeros(4 * hidden, hidden),
            bias_ih: vec![T::zero(); 4 * hidden],
            bias_hh: vec![T::zero(); 4 * hidden],
            weight_out: Matrix::zeros(actions, hidden),
            bias_out: vec![T::zero(); actions],
        }
    }

    pub fn input_size(&self) -> usize {
        self.weight_ih.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.weight_hh.cols()
    }

    pub fn action_dim(&self) -> usize {
        self.weight_out.rows()
    }

    /// `4h(in + h) + 8h + hA + A`.
    pub fn param_count(input: usize, hidden: usize, actions: usize) -> usize {
        4 * hidden * (input + hidden) + 8 * hidden + hidden * actions + actions
    }

    pub fn num_params(&self) -> usize {
        Self::param_count(self.input_size(), self.hidden_size(), self.action_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h, a) = (self.input_size(), self.hidden_size(), self.action_dim());
        let checks = [
            ("lstm weight_ih", self.weight_ih.shape(), (4 * h, i)),
            ("lstm weight_hh", self.weight_hh.shape(), (4 * h, h)),
            ("lstm weight_out", self.weight_out.shape(), (a, h)),
            ("lstm bias_ih", (self.bias_ih.len(), 1), (4 * h, 1)),
            ("lstm bias_hh", (self.bias_hh.len(), 1), (4 * h, 1)),
            ("lstm bias_out", (self.bias_out.len(), 1), (a, 1)),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::shape(what, format!("{want:?}"), format!("{got:?}")));
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        for (what, m) in [
            ("lstm weight_ih", &self.weight_ih),
            ("lstm weight_hh", &self.weight_hh),
            ("lstm weight_out", &self.weight_out),
        ] {
            if let Some((r, c)) = m.first_non_finite() {
                return Err(Error::NonFinite {
                    what,
                    location: format!("[{r}][{c}]"),
                });
            }
        }
        for (what, v) in [
            ("lstm bias_ih", &self.bias_ih),
            ("lstm bias_hh", &self.bias_hh),
            ("lstm bias_out", &self.bias_out),
        ] {
            if let Some(i) = first_non_finite(v) {
                return Err(Error::NonFinite {
                    what,
                    location: format!("[{i}]"),
                });
            }
        }
        Ok(())
    }
}

/// Hidden and cell vectors carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Scalar> ControllerState<T> {
    pub fn reset(hidden_size: usize) -> Self {
        ControllerState {
            hidden: vec![T::zero(); hidden_size],
            cell: vec![T::zero(); hidden_size],
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One controller tick: LSTM update, linear head, then action decoding.
///
/// Continuous dimensions are squashed with `tanh` and rescaled into their
/// bounds; discrete actions take the argmax of the head (first index on ties).
pub fn step_controller<T: Scalar>(
    features: &[T],
    state: &ControllerState<T>,
    params: &LstmParams<T>,
    spec: &ActionSpec,
) -> Result<(Action, ControllerState<T>)> {
    let h = params.hidden_size();
    if features.len() != params.input_size() {
        return Err(Error::shape("controller features", params.input_size(), features.len()));
    }
    if state.hidden.len() != h || state.cell.len() != h {
        return Err(Error::shape("controller state", h, state.hidden.len()));
    }
    if spec.dim() != params.action_dim() {
        return Err(Error::shape("action head", spec.dim(), params.action_dim()));
    }
    if let Some(i) = first_non_finite(features) {
        return Err(Error::NonFinite {
            what: "controller features",
            location: format!("[{i}]"),
        });
    }
    params.check_finite()?;

    let mut pre = vec![T::zero(); 4 * h];
    for (g, p) in pre.iter_mut().enumerate() {
        let mut acc = params.bias_ih[g] + params.bias_hh[g];
        for (&w, &x) in params.weight_ih.row(g).iter().zip(features) {
            acc = acc + w * x;
        }
        for (&w, &hv) in params.weight_hh.row(g).iter().zip(&state.hidden) {
            acc = acc + w * hv;
        }
        *p = acc;
    }

    let mut hidden = vec![T::zero(); h];
    let mut cell = vec![T::zero(); h];
    for j in 0..h {
        let input_gate = sigmoid(pre[j]);
        let forget_gate = sigmoid(pre[h + j]);
        let candidate = pre[2 * h + j].tanh();
        let output_gate = sigmoid(pre[3 * h + j]);
        cell[j] = forget_gate * state.cell[j] + input_gate * candidate;
        hidden[j] = output_gate * cell[j].tanh();
    }

    let logits: Vec<T> = (0..params.action_dim())
        .map(|a| {
            params
                .weight_out
                .row(a)
                .iter()
                .zip(&hidden)
                .fold(params.bias_out[a], |acc, (&w, &hv)| acc + w * hv)
        })
        .collect();
    if let Some(i) = first_non_finite(&logits) {
        return Err(Error::NonFinite {
            what: "controller output",
            location: format!("[{i}]"),
        });
    }

    let action = match spec {
        ActionSpec::Continuous { bounds } => Action::Continuous(
            logits
                .iter()
                .zip(bounds)
                .map(|(&z, &(lo, hi))| {
                    let unit = (z.tanh().to_f64_lossy() + 1.0) * 0.5;
                    (lo + unit * (hi - lo)).clamp(lo, hi)
                })
                .collect(),
        ),
        ActionSpec::Discrete { .. } => {
            let mut best = 0;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            Action::Discrete(best)
        }
    };
    Ok((action, ControllerState { hidden, cell }))
}
