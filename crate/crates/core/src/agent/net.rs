use ndnet::{Embedding, Linear, LstmCell, LstmState, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridhouse::ActionType;
use crate::mind::MAX_REPEAT;

use super::{AgentError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub embed_dim: usize,
    pub question_dim: usize,
    pub planner_hidden: usize,
    pub controller_hidden: usize,
    pub qa_dim: usize,
    /// Feed the imagery hidden state to the planner. Off gives the
    /// no-imagery baseline with otherwise identical wiring.
    pub use_imagery: bool,
    pub n_max: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            question_dim: 64,
            planner_hidden: 128,
            controller_hidden: 64,
            qa_dim: 64,
            use_imagery: true,
            n_max: 80,
        }
    }
}

pub(crate) fn lit_vec<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x as f64)).collect()
}

/// Embedding plus LSTM; the encoding is the last hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionEncoder {
    embed: Embedding,
    lstm: LstmCell,
}

impl QuestionEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        embed_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            embed: Embedding::new(store, &format!("{name}.embed"), vocab, embed_dim, rng)?,
            lstm: LstmCell::new(store, &format!("{name}.lstm"), embed_dim, dim, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.lstm.hidden
    }

    pub fn encode_t<T: Real>(&self, t: &mut Tape<'_, T>, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(AgentError::Input("empty question".into()));
        }
        let mut s = self.lstm.zero_state(t)?;
        for &tok in tokens {
            if tok >= self.embed.vocab {
                return Err(AgentError::Input(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.embed.vocab
                )));
            }
            let e = self.embed.lookup(t, tok)?;
            s = self.lstm.step(t, e, s)?;
        }
        Ok(s.h)
    }
}

/// Planner and controller heads sharing one question encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Navigator {
    pub cfg: AgentConfig,
    pub feature_dim: usize,
    pub imagery_dim: usize,
    question: QuestionEncoder,
    planner: LstmCell,
    policy: Linear,
    value: Linear,
    ctrl_hidden: Linear,
    ctrl_out: Linear,
}

/// Outputs of one planner step.
#[derive(Clone, Copy, Debug)]
pub struct PlannerOut {
    /// Log-probabilities over the four actions.
    pub log_probs: Var,
    pub value: Var,
    pub state: LstmState,
}

impl Navigator {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: AgentConfig,
        vocab: usize,
        feature_dim: usize,
        imagery_dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let question = QuestionEncoder::new(
            store,
            "nav.question",
            vocab,
            cfg.embed_dim,
            cfg.question_dim,
            rng,
        )?;
        let p_in = feature_dim + cfg.question_dim + ActionType::COUNT + imagery_dim;
        let planner = LstmCell::new(store, "nav.planner", p_in, cfg.planner_hidden, rng)?;
        let policy = Linear::new(
            store,
            "nav.policy",
            cfg.planner_hidden,
            ActionType::COUNT,
            rng,
        )?;
        let value = Linear::new(store, "nav.value", cfg.planner_hidden, 1, rng)?;
        let c_in = cfg.planner_hidden
            + feature_dim
            + cfg.question_dim
            + ActionType::COUNT
            + MAX_REPEAT
            + 1;
        let ctrl_hidden = Linear::new(store, "nav.ctrl.hidden", c_in, cfg.controller_hidden, rng)?;
        let ctrl_out = Linear::new(store, "nav.ctrl.out", cfg.controller_hidden, 2, rng)?;
        Ok(Self {
            cfg,
            feature_dim,
            imagery_dim,
            question,
            planner,
            policy,
            value,
            ctrl_hidden,
            ctrl_out,
        })
    }

    pub fn question_t<T: Real>(&self, t: &mut Tape<'_, T>, tokens: &[usize]) -> Result<Var> {
        self.question.encode_t(t, tokens)
    }

    pub fn planner_zero_t<T: Real>(&self, t: &mut Tape<'_, T>) -> Result<LstmState> {
        Ok(self.planner.zero_state(t)?)
    }

    /// One planner step on `[feature ⊕ Q ⊕ one-hot(prev) ⊕ imagery_h]`.
    /// With imagery disabled, `imagery_h` is replaced by zeros.
    pub fn planner_step_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        state: LstmState,
        feature: &[f32],
        q: Var,
        prev: ActionType,
        imagery_h: &[f32],
    ) -> Result<PlannerOut> {
        if feature.len() != self.feature_dim || imagery_h.len() != self.imagery_dim {
            return Err(AgentError::Input(format!(
                "planner inputs {}+{} do not match {}+{}",
                feature.len(),
                imagery_h.len(),
                self.feature_dim,
                self.imagery_dim
            )));
        }
        let f = t.input_vec(&lit_vec::<T>(feature))?;
        let a = t.input_vec(&prev.one_hot().map(|v| T::lit(v as f64)))?;
        let ih: Vec<T> = if self.cfg.use_imagery {
            lit_vec(imagery_h)
        } else {
            vec![T::zero(); self.imagery_dim]
        };
        let ih = t.input_vec(&ih)?;
        let x = t.concat(&[f, q, a, ih])?;
        let state = self.planner.step(t, x, state)?;
        let logits = self.policy.forward(t, state.h)?;
        let log_probs = t.log_softmax(logits)?;
        let v = self.value.forward(t, state.h)?;
        Ok(PlannerOut {
            log_probs,
            value: v,
            state,
        })
    }

    /// Log-probabilities of `[return, repeat]` after `count` executions of
    /// `action` in the current macro-step.
    pub fn controller_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        planner_h: Var,
        feature: &[f32],
        q: Var,
        action: ActionType,
        count: usize,
    ) -> Result<Var> {
        if count > MAX_REPEAT {
            return Err(AgentError::Input(format!(
                "controller count {count} exceeds {MAX_REPEAT}"
            )));
        }
        let f = t.input_vec(&lit_vec::<T>(feature))?;
        let a = t.input_vec(&action.one_hot().map(|v| T::lit(v as f64)))?;
        let mut c = vec![T::zero(); MAX_REPEAT + 1];
        c[count] = T::one();
        let c = t.input_vec(&c)?;
        let x = t.concat(&[planner_h, f, q, a, c])?;
        let h = self.ctrl_hidden.forward(t, x)?;
        let h = t.relu(h)?;
        let z = self.ctrl_out.forward(t, h)?;
        Ok(t.log_softmax(z)?)
    }
}

/// Five most recent frame features, newest first. Shorter histories repeat
/// the oldest frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameBuffer {
    frames: std::collections::VecDeque<Vec<f32>>,
}

pub const QA_SLOTS: usize = 5;

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, feature: Vec<f32>) {
        self.frames.push_front(feature);
        self.frames.truncate(QA_SLOTS);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Exactly five slots, newest first.
    pub fn slots(&self) -> Result<Vec<&[f32]>> {
        let oldest = self
            .frames
            .back()
            .ok_or_else(|| AgentError::Input("empty frame buffer".into()))?;
        let mut out: Vec<&[f32]> = self.frames.iter().map(Vec::as_slice).collect();
        while out.len() < QA_SLOTS {
            out.push(oldest);
        }
        Ok(out)
    }

    /// Four newest real frames followed by the mental latent.
    pub fn slots_with_mental<'a>(&'a self, mental: &'a [f32]) -> Result<Vec<&'a [f32]>> {
        let mut s = self.slots()?;
        s[QA_SLOTS - 1] = mental;
        Ok(s)
    }
}

/// Attention over frame slots keyed by the question, then a small classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct QaModel {
    pub feature_dim: usize,
    pub answers: usize,
    question: QuestionEncoder,
    proj: Linear,
    hidden: Linear,
    out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct QaOut {
    pub log_probs: Var,
    pub attention: Var,
}

impl QaModel {
    pub fn new<T: Real, R: Rng + ?Sized>(
        cfg: &AgentConfig,
        vocab: usize,
        answers: usize,
        feature_dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let question =
            QuestionEncoder::new(store, "qa.question", vocab, cfg.embed_dim, cfg.qa_dim, rng)?;
        Ok(Self {
            feature_dim,
            answers,
            question,
            proj: Linear::new(store, "qa.proj", feature_dim, cfg.qa_dim, rng)?,
            hidden: Linear::new(store, "qa.hidden", 2 * cfg.qa_dim, cfg.qa_dim, rng)?,
            out: Linear::new(store, "qa.out", cfg.qa_dim, answers, rng)?,
        })
    }

    pub fn forward_t<T: Real>(
        &self,
        t: &mut Tape<'_, T>,
        tokens: &[usize],
        slots: &[&[f32]],
    ) -> Result<QaOut> {
        if slots.is_empty() {
            return Err(AgentError::Input("no frames for the answerer".into()));
        }
        let q = self.question.encode_t(t, tokens)?;
        let mut rows = Vec::with_capacity(slots.len());
        for s in slots {
            if s.len() != self.feature_dim {
                return Err(AgentError::Input(format!(
                    "frame feature of {} dims, expected {}",
                    s.len(),
                    self.feature_dim
                )));
            }
            let x = t.input(Tensor::from_vec(lit_vec::<T>(s)))?;
            let p = self.proj.forward(t, x)?;
            rows.push(t.tanh(p)?);
        }
        let p = t.stack_rows(&rows)?;
        let scores = t.matvec(p, q)?;
        let scores = t.scale(scores, 1.0 / (self.question.dim() as f64).sqrt())?;
        let attention = t.softmax(scores)?;
        let attended = t.vecmat(attention, p)?;
        let x = t.concat(&[attended, q])?;
        let h = self.hidden.forward(t, x)?;
        let h = t.relu(h)?;
        let z = self.out.forward(t, h)?;
        Ok(QaOut {
            log_probs: t.log_softmax(z)?,
            attention,
        })
    }

    /// Answer distribution.
    pub fn answer(
        &self,
        store: &ParamStore<f32>,
        tokens: &[usize],
        slots: &[&[f32]],
    ) -> Result<Vec<f64>> {
        let mut t = Tape::new(store);
        let out = self.forward_t(&mut t, tokens, slots)?;
        Ok(t.value(out.log_probs)
            .data()
            .iter()
            .map(|&v| (v as f64).exp())
            .collect())
    }

    pub fn attention(
        &self,
        store: &ParamStore<f32>,
        tokens: &[usize],
        slots: &[&[f32]],
    ) -> Result<Vec<f64>> {
        let mut t = Tape::new(store);
        let out = self.forward_t(&mut t, tokens, slots)?;
        Ok(t.value(out.attention)
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect())
    }
}
