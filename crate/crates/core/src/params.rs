//! Flat parameter vectors shared by the optimizers and gradient checks.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Beta,
    LogSigma2,
    LogPhi,
    LogPhiZ,
    Latent,
    Inducing,
    LogNoise,
    Mixing,
    /// Variational means; updated by natural gradient, never by Adam.
    Mu,
    /// Lower factor of the variational covariance; natural gradient only.
    SigmaLower,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Beta => "beta",
            ParamGroup::LogSigma2 => "log_sigma2",
            ParamGroup::LogPhi => "log_phi",
            ParamGroup::LogPhiZ => "log_phi_z",
            ParamGroup::Latent => "latent",
            ParamGroup::Inducing => "inducing",
            ParamGroup::LogNoise => "log_noise",
            ParamGroup::Mixing => "mixing",
            ParamGroup::Mu => "mu",
            ParamGroup::SigmaLower => "sigma_lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub group: ParamGroup,
    pub range: Range<usize>,
    pub trainable: bool,
}

/// Ordered group spans over a flat hyperparameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    spans: Vec<Span>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, group: ParamGroup, len: usize, trainable: bool) {
        self.spans.push(Span {
            group,
            range: self.len..self.len + len,
            trainable,
        });
        self.len += len;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn set_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for s in self.spans.iter_mut().filter(|s| s.group == group) {
            s.trainable = trainable;
        }
    }

    /// Per-entry trainability mask.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.len];
        for s in &self.spans {
            m[s.range.clone()].fill(s.trainable);
        }
        m
    }

    /// Group owning flat index `i`.
    pub fn group_of(&self, i: usize) -> Option<ParamGroup> {
        self.spans.iter().find(|s| s.range.contains(&i)).map(|s| s.group)
    }
}

/// Sequential reader over a flat vector.
pub(crate) struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        Cursor { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    pub fn scalar(&mut self) -> f64 {
        self.take(1)[0]
    }

    pub fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}
