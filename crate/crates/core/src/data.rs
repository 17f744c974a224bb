//! Logged bandit feedback and its CSV form.
//!
//! Records carry only `(context, action, reward, source)`. Propensities are
//! always recomputed from the policies attached to the dataset.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MvalError, Result};
use crate::policy::{MixProfile, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Log,
    Aug,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub context_id: usize,
    pub action_id: usize,
    pub reward: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    contexts: usize,
    actions: usize,
    samples: Vec<LoggedSample>,
    log_policy: Option<Policy>,
    aug_policy: Option<Policy>,
}

impl LoggedDataset {
    pub fn new(contexts: usize, actions: usize) -> Self {
        LoggedDataset {
            contexts,
            actions,
            samples: Vec::new(),
            log_policy: None,
            aug_policy: None,
        }
    }

    /// Builds a dataset, checking every id against the label sets.
    pub fn from_samples(contexts: usize, actions: usize, samples: Vec<LoggedSample>) -> Result<Self> {
        for (index, s) in samples.iter().enumerate() {
            if s.context_id >= contexts || s.action_id >= actions {
                return Err(MvalError::UnknownId {
                    index,
                    context: s.context_id,
                    action: s.action_id,
                });
            }
        }
        Ok(LoggedDataset {
            samples,
            ..LoggedDataset::new(contexts, actions)
        })
    }

    pub fn with_policy(mut self, source: Source, policy: Policy) -> Result<Self> {
        policy.check_shape((self.contexts, self.actions))?;
        match source {
            Source::Log => self.log_policy = Some(policy),
            Source::Aug => self.aug_policy = Some(policy),
        }
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts, self.actions)
    }

    pub fn samples(&self) -> &[LoggedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn policy(&self, source: Source) -> Option<&Policy> {
        match source {
            Source::Log => self.log_policy.as_ref(),
            Source::Aug => self.aug_policy.as_ref(),
        }
    }

    pub fn count(&self, source: Source) -> usize {
        self.samples.iter().filter(|s| s.source == source).count()
    }

    /// The mix profile implied by the per-source counts.
    pub fn mix(&self) -> Result<MixProfile> {
        MixProfile::new(self.count(Source::Log), self.count(Source::Aug))
    }

    pub(crate) fn check_counts(&self, mix: MixProfile) -> Result<()> {
        let (found_log, found_aug) = (self.count(Source::Log), self.count(Source::Aug));
        if found_log != mix.n_log() || found_aug != mix.n_aug() {
            return Err(MvalError::CountMismatch {
                n_log: mix.n_log(),
                n_aug: mix.n_aug(),
                found_log,
                found_aug,
            });
        }
        Ok(())
    }

    pub fn push(&mut self, sample: LoggedSample) -> Result<()> {
        if sample.context_id >= self.contexts || sample.action_id >= self.actions {
            return Err(MvalError::UnknownId {
                index: self.samples.len(),
                context: sample.context_id,
                action: sample.action_id,
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Appends every record of `other`, keeping `other`'s attached policies
    /// where this dataset has none.
    pub fn extend(&mut self, other: LoggedDataset) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(MvalError::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        self.samples.extend(other.samples);
        if self.log_policy.is_none() {
            self.log_policy = other.log_policy;
        }
        if self.aug_policy.is_none() {
            self.aug_policy = other.aug_policy;
        }
        Ok(())
    }

    /// Reads `context_id,action_id,reward,source` records.
    pub fn read_csv<R: Read>(reader: R, contexts: usize, actions: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["context_id", "action_id", "reward", "source"] {
            return Err(MvalError::Parse(format!(
                "expected header context_id,action_id,reward,source, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let samples = rdr
            .deserialize::<LoggedSample>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        LoggedDataset::from_samples(contexts, actions, samples)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.samples {
            wtr.serialize(s)?;
        }
        if self.samples.is_empty() {
            wtr.write_record(["context_id", "action_id", "reward", "source"])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
