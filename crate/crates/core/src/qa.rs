//! Stereotype probe items: a question with a stereotype and an
//! antistereotype answer, tagged with its socioeconomic context.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Poverty,
    Wealth,
}

impl Context {
    pub const ALL: [Context; 2] = [Context::Poverty, Context::Wealth];

    pub fn as_str(self) -> &'static str {
        match self {
            Context::Poverty => "poverty",
            Context::Wealth => "wealth",
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    #[serde(alias = "x")]
    pub prompt: String,
    #[serde(alias = "y_stereo")]
    pub stereotype: String,
    #[serde(alias = "y_anti")]
    pub antistereotype: String,
    pub context: Context,
}

impl QaPair {
    pub fn new(prompt: &str, stereotype: &str, antistereotype: &str, context: Context) -> Self {
        Self {
            prompt: prompt.into(),
            stereotype: stereotype.into(),
            antistereotype: antistereotype.into(),
            context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::Qa("empty prompt".into()));
        }
        if self.stereotype.trim().is_empty() || self.antistereotype.trim().is_empty() {
            return Err(Error::Qa(format!("empty answer for `{}`", self.prompt)));
        }
        if self.stereotype == self.antistereotype {
            return Err(Error::Qa(format!(
                "stereotype and antistereotype are both `{}` for `{}`",
                self.stereotype, self.prompt
            )));
        }
        Ok(())
    }

    /// The same item with the roles of the two answers exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            prompt: self.prompt.clone(),
            stereotype: self.antistereotype.clone(),
            antistereotype: self.stereotype.clone(),
            context: self.context,
        }
    }
}

/// Validates a probe set: every pair is well formed and each context has at
/// least one pair.
pub fn validate_qa_set(pairs: &[QaPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Qa("no pairs".into()));
    }
    for p in pairs {
        p.validate()?;
    }
    for ctx in Context::ALL {
        if !pairs.iter().any(|p| p.context == ctx) {
            return Err(Error::Qa(format!("no pairs for context `{ctx}`")));
        }
    }
    Ok(())
}

pub fn by_context(pairs: &[QaPair], ctx: Context) -> Vec<&QaPair> {
    pairs.iter().filter(|p| p.context == ctx).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_answers_are_rejected() {
        let p = QaPair::new("Who are poor?", "women", "women", Context::Poverty);
        assert!(matches!(p.validate(), Err(Error::Qa(_))));
    }

    #[test]
    fn every_context_needs_a_pair() {
        let pairs = vec![QaPair::new("Who are poor?", "women", "men", Context::Poverty)];
        assert!(validate_qa_set(&pairs).is_err());
        assert!(validate_qa_set(&[]).is_err());
    }

    #[test]
    fn swap_is_an_involution() {
        let p = QaPair::new("Who are wealthy?", "men", "women", Context::Wealth);
        assert_eq!(p.swapped().swapped(), p);
    }
}
