use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ActionSet, ConstraintAutomaton};
use crate::error::{Error, Result};

/// Text form of a built-in constraint, e.g. `coherence:gamma=1.5` or `constancy:m=2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ConstraintDescriptor {
    Coherence { gamma: f64 },
    Escalation,
    Constancy { m: usize },
    Budget { budget: f64 },
    Subset { m: usize },
}

impl ConstraintDescriptor {
    pub fn build(&self, actions: ActionSet, task_count: usize) -> Result<ConstraintAutomaton> {
        match *self {
            ConstraintDescriptor::Coherence { gamma } => ConstraintAutomaton::coherence(actions, gamma, task_count),
            ConstraintDescriptor::Escalation => ConstraintAutomaton::escalation(actions, task_count),
            ConstraintDescriptor::Constancy { m } => ConstraintAutomaton::constancy(actions, m, task_count),
            ConstraintDescriptor::Budget { budget } => ConstraintAutomaton::budget(actions, budget, task_count),
            ConstraintDescriptor::Subset { m } => ConstraintAutomaton::task_subset(actions, m, task_count),
        }
    }
}

fn single_param<'a>(family: &str, rest: Option<&'a str>, key: &str) -> Result<&'a str> {
    let rest = rest.ok_or_else(|| Error::input(format!("`{family}` needs `{key}=<value>`")))?;
    let (k, v) = rest
        .split_once('=')
        .ok_or_else(|| Error::input(format!("expected `{key}=<value>` after `{family}:`, got `{rest}`")))?;
    if k.trim() != key {
        return Err(Error::input(format!("unknown parameter `{}` for `{family}`, expected `{key}`", k.trim())));
    }
    Ok(v.trim())
}

fn parse_num<T: FromStr>(family: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::input(format!("`{family}:{key}` has unparseable value `{v}`")))
}

impl FromStr for ConstraintDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, rest) = match s.split_once(':') {
            Some((f, r)) => (f.trim(), Some(r)),
            None => (s, None),
        };
        match family {
            "coherence" => {
                let v = single_param(family, rest, "gamma")?;
                Ok(ConstraintDescriptor::Coherence { gamma: parse_num(family, "gamma", v)? })
            }
            "escalation" => match rest {
                None => Ok(ConstraintDescriptor::Escalation),
                Some(r) => Err(Error::input(format!("`escalation` takes no parameters, got `{r}`"))),
            },
            "constancy" => {
                let v = single_param(family, rest, "m")?;
                Ok(ConstraintDescriptor::Constancy { m: parse_num(family, "m", v)? })
            }
            "budget" => {
                let v = single_param(family, rest, "B")?;
                Ok(ConstraintDescriptor::Budget { budget: parse_num(family, "B", v)? })
            }
            "subset" => {
                let v = single_param(family, rest, "m")?;
                Ok(ConstraintDescriptor::Subset { m: parse_num(family, "m", v)? })
            }
            other => Err(Error::input(format!(
                "unknown constraint family `{other}` (expected coherence, escalation, constancy, budget or subset)"
            ))),
        }
    }
}

impl TryFrom<String> for ConstraintDescriptor {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConstraintDescriptor> for String {
    fn from(d: ConstraintDescriptor) -> String {
        d.to_string()
    }
}

impl fmt::Display for ConstraintDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintDescriptor::Coherence { gamma } => write!(f, "coherence:gamma={gamma}"),
            ConstraintDescriptor::Escalation => write!(f, "escalation"),
            ConstraintDescriptor::Constancy { m } => write!(f, "constancy:m={m}"),
            ConstraintDescriptor::Budget { budget } => write!(f, "budget:B={budget}"),
            ConstraintDescriptor::Subset { m } => write!(f, "subset:m={m}"),
        }
    }
}
