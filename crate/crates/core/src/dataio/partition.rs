use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Percentages in `B+SxN` form: `B`% base classes, then `N` sessions of `S`%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub base_pct: u32,
    pub session_pct: u32,
    pub n_sessions: u32,
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}x{}", self.base_pct, self.session_pct, self.n_sessions)
    }
}

impl FromStr for PartitionSpec {
    type Err = Error;

    /// Accepts `60+2x20`, and also `60%+2%×20`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Partition(format!("expected B+SxN (e.g. 60+2x20), got {s:?}"));
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace() && *c != '%').collect();
        let (base, rest) = cleaned.split_once('+').ok_or_else(bad)?;
        let (sess, n) = rest
            .split_once(['x', 'X', '×', '*'])
            .ok_or_else(bad)?;
        let num = |t: &str| t.parse::<u32>().map_err(|_| bad());
        Ok(PartitionSpec {
            base_pct: num(base)?,
            session_pct: num(sess)?,
            n_sessions: num(n)?,
        })
    }
}

/// Base classes followed by the ordered incremental sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_classes: usize,
    pub base_classes: Vec<u32>,
    pub sessions: Vec<Vec<u32>>,
}

impl PartitionPlan {
    /// Classes introduced by `session` (0 is the base session).
    pub fn classes_of(&self, session: usize) -> &[u32] {
        if session == 0 {
            &self.base_classes
        } else {
            &self.sessions[session - 1]
        }
    }

    pub fn all_classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.base_classes.iter().chain(self.sessions.iter().flatten()).copied()
    }
}

fn pct_count(n_classes: usize, pct: u32, what: &str) -> Result<usize> {
    let scaled = n_classes as u64 * pct as u64;
    if scaled % 100 != 0 {
        return Err(Error::Partition(format!(
            "{pct}% of {n_classes} classes is not a whole number of {what} classes"
        )));
    }
    Ok((scaled / 100) as usize)
}

/// Partitions classes `0..n_classes`.
pub fn make_partition(
    n_classes: usize,
    base_pct: u32,
    session_pct: u32,
    n_sessions: u32,
    seed: u64,
) -> Result<PartitionPlan> {
    let classes: Vec<u32> = (0..n_classes as u32).collect();
    make_partition_over(
        &classes,
        PartitionSpec {
            base_pct,
            session_pct,
            n_sessions,
        },
        seed,
    )
}

/// Shuffles `classes` with `seed`, then takes the base block and
/// `n_sessions` consecutive session blocks.
pub fn make_partition_over(classes: &[u32], spec: PartitionSpec, seed: u64) -> Result<PartitionPlan> {
    let n_classes = classes.len();
    if n_classes == 0 {
        return Err(Error::Partition("no classes to partition".into()));
    }
    let total_pct = spec.base_pct as u64 + spec.session_pct as u64 * spec.n_sessions as u64;
    if total_pct > 100 {
        return Err(Error::Partition(format!(
            "{spec} allocates {total_pct}% of the classes"
        )));
    }
    let n_base = pct_count(n_classes, spec.base_pct, "base")?;
    let n_session = pct_count(n_classes, spec.session_pct, "session")?;
    if n_base == 0 {
        return Err(Error::Partition(format!("{spec} leaves no base classes")));
    }
    if spec.n_sessions > 0 && n_session == 0 {
        return Err(Error::Partition(format!("{spec} gives empty sessions")));
    }
    let mut shuffled = classes.to_vec();
    Rng::new(seed).shuffle(&mut shuffled);
    let base_classes = shuffled[..n_base].to_vec();
    let sessions = (0..spec.n_sessions as usize)
        .map(|i| {
            let start = n_base + i * n_session;
            shuffled[start..start + n_session].to_vec()
        })
        .collect();
    Ok(PartitionPlan {
        n_classes,
        base_classes,
        sessions,
    })
}
