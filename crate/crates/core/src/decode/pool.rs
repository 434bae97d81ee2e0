use crate::error::{contract_err, Result};

/// Labels still eligible for selection. Shrinks by one label per step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CandidatePool {
    member: Vec<bool>,
    remaining: usize,
}

impl CandidatePool {
    /// Every label in `0..labels`.
    pub fn full(labels: usize) -> Self {
        Self {
            member: vec![true; labels],
            remaining: labels,
        }
    }

    pub fn from_labels(labels: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut member = vec![false; labels];
        for l in members {
            if l >= labels {
                return contract_err(format!("label {l} outside 0..{labels}"));
            }
            member[l] = true;
        }
        let remaining = member.iter().filter(|&&m| m).count();
        Ok(Self { member, remaining })
    }

    pub fn labels(&self) -> usize {
        self.member.len()
    }

    pub fn len(&self) -> usize {
        self.remaining
    }

    pub fn is_empty(&self) -> bool {
        self.remaining == 0
    }

    pub fn contains(&self, label: usize) -> bool {
        self.member.get(label).copied().unwrap_or(false)
    }

    /// Members in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn remove(&mut self, label: usize) -> Result<()> {
        if !self.contains(label) {
            return contract_err(format!("label {label} is not in the candidate pool"));
        }
        self.member[label] = false;
        self.remaining -= 1;
        Ok(())
    }
}

/// Highest-scoring label still in the pool; ties go to the lowest index.
pub fn pool_select(scores: &[f64], pool: &CandidatePool) -> Result<usize> {
    if scores.len() != pool.labels() {
        return contract_err(format!(
            "{} scores for a pool over {} labels",
            scores.len(),
            pool.labels()
        ));
    }
    let mut best: Option<usize> = None;
    for l in pool.iter() {
        match best {
            Some(b) if scores[l] <= scores[b] => {}
            _ => best = Some(l),
        }
    }
    match best {
        Some(l) => Ok(l),
        None => contract_err("selection from an empty candidate pool"),
    }
}

/// The pool without `label`.
pub fn pool_update(pool: &CandidatePool, label: usize) -> Result<CandidatePool> {
    let mut next = pool.clone();
    next.remove(label)?;
    Ok(next)
}
