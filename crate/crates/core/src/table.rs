//! Memo table of leaf evaluations keyed by instance and complete assignment.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::MinlpDefinition;
use crate::relaxation::RelaxedSolution;

type Key = (String, Vec<i64>);

/// Thread-safe leaf table. Concurrent callers asking for the same missing
/// entry block on a per-entry cell, so each assignment is solved once.
#[derive(Debug, Default)]
pub struct LeafTable {
    entries: RwLock<HashMap<Key, Arc<OnceLock<RelaxedSolution>>>>,
    hits: AtomicUsize,
    solves: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Solved,
}

#[derive(Serialize, Deserialize)]
struct Line {
    instance: String,
    assignment: String,
    #[serde(flatten)]
    solution: RelaxedSolution,
}

fn bits(a: &[i64]) -> String {
    a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_bits(s: &str) -> Result<Vec<i64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.parse::<i64>().map_err(|e| Error::Format(format!("assignment {s:?}: {e}"))))
        .collect()
}

impl LeafTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("table lock").values().filter(|c| c.get().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    /// Solver calls made through this table.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn get(&self, instance: &str, assignment: &[i64]) -> Option<RelaxedSolution> {
        let map = self.entries.read().expect("table lock");
        map.get(&(instance.to_string(), assignment.to_vec()))
            .and_then(|c| c.get().cloned())
    }

    fn cell(&self, key: Key) -> Arc<OnceLock<RelaxedSolution>> {
        if let Some(c) = self.entries.read().expect("table lock").get(&key) {
            return c.clone();
        }
        self.entries
            .write()
            .expect("table lock")
            .entry(key)
            .or_default()
            .clone()
    }

    /// Stored result for `assignment`, solving and storing it on a miss.
    pub fn lookup_or_solve(
        &self,
        instance: &dyn MinlpDefinition,
        assignment: &[i64],
    ) -> Result<(RelaxedSolution, Lookup)> {
        if assignment.len() != instance.integer_count() {
            return Err(Error::Precondition(format!(
                "leaf lookup needs a complete assignment of {} values, got {}",
                instance.integer_count(),
                assignment.len()
            )));
        }
        if !instance.root_bounds().contains(assignment) {
            return Err(Error::Precondition(format!(
                "assignment {} lies outside the root box",
                bits(assignment)
            )));
        }
        let cell = self.cell((instance.instance_id(), assignment.to_vec()));
        let mut solved = false;
        let sol = cell
            .get_or_init(|| {
                solved = true;
                instance
                    .leaf_evaluate(assignment)
                    .unwrap_or_else(|_| RelaxedSolution::failure())
            })
            .clone();
        if solved {
            self.solves.fetch_add(1, Ordering::Relaxed);
            Ok((sol, Lookup::Solved))
        } else {
            self.hits.fetch_add(1, Ordering::Relaxed);
            Ok((sol, Lookup::Hit))
        }
    }

    /// Insert without solving; existing entries are kept.
    pub fn insert(&self, instance: &str, assignment: &[i64], sol: RelaxedSolution) {
        let cell = self.cell((instance.to_string(), assignment.to_vec()));
        let _ = cell.set(sol);
    }

    /// Copy every entry of `other` not already present.
    pub fn merge(&self, other: &LeafTable) {
        for (k, sol) in other.snapshot() {
            self.insert(&k.0, &k.1, sol);
        }
    }

    fn snapshot(&self) -> Vec<(Key, RelaxedSolution)> {
        let map = self.entries.read().expect("table lock");
        let mut out: Vec<_> = map
            .iter()
            .filter_map(|(k, c)| c.get().map(|s| (k.clone(), s.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// One JSON object per entry, sorted by key.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        for ((instance, a), solution) in self.snapshot() {
            let line = Line {
                instance,
                assignment: bits(&a),
                solution,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let t = Self::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)?;
            t.insert(&l.instance, &parse_bits(&l.assignment)?, l.solution);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::ToyProgram;

    #[test]
    fn memoizes() {
        let t = LeafTable::new();
        let toy = ToyProgram::solve();
        let (a, l1) = t.lookup_or_solve(&toy, &[1, 3]).unwrap();
        let (b, l2) = t.lookup_or_solve(&toy, &[1, 3]).unwrap();
        assert_eq!((l1, l2), (Lookup::Solved, Lookup::Hit));
        assert_eq!(a, b);
        assert_eq!(t.solves(), 1);
        assert_eq!(t.hits(), 1);

        t.lookup_or_solve(&toy, &[1, 2]).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.lookup_or_solve(&toy, &[1]).is_err());
    }

    #[test]
    fn persists() {
        let t = LeafTable::new();
        let toy = ToyProgram::solve();
        t.lookup_or_solve(&toy, &[1, 3]).unwrap();
        t.lookup_or_solve(&toy, &[5, 5]).unwrap();
        let mut buf = Vec::new();
        t.save(&mut buf).unwrap();
        let back = LeafTable::load(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        let (_, l) = back.lookup_or_solve(&toy, &[5, 5]).unwrap();
        assert_eq!(l, Lookup::Hit);
        assert_eq!(back.solves(), 0);
        assert!(back.get("toy-program", &[5, 5]).unwrap().is_infeasible());
    }
}
