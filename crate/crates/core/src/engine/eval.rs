//! Query compilation against a stream dictionary and one-shot evaluation
//! over the window content.

use std::collections::{HashMap, HashSet};

use super::buffer::{StreamBuffer, TermId, TripleKey};
use super::{ResultRow, Value};
use crate::geo::round_scaled;
use crate::model::Term;
use crate::query::{CompareOp, ContinuousQuery, Number, PatternTerm, Projection, Var};

#[derive(Debug, Clone, Copy)]
enum Slot {
    Const(TermId),
    Var(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Val {
    Term(TermId),
    Int(i64),
}

type Binding = Vec<Option<Val>>;

#[derive(Debug, Clone)]
enum Column {
    Key(usize),
    Count(usize),
    /// A projected variable outside the group keys: smallest value in the group.
    Sample(usize),
    /// Ungrouped projection of a solution variable.
    Plain(usize),
}

#[derive(Debug, Clone)]
enum HavingRef {
    Count(usize),
    Key(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledQuery {
    patterns: Vec<[Slot; 3]>,
    binds: Vec<(usize, Number, usize)>,
    group_keys: Vec<usize>,
    /// (variable, distinct) per COUNT, in projection order.
    counts: Vec<(usize, bool)>,
    columns: Vec<(String, Column)>,
    having: Option<(HavingRef, CompareOp, f64)>,
    grouped: bool,
    var_count: usize,
    pub range_ms: u64,
}

struct VarTable(Vec<Var>);

impl VarTable {
    fn slot(&mut self, v: &Var) -> usize {
        match self.0.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                self.0.push(v.clone());
                self.0.len() - 1
            }
        }
    }
}

impl CompiledQuery {
    /// Resolves constants through the stream dictionary and fixes a join
    /// order: at each step the pattern with the most bound positions runs next.
    pub(crate) fn compile(q: &ContinuousQuery, buffer: &mut StreamBuffer) -> Self {
        let mut vars = VarTable(Vec::new());
        let mut slot = |t: &PatternTerm, vars: &mut VarTable| match t {
            PatternTerm::Var(v) => Slot::Var(vars.slot(v)),
            PatternTerm::Iri(iri) => Slot::Const(buffer.dict.intern(&Term::iri(iri))),
            PatternTerm::Literal(lit) => Slot::Const(buffer.dict.intern(&Term::Literal(lit.clone()))),
        };
        let mut remaining: Vec<[Slot; 3]> = q
            .patterns
            .iter()
            .map(|p| {
                [
                    slot(&p.subject, &mut vars),
                    slot(&p.predicate, &mut vars),
                    slot(&p.object, &mut vars),
                ]
            })
            .collect();

        let mut bound: HashSet<usize> = HashSet::new();
        let mut patterns = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let score = |p: &[Slot; 3]| {
                p.iter()
                    .filter(|s| match s {
                        Slot::Const(_) => true,
                        Slot::Var(v) => bound.contains(v),
                    })
                    .count()
            };
            let mut best = 0;
            for (i, p) in remaining.iter().enumerate() {
                if score(p) > score(&remaining[best]) {
                    best = i;
                }
            }
            let p = remaining.remove(best);
            for s in p {
                if let Slot::Var(v) = s {
                    bound.insert(v);
                }
            }
            patterns.push(p);
        }

        let binds = q
            .binds
            .iter()
            .map(|b| (vars.slot(&b.source), b.factor, vars.slot(&b.target)))
            .collect();
        let group_keys: Vec<usize> = q.group_by.iter().map(|v| vars.slot(v)).collect();
        let grouped = !group_keys.is_empty() || q.count_projections().next().is_some();

        let mut columns: Vec<(String, Column)> = group_keys
            .iter()
            .enumerate()
            .map(|(i, &v)| (vars.0[v].name().to_string(), Column::Key(i)))
            .collect();
        let mut counts = Vec::new();
        for p in &q.projection {
            match p {
                Projection::Count {
                    var,
                    distinct,
                    alias,
                } => {
                    columns.push((alias.name().to_string(), Column::Count(counts.len())));
                    counts.push((vars.slot(var), *distinct));
                }
                Projection::Var(v) => {
                    if q.group_by.contains(v) {
                        continue;
                    }
                    let s = vars.slot(v);
                    let col = if grouped {
                        Column::Sample(s)
                    } else {
                        Column::Plain(s)
                    };
                    columns.push((v.name().to_string(), col));
                }
            }
        }

        let having = q.having.as_ref().and_then(|h| {
            let target = if let Some(i) = q
                .count_projections()
                .position(|(_, _, alias)| *alias == h.var)
            {
                HavingRef::Count(i)
            } else {
                HavingRef::Key(q.group_by.iter().position(|k| *k == h.var)?)
            };
            Some((target, h.op, h.value.as_f64()))
        });

        CompiledQuery {
            patterns,
            binds,
            group_keys,
            counts,
            columns,
            having,
            grouped,
            var_count: vars.0.len(),
            range_ms: q.window.range_ms,
        }
    }

    fn solve(
        &self,
        buffer: &StreamBuffer,
        depth: usize,
        lower: Option<u64>,
        binding: &mut Binding,
        out: &mut Vec<Binding>,
    ) {
        let Some(pattern) = self.patterns.get(depth) else {
            out.push(binding.clone());
            return;
        };
        let resolve = |s: Slot, binding: &Binding| -> Result<Option<TermId>, ()> {
            match s {
                Slot::Const(id) => Ok(Some(id)),
                Slot::Var(v) => match binding[v] {
                    None => Ok(None),
                    Some(Val::Term(id)) => Ok(Some(id)),
                    Some(Val::Int(_)) => Err(()),
                },
            }
        };
        let (Ok(s), Ok(p), Ok(o)) = (
            resolve(pattern[0], binding),
            resolve(pattern[1], binding),
            resolve(pattern[2], binding),
        ) else {
            return;
        };

        let candidates: Vec<TripleKey> = match (s, p, o) {
            (_, None, _) => buffer
                .all_live()
                .map(|(k, _)| *k)
                .filter(|k| s.is_none_or(|s| k[0] == s) && o.is_none_or(|o| k[2] == o))
                .collect(),
            (Some(s), Some(p), Some(o)) => vec![[s, p, o]],
            (s, Some(p), None) => buffer
                .subjects_objects(p, s)
                .map(|(s, o)| [s, p, o])
                .collect(),
            (None, Some(p), Some(o)) => buffer.subjects_of(p, o).map(|s| [s, p, o]).collect(),
        };

        for key in candidates {
            match buffer.latest(&key) {
                Some(stamp) if lower.is_none_or(|l| stamp > l) => {}
                _ => continue,
            }
            let mut newly = Vec::with_capacity(3);
            let mut consistent = true;
            for (slot, id) in pattern.iter().zip(key) {
                if let Slot::Var(v) = *slot {
                    match binding[v] {
                        None => {
                            binding[v] = Some(Val::Term(id));
                            newly.push(v);
                        }
                        Some(Val::Term(existing)) if existing == id => {}
                        Some(_) => {
                            consistent = false;
                            break;
                        }
                    }
                }
            }
            if consistent {
                self.solve(buffer, depth + 1, lower, binding, out);
            }
            for v in newly {
                binding[v] = None;
            }
        }
    }

    fn apply_binds(&self, buffer: &StreamBuffer, binding: &mut Binding) {
        for &(source, factor, target) in &self.binds {
            let value = match binding[source] {
                Some(Val::Term(id)) => match buffer.dict.term(id) {
                    Term::Literal(lit) => lit.as_f64(),
                    _ => None,
                },
                Some(Val::Int(i)) => Some(i as f64),
                None => None,
            };
            binding[target] = value.and_then(|x| match factor {
                Number::Integer(k) => round_scaled(x, k),
                Number::Decimal(k) => {
                    let r = (x * k).round();
                    (r.is_finite() && r.abs() < i64::MAX as f64).then_some(r as i64)
                }
            })
            .map(Val::Int);
        }
    }

    fn resolve(buffer: &StreamBuffer, v: Option<Val>) -> Value {
        match v {
            None => Value::Unbound,
            Some(Val::Int(i)) => Value::Int(i),
            Some(Val::Term(id)) => Value::Term(buffer.dict.term(id).clone()),
        }
    }

    /// Evaluates over triples whose latest timestamp lies in
    /// `(eval_time - range, eval_time]`. The caller has materialized the
    /// buffer up to `eval_time`.
    pub(crate) fn evaluate(&self, buffer: &StreamBuffer, eval_time: u64) -> Vec<ResultRow> {
        let lower = eval_time.checked_sub(self.range_ms);
        let mut solutions = Vec::new();
        let mut binding = vec![None; self.var_count];
        self.solve(buffer, 0, lower, &mut binding, &mut solutions);
        for s in &mut solutions {
            self.apply_binds(buffer, s);
        }

        if !self.grouped {
            let mut rows: Vec<ResultRow> = solutions
                .into_iter()
                .map(|s| ResultRow {
                    eval_time,
                    columns: self
                        .columns
                        .iter()
                        .map(|(name, col)| {
                            let v = match col {
                                Column::Plain(v) => s[*v],
                                _ => None,
                            };
                            (name.clone(), Self::resolve(buffer, v))
                        })
                        .collect(),
                })
                .collect();
            rows.sort_by(|a, b| a.columns.cmp(&b.columns));
            return rows;
        }

        struct Group {
            counts: Vec<u64>,
            distinct: Vec<HashSet<Val>>,
            samples: HashMap<usize, Value>,
        }
        let new_group = || Group {
            counts: vec![0; self.counts.len()],
            distinct: vec![HashSet::new(); self.counts.len()],
            samples: HashMap::new(),
        };
        let mut groups: HashMap<Vec<Option<Val>>, Group> = HashMap::new();
        if self.group_keys.is_empty() {
            groups.insert(Vec::new(), new_group());
        }
        for s in &solutions {
            let key: Vec<Option<Val>> = self.group_keys.iter().map(|&k| s[k]).collect();
            let group = groups.entry(key).or_insert_with(new_group);
            for (i, &(var, distinct)) in self.counts.iter().enumerate() {
                if let Some(v) = s[var] {
                    if distinct {
                        group.distinct[i].insert(v);
                    } else {
                        group.counts[i] += 1;
                    }
                }
            }
            for (_, col) in &self.columns {
                if let Column::Sample(var) = *col {
                    let candidate = Self::resolve(buffer, s[var]);
                    group
                        .samples
                        .entry(var)
                        .and_modify(|cur| {
                            if candidate < *cur {
                                *cur = candidate.clone();
                            }
                        })
                        .or_insert(candidate);
                }
            }
        }

        let mut keyed: Vec<(Vec<Value>, ResultRow)> = groups
            .into_iter()
            .filter_map(|(key, group)| {
                let counts: Vec<u64> = self
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(i, &(_, distinct))| {
                        if distinct {
                            group.distinct[i].len() as u64
                        } else {
                            group.counts[i]
                        }
                    })
                    .collect();
                let keys: Vec<Value> = key.iter().map(|v| Self::resolve(buffer, *v)).collect();
                if let Some((target, op, rhs)) = &self.having {
                    let lhs = match target {
                        HavingRef::Count(i) => Some(counts[*i] as f64),
                        HavingRef::Key(i) => keys[*i].as_f64(),
                    };
                    if !lhs.is_some_and(|lhs| op.holds(lhs, *rhs)) {
                        return None;
                    }
                }
                let columns = self
                    .columns
                    .iter()
                    .map(|(name, col)| {
                        let value = match col {
                            Column::Key(i) => keys[*i].clone(),
                            Column::Count(i) => Value::Int(counts[*i] as i64),
                            Column::Sample(var) => {
                                group.samples.get(var).cloned().unwrap_or(Value::Unbound)
                            }
                            Column::Plain(_) => Value::Unbound,
                        };
                        (name.clone(), value)
                    })
                    .collect();
                Some((keys, ResultRow { eval_time, columns }))
            })
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.into_iter().map(|(_, row)| row).collect()
    }
}
