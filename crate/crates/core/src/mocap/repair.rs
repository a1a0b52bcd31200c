use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;

use super::{MarkerFrame, RigidBodyDef, PAIRS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairConfig {
    /// Allowed deviation of any observed pairwise distance from the template, mm.
    pub tolerance_mm: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self { tolerance_mm: 5.0 }
    }
}

/// Relabeling of a body's four markers: slot `i` receives the position previously
/// carried by slot `self.0[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Permutation(pub [usize; 4]);

impl Permutation {
    pub const IDENTITY: Permutation = Permutation([0, 1, 2, 3]);

    /// All 24 permutations, identity first, in lexicographic order.
    pub fn all() -> Vec<Permutation> {
        let mut out = Vec::with_capacity(24);
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let p = [a, b, c, d];
                        let mut seen = [false; 4];
                        p.iter().for_each(|&i| seen[i] = true);
                        if seen.iter().all(|s| *s) {
                            out.push(Permutation(p));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn apply<T: Copy>(&self, slots: &[T; 4]) -> [T; 4] {
        self.0.map(|i| slots[i])
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Parses cycle notation with 1-based slots, e.g. `(2 3)` or `(1 2)(3 4)`; `()` is identity.
    pub fn parse_cycles(s: &str) -> Option<Permutation> {
        let mut p = [0, 1, 2, 3];
        let mut rest = s.trim();
        if rest == "()" {
            return Some(Permutation(p));
        }
        while !rest.is_empty() {
            let close = rest.find(')')?;
            let body = rest.strip_prefix('(')?.get(..close - 1)?;
            let cycle: Vec<usize> = body
                .split_whitespace()
                .map(|t| t.parse::<usize>().ok().filter(|v| (1..=4).contains(v)).map(|v| v - 1))
                .collect::<Option<_>>()?;
            for (k, &from) in cycle.iter().enumerate() {
                let to = cycle[(k + 1) % cycle.len()];
                p[to] = from;
            }
            rest = rest[close + 1..].trim_start();
        }
        Some(Permutation(p))
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "()");
        }
        let mut visited = [false; 4];
        for start in 0..4 {
            if visited[start] || self.0[start] == start {
                continue;
            }
            // follow where each slot's content goes: content of `from` moves to `to` when p[to] == from
            let mut cycle = vec![start];
            visited[start] = true;
            let mut cur = start;
            loop {
                let next = self.0.iter().position(|&from| from == cur).expect("bijection");
                if next == start {
                    break;
                }
                visited[next] = true;
                cycle.push(next);
                cur = next;
            }
            let parts: Vec<String> = cycle.iter().map(|i| (i + 1).to_string()).collect();
            write!(f, "({})", parts.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RepairAction {
    Relabeled(Permutation),
    /// No permutation fits; the body's markers were invalidated in this frame.
    Invalidated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairEntry {
    pub frame_index: i64,
    pub action: RepairAction,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepairLog {
    pub body_id: String,
    pub entries: Vec<RepairEntry>,
}

impl RepairLog {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Line-oriented `frame,permutation` text; invalidated frames read `frame,invalid`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            match e.action {
                RepairAction::Relabeled(p) => s.push_str(&format!("{},{}\n", e.frame_index, p)),
                RepairAction::Invalidated => s.push_str(&format!("{},invalid\n", e.frame_index)),
            }
        }
        s
    }

    /// Parses the text written by [`RepairLog::to_text`].
    pub fn from_text(body_id: &str, text: &str) -> Option<RepairLog> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (frame, action) = l.split_once(',')?;
                let frame_index = frame.trim().parse().ok()?;
                let action = match action.trim() {
                    "invalid" => RepairAction::Invalidated,
                    p => RepairAction::Relabeled(Permutation::parse_cycles(p)?),
                };
                Some(RepairEntry { frame_index, action })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(RepairLog {
            body_id: body_id.to_string(),
            entries,
        })
    }
}

fn deviations(def: &RigidBodyDef, slots: &[Option<Point3>; 4]) -> (f64, f64) {
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    for (i, j) in PAIRS {
        if let (Some(a), Some(b)) = (slots[i], slots[j]) {
            let dev = ((a - b).norm() - def.template_distance(i, j)).abs();
            total += dev;
            worst = worst.max(dev);
        }
    }
    (total, worst)
}

/// Detects frames whose intra-body distances disagree with the template and relabels
/// them with the best of the 24 permutations; frames no permutation can fix lose the
/// body's markers.
pub fn repair_labels(
    frames: &[MarkerFrame],
    def: &RigidBodyDef,
    config: &RepairConfig,
) -> (Vec<MarkerFrame>, RepairLog) {
    let perms = Permutation::all();
    let mut log = RepairLog {
        body_id: def.body_id.clone(),
        entries: Vec::new(),
    };
    let mut out = frames.to_vec();
    for frame in &mut out {
        let slots: [Option<Point3>; 4] = std::array::from_fn(|i| frame.position(&def.marker_ids[i]));
        let (_, worst) = deviations(def, &slots);
        if worst <= config.tolerance_mm {
            continue;
        }
        let mut best = (Permutation::IDENTITY, f64::INFINITY, f64::INFINITY);
        for p in &perms {
            let (total, worst) = deviations(def, &p.apply(&slots));
            if total < best.1 {
                best = (*p, total, worst);
            }
        }
        let action = if best.2 <= config.tolerance_mm && !best.0.is_identity() {
            let relabeled = best.0.apply(&slots);
            for (id, pos) in def.marker_ids.iter().zip(relabeled) {
                frame.set_position(id, pos);
            }
            RepairAction::Relabeled(best.0)
        } else {
            for id in &def.marker_ids {
                if frame.markers.iter().any(|m| &m.id == id) {
                    frame.set_position(id, None);
                }
            }
            RepairAction::Invalidated
        };
        log.entries.push(RepairEntry {
            frame_index: frame.frame_index,
            action,
        });
    }
    (out, log)
}
