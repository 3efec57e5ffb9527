//! Canonical forms and structural congruence.
//!
//! A canonical form is a flat view of a process: the restrictions hoisted to
//! the top, over a sorted bag of parallel components. Normalization applies
//! the congruence axioms that have a direction worth taking:
//!
//! - parallel composition is flattened and `0` components dropped
//! - top-level restrictions are hoisted (binders are freshened first, so
//!   scope extrusion never captures)
//! - duplicate cancellations collapse
//! - dead restrictions are collected: both ends cancelled, one end cancelled
//!   with the other unused, or neither end mentioned
//!
//! Equality of canonical forms is `congruent`, which matches components up to
//! a bijection on restriction-bound names (endpoint pairs may also match
//! swapped, dualizing the annotation). Free names never rename.

use std::collections::BTreeSet;

use crate::syntax::{Prefix, Process};
use crate::types::{Name, SessionType};

/// One hoisted restriction. The left endpoint carries the annotation; the
/// right endpoint follows the dual protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restriction {
    pub left: Name,
    pub annot: SessionType,
    pub right: Name,
}

impl Restriction {
    /// The annotation as seen from `endpoint`, or None if the name is not an
    /// endpoint of this restriction.
    pub fn view(&self, endpoint: &str) -> Option<SessionType> {
        if self.left == endpoint {
            Some(self.annot.clone())
        } else if self.right == endpoint {
            Some(self.annot.dual())
        } else {
            None
        }
    }

    /// The opposite endpoint, if `endpoint` is one of the two.
    pub fn peer(&self, endpoint: &str) -> Option<&Name> {
        if self.left == endpoint {
            Some(&self.right)
        } else if self.right == endpoint {
            Some(&self.left)
        } else {
            None
        }
    }
}

/// A process with restrictions hoisted and parallel components flattened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalForm {
    pub restrictions: Vec<Restriction>,
    pub components: Vec<Process>,
}

impl CanonicalForm {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn restriction_of(&self, endpoint: &str) -> Option<&Restriction> {
        self.restrictions
            .iter()
            .find(|r| r.left == endpoint || r.right == endpoint)
    }
}

impl std::fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", embed(self))
    }
}

/// Rebuilds an ordinary process from a canonical form.
pub fn embed(cf: &CanonicalForm) -> Process {
    let mut body = match cf.components.split_first() {
        None => Process::Stop,
        Some((first, rest)) => rest
            .iter()
            .fold(first.clone(), |acc, c| Process::par(acc, c.clone())),
    };
    for r in cf.restrictions.iter().rev() {
        body = Process::New {
            left: r.left.clone(),
            annot: r.annot.clone(),
            right: r.right.clone(),
            body: Box::new(body),
        };
    }
    body
}

/// Computes the canonical form of a process.
pub fn normalize(p: &Process) -> CanonicalForm {
    // Hoisting is scope extrusion, which is only sound when no bound name
    // collides with a free name or another binder. Parsed terms satisfy this
    // already (freshening leaves them untouched); terms built directly may
    // not, so rename collisions away before extruding.
    let p = crate::syntax::freshen_binders(p);
    let mut restrictions = Vec::new();
    let mut components = Vec::new();
    flatten(&p, &mut restrictions, &mut components);

    // Duplicate cancellations collapse.
    let mut seen_cancels = BTreeSet::new();
    components.retain(|c| match c {
        Process::Stop => false,
        Process::Cancel(n) => seen_cancels.insert(n.clone()),
        _ => true,
    });

    // Collect dead restrictions until nothing changes.
    loop {
        let mut drop_restriction = None;
        for (i, r) in restrictions.iter().enumerate() {
            let uses_left = occurrences(&components, &r.left);
            let uses_right = occurrences(&components, &r.right);
            let cancel_left = components
                .iter()
                .position(|c| *c == Process::Cancel(r.left.clone()));
            let cancel_right = components
                .iter()
                .position(|c| *c == Process::Cancel(r.right.clone()));
            let only_cancel_left = uses_left == 1 && cancel_left.is_some();
            let only_cancel_right = uses_right == 1 && cancel_right.is_some();
            let dead = (uses_left == 0 && uses_right == 0)
                || (only_cancel_left && uses_right == 0)
                || (only_cancel_right && uses_left == 0)
                || (only_cancel_left && only_cancel_right);
            if dead {
                drop_restriction = Some((i, cancel_left, cancel_right, uses_left, uses_right));
                break;
            }
        }
        let Some((i, cancel_left, cancel_right, uses_left, uses_right)) = drop_restriction else {
            break;
        };
        restrictions.remove(i);
        let mut to_drop = Vec::new();
        if uses_left == 1 {
            if let Some(ci) = cancel_left {
                to_drop.push(ci);
            }
        }
        if uses_right == 1 {
            if let Some(ci) = cancel_right {
                to_drop.push(ci);
            }
        }
        to_drop.sort_unstable();
        for ci in to_drop.into_iter().rev() {
            components.remove(ci);
        }
    }

    components.sort();

    // Restrictions in order of first use within the sorted components, ties by
    // endpoint names. Every survivor is used somewhere.
    let first_use = |r: &Restriction| -> (usize, Name, Name) {
        let idx = components
            .iter()
            .position(|c| {
                let free = c.free_names();
                free.contains(&r.left) || free.contains(&r.right)
            })
            .unwrap_or(usize::MAX);
        (idx, r.left.clone(), r.right.clone())
    };
    restrictions.sort_by_key(first_use);

    CanonicalForm {
        restrictions,
        components,
    }
}

fn flatten(p: &Process, restrictions: &mut Vec<Restriction>, components: &mut Vec<Process>) {
    match p {
        Process::Par(a, b) => {
            flatten(a, restrictions, components);
            flatten(b, restrictions, components);
        }
        Process::New {
            left,
            annot,
            right,
            body,
        } => {
            restrictions.push(Restriction {
                left: left.clone(),
                annot: annot.clone(),
                right: right.clone(),
            });
            flatten(body, restrictions, components);
        }
        other => components.push(other.clone()),
    }
}

/// Free occurrences of `name` across all components.
fn occurrences(components: &[Process], name: &Name) -> usize {
    components
        .iter()
        .filter(|c| c.free_names().contains(name))
        .count()
}

/// Structural congruence on processes.
pub fn congruent(p: &Process, q: &Process) -> bool {
    congruent_forms(&normalize(p), &normalize(q))
}

/// Structural congruence on canonical forms: component bags must match under
/// some bijection of restriction-bound names.
pub fn congruent_forms(a: &CanonicalForm, b: &CanonicalForm) -> bool {
    if a.restrictions.len() != b.restrictions.len() || a.components.len() != b.components.len() {
        return false;
    }
    let mut binding = Binding::new();
    let mut used_b = vec![false; b.restrictions.len()];
    match_restrictions(a, b, 0, &mut used_b, &mut binding)
}

/// The evolving bijection between a-side and b-side restriction endpoints.
/// Free names stay fixed: a name not in the map must equal its counterpart.
struct Binding {
    pairs: Vec<(Name, Name)>,
}

impl Binding {
    fn new() -> Binding {
        Binding { pairs: Vec::new() }
    }

    fn push(&mut self, a: Name, b: Name) {
        self.pairs.push((a, b));
    }

    fn truncate(&mut self, len: usize) {
        self.pairs.truncate(len);
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }
}

fn match_restrictions(
    a: &CanonicalForm,
    b: &CanonicalForm,
    i: usize,
    used_b: &mut Vec<bool>,
    binding: &mut Binding,
) -> bool {
    if i == a.restrictions.len() {
        let mut used_components = vec![false; b.components.len()];
        return match_components(a, b, 0, &mut used_components, binding);
    }
    let ra = &a.restrictions[i];
    for j in 0..b.restrictions.len() {
        if used_b[j] {
            continue;
        }
        let rb = &b.restrictions[j];
        let mark = binding.len();
        // Straight: left-left, right-right, equal annotations.
        if ra.annot == rb.annot {
            used_b[j] = true;
            binding.push(ra.left.clone(), rb.left.clone());
            binding.push(ra.right.clone(), rb.right.clone());
            if match_restrictions(a, b, i + 1, used_b, binding) {
                return true;
            }
            binding.truncate(mark);
            used_b[j] = false;
        }
        // Swapped: left-right, right-left, dual annotations.
        if ra.annot == rb.annot.dual() {
            used_b[j] = true;
            binding.push(ra.left.clone(), rb.right.clone());
            binding.push(ra.right.clone(), rb.left.clone());
            if match_restrictions(a, b, i + 1, used_b, binding) {
                return true;
            }
            binding.truncate(mark);
            used_b[j] = false;
        }
    }
    false
}

fn match_components(
    a: &CanonicalForm,
    b: &CanonicalForm,
    i: usize,
    used: &mut Vec<bool>,
    binding: &Binding,
) -> bool {
    if i == a.components.len() {
        return true;
    }
    let ca = &a.components[i];
    let key = shape_key(ca);
    for j in 0..b.components.len() {
        if used[j] {
            continue;
        }
        let cb = &b.components[j];
        if shape_key(cb) != key {
            continue;
        }
        if mapped_alpha_eq(ca, cb, binding) {
            used[j] = true;
            if match_components(a, b, i + 1, used, binding) {
                return true;
            }
            used[j] = false;
        }
    }
    false
}

/// A cheap structural fingerprint used to prune component matching.
fn shape_key(p: &Process) -> String {
    let mut out = String::new();
    shape_of(p, &mut out);
    out
}

fn shape_of(p: &Process, out: &mut String) {
    match p {
        Process::Stop => out.push('0'),
        Process::Act(pr) => shape_of_prefix(pr, out),
        Process::Accept { body, .. } => {
            out.push('a');
            shape_of(body, out);
        }
        Process::Par(a, b) => {
            out.push('|');
            shape_of(a, out);
            shape_of(b, out);
        }
        Process::New { body, .. } => {
            out.push('n');
            shape_of(body, out);
        }
        Process::Cancel(_) => out.push('k'),
        Process::Catch { action, handler } => {
            out.push('d');
            shape_of_prefix(action, out);
            shape_of(handler, out);
        }
        Process::If {
            then_branch,
            else_branch,
            ..
        } => {
            out.push('i');
            shape_of(then_branch, out);
            shape_of(else_branch, out);
        }
    }
}

fn shape_of_prefix(p: &Prefix, out: &mut String) {
    match p {
        Prefix::Send { cont, .. } => {
            out.push('!');
            shape_of(cont, out);
        }
        Prefix::Recv { cont, .. } => {
            out.push('?');
            shape_of(cont, out);
        }
        Prefix::Sel { label, cont, .. } => {
            out.push('s');
            out.push_str(label);
            shape_of(cont, out);
        }
        Prefix::Branch { arms, .. } => {
            out.push('b');
            for (l, p) in arms {
                out.push_str(l);
                shape_of(p, out);
            }
        }
        Prefix::Req { cont, .. } => {
            out.push('r');
            shape_of(cont, out);
        }
    }
}

/// Alpha-equivalence where free names are compared through the restriction
/// binding instead of textually.
fn mapped_alpha_eq(a: &Process, b: &Process, binding: &Binding) -> bool {
    // Rename a's mapped names to b's, avoiding the names already on the b
    // side, then compare alpha-structurally.
    let mut renamed = a.clone();
    for (from, to) in &binding.pairs {
        if from != to {
            renamed = renamed.subst(from, &crate::syntax::Object::Name(placeholder(to)));
        }
    }
    for (from, to) in &binding.pairs {
        if from != to {
            renamed = renamed.subst(&placeholder(to), &crate::syntax::Object::Name(to.clone()));
        }
    }
    renamed.alpha_eq(b)
}

fn placeholder(base: &Name) -> Name {
    format!("\u{1}{base}")
}
