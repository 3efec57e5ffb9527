//! The affine typing discipline.
//!
//! `check` confirms that a process uses every name it touches according to a
//! declared interface, and tells the caller exactly what was consumed. The
//! rules in force:
//!
//! - linear endpoints are used exactly once per step of their protocol and
//!   must be driven to `end` (or handed off, or cancelled)
//! - request endpoints and ground values may be shared and dropped freely
//! - acceptors are unique: exactly one replicated acceptor serves a service
//!   endpoint, and its body may only capture request-typed names
//! - each restriction cuts two disjoint groups of components; a restriction
//!   whose endpoints meet through an earlier cut is rejected as a cycle
//! - `do p catch P` requires the handler to finish everything the action
//!   would have finished, except the cancelled subject itself, which the
//!   handler may only keep using if it is a request endpoint
//!
//! Checking a component threads the remaining type of each endpoint through
//! the prefix chain, so the usage reported for a name is always the full type
//! it had when the component started.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::congruence::{normalize, CanonicalForm};
use crate::syntax::{Expr, Object, Prefix, Process};
use crate::types::{GroundType, Interface, Name, PayloadType, SessionType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeErrorKind {
    UnusedLinear,
    IllFormedContext,
    DualityMismatch,
    SubjectMismatch,
    CatchInterfaceMismatch,
    SessionCycle,
    MissingAccept,
    PayloadMismatch,
    UnknownName,
    BranchLabelMismatch,
}

impl fmt::Display for TypeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TypeErrorKind::UnusedLinear => "unused linear endpoint",
            TypeErrorKind::IllFormedContext => "ill-formed context",
            TypeErrorKind::DualityMismatch => "duality mismatch",
            TypeErrorKind::SubjectMismatch => "subject mismatch",
            TypeErrorKind::CatchInterfaceMismatch => "catch interface mismatch",
            TypeErrorKind::SessionCycle => "session cycle",
            TypeErrorKind::MissingAccept => "missing acceptor",
            TypeErrorKind::PayloadMismatch => "payload mismatch",
            TypeErrorKind::UnknownName => "unknown name",
            TypeErrorKind::BranchLabelMismatch => "branch label mismatch",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{location}: {kind}: {detail}")]
pub struct TypeError {
    pub kind: TypeErrorKind,
    pub location: String,
    pub detail: String,
}

impl TypeError {
    fn new(kind: TypeErrorKind, location: &str, detail: String) -> TypeError {
        TypeError {
            kind,
            location: location.to_string(),
            detail,
        }
    }
}

type Env = BTreeMap<Name, PayloadType>;
type UseMap = BTreeMap<Name, PayloadType>;

/// How the components of one parallel layer group under its restrictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CutTree {
    /// A single component, by index into the canonical form.
    Component(usize),
    /// Components joined by sharing a request endpoint.
    Mix(Vec<CutTree>),
    /// Two groups joined through a restriction.
    Cut {
        left: Name,
        right: Name,
        first: Box<CutTree>,
        second: Box<CutTree>,
    },
}

/// The forest of cut trees for a top-level parallel layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub roots: Vec<CutTree>,
}

/// Checks `p` against the declared interface and reports what it consumed.
pub fn check(declared: &Interface, p: &Process) -> Result<Interface, TypeError> {
    let env: Env = declared
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let (usage, _) = check_body(&env, p, "top")?;
    for (name, ty) in declared.iter() {
        if !usage.contains_key(name) {
            if matches!(ty, PayloadType::Session(t) if matches!(**t, SessionType::Accept(_))) {
                return Err(TypeError::new(
                    TypeErrorKind::MissingAccept,
                    "top",
                    format!("declared acceptor {name} is never installed"),
                ));
            }
            if !ty.is_weakenable() {
                return Err(TypeError::new(
                    TypeErrorKind::UnusedLinear,
                    "top",
                    format!("declared {name}: {ty} is never used"),
                ));
            }
        }
    }
    Ok(Interface::from_entries(usage)
        .expect("usage maps have unique names"))
}

/// Checks a whole program.
pub fn check_program(p: &crate::syntax::Program) -> Result<Interface, TypeError> {
    check(&p.interface, &p.process)
}

/// Groups the top-level components of `p` by the restrictions that connect
/// them. Fails with the same errors as `check`.
pub fn split_restrictions(declared: &Interface, p: &Process) -> Result<Grouping, TypeError> {
    let env: Env = declared
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let (_, grouping) = check_body(&env, p, "top")?;
    Ok(grouping)
}

/// Checks one parallel layer: normalizes, brings restriction endpoints into
/// scope, checks each component, merges usage, and audits the cuts.
fn check_body(env: &Env, p: &Process, loc: &str) -> Result<(UseMap, Grouping), TypeError> {
    let cf = normalize(p);
    let mut env2 = env.clone();
    for r in &cf.restrictions {
        for (name, ty) in [
            (&r.left, r.annot.clone()),
            (&r.right, r.annot.dual()),
        ] {
            if env2
                .insert(name.clone(), PayloadType::session(ty))
                .is_some()
            {
                return Err(TypeError::new(
                    TypeErrorKind::IllFormedContext,
                    loc,
                    format!("restriction endpoint {name} shadows an existing name"),
                ));
            }
        }
    }

    let mut usages = Vec::with_capacity(cf.components.len());
    for (i, c) in cf.components.iter().enumerate() {
        let loc_i = format!("{loc} » component {i}");
        usages.push(check_component(&env2, c, &loc_i)?);
    }

    let grouping = audit_cuts(&cf, &usages, loc)?;

    let mut merged: UseMap = BTreeMap::new();
    for u in &usages {
        merge_parallel(&mut merged, u, loc)?;
    }

    for r in &cf.restrictions {
        for (name, ty) in [(&r.left, r.annot.clone()), (&r.right, r.annot.dual())] {
            match merged.remove(name) {
                Some(_) => {}
                None => {
                    if matches!(ty, SessionType::Accept(_)) {
                        return Err(TypeError::new(
                            TypeErrorKind::MissingAccept,
                            loc,
                            format!("endpoint {name}: {ty} has no acceptor"),
                        ));
                    }
                    if !ty.is_weakenable() {
                        return Err(TypeError::new(
                            TypeErrorKind::UnusedLinear,
                            loc,
                            format!("endpoint {name}: {ty} is never used"),
                        ));
                    }
                }
            }
        }
    }

    Ok((merged, grouping))
}

/// Union-find over component indices: components touching the same endpoint
/// mix, the two endpoint groups of each restriction cut. Two endpoints that
/// already share a group before their own cut form a cycle.
fn audit_cuts(
    cf: &CanonicalForm,
    usages: &[UseMap],
    loc: &str,
) -> Result<Grouping, TypeError> {
    let n = usages.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut trees: BTreeMap<usize, CutTree> =
        (0..n).map(|i| (i, CutTree::Component(i))).collect();

    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    fn mix_users(
        parent: &mut Vec<usize>,
        trees: &mut BTreeMap<usize, CutTree>,
        users: &[usize],
    ) -> Option<usize> {
        let mut roots: Vec<usize> = users.iter().map(|&u| find(parent, u)).collect();
        roots.sort_unstable();
        roots.dedup();
        match roots.split_first() {
            None => None,
            Some((&first, rest)) if rest.is_empty() => Some(first),
            Some((&first, rest)) => {
                let mut parts = vec![trees.remove(&first).expect("root has a tree")];
                for &r in rest {
                    parts.push(trees.remove(&r).expect("root has a tree"));
                    parent[r] = first;
                }
                trees.insert(first, CutTree::Mix(parts));
                Some(first)
            }
        }
    }

    for r in &cf.restrictions {
        let users_left: Vec<usize> = (0..n)
            .filter(|&i| usages[i].contains_key(&r.left))
            .collect();
        let users_right: Vec<usize> = (0..n)
            .filter(|&i| usages[i].contains_key(&r.right))
            .collect();
        let left_root = mix_users(&mut parent, &mut trees, &users_left);
        let right_root = mix_users(&mut parent, &mut trees, &users_right);
        if let (Some(lr), Some(rr)) = (left_root, right_root) {
            let lr = find(&mut parent, lr);
            let rr = find(&mut parent, rr);
            if lr == rr {
                return Err(TypeError::new(
                    TypeErrorKind::SessionCycle,
                    loc,
                    format!(
                        "endpoints {} and {} already meet before their own restriction",
                        r.left, r.right
                    ),
                ));
            }
            let first = trees.remove(&lr).expect("root has a tree");
            let second = trees.remove(&rr).expect("root has a tree");
            parent[rr] = lr;
            trees.insert(
                lr,
                CutTree::Cut {
                    left: r.left.clone(),
                    right: r.right.clone(),
                    first: Box::new(first),
                    second: Box::new(second),
                },
            );
        }
    }

    let mut seen = BTreeSet::new();
    let mut roots = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        if seen.insert(root) {
            roots.push(trees.remove(&root).expect("root has a tree"));
        }
    }
    Ok(Grouping { roots })
}

fn check_component(env: &Env, c: &Process, loc: &str) -> Result<UseMap, TypeError> {
    match c {
        Process::Stop => Ok(BTreeMap::new()),
        Process::Act(prefix) => check_prefix(env, prefix, loc),
        Process::Par(_, _) | Process::New { .. } => {
            let (usage, _) = check_body(env, c, loc)?;
            Ok(usage)
        }
        Process::Cancel(n) => {
            let ty = lookup(env, n, loc)?;
            if matches!(ty, PayloadType::Ground(_)) {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    loc,
                    format!("cancel {n}: a {ty} value is not an endpoint"),
                ));
            }
            Ok(BTreeMap::from([(n.clone(), ty.clone())]))
        }
        Process::Accept {
            subject,
            binder,
            body,
        } => {
            let loc = format!("{loc} » acc {subject}");
            let payload = match lookup(env, subject, &loc)? {
                PayloadType::Session(t) => match &**t {
                    SessionType::Accept(p) => p.clone(),
                    other => {
                        return Err(TypeError::new(
                            TypeErrorKind::SubjectMismatch,
                            &loc,
                            format!("acc on {subject}: {other}"),
                        ))
                    }
                },
                g => {
                    return Err(TypeError::new(
                        TypeErrorKind::SubjectMismatch,
                        &loc,
                        format!("acc on {subject}: {g}"),
                    ))
                }
            };
            let mut env2 = env.clone();
            bind(&mut env2, binder, payload.clone(), &loc)?;
            let (mut usage, _) = check_body(&env2, body, &loc)?;
            if usage.remove(binder).is_none() && !payload.is_weakenable() {
                return Err(TypeError::new(
                    TypeErrorKind::UnusedLinear,
                    &loc,
                    format!("accepted endpoint {binder}: {payload} is never used"),
                ));
            }
            for (n, ty) in &usage {
                let is_request = matches!(
                    ty,
                    PayloadType::Session(t) if matches!(**t, SessionType::Request(_))
                );
                if !is_request {
                    return Err(TypeError::new(
                        TypeErrorKind::IllFormedContext,
                        &loc,
                        format!(
                            "replicated body captures {n}: {ty}; only request endpoints may cross"
                        ),
                    ));
                }
            }
            usage.insert(
                subject.clone(),
                PayloadType::session(SessionType::Accept(payload)),
            );
            Ok(usage)
        }
        Process::Catch { action, handler } => {
            let loc_act = format!("{loc} » do {}", head_of(action));
            let usage_act = check_prefix(env, action, &loc_act)?;
            let subject = action.subject();
            let (usage_h, _) = check_body(env, handler, &format!("{loc} » catch"))?;
            if usage_h.contains_key(subject) {
                let at_request = matches!(
                    env.get(subject),
                    Some(PayloadType::Session(t)) if matches!(**t, SessionType::Request(_))
                );
                if !at_request {
                    return Err(TypeError::new(
                        TypeErrorKind::CatchInterfaceMismatch,
                        &loc_act,
                        format!("handler keeps using {subject}, which is not a request endpoint"),
                    ));
                }
            }
            for (n, ty) in &usage_act {
                if n == subject {
                    continue;
                }
                if !usage_h.contains_key(n) && !ty.is_weakenable() {
                    return Err(TypeError::new(
                        TypeErrorKind::CatchInterfaceMismatch,
                        &loc_act,
                        format!("handler drops {n}: {ty}, which the action consumes"),
                    ));
                }
            }
            for (n, ty) in &usage_h {
                if n == subject {
                    continue;
                }
                if !usage_act.contains_key(n) && !ty.is_weakenable() {
                    return Err(TypeError::new(
                        TypeErrorKind::CatchInterfaceMismatch,
                        &loc_act,
                        format!("handler consumes {n}: {ty}, which the action leaves alone"),
                    ));
                }
            }
            let mut usage = usage_act;
            for (n, ty) in usage_h {
                usage.entry(n).or_insert(ty);
            }
            Ok(usage)
        }
        Process::If {
            test,
            then_branch,
            else_branch,
        } => {
            let loc = format!("{loc} » if");
            let (ty, mut usage) = type_expr(env, test, &loc)?;
            if ty != GroundType::Bool {
                return Err(TypeError::new(
                    TypeErrorKind::PayloadMismatch,
                    &loc,
                    format!("condition has type {ty}, not bool"),
                ));
            }
            let (u_then, _) = check_body(env, then_branch, &format!("{loc} » then"))?;
            let (u_else, _) = check_body(env, else_branch, &format!("{loc} » else"))?;
            let arms = combine_arms(
                vec![("then".to_string(), u_then), ("else".to_string(), u_else)],
                &loc,
            )?;
            for (n, t) in arms {
                usage.entry(n).or_insert(t);
            }
            Ok(usage)
        }
    }
}

fn head_of(p: &Prefix) -> String {
    match p {
        Prefix::Send { subject, .. } => format!("send {subject}"),
        Prefix::Recv { subject, .. } => format!("recv {subject}"),
        Prefix::Sel { subject, label, .. } => format!("sel {subject} {label}"),
        Prefix::Branch { subject, .. } => format!("branch {subject}"),
        Prefix::Req { subject, .. } => format!("req {subject}"),
    }
}

fn check_prefix(env: &Env, prefix: &Prefix, loc: &str) -> Result<UseMap, TypeError> {
    let loc = format!("{loc} » {}", head_of(prefix));
    let subject = prefix.subject().clone();
    let full = lookup(env, &subject, &loc)?.clone();
    let session = match &full {
        PayloadType::Session(t) => (**t).clone(),
        PayloadType::Ground(g) => {
            return Err(TypeError::new(
                TypeErrorKind::SubjectMismatch,
                &loc,
                format!("{subject} is a {g} value, not an endpoint"),
            ))
        }
    };
    match prefix {
        Prefix::Send { object, cont, .. } => {
            let SessionType::Output(payload, next) = session else {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    &loc,
                    format!("send on {subject}: {session}"),
                ));
            };
            let mut env2 = env.clone();
            let usage_obj = consume_object(&mut env2, object, &payload, &loc)?;
            env2.insert(subject.clone(), PayloadType::Session(next.clone()));
            let (mut usage, _) = check_body(&env2, cont, &loc)?;
            discharge(&mut usage, &subject, &next, &loc)?;
            finish_prefix(usage, usage_obj, subject, full, &loc)
        }
        Prefix::Req { object, cont, .. } => {
            let SessionType::Request(payload) = session else {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    &loc,
                    format!("req on {subject}: {session}"),
                ));
            };
            let mut env2 = env.clone();
            let usage_obj = consume_object(&mut env2, object, &payload, &loc)?;
            let (usage, _) = check_body(&env2, cont, &loc)?;
            finish_prefix(usage, usage_obj, subject, full, &loc)
        }
        Prefix::Recv { binder, cont, .. } => {
            let SessionType::Input(payload, next) = session else {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    &loc,
                    format!("recv on {subject}: {session}"),
                ));
            };
            let mut env2 = env.clone();
            bind(&mut env2, binder, payload.clone(), &loc)?;
            env2.insert(subject.clone(), PayloadType::Session(next.clone()));
            let (mut usage, _) = check_body(&env2, cont, &loc)?;
            if usage.remove(binder).is_none() && !payload.is_weakenable() {
                return Err(TypeError::new(
                    TypeErrorKind::UnusedLinear,
                    &loc,
                    format!("received endpoint {binder}: {payload} is never used"),
                ));
            }
            discharge(&mut usage, &subject, &next, &loc)?;
            finish_prefix(usage, BTreeMap::new(), subject, full, &loc)
        }
        Prefix::Sel { label, cont, .. } => {
            let SessionType::Select(arms) = session else {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    &loc,
                    format!("sel on {subject}: {session}"),
                ));
            };
            let Some(next) = arms.get(label) else {
                return Err(TypeError::new(
                    TypeErrorKind::BranchLabelMismatch,
                    &loc,
                    format!(
                        "label {label} is not offered; available: {}",
                        arms.keys().cloned().collect::<Vec<_>>().join(", ")
                    ),
                ));
            };
            let mut env2 = env.clone();
            env2.insert(subject.clone(), PayloadType::session(next.clone()));
            let (mut usage, _) = check_body(&env2, cont, &loc)?;
            discharge(&mut usage, &subject, next, &loc)?;
            finish_prefix(usage, BTreeMap::new(), subject, full, &loc)
        }
        Prefix::Branch { arms, .. } => {
            let SessionType::Branch(tarms) = session else {
                return Err(TypeError::new(
                    TypeErrorKind::SubjectMismatch,
                    &loc,
                    format!("branch on {subject}: {session}"),
                ));
            };
            let offered: Vec<&Name> = arms.keys().collect();
            let expected: Vec<&Name> = tarms.keys().collect();
            if offered != expected {
                return Err(TypeError::new(
                    TypeErrorKind::BranchLabelMismatch,
                    &loc,
                    format!(
                        "arms {{{}}} do not match type labels {{{}}}",
                        offered
                            .iter()
                            .map(|s| s.as_str())
                            .collect::<Vec<_>>()
                            .join(", "),
                        expected
                            .iter()
                            .map(|s| s.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                ));
            }
            let mut checked = Vec::new();
            for (label, body) in arms {
                let next = &tarms[label];
                let mut env2 = env.clone();
                env2.insert(subject.clone(), PayloadType::session(next.clone()));
                let arm_loc = format!("{loc} » arm {label}");
                let (mut usage, _) = check_body(&env2, body, &arm_loc)?;
                discharge(&mut usage, &subject, next, &arm_loc)?;
                checked.push((label.clone(), usage));
            }
            let usage = combine_arms(checked, &loc)?;
            finish_prefix(usage, BTreeMap::new(), subject, full, &loc)
        }
    }
}

/// Installs the subject's full entry into the usage returned for a prefix.
fn finish_prefix(
    mut usage: UseMap,
    usage_obj: UseMap,
    subject: Name,
    full: PayloadType,
    loc: &str,
) -> Result<UseMap, TypeError> {
    merge_parallel(&mut usage, &usage_obj, loc)?;
    usage.insert(subject, full);
    Ok(usage)
}

/// Type-checks a message object against the expected payload and consumes it
/// from the environment when it is a linear endpoint.
fn consume_object(
    env: &mut Env,
    object: &Object,
    payload: &PayloadType,
    loc: &str,
) -> Result<UseMap, TypeError> {
    match payload {
        PayloadType::Session(want) => {
            let Object::Name(c) = object else {
                return Err(TypeError::new(
                    TypeErrorKind::PayloadMismatch,
                    loc,
                    format!("payload {want} needs an endpoint name, not a value"),
                ));
            };
            let got = lookup(env, c, loc)?.clone();
            match got {
                PayloadType::Session(have) if have == *want => {}
                PayloadType::Session(have) => {
                    return Err(TypeError::new(
                        TypeErrorKind::DualityMismatch,
                        loc,
                        format!("{c} follows {have} but the payload needs {want}"),
                    ))
                }
                PayloadType::Ground(g) => {
                    return Err(TypeError::new(
                        TypeErrorKind::PayloadMismatch,
                        loc,
                        format!("{c} is a {g} value but the payload needs {want}"),
                    ))
                }
            }
            env.remove(c);
            Ok(BTreeMap::from([(
                c.clone(),
                PayloadType::Session(want.clone()),
            )]))
        }
        PayloadType::Ground(g) => match object {
            Object::Name(c) => {
                let got = lookup(env, c, loc)?.clone();
                match got {
                    PayloadType::Ground(h) if h == *g => {
                        Ok(BTreeMap::from([(c.clone(), PayloadType::Ground(h))]))
                    }
                    other => Err(TypeError::new(
                        TypeErrorKind::PayloadMismatch,
                        loc,
                        format!("{c} has type {other} but the payload needs {g}"),
                    )),
                }
            }
            Object::Expr(e) => {
                let (ty, usage) = type_expr(env, e, loc)?;
                if ty != *g {
                    return Err(TypeError::new(
                        TypeErrorKind::PayloadMismatch,
                        loc,
                        format!("value has type {ty} but the payload needs {g}"),
                    ));
                }
                Ok(usage)
            }
        },
    }
}

/// After a prefix, its subject must either be consumed by the continuation or
/// be at a droppable type.
fn discharge(
    usage: &mut UseMap,
    subject: &Name,
    next: &SessionType,
    loc: &str,
) -> Result<(), TypeError> {
    if usage.remove(subject).is_none() && !next.is_weakenable() {
        return Err(TypeError::new(
            TypeErrorKind::UnusedLinear,
            loc,
            format!("{subject} must continue as {next} but is never used again"),
        ));
    }
    Ok(())
}

fn lookup<'a>(env: &'a Env, name: &Name, loc: &str) -> Result<&'a PayloadType, TypeError> {
    env.get(name).ok_or_else(|| {
        TypeError::new(
            TypeErrorKind::UnknownName,
            loc,
            format!("{name} is not in scope"),
        )
    })
}

fn bind(env: &mut Env, binder: &Name, ty: PayloadType, loc: &str) -> Result<(), TypeError> {
    if env.insert(binder.clone(), ty).is_some() {
        return Err(TypeError::new(
            TypeErrorKind::IllFormedContext,
            loc,
            format!("binder {binder} shadows an existing name"),
        ));
    }
    Ok(())
}

/// Merges usage of parallel pieces; a shared name must be duplicable.
fn merge_parallel(into: &mut UseMap, from: &UseMap, loc: &str) -> Result<(), TypeError> {
    for (n, ty) in from {
        match into.get(n) {
            None => {
                into.insert(n.clone(), ty.clone());
            }
            Some(old) if old == ty && ty.is_duplicable() => {}
            Some(old) if old == ty => {
                return Err(TypeError::new(
                    TypeErrorKind::IllFormedContext,
                    loc,
                    format!("{n}: {ty} is used by more than one parallel component"),
                ))
            }
            Some(old) => {
                return Err(TypeError::new(
                    TypeErrorKind::IllFormedContext,
                    loc,
                    format!("{n} is used at both {old} and {ty}"),
                ))
            }
        }
    }
    Ok(())
}

/// Merges usage of alternative arms; a name missing from some arm must be
/// droppable there.
fn combine_arms(arms: Vec<(String, UseMap)>, loc: &str) -> Result<UseMap, TypeError> {
    let mut union: UseMap = BTreeMap::new();
    for (_, u) in &arms {
        for (n, ty) in u {
            union.entry(n.clone()).or_insert_with(|| ty.clone());
        }
    }
    for (n, ty) in &union {
        if ty.is_weakenable() {
            continue;
        }
        for (label, u) in &arms {
            if !u.contains_key(n) {
                return Err(TypeError::new(
                    TypeErrorKind::UnusedLinear,
                    loc,
                    format!("{n}: {ty} is consumed in some arms but not in arm {label}"),
                ));
            }
        }
    }
    Ok(union)
}

/// Types an expression and reports the ground names it reads.
fn type_expr(env: &Env, e: &Expr, loc: &str) -> Result<(GroundType, UseMap), TypeError> {
    match e {
        Expr::Nat(_) => Ok((GroundType::Nat, BTreeMap::new())),
        Expr::Str(_) => Ok((GroundType::Str, BTreeMap::new())),
        Expr::Bool(_) => Ok((GroundType::Bool, BTreeMap::new())),
        Expr::Var(n) => match lookup(env, n, loc)? {
            PayloadType::Ground(g) => {
                Ok((*g, BTreeMap::from([(n.clone(), PayloadType::Ground(*g))])))
            }
            PayloadType::Session(t) => Err(TypeError::new(
                TypeErrorKind::PayloadMismatch,
                loc,
                format!("endpoint {n}: {t} used as a value"),
            )),
        },
        Expr::Add(a, b) => {
            let mut usage = expect_ground(env, a, GroundType::Nat, loc)?;
            let ub = expect_ground(env, b, GroundType::Nat, loc)?;
            for (n, t) in ub {
                usage.entry(n).or_insert(t);
            }
            Ok((GroundType::Nat, usage))
        }
        Expr::Less(a, b) => {
            let mut usage = expect_ground(env, a, GroundType::Nat, loc)?;
            let ub = expect_ground(env, b, GroundType::Nat, loc)?;
            for (n, t) in ub {
                usage.entry(n).or_insert(t);
            }
            Ok((GroundType::Bool, usage))
        }
    }
}

fn expect_ground(
    env: &Env,
    e: &Expr,
    want: GroundType,
    loc: &str,
) -> Result<UseMap, TypeError> {
    let (got, usage) = type_expr(env, e, loc)?;
    if got != want {
        return Err(TypeError::new(
            TypeErrorKind::PayloadMismatch,
            loc,
            format!("operand has type {got}, not {want}"),
        ));
    }
    Ok(usage)
}
