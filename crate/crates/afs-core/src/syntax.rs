//! Process syntax: expressions, prefixes, processes, and name plumbing.
//!
//! The shape of the language:
//!
//! - prefixes carry their continuation: `send a v. P`, `recv a (x). P`,
//!   `sel a l. P`, `branch a {l: P, ...}`, `req a (v). P`
//! - process forms: inaction `0`, parallel `P | Q`, replicated acceptors
//!   `acc a (x). P`, endpoint restriction `new (a: T, b) P`, cancellation
//!   `cancel a`, failure handling `do p catch P`, and conditionals
//! - `new` binds two co-endpoints; the annotation types the left one and the
//!   right one follows the dual protocol
//!
//! Binders are kept globally distinct: the parser freshens them once and every
//! operation that could re-introduce a clash (substitution, reduction) renames
//! on the way. That keeps scope extrusion and restriction hoisting capture-free.

use std::collections::BTreeSet;
use std::fmt;

use crate::types::{Interface, Name, SessionType};

/// Ground-valued expressions: literals, variables, addition, comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Expr {
    Nat(u64),
    Str(String),
    Bool(bool),
    Var(Name),
    Add(Box<Expr>, Box<Expr>),
    Less(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn free_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Expr::Nat(_) | Expr::Str(_) | Expr::Bool(_) => {}
            Expr::Var(n) => {
                out.insert(n.clone());
            }
            Expr::Add(a, b) | Expr::Less(a, b) => {
                a.free_vars(out);
                b.free_vars(out);
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        let mut vars = BTreeSet::new();
        self.free_vars(&mut vars);
        vars.is_empty()
    }

    fn subst(&self, from: &Name, to: &Expr) -> Expr {
        match self {
            Expr::Var(n) if n == from => to.clone(),
            Expr::Nat(_) | Expr::Str(_) | Expr::Bool(_) | Expr::Var(_) => self.clone(),
            Expr::Add(a, b) => Expr::Add(Box::new(a.subst(from, to)), Box::new(b.subst(from, to))),
            Expr::Less(a, b) => {
                Expr::Less(Box::new(a.subst(from, to)), Box::new(b.subst(from, to)))
            }
        }
    }
}

/// What a send or request carries: an endpoint by name, or a ground value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Object {
    Name(Name),
    Expr(Expr),
}

impl Object {
    fn as_expr(&self) -> Expr {
        match self {
            Object::Name(n) => Expr::Var(n.clone()),
            Object::Expr(e) => e.clone(),
        }
    }
}

/// Communication actions. Each owns its continuation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Prefix {
    Send {
        subject: Name,
        object: Object,
        cont: Box<Process>,
    },
    Recv {
        subject: Name,
        binder: Name,
        cont: Box<Process>,
    },
    Sel {
        subject: Name,
        label: Name,
        cont: Box<Process>,
    },
    Branch {
        subject: Name,
        arms: std::collections::BTreeMap<Name, Process>,
    },
    Req {
        subject: Name,
        object: Object,
        cont: Box<Process>,
    },
}

impl Prefix {
    pub fn subject(&self) -> &Name {
        match self {
            Prefix::Send { subject, .. }
            | Prefix::Recv { subject, .. }
            | Prefix::Sel { subject, .. }
            | Prefix::Branch { subject, .. }
            | Prefix::Req { subject, .. } => subject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Process {
    /// Inaction, written `0`.
    Stop,
    /// A prefixed process.
    Act(Prefix),
    /// Replicated acceptor `acc a (x). P`; persists across sessions.
    Accept {
        subject: Name,
        binder: Name,
        body: Box<Process>,
    },
    Par(Box<Process>, Box<Process>),
    /// `new (a: T, b) P`: a and b are co-endpoints, a at T and b at its dual.
    New {
        left: Name,
        annot: SessionType,
        right: Name,
        body: Box<Process>,
    },
    /// Explicit discard of an endpoint, written `cancel a`.
    Cancel(Name),
    /// `do p catch P`: run the action, fall back to P if its peer is cancelled.
    Catch { action: Prefix, handler: Box<Process> },
    If {
        test: Expr,
        then_branch: Box<Process>,
        else_branch: Box<Process>,
    },
}

/// A source file: declared free names plus the process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub interface: Interface,
    pub process: Process,
}

impl Process {
    pub fn par(a: Process, b: Process) -> Process {
        Process::Par(Box::new(a), Box::new(b))
    }

    /// Every name with a free occurrence, whether as a channel or inside an
    /// expression.
    pub fn free_names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.walk_free(&mut Vec::new(), &mut out, true);
        out
    }

    /// Free names in channel positions only (subjects, endpoint objects,
    /// cancellations); expression variables are excluded.
    pub fn free_channel_names(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.walk_free(&mut Vec::new(), &mut out, false);
        out
    }

    fn walk_free(&self, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>, with_vars: bool) {
        let hit = |n: &Name, bound: &Vec<Name>, out: &mut BTreeSet<Name>| {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        };
        match self {
            Process::Stop => {}
            Process::Act(p) => walk_prefix_free(p, bound, out, with_vars),
            Process::Accept {
                subject,
                binder,
                body,
            } => {
                hit(subject, bound, out);
                bound.push(binder.clone());
                body.walk_free(bound, out, with_vars);
                bound.pop();
            }
            Process::Par(a, b) => {
                a.walk_free(bound, out, with_vars);
                b.walk_free(bound, out, with_vars);
            }
            Process::New {
                left, right, body, ..
            } => {
                bound.push(left.clone());
                bound.push(right.clone());
                body.walk_free(bound, out, with_vars);
                bound.pop();
                bound.pop();
            }
            Process::Cancel(n) => hit(n, bound, out),
            Process::Catch { action, handler } => {
                walk_prefix_free(action, bound, out, with_vars);
                handler.walk_free(bound, out, with_vars);
            }
            Process::If {
                test,
                then_branch,
                else_branch,
            } => {
                if with_vars {
                    let mut vars = BTreeSet::new();
                    test.free_vars(&mut vars);
                    for v in vars {
                        hit(&v, bound, out);
                    }
                }
                then_branch.walk_free(bound, out, with_vars);
                else_branch.walk_free(bound, out, with_vars);
            }
        }
    }

    /// Every name mentioned anywhere, free or bound. Used to pick fresh names.
    pub fn all_names(&self, out: &mut BTreeSet<Name>) {
        match self {
            Process::Stop => {}
            Process::Act(p) | Process::Catch { action: p, .. } => {
                all_prefix_names(p, out);
                if let Process::Catch { handler, .. } = self {
                    handler.all_names(out);
                }
            }
            Process::Accept {
                subject,
                binder,
                body,
            } => {
                out.insert(subject.clone());
                out.insert(binder.clone());
                body.all_names(out);
            }
            Process::Par(a, b) => {
                a.all_names(out);
                b.all_names(out);
            }
            Process::New {
                left, right, body, ..
            } => {
                out.insert(left.clone());
                out.insert(right.clone());
                body.all_names(out);
            }
            Process::Cancel(n) => {
                out.insert(n.clone());
            }
            Process::If {
                test,
                then_branch,
                else_branch,
            } => {
                test.free_vars(out);
                then_branch.all_names(out);
                else_branch.all_names(out);
            }
        }
    }

    /// Capture-avoiding substitution of a name by a communicated value.
    ///
    /// Channel positions are only rewritten when the value is a name; a ground
    /// value cannot stand as a subject, and well-typed processes never put a
    /// ground binder there. Expression positions substitute the value itself.
    pub fn subst(&self, from: &Name, value: &Object) -> Process {
        let to_expr = value.as_expr();
        let to_name = match value {
            Object::Name(n) => Some(n.clone()),
            Object::Expr(_) => None,
        };
        self.subst_inner(from, &to_name, &to_expr)
    }

    fn subst_inner(&self, from: &Name, to_name: &Option<Name>, to_expr: &Expr) -> Process {
        let chan = |n: &Name| -> Name {
            match (n == from, to_name) {
                (true, Some(t)) => t.clone(),
                _ => n.clone(),
            }
        };
        match self {
            Process::Stop => Process::Stop,
            Process::Act(p) => Process::Act(subst_prefix(p, from, to_name, to_expr)),
            Process::Accept {
                subject,
                binder,
                body,
            } => {
                let (binder, body) = guard_binder(binder, body, from, to_name);
                Process::Accept {
                    subject: chan(subject),
                    binder: binder.clone(),
                    body: Box::new(if binder_shadows(&binder, from) {
                        (*body).clone()
                    } else {
                        body.subst_inner(from, to_name, to_expr)
                    }),
                }
            }
            Process::Par(a, b) => Process::par(
                a.subst_inner(from, to_name, to_expr),
                b.subst_inner(from, to_name, to_expr),
            ),
            Process::New {
                left,
                annot,
                right,
                body,
            } => {
                let (left, body) = guard_binder(left, body, from, to_name);
                let (right, body) = guard_binder(&right.clone(), &body, from, to_name);
                Process::New {
                    left: left.clone(),
                    annot: annot.clone(),
                    right: right.clone(),
                    body: Box::new(
                        if binder_shadows(&left, from) || binder_shadows(&right, from) {
                            (*body).clone()
                        } else {
                            body.subst_inner(from, to_name, to_expr)
                        },
                    ),
                }
            }
            Process::Cancel(n) => Process::Cancel(chan(n)),
            Process::Catch { action, handler } => Process::Catch {
                action: subst_prefix(action, from, to_name, to_expr),
                handler: Box::new(handler.subst_inner(from, to_name, to_expr)),
            },
            Process::If {
                test,
                then_branch,
                else_branch,
            } => Process::If {
                test: test.subst(from, to_expr),
                then_branch: Box::new(then_branch.subst_inner(from, to_name, to_expr)),
                else_branch: Box::new(else_branch.subst_inner(from, to_name, to_expr)),
            },
        }
    }

    /// Alpha-equivalence: equality up to consistent renaming of bound names.
    pub fn alpha_eq(&self, other: &Process) -> bool {
        alpha_eq_at(self, other, &mut Vec::new())
    }
}

fn walk_prefix_free(p: &Prefix, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>, with_vars: bool) {
    let hit = |n: &Name, bound: &Vec<Name>, out: &mut BTreeSet<Name>| {
        if !bound.contains(n) {
            out.insert(n.clone());
        }
    };
    let obj = |o: &Object, bound: &Vec<Name>, out: &mut BTreeSet<Name>| match o {
        Object::Name(n) => {
            if !bound.contains(n) {
                out.insert(n.clone());
            }
        }
        Object::Expr(e) => {
            if with_vars {
                let mut vars = BTreeSet::new();
                e.free_vars(&mut vars);
                for v in vars {
                    if !bound.contains(&v) {
                        out.insert(v);
                    }
                }
            }
        }
    };
    match p {
        Prefix::Send {
            subject,
            object,
            cont,
        }
        | Prefix::Req {
            subject,
            object,
            cont,
        } => {
            hit(subject, bound, out);
            obj(object, bound, out);
            cont.walk_free(bound, out, with_vars);
        }
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => {
            hit(subject, bound, out);
            bound.push(binder.clone());
            cont.walk_free(bound, out, with_vars);
            bound.pop();
        }
        Prefix::Sel { subject, cont, .. } => {
            hit(subject, bound, out);
            cont.walk_free(bound, out, with_vars);
        }
        Prefix::Branch { subject, arms } => {
            hit(subject, bound, out);
            for arm in arms.values() {
                arm.walk_free(bound, out, with_vars);
            }
        }
    }
}

fn all_prefix_names(p: &Prefix, out: &mut BTreeSet<Name>) {
    match p {
        Prefix::Send {
            subject,
            object,
            cont,
        }
        | Prefix::Req {
            subject,
            object,
            cont,
        } => {
            out.insert(subject.clone());
            match object {
                Object::Name(n) => {
                    out.insert(n.clone());
                }
                Object::Expr(e) => e.free_vars(out),
            }
            cont.all_names(out);
        }
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => {
            out.insert(subject.clone());
            out.insert(binder.clone());
            cont.all_names(out);
        }
        Prefix::Sel { subject, cont, .. } => {
            out.insert(subject.clone());
            cont.all_names(out);
        }
        Prefix::Branch { subject, arms } => {
            out.insert(subject.clone());
            for arm in arms.values() {
                arm.all_names(out);
            }
        }
    }
}

fn binder_shadows(binder: &Name, from: &Name) -> bool {
    binder == from
}

/// Renames a binder out of the way when it would capture the incoming name.
fn guard_binder(
    binder: &Name,
    body: &Process,
    from: &Name,
    to_name: &Option<Name>,
) -> (Name, Box<Process>) {
    if let Some(t) = to_name {
        if binder == t && !binder_shadows(binder, from) {
            let mut used = body.free_names();
            used.insert(from.clone());
            used.insert(t.clone());
            let fresh = fresh_name(binder, &used);
            let renamed = body.subst(binder, &Object::Name(fresh.clone()));
            return (fresh, Box::new(renamed));
        }
    }
    (binder.clone(), Box::new(body.clone()))
}

fn subst_prefix(p: &Prefix, from: &Name, to_name: &Option<Name>, to_expr: &Expr) -> Prefix {
    let chan = |n: &Name| -> Name {
        match (n == from, to_name) {
            (true, Some(t)) => t.clone(),
            _ => n.clone(),
        }
    };
    let obj = |o: &Object| -> Object {
        match o {
            Object::Name(n) if n == from => match to_name {
                Some(t) => Object::Name(t.clone()),
                None => Object::Expr(to_expr.clone()),
            },
            Object::Name(n) => Object::Name(n.clone()),
            Object::Expr(e) => Object::Expr(e.subst(from, to_expr)),
        }
    };
    match p {
        Prefix::Send {
            subject,
            object,
            cont,
        } => Prefix::Send {
            subject: chan(subject),
            object: obj(object),
            cont: Box::new(cont.subst_inner(from, to_name, to_expr)),
        },
        Prefix::Req {
            subject,
            object,
            cont,
        } => Prefix::Req {
            subject: chan(subject),
            object: obj(object),
            cont: Box::new(cont.subst_inner(from, to_name, to_expr)),
        },
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => {
            let (binder, cont) = guard_binder(binder, cont, from, to_name);
            Prefix::Recv {
                subject: chan(subject),
                binder: binder.clone(),
                cont: Box::new(if binder_shadows(&binder, from) {
                    (*cont).clone()
                } else {
                    cont.subst_inner(from, to_name, to_expr)
                }),
            }
        }
        Prefix::Sel {
            subject,
            label,
            cont,
        } => Prefix::Sel {
            subject: chan(subject),
            label: label.clone(),
            cont: Box::new(cont.subst_inner(from, to_name, to_expr)),
        },
        Prefix::Branch { subject, arms } => Prefix::Branch {
            subject: chan(subject),
            arms: arms
                .iter()
                .map(|(l, a)| (l.clone(), a.subst_inner(from, to_name, to_expr)))
                .collect(),
        },
    }
}

fn alpha_eq_at(a: &Process, b: &Process, ctx: &mut Vec<(Name, Name)>) -> bool {
    let name_eq = |x: &Name, y: &Name, ctx: &Vec<(Name, Name)>| -> bool {
        for (l, r) in ctx.iter().rev() {
            match (l == x, r == y) {
                (true, true) => return true,
                (true, false) | (false, true) => return false,
                _ => {}
            }
        }
        x == y
    };
    match (a, b) {
        (Process::Stop, Process::Stop) => true,
        (Process::Act(p), Process::Act(q)) => alpha_eq_prefix(p, q, ctx),
        (
            Process::Accept {
                subject: s1,
                binder: x1,
                body: b1,
            },
            Process::Accept {
                subject: s2,
                binder: x2,
                body: b2,
            },
        ) => {
            if !name_eq(s1, s2, ctx) {
                return false;
            }
            ctx.push((x1.clone(), x2.clone()));
            let ok = alpha_eq_at(b1, b2, ctx);
            ctx.pop();
            ok
        }
        (Process::Par(a1, a2), Process::Par(b1, b2)) => {
            alpha_eq_at(a1, b1, ctx) && alpha_eq_at(a2, b2, ctx)
        }
        (
            Process::New {
                left: l1,
                annot: t1,
                right: r1,
                body: b1,
            },
            Process::New {
                left: l2,
                annot: t2,
                right: r2,
                body: b2,
            },
        ) => {
            if t1 != t2 {
                return false;
            }
            ctx.push((l1.clone(), l2.clone()));
            ctx.push((r1.clone(), r2.clone()));
            let ok = alpha_eq_at(b1, b2, ctx);
            ctx.pop();
            ctx.pop();
            ok
        }
        (Process::Cancel(x), Process::Cancel(y)) => name_eq(x, y, ctx),
        (
            Process::Catch {
                action: p1,
                handler: h1,
            },
            Process::Catch {
                action: p2,
                handler: h2,
            },
        ) => alpha_eq_prefix(p1, p2, ctx) && alpha_eq_at(h1, h2, ctx),
        (
            Process::If {
                test: e1,
                then_branch: t1,
                else_branch: f1,
            },
            Process::If {
                test: e2,
                then_branch: t2,
                else_branch: f2,
            },
        ) => {
            alpha_eq_expr(e1, e2, ctx) && alpha_eq_at(t1, t2, ctx) && alpha_eq_at(f1, f2, ctx)
        }
        _ => false,
    }
}

fn alpha_eq_expr(a: &Expr, b: &Expr, ctx: &Vec<(Name, Name)>) -> bool {
    let name_eq = |x: &Name, y: &Name| -> bool {
        for (l, r) in ctx.iter().rev() {
            match (l == x, r == y) {
                (true, true) => return true,
                (true, false) | (false, true) => return false,
                _ => {}
            }
        }
        x == y
    };
    match (a, b) {
        (Expr::Nat(x), Expr::Nat(y)) => x == y,
        (Expr::Str(x), Expr::Str(y)) => x == y,
        (Expr::Bool(x), Expr::Bool(y)) => x == y,
        (Expr::Var(x), Expr::Var(y)) => name_eq(x, y),
        (Expr::Add(x1, x2), Expr::Add(y1, y2)) | (Expr::Less(x1, x2), Expr::Less(y1, y2)) => {
            alpha_eq_expr(x1, y1, ctx) && alpha_eq_expr(x2, y2, ctx)
        }
        _ => false,
    }
}

fn alpha_eq_prefix(a: &Prefix, b: &Prefix, ctx: &mut Vec<(Name, Name)>) -> bool {
    let name_eq = |x: &Name, y: &Name, ctx: &Vec<(Name, Name)>| -> bool {
        for (l, r) in ctx.iter().rev() {
            match (l == x, r == y) {
                (true, true) => return true,
                (true, false) | (false, true) => return false,
                _ => {}
            }
        }
        x == y
    };
    let obj_eq = |x: &Object, y: &Object, ctx: &Vec<(Name, Name)>| -> bool {
        match (x, y) {
            (Object::Name(m), Object::Name(n)) => name_eq(m, n, ctx),
            (Object::Expr(d), Object::Expr(e)) => alpha_eq_expr(d, e, ctx),
            _ => false,
        }
    };
    match (a, b) {
        (
            Prefix::Send {
                subject: s1,
                object: o1,
                cont: c1,
            },
            Prefix::Send {
                subject: s2,
                object: o2,
                cont: c2,
            },
        )
        | (
            Prefix::Req {
                subject: s1,
                object: o1,
                cont: c1,
            },
            Prefix::Req {
                subject: s2,
                object: o2,
                cont: c2,
            },
        ) => name_eq(s1, s2, ctx) && obj_eq(o1, o2, ctx) && alpha_eq_at(c1, c2, ctx),
        (
            Prefix::Recv {
                subject: s1,
                binder: x1,
                cont: c1,
            },
            Prefix::Recv {
                subject: s2,
                binder: x2,
                cont: c2,
            },
        ) => {
            if !name_eq(s1, s2, ctx) {
                return false;
            }
            ctx.push((x1.clone(), x2.clone()));
            let ok = alpha_eq_at(c1, c2, ctx);
            ctx.pop();
            ok
        }
        (
            Prefix::Sel {
                subject: s1,
                label: l1,
                cont: c1,
            },
            Prefix::Sel {
                subject: s2,
                label: l2,
                cont: c2,
            },
        ) => name_eq(s1, s2, ctx) && l1 == l2 && alpha_eq_at(c1, c2, ctx),
        (
            Prefix::Branch {
                subject: s1,
                arms: a1,
            },
            Prefix::Branch {
                subject: s2,
                arms: a2,
            },
        ) => {
            name_eq(s1, s2, ctx)
                && a1.len() == a2.len()
                && a1.iter().zip(a2.iter()).all(|((l1, p1), (l2, p2))| {
                    l1 == l2 && alpha_eq_at(p1, p2, ctx)
                })
        }
        _ => false,
    }
}

/// Picks a name based on `base` that does not occur in `used`. A numeric
/// suffix is replaced rather than stacked, so repeated freshening stays short.
pub fn fresh_name(base: &Name, used: &BTreeSet<Name>) -> Name {
    let stem = match base.rsplit_once('_') {
        Some((s, digits)) if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) => s,
        _ => base.as_str(),
    };
    let stem = if stem.is_empty() { "x" } else { stem };
    for k in 2.. {
        let candidate = format!("{stem}_{k}");
        if !used.contains(&candidate) {
            return candidate;
        }
    }
    unreachable!()
}

/// Renames binders so that every binder is distinct from every other binder
/// and from every free name. Run once after parsing; later operations keep
/// the property.
pub fn freshen_binders(p: &Process) -> Process {
    let mut used = p.free_names();
    freshen_at(p, &mut used, &mut Vec::new())
}

/// Like [`freshen_binders`], but additionally keeps every binder clear of the
/// names in `avoid`. Used when a subterm is copied into a larger system, so
/// the copy's bound names stay distinct from everything already there.
pub fn freshen_binders_against(p: &Process, avoid: &BTreeSet<Name>) -> Process {
    let mut used = p.free_names();
    used.extend(avoid.iter().cloned());
    freshen_at(p, &mut used, &mut Vec::new())
}

fn freshen_at(p: &Process, used: &mut BTreeSet<Name>, scope: &mut Vec<(Name, Name)>) -> Process {
    let resolve = |n: &Name, scope: &Vec<(Name, Name)>| -> Name {
        for (old, new) in scope.iter().rev() {
            if old == n {
                return new.clone();
            }
        }
        n.clone()
    };
    let bind = |n: &Name, used: &mut BTreeSet<Name>, scope: &mut Vec<(Name, Name)>| -> Name {
        let fresh = if used.contains(n) {
            fresh_name(n, used)
        } else {
            n.clone()
        };
        used.insert(fresh.clone());
        scope.push((n.clone(), fresh.clone()));
        fresh
    };
    match p {
        Process::Stop => Process::Stop,
        Process::Act(prefix) => Process::Act(freshen_prefix(prefix, used, scope)),
        Process::Accept {
            subject,
            binder,
            body,
        } => {
            let subject = resolve(subject, scope);
            let binder2 = bind(binder, used, scope);
            let body = freshen_at(body, used, scope);
            scope.pop();
            Process::Accept {
                subject,
                binder: binder2,
                body: Box::new(body),
            }
        }
        Process::Par(a, b) => Process::par(freshen_at(a, used, scope), freshen_at(b, used, scope)),
        Process::New {
            left,
            annot,
            right,
            body,
        } => {
            let left2 = bind(left, used, scope);
            let right2 = bind(right, used, scope);
            let body = freshen_at(body, used, scope);
            scope.pop();
            scope.pop();
            Process::New {
                left: left2,
                annot: annot.clone(),
                right: right2,
                body: Box::new(body),
            }
        }
        Process::Cancel(n) => Process::Cancel(resolve(n, scope)),
        Process::Catch { action, handler } => Process::Catch {
            action: freshen_prefix(action, used, scope),
            handler: Box::new(freshen_at(handler, used, scope)),
        },
        Process::If {
            test,
            then_branch,
            else_branch,
        } => Process::If {
            test: freshen_expr(test, scope),
            then_branch: Box::new(freshen_at(then_branch, used, scope)),
            else_branch: Box::new(freshen_at(else_branch, used, scope)),
        },
    }
}

fn freshen_expr(e: &Expr, scope: &Vec<(Name, Name)>) -> Expr {
    let resolve = |n: &Name| -> Name {
        for (old, new) in scope.iter().rev() {
            if old == n {
                return new.clone();
            }
        }
        n.clone()
    };
    match e {
        Expr::Var(n) => Expr::Var(resolve(n)),
        Expr::Nat(_) | Expr::Str(_) | Expr::Bool(_) => e.clone(),
        Expr::Add(a, b) => Expr::Add(
            Box::new(freshen_expr(a, scope)),
            Box::new(freshen_expr(b, scope)),
        ),
        Expr::Less(a, b) => Expr::Less(
            Box::new(freshen_expr(a, scope)),
            Box::new(freshen_expr(b, scope)),
        ),
    }
}

fn freshen_prefix(p: &Prefix, used: &mut BTreeSet<Name>, scope: &mut Vec<(Name, Name)>) -> Prefix {
    let resolve = |n: &Name, scope: &Vec<(Name, Name)>| -> Name {
        for (old, new) in scope.iter().rev() {
            if old == n {
                return new.clone();
            }
        }
        n.clone()
    };
    let obj = |o: &Object, scope: &Vec<(Name, Name)>| -> Object {
        match o {
            Object::Name(n) => Object::Name(resolve(n, scope)),
            Object::Expr(e) => Object::Expr(freshen_expr(e, scope)),
        }
    };
    match p {
        Prefix::Send {
            subject,
            object,
            cont,
        } => Prefix::Send {
            subject: resolve(subject, scope),
            object: obj(object, scope),
            cont: Box::new(freshen_at(cont, used, scope)),
        },
        Prefix::Req {
            subject,
            object,
            cont,
        } => Prefix::Req {
            subject: resolve(subject, scope),
            object: obj(object, scope),
            cont: Box::new(freshen_at(cont, used, scope)),
        },
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => {
            let subject = resolve(subject, scope);
            let fresh = if used.contains(binder) {
                fresh_name(binder, used)
            } else {
                binder.clone()
            };
            used.insert(fresh.clone());
            scope.push((binder.clone(), fresh.clone()));
            let cont = freshen_at(cont, used, scope);
            scope.pop();
            Prefix::Recv {
                subject,
                binder: fresh,
                cont: Box::new(cont),
            }
        }
        Prefix::Sel {
            subject,
            label,
            cont,
        } => Prefix::Sel {
            subject: resolve(subject, scope),
            label: label.clone(),
            cont: Box::new(freshen_at(cont, used, scope)),
        },
        Prefix::Branch { subject, arms } => Prefix::Branch {
            subject: resolve(subject, scope),
            arms: arms
                .iter()
                .map(|(l, a)| (l.clone(), freshen_at(a, used, scope)))
                .collect(),
        },
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Nat(n) => write!(f, "{n}"),
            Expr::Str(s) => write!(f, "\"{}\"", escape(s)),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Var(n) => write!(f, "{n}"),
            Expr::Add(a, b) => {
                write_add_operand(f, a)?;
                write!(f, " + ")?;
                // The parser folds + to the left, so a right-nested sum
                // keeps its parentheses.
                match &**b {
                    Expr::Add(_, _) | Expr::Less(_, _) => write!(f, "({b})"),
                    _ => write!(f, "{b}"),
                }
            }
            Expr::Less(a, b) => {
                write_less_operand(f, a)?;
                write!(f, " < ")?;
                write_less_operand(f, b)
            }
        }
    }
}

fn write_add_operand(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Less(_, _) => write!(f, "({e})"),
        _ => write!(f, "{e}"),
    }
}

fn write_less_operand(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Less(_, _) => write!(f, "({e})"),
        _ => write!(f, "{e}"),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Object::Name(n) => write!(f, "{n}"),
            Object::Expr(e) if expr_is_atom(e) => write!(f, "{e}"),
            Object::Expr(e) => write!(f, "({e})"),
        }
    }
}

fn expr_is_atom(e: &Expr) -> bool {
    matches!(e, Expr::Nat(_) | Expr::Str(_) | Expr::Bool(_) | Expr::Var(_))
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prefix::Send {
                subject,
                object,
                cont,
            } => write!(f, "send {subject} {object}. {}", Tight(cont)),
            Prefix::Recv {
                subject,
                binder,
                cont,
            } => write!(f, "recv {subject} ({binder}). {}", Tight(cont)),
            Prefix::Sel {
                subject,
                label,
                cont,
            } => write!(f, "sel {subject} {label}. {}", Tight(cont)),
            Prefix::Branch { subject, arms } => {
                write!(f, "branch {subject} {{")?;
                for (i, (l, p)) in arms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}: {p}")?;
                }
                write!(f, "}}")
            }
            Prefix::Req {
                subject,
                object,
                cont,
            } => write!(f, "req {subject} ({}). {}", ReqObject(object), Tight(cont)),
        }
    }
}

/// Request objects print without the extra parenthesis layer the object
/// wrapper would add; the surrounding parens come from the request syntax.
struct ReqObject<'a>(&'a Object);

impl fmt::Display for ReqObject<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Object::Name(n) => write!(f, "{n}"),
            Object::Expr(e) => write!(f, "{e}"),
        }
    }
}

/// Prints a process, parenthesizing parallel compositions that sit in a
/// continuation or other tight position.
struct Tight<'a>(&'a Process);

impl fmt::Display for Tight<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Process::Par(_, _) => write!(f, "({})", self.0),
            _ => write!(f, "{}", self.0),
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Stop => write!(f, "0"),
            Process::Act(p) => write!(f, "{p}"),
            Process::Accept {
                subject,
                binder,
                body,
            } => write!(f, "acc {subject} ({binder}). {}", Tight(body)),
            // The parser folds | to the left, so a right-nested composition
            // must keep its parentheses to read back as itself.
            Process::Par(a, b) => write!(f, "{a} | {}", Tight(b)),
            Process::New {
                left,
                annot,
                right,
                body,
            } => write!(f, "new ({left}: {annot}, {right}) {}", Tight(body)),
            Process::Cancel(n) => write!(f, "cancel {n}"),
            Process::Catch { action, handler } => {
                write!(f, "do {action} catch {}", Tight(handler))
            }
            Process::If {
                test,
                then_branch,
                else_branch,
            } => write!(
                f,
                "if {test} then {} else {}",
                Tight(then_branch),
                Tight(else_branch)
            ),
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.interface.is_empty() {
            writeln!(f, "interface {} in", self.interface)?;
        }
        write!(f, "{}", self.process)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn send(subject: &str, object: Object, cont: Process) -> Process {
        Process::Act(Prefix::Send {
            subject: subject.into(),
            object,
            cont: Box::new(cont),
        })
    }

    fn recv(subject: &str, binder: &str, cont: Process) -> Process {
        Process::Act(Prefix::Recv {
            subject: subject.into(),
            binder: binder.into(),
            cont: Box::new(cont),
        })
    }

    #[test]
    fn free_names_see_through_binders() {
        let p = recv(
            "a",
            "x",
            send("x", Object::Name("c".into()), Process::Stop),
        );
        let free = p.free_names();
        assert_eq!(
            free.into_iter().collect::<Vec<_>>(),
            vec!["a".to_string(), "c".to_string()]
        );
    }

    #[test]
    fn channel_names_exclude_expression_variables() {
        let p = send(
            "a",
            Object::Expr(Expr::Add(
                Box::new(Expr::Var("x".into())),
                Box::new(Expr::Nat(1)),
            )),
            Process::Stop,
        );
        assert!(p.free_names().contains("x"));
        assert!(!p.free_channel_names().contains("x"));
        assert!(p.free_channel_names().contains("a"));
    }

    #[test]
    fn subst_avoids_capture() {
        // (recv a (x). send x (c). 0){x/c}: the binder must move out of the way.
        let p = recv(
            "a",
            "x",
            send("x", Object::Name("c".into()), Process::Stop),
        );
        let q = p.subst(&"c".to_string(), &Object::Name("x".to_string()));
        match &q {
            Process::Act(Prefix::Recv { binder, cont, .. }) => {
                assert_ne!(binder, "x");
                match &**cont {
                    Process::Act(Prefix::Send {
                        subject, object, ..
                    }) => {
                        assert_eq!(subject, binder);
                        assert_eq!(*object, Object::Name("x".to_string()));
                    }
                    other => panic!("unexpected continuation {other}"),
                }
            }
            other => panic!("unexpected shape {other}"),
        }
        // And the result is alpha-distinct but structurally faithful.
        assert!(q.alpha_eq(&recv(
            "a",
            "z",
            send("z", Object::Name("x".into()), Process::Stop)
        )));
    }

    #[test]
    fn shadowed_substitution_stops_at_the_binder() {
        let p = recv("a", "x", Process::Cancel("x".into()));
        let q = p.subst(&"x".to_string(), &Object::Name("b".to_string()));
        assert_eq!(p, q);
    }

    #[test]
    fn alpha_eq_tracks_binders_not_text() {
        let p = recv("a", "x", Process::Cancel("x".into()));
        let q = recv("a", "y", Process::Cancel("y".into()));
        let r = recv("a", "y", Process::Cancel("a".into()));
        assert!(p.alpha_eq(&q));
        assert!(!p.alpha_eq(&r));
    }

    #[test]
    fn freshen_separates_rebound_names() {
        // Two binders both called x, one of which collides with a free x.
        let p = Process::par(
            recv("a", "x", Process::Cancel("x".into())),
            Process::par(
                recv("b", "x", Process::Cancel("x".into())),
                Process::Cancel("x".into()),
            ),
        );
        let q = freshen_binders(&p);
        let mut binders = Vec::new();
        collect_binders(&q, &mut binders);
        assert_eq!(binders.len(), 2);
        assert_ne!(binders[0], binders[1]);
        assert!(!binders.contains(&"x".to_string()));
        assert!(q.free_names().contains("x"));
        assert!(q.alpha_eq(&p));
    }

    fn collect_binders(p: &Process, out: &mut Vec<Name>) {
        match p {
            Process::Act(Prefix::Recv { binder, cont, .. }) => {
                out.push(binder.clone());
                collect_binders(cont, out);
            }
            Process::Par(a, b) => {
                collect_binders(a, out);
                collect_binders(b, out);
            }
            _ => {}
        }
    }

    #[test]
    fn display_parenthesizes_parallel_continuations() {
        let p = send(
            "a",
            Object::Expr(Expr::Nat(5)),
            Process::par(Process::Stop, Process::Cancel("b".into())),
        );
        assert_eq!(p.to_string(), "send a 5. (0 | cancel b)");
    }

    #[test]
    fn fresh_name_replaces_suffixes() {
        let used: BTreeSet<Name> = ["x".to_string(), "x_2".to_string()].into_iter().collect();
        assert_eq!(fresh_name(&"x".to_string(), &used), "x_3");
        assert_eq!(fresh_name(&"x_2".to_string(), &used), "x_3");
    }
}
