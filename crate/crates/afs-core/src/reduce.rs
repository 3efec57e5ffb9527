//! Small-step reduction over canonical forms.
//!
//! Every rule fires under a restriction: the two actors hold the two
//! endpoints of one bound pair. The standard rules pair an output with an
//! input, a selection with a branching, or a request with a replicated
//! acceptor. The cancellation rules pair a `cancel` with whatever action is
//! waiting on the peer endpoint, unwinding it one step at a time.
//! Conditionals step by themselves once their test is closed.
//!
//! Applying a redex yields the contractum re-normalized, so parallel and
//! restriction closure never need rules of their own. Each step also advances
//! the annotation of the restriction it fired under, keeping the recorded
//! protocol in lockstep with the remaining behaviour.

use std::collections::BTreeSet;

use crate::congruence::{embed, normalize, CanonicalForm, Restriction};
use crate::syntax::{fresh_name, freshen_binders_against, Expr, Object, Prefix, Process};
use crate::types::{Label, Name, PayloadType, SessionType};

/// The reduction rules, in priority order for the deterministic strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RuleName {
    RCom,
    RBra,
    RSes,
    CAcc,
    CReq,
    COut,
    CInp,
    CSel,
    CBra,
    CCat,
    EIf,
}

impl std::fmt::Display for RuleName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RuleName::RCom => "R-Com",
            RuleName::RBra => "R-Bra",
            RuleName::RSes => "R-Ses",
            RuleName::CAcc => "C-Acc",
            RuleName::CReq => "C-Req",
            RuleName::COut => "C-Out",
            RuleName::CInp => "C-Inp",
            RuleName::CSel => "C-Sel",
            RuleName::CBra => "C-Bra",
            RuleName::CCat => "C-Cat",
            RuleName::EIf => "E-If",
        };
        write!(f, "{s}")
    }
}

/// One enabled rule instance. `actors` are component indices into the
/// canonical form; for paired rules the first actor is the prefix (or cancel)
/// driving the step and the second its counterpart.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Redex {
    pub rule: RuleName,
    /// The endpoint pair the rule fires under; absent for E-If.
    pub restriction: Option<(Name, Name)>,
    pub actors: Vec<usize>,
    pub label: Option<Label>,
}

impl std::fmt::Display for Redex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.rule)?;
        if let Some((a, b)) = &self.restriction {
            write!(f, " on ({a},{b})")?;
        }
        if let Some(l) = &self.label {
            write!(f, " [label {l}]")?;
        }
        Ok(())
    }
}

/// Engine fidelity switch. The broken variants exist so the test suite can
/// prove it would notice an unfaithful engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineVariant {
    Faithful,
    /// C-Out forgets to cancel the endpoint the lost message carried.
    OutDropsObjectCancel,
    /// C-Req forgets that the service-side cancel must survive.
    ReqDropsPeerCancel,
}

impl std::fmt::Display for EngineVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EngineVariant::Faithful => write!(f, "faithful"),
            EngineVariant::OutDropsObjectCancel => write!(f, "out-drops-object-cancel"),
            EngineVariant::ReqDropsPeerCancel => write!(f, "req-drops-peer-cancel"),
        }
    }
}

/// A finished run: the start form, every step with the form it produced, and
/// whether the budget ran out before a normal form.
#[derive(Debug, Clone)]
pub struct Trace {
    pub initial: CanonicalForm,
    pub steps: Vec<(Redex, CanonicalForm)>,
    pub exhausted: bool,
}

impl Trace {
    pub fn terminal(&self) -> &CanonicalForm {
        self.steps.last().map(|(_, cf)| cf).unwrap_or(&self.initial)
    }
}

/// Evaluates a closed expression to a literal.
pub fn eval(e: &Expr) -> Result<Expr, String> {
    match e {
        Expr::Nat(_) | Expr::Str(_) | Expr::Bool(_) => Ok(e.clone()),
        Expr::Var(n) => Err(format!("unbound variable {n}")),
        Expr::Add(a, b) => match (eval(a)?, eval(b)?) {
            (Expr::Nat(x), Expr::Nat(y)) => x
                .checked_add(y)
                .map(Expr::Nat)
                .ok_or_else(|| "addition overflows".to_string()),
            _ => Err("+ needs two nats".to_string()),
        },
        Expr::Less(a, b) => match (eval(a)?, eval(b)?) {
            (Expr::Nat(x), Expr::Nat(y)) => Ok(Expr::Bool(x < y)),
            _ => Err("< needs two nats".to_string()),
        },
    }
}

/// The prefix a component is waiting on, seen through at most one docatch
/// layer, plus whether a handler is attached.
fn action_of(c: &Process) -> Option<(&Prefix, bool)> {
    match c {
        Process::Act(p) => Some((p, false)),
        Process::Catch { action, .. } => Some((action, true)),
        _ => None,
    }
}

/// How many components mention `name` free.
fn users_of(components: &[Process], name: &Name) -> usize {
    components
        .iter()
        .filter(|c| c.free_names().contains(name))
        .count()
}

/// Whether a message object can actually be delivered: names and open
/// expressions pass through, closed expressions must evaluate.
fn deliverable(object: &Object) -> bool {
    match object {
        Object::Name(_) => true,
        Object::Expr(e) => !e.is_closed() || eval(e).is_ok(),
    }
}

/// All enabled rule instances of a canonical form, sorted into the
/// deterministic firing order. An empty result means a normal form.
pub fn redexes(cf: &CanonicalForm) -> Vec<Redex> {
    let mut out = Vec::new();
    let comps = &cf.components;
    for r in &cf.restrictions {
        for (e, peer) in [(&r.left, &r.right), (&r.right, &r.left)] {
            for (i, ci) in comps.iter().enumerate() {
                match ci {
                    Process::Cancel(n) if n == e => {
                        cancellations(cf, i, e, peer, &mut out);
                    }
                    _ => {}
                }
                let Some((pi, _)) = action_of(ci) else { continue };
                if pi.subject() != e {
                    continue;
                }
                for (j, cj) in comps.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    match (pi, cj) {
                        (Prefix::Send { object, .. }, _) => {
                            let Some((Prefix::Recv { subject, .. }, _)) = action_of(cj) else {
                                continue;
                            };
                            if subject == peer && deliverable(object) {
                                out.push(Redex {
                                    rule: RuleName::RCom,
                                    restriction: Some((r.left.clone(), r.right.clone())),
                                    actors: vec![i, j],
                                    label: None,
                                });
                            }
                        }
                        (Prefix::Sel { label, .. }, _) => {
                            let Some((Prefix::Branch { subject, arms }, _)) = action_of(cj)
                            else {
                                continue;
                            };
                            if subject == peer && arms.contains_key(label) {
                                out.push(Redex {
                                    rule: RuleName::RBra,
                                    restriction: Some((r.left.clone(), r.right.clone())),
                                    actors: vec![i, j],
                                    label: Some(label.clone()),
                                });
                            }
                        }
                        (
                            Prefix::Req { object, .. },
                            Process::Accept { subject, .. },
                        ) => {
                            if subject == peer && deliverable(object) {
                                out.push(Redex {
                                    rule: RuleName::RSes,
                                    restriction: Some((r.left.clone(), r.right.clone())),
                                    actors: vec![i, j],
                                    label: None,
                                });
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    for (i, c) in comps.iter().enumerate() {
        if let Process::If { test, .. } = c {
            if test.is_closed() && matches!(eval(test), Ok(Expr::Bool(_))) {
                out.push(Redex {
                    rule: RuleName::EIf,
                    restriction: None,
                    actors: vec![i],
                    label: None,
                });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Enabled cancellation steps for the cancel at `ci` against actions on the
/// peer endpoint.
fn cancellations(cf: &CanonicalForm, ci: usize, e: &Name, peer: &Name, out: &mut Vec<Redex>) {
    let comps = &cf.components;
    let r = cf
        .restriction_of(e)
        .expect("cancelled endpoint is restriction-bound");
    let pair = Some((r.left.clone(), r.right.clone()));
    for (j, cj) in comps.iter().enumerate() {
        if j == ci {
            continue;
        }
        match cj {
            Process::Accept { subject, .. } if subject == peer => {
                out.push(Redex {
                    rule: RuleName::CAcc,
                    restriction: pair.clone(),
                    actors: vec![ci, j],
                    label: None,
                });
            }
            Process::Catch { action, .. } if action.subject() == peer => {
                out.push(Redex {
                    rule: RuleName::CCat,
                    restriction: pair.clone(),
                    actors: vec![ci, j],
                    label: None,
                });
            }
            Process::Act(p) if p.subject() == peer => {
                // The four residual-free rules only make sense when nobody
                // else shares the pair; typed terms satisfy this by
                // construction, untyped ones are kept honest here.
                let exclusive =
                    users_of(comps, e) == 1 && users_of(comps, peer) == 1;
                let redex = |rule, label| Redex {
                    rule,
                    restriction: pair.clone(),
                    actors: vec![ci, j],
                    label,
                };
                match p {
                    Prefix::Req { .. } => out.push(redex(RuleName::CReq, None)),
                    Prefix::Send { .. } if exclusive => {
                        out.push(redex(RuleName::COut, None))
                    }
                    Prefix::Recv { .. } if exclusive => {
                        out.push(redex(RuleName::CInp, None))
                    }
                    Prefix::Sel { label, .. } if exclusive => {
                        out.push(redex(RuleName::CSel, Some(label.clone())))
                    }
                    Prefix::Branch { arms, .. } if exclusive => {
                        if let Some((k, _)) = arms.last_key_value() {
                            out.push(redex(RuleName::CBra, Some(k.clone())));
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
}

/// The remaining protocol of the left endpoint after one step, when the
/// recorded annotation agrees with the step taken.
fn advance(annot: &SessionType, label: Option<&Label>) -> Option<SessionType> {
    match annot {
        SessionType::Output(_, t) | SessionType::Input(_, t) => Some((**t).clone()),
        SessionType::Select(arms) | SessionType::Branch(arms) => {
            label.and_then(|l| arms.get(l)).cloned()
        }
        _ => None,
    }
}

/// The session type the given endpoint runs on, per the annotation.
fn view(r: &Restriction, endpoint: &Name) -> SessionType {
    if *endpoint == r.left {
        r.annot.clone()
    } else {
        r.annot.dual()
    }
}

fn stale(msg: &str) -> String {
    format!("stale redex: {msg}")
}

/// Applies one redex. Fails when the redex does not match the form (a stale
/// redex from an earlier step, for instance).
pub fn apply(
    cf: &CanonicalForm,
    redex: &Redex,
    variant: EngineVariant,
) -> Result<CanonicalForm, String> {
    let mut components = cf.components.clone();
    let mut restrictions = cf.restrictions.clone();
    let get = |components: &Vec<Process>, i: usize| -> Result<Process, String> {
        components
            .get(i)
            .cloned()
            .ok_or_else(|| stale("actor index out of range"))
    };
    let r_idx = match &redex.restriction {
        Some((a, b)) => Some(
            restrictions
                .iter()
                .position(|r| r.left == *a && r.right == *b)
                .ok_or_else(|| stale("no such restriction"))?,
        ),
        None => None,
    };
    fn advance_by(r_idx: Option<usize>, restrictions: &mut [Restriction], label: Option<&Label>) {
        if let Some(i) = r_idx {
            if let Some(next) = advance(&restrictions[i].annot, label) {
                restrictions[i].annot = next;
            }
        }
    }

    match redex.rule {
        RuleName::RCom => {
            let [i, j] = actor_pair(redex)?;
            let (Prefix::Send { object, cont, .. }, _) = strip(&get(&components, i)?)? else {
                return Err(stale("sender is not an output"));
            };
            let (Prefix::Recv { binder, cont: k, .. }, _) = strip(&get(&components, j)?)?
            else {
                return Err(stale("receiver is not an input"));
            };
            let value = message_value(&object)?;
            components[i] = *cont;
            components[j] = k.subst(&binder, &value);
            advance_by(r_idx, &mut restrictions, None);
        }
        RuleName::RBra => {
            let [i, j] = actor_pair(redex)?;
            let (Prefix::Sel { label, cont, .. }, _) = strip(&get(&components, i)?)? else {
                return Err(stale("selector is not a selection"));
            };
            let (Prefix::Branch { arms, .. }, _) = strip(&get(&components, j)?)? else {
                return Err(stale("offerer is not a branching"));
            };
            let arm = arms
                .get(&label)
                .cloned()
                .ok_or_else(|| stale("label is not offered"))?;
            components[i] = *cont;
            components[j] = arm;
            advance_by(r_idx, &mut restrictions, Some(&label));
        }
        RuleName::RSes => {
            let [i, j] = actor_pair(redex)?;
            let (Prefix::Req { object, cont, .. }, _) = strip(&get(&components, i)?)? else {
                return Err(stale("requester is not a request"));
            };
            let Process::Accept { binder, body, .. } = get(&components, j)? else {
                return Err(stale("acceptor is not a replicated accept"));
            };
            let value = message_value(&object)?;
            components[i] = *cont;
            let instance = body.subst(&binder, &value);
            let used = names_of(&restrictions, &components);
            components.push(freshen_binders_against(&instance, &used));
        }
        RuleName::CAcc => {
            let [ci, j] = actor_pair(redex)?;
            expect_cancel(&get(&components, ci)?)?;
            if !matches!(get(&components, j)?, Process::Accept { .. }) {
                return Err(stale("victim is not a replicated accept"));
            }
            components[ci] = Process::Stop;
        }
        RuleName::CReq => {
            let [ci, j] = actor_pair(redex)?;
            let cancelled = expect_cancel(&get(&components, ci)?)?;
            let Process::Act(Prefix::Req { subject, object, cont }) = get(&components, j)?
            else {
                return Err(stale("victim is not a bare request"));
            };
            components[j] = *cont;
            if let Object::Name(n) = &object {
                let emit = match view_of(&restrictions, r_idx, &subject, &cancelled)? {
                    Some(SessionType::Request(p)) => matches!(p, PayloadType::Session(_)),
                    _ => true,
                };
                if emit {
                    components.push(Process::Cancel(n.clone()));
                }
            }
            if variant == EngineVariant::ReqDropsPeerCancel {
                components[ci] = Process::Stop;
            }
        }
        RuleName::COut => {
            let [ci, j] = actor_pair(redex)?;
            let cancelled = expect_cancel(&get(&components, ci)?)?;
            let Process::Act(Prefix::Send { subject, object, cont }) = get(&components, j)?
            else {
                return Err(stale("victim is not a bare output"));
            };
            components[j] = *cont;
            if let Object::Name(n) = &object {
                let emit = match view_of(&restrictions, r_idx, &subject, &cancelled)? {
                    Some(SessionType::Output(p, _)) => matches!(p, PayloadType::Session(_)),
                    _ => true,
                };
                if emit && variant != EngineVariant::OutDropsObjectCancel {
                    components.push(Process::Cancel(n.clone()));
                }
            }
            advance_by(r_idx, &mut restrictions, None);
        }
        RuleName::CInp => {
            let [ci, j] = actor_pair(redex)?;
            let cancelled = expect_cancel(&get(&components, ci)?)?;
            let Process::Act(Prefix::Recv { subject, binder, cont }) = get(&components, j)?
            else {
                return Err(stale("victim is not a bare input"));
            };
            let payload = match view_of(&restrictions, r_idx, &subject, &cancelled)? {
                Some(SessionType::Input(p, _)) => p,
                _ => PayloadType::session(SessionType::End),
            };
            components[j] = match payload {
                PayloadType::Ground(g) => {
                    cont.subst(&binder, &Object::Expr(g.default_literal()))
                }
                PayloadType::Session(s) => {
                    let mut used = names_of(&restrictions, &components);
                    let x = fresh_name(&binder, &used);
                    used.insert(x.clone());
                    let y = fresh_name(&binder, &used);
                    Process::New {
                        left: x.clone(),
                        annot: *s,
                        right: y.clone(),
                        body: Box::new(Process::par(
                            cont.subst(&binder, &Object::Name(x)),
                            Process::Cancel(y),
                        )),
                    }
                }
            };
            advance_by(r_idx, &mut restrictions, None);
        }
        RuleName::CSel => {
            let [ci, j] = actor_pair(redex)?;
            expect_cancel(&get(&components, ci)?)?;
            let Process::Act(Prefix::Sel { label, cont, .. }) = get(&components, j)? else {
                return Err(stale("victim is not a bare selection"));
            };
            components[j] = *cont;
            advance_by(r_idx, &mut restrictions, Some(&label));
        }
        RuleName::CBra => {
            let [ci, j] = actor_pair(redex)?;
            expect_cancel(&get(&components, ci)?)?;
            let Process::Act(Prefix::Branch { arms, .. }) = get(&components, j)? else {
                return Err(stale("victim is not a bare branching"));
            };
            let (label, arm) = arms
                .last_key_value()
                .map(|(l, p)| (l.clone(), p.clone()))
                .ok_or_else(|| stale("branching has no arms"))?;
            components[j] = arm;
            advance_by(r_idx, &mut restrictions, Some(&label));
        }
        RuleName::CCat => {
            let [ci, j] = actor_pair(redex)?;
            expect_cancel(&get(&components, ci)?)?;
            let Process::Catch { handler, .. } = get(&components, j)? else {
                return Err(stale("victim is not a docatch"));
            };
            components[j] = *handler;
        }
        RuleName::EIf => {
            let [i] = redex.actors[..] else {
                return Err(stale("E-If takes one actor"));
            };
            let Process::If { test, then_branch, else_branch } = get(&components, i)? else {
                return Err(stale("actor is not a conditional"));
            };
            let taken = match eval(&test) {
                Ok(Expr::Bool(true)) => then_branch,
                Ok(Expr::Bool(false)) => else_branch,
                _ => return Err(stale("test is not a closed boolean")),
            };
            components[i] = *taken;
        }
    }

    Ok(normalize(&embed(&CanonicalForm {
        restrictions,
        components,
    })))
}

fn actor_pair(redex: &Redex) -> Result<[usize; 2], String> {
    match redex.actors[..] {
        [i, j] if i != j => Ok([i, j]),
        _ => Err(stale("rule takes two distinct actors")),
    }
}

fn strip(c: &Process) -> Result<(Prefix, Option<Process>), String> {
    match c {
        Process::Act(p) => Ok((p.clone(), None)),
        Process::Catch { action, handler } => Ok((action.clone(), Some((**handler).clone()))),
        _ => Err(stale("actor has no action")),
    }
}

fn expect_cancel(c: &Process) -> Result<Name, String> {
    match c {
        Process::Cancel(n) => Ok(n.clone()),
        _ => Err(stale("actor is not a cancel")),
    }
}

/// What actually travels in a communication: names as names, closed
/// expressions as their values, open expressions as themselves.
fn message_value(object: &Object) -> Result<Object, String> {
    match object {
        Object::Name(n) => Ok(Object::Name(n.clone())),
        Object::Expr(e) if e.is_closed() => eval(e).map(Object::Expr),
        Object::Expr(e) => Ok(Object::Expr(e.clone())),
    }
}

/// The victim endpoint's recorded session type, if the redex named a
/// restriction.
fn view_of(
    restrictions: &[Restriction],
    r_idx: Option<usize>,
    subject: &Name,
    cancelled: &Name,
) -> Result<Option<SessionType>, String> {
    let Some(i) = r_idx else { return Ok(None) };
    let r = &restrictions[i];
    if (subject != &r.left && subject != &r.right) || (cancelled != &r.left && cancelled != &r.right)
    {
        return Err(stale("actors do not hold the restriction's endpoints"));
    }
    Ok(Some(view(r, subject)))
}

fn names_of(restrictions: &[Restriction], components: &[Process]) -> BTreeSet<Name> {
    let mut used = BTreeSet::new();
    for r in restrictions {
        used.insert(r.left.clone());
        used.insert(r.right.clone());
    }
    for c in components {
        c.all_names(&mut used);
    }
    used
}

/// One deterministic step: the least enabled redex, or None on a normal form.
pub fn step(
    cf: &CanonicalForm,
    variant: EngineVariant,
) -> Option<(Redex, CanonicalForm)> {
    let r = redexes(cf).into_iter().next()?;
    let next = apply(cf, &r, variant).expect("enumerated redex applies");
    Some((r, next))
}

/// The n-th enabled redex instead of the least one, for exhaustive
/// exploration.
pub fn step_indexed(
    cf: &CanonicalForm,
    n: usize,
    variant: EngineVariant,
) -> Option<(Redex, CanonicalForm)> {
    let r = redexes(cf).into_iter().nth(n)?;
    let next = apply(cf, &r, variant).expect("enumerated redex applies");
    Some((r, next))
}

/// Runs the deterministic strategy to a normal form or until the budget is
/// spent.
pub fn run(p: &Process, max_steps: usize, variant: EngineVariant) -> Trace {
    run_form(normalize(p), max_steps, variant)
}

pub fn run_form(cf: CanonicalForm, max_steps: usize, variant: EngineVariant) -> Trace {
    let mut trace = Trace {
        initial: cf,
        steps: Vec::new(),
        exhausted: false,
    };
    for _ in 0..max_steps {
        let Some((r, next)) = step(trace.terminal(), variant) else {
            return trace;
        };
        trace.steps.push((r, next));
    }
    trace.exhausted = !redexes(trace.terminal()).is_empty();
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::process;

    fn norm(src: &str) -> CanonicalForm {
        normalize(&crate::parse::program(src).unwrap().process)
    }

    fn rules(t: &Trace) -> Vec<RuleName> {
        t.steps.iter().map(|(r, _)| r.rule).collect()
    }

    #[test]
    fn communication_delivers_an_evaluated_value() {
        let cf = norm("new (a: !(nat).end, b) (send a (2 + 3). 0 | recv b (x). 0)");
        let rs = redexes(&cf);
        assert_eq!(rs.len(), 1);
        assert_eq!(rs[0].rule, RuleName::RCom);
        let next = apply(&cf, &rs[0], EngineVariant::Faithful).unwrap();
        assert!(next.is_empty());
    }

    #[test]
    fn substitution_carries_values_into_later_tests() {
        let t = run(
            &process(
                "new (a: !(nat).?(bool).end, b) \
                 (send a 5. recv a (ok). 0 \
                  | recv b (x). if x + 1 < 2 then send b true. 0 else send b false. 0)",
            )
            .unwrap(),
            10,
            EngineVariant::Faithful,
        );
        assert_eq!(
            rules(&t),
            vec![RuleName::RCom, RuleName::EIf, RuleName::RCom]
        );
        assert!(t.terminal().is_empty());
        assert!(!t.exhausted);
    }

    #[test]
    fn branch_takes_the_selected_arm() {
        let t = run(
            &process(
                "new (a: +{no: end, yes: !(nat).end}, b) \
                 (sel a yes. send a 9. 0 | branch b {no: 0, yes: recv b (x). 0})",
            )
            .unwrap(),
            10,
            EngineVariant::Faithful,
        );
        assert_eq!(rules(&t), vec![RuleName::RBra, RuleName::RCom]);
        assert_eq!(t.steps[0].0.label.as_deref(), Some("yes"));
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn annotations_follow_the_session() {
        let cf = norm("new (a: !(nat).?(bool).end, b) (send a 1. recv a (y). 0 | recv b (x). send b true. 0)");
        let (_, cf2) = step(&cf, EngineVariant::Faithful).unwrap();
        assert_eq!(cf2.restrictions.len(), 1);
        assert_eq!(
            cf2.restrictions[0].annot.to_string(),
            "?(bool).end"
        );
    }

    #[test]
    fn accept_persists_and_instances_are_renamed_apart() {
        let t = run(
            &process(
                "new (r: req (?(nat).end), s) ( \
                   acc s (x). recv x (v). 0 \
                 | new (c: ?(nat).end, c2) (req r c | send c2 1. 0) \
                 | new (d: ?(nat).end, d2) (req r d | send d2 2. 0))",
            )
            .unwrap(),
            20,
            EngineVariant::Faithful,
        );
        // After the first session starts, its communication outranks the
        // second request.
        assert_eq!(
            rules(&t),
            vec![
                RuleName::RSes,
                RuleName::RCom,
                RuleName::RSes,
                RuleName::RCom
            ]
        );
        // Only the replicated acceptor under its restriction survives.
        let nf = t.terminal();
        assert_eq!(nf.components.len(), 1);
        assert!(matches!(nf.components[0], Process::Accept { .. }));
    }

    #[test]
    fn cancel_meets_accept_and_disappears() {
        let cf = norm("new (r: req end, s) (cancel r | acc s (x). 0 | new (c: end, c2) (req r c | cancel c2))");
        let rs = redexes(&cf);
        assert!(rs.iter().any(|r| r.rule == RuleName::CAcc));
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert!(rules(&t).contains(&RuleName::CAcc));
        // The acceptor survives; the cancel is gone.
        let nf = t.terminal();
        assert!(nf
            .components
            .iter()
            .any(|c| matches!(c, Process::Accept { .. })));
        assert!(!nf
            .components
            .iter()
            .any(|c| matches!(c, Process::Cancel(n) if n == "r")));
    }

    #[test]
    fn cancelled_service_fails_the_request_and_cancels_the_argument() {
        // Two clients of a dead service: after the first request fails, the
        // service-side cancel must survive so the second can fail too.
        let cf = norm(
            "new (r: req (?(nat).end), s) (cancel s \
             | new (c: ?(nat).end, c2) (req r c | send c2 1. 0) \
             | new (d: ?(nat).end, d2) (req r d | send d2 2. 0))",
        );
        let rs = redexes(&cf);
        let creq: Vec<_> = rs.iter().filter(|r| r.rule == RuleName::CReq).collect();
        assert_eq!(creq.len(), 2);
        let next = apply(&cf, creq[0], EngineVariant::Faithful).unwrap();
        // One argument endpoint is cancelled, the service cancel survives.
        assert!(next
            .components
            .iter()
            .any(|p| matches!(p, Process::Cancel(n) if n == "c" || n == "d")));
        assert!(next
            .components
            .iter()
            .any(|p| matches!(p, Process::Cancel(n) if n == "s")));
        // Both lost sessions then unwind completely.
        let t = run_form(next, 10, EngineVariant::Faithful);
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn cancelled_peer_unwinds_an_output_and_cancels_the_payload() {
        let cf = norm(
            "new (a: !(?(nat).end).end, b) (cancel b | \
             new (c: ?(nat).end, c2) (send a c. 0 | send c2 7. 0))",
        );
        let rs = redexes(&cf);
        let cout: Vec<_> = rs.iter().filter(|r| r.rule == RuleName::COut).collect();
        assert_eq!(cout.len(), 1);
        let next = apply(&cf, cout[0], EngineVariant::Faithful).unwrap();
        assert!(next
            .components
            .iter()
            .any(|c| matches!(c, Process::Cancel(n) if n == "c")));
        // The whole residue then collapses.
        let t = run_form(next, 10, EngineVariant::Faithful);
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn ground_payloads_do_not_get_cancelled_on_loss() {
        let cf = norm("new (a: !(nat).end, b) (cancel b | send a 5. 0)");
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::COut]);
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn cancelled_input_rebinds_the_payload_as_a_cancelled_fresh_pair() {
        // recv a (x). send x c. 0 with a's peer cancelled: x is re-bound to a
        // fresh pair whose far end is cancelled, and the chain unwinds to
        // cancel c.
        let cf = norm(
            "interface { c: ?(nat).end } in \
             new (a: ?(!(?(nat).end).end).end, b) (recv a (x). send x c. 0 | cancel b)",
        );
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::CInp, RuleName::COut]);
        let nf = t.terminal();
        assert_eq!(nf.restrictions.len(), 0);
        assert_eq!(nf.components.len(), 1);
        assert!(matches!(&nf.components[0], Process::Cancel(n) if n == "c"));
    }

    #[test]
    fn ground_input_loss_substitutes_the_default_literal() {
        let cf = norm(
            "interface { d: !(nat).end } in \
             new (a: ?(nat).end, b) (recv a (x). send d (x + 1). 0 | cancel b)",
        );
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::CInp]);
        let nf = t.terminal();
        assert_eq!(nf.components.len(), 1);
        let Process::Act(Prefix::Send { object, .. }) = &nf.components[0] else {
            panic!("expected the send to d to survive");
        };
        assert_eq!(object, &Object::Expr(Expr::Add(
            Box::new(Expr::Nat(0)),
            Box::new(Expr::Nat(1)),
        )));
    }

    #[test]
    fn cancelled_branching_takes_the_greatest_label() {
        let cf = norm(
            "interface { p: req nat, q: req nat } in \
             new (a: &{alpha: end, omega: end}, b) \
             (branch a {alpha: req p (1), omega: req q (2)} | cancel b)",
        );
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::CBra]);
        assert_eq!(t.steps[0].0.label.as_deref(), Some("omega"));
        let nf = t.terminal();
        assert!(matches!(
            &nf.components[0],
            Process::Act(Prefix::Req { subject, .. }) if subject == "q"
        ));
    }

    #[test]
    fn docatch_on_a_cancelled_peer_runs_the_handler() {
        let cf = norm(
            "interface { p: req string } in \
             new (a: !(nat).end, b) \
             (do send a 1. 0 catch req p (\"err\") | cancel b)",
        );
        let t = run_form(cf, 10, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::CCat]);
        let nf = t.terminal();
        assert_eq!(nf.components.len(), 1);
        assert!(matches!(
            &nf.components[0],
            Process::Act(Prefix::Req { subject, .. }) if subject == "p"
        ));
    }

    #[test]
    fn handlers_are_discarded_on_success() {
        let t = run(
            &process(
                "new (a: !(nat).end, b) \
                 (do send a 1. 0 catch cancel a | do recv b (x). 0 catch cancel b)",
            )
            .unwrap(),
            10,
            EngineVariant::Faithful,
        );
        assert_eq!(rules(&t), vec![RuleName::RCom]);
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn free_name_actions_never_reduce() {
        let cf = norm("interface { a: !(nat).end, x: nat } in send a 5. 0 | if x < 1 then 0 else 0");
        assert!(redexes(&cf).is_empty());
    }

    #[test]
    fn open_tests_wait_for_their_values() {
        let cf = norm("interface { x: nat } in if x < 1 then 0 else 0");
        assert!(redexes(&cf).is_empty());
        let cf2 = norm("if 2 < 1 then cancel q else 0");
        let t = run_form(cf2, 5, EngineVariant::Faithful);
        assert_eq!(rules(&t), vec![RuleName::EIf]);
        assert!(t.terminal().is_empty());
    }

    #[test]
    fn deterministic_step_picks_the_least_redex() {
        // Two independent communications: the one on the lexicographically
        // first restriction pair goes first.
        let cf = norm(
            "new (a: !(nat).end, b) new (c: !(nat).end, d) \
             (send a 1. 0 | recv b (x). 0 | send c 2. 0 | recv d (y). 0)",
        );
        let rs = redexes(&cf);
        assert_eq!(rs.len(), 2);
        let (first, _) = step(&cf, EngineVariant::Faithful).unwrap();
        assert_eq!(first, rs[0]);
        assert!(rs[0] <= rs[1]);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let t = run(
            &process(
                "new (a: !(nat).!(nat).end, b) \
                 (send a 1. send a 2. 0 | recv b (x). recv b (y). 0)",
            )
            .unwrap(),
            1,
            EngineVariant::Faithful,
        );
        assert!(t.exhausted);
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn stale_redexes_are_rejected() {
        let cf = norm("new (a: !(nat).end, b) (send a 1. 0 | recv b (x). 0)");
        let r = redexes(&cf)[0].clone();
        let next = apply(&cf, &r, EngineVariant::Faithful).unwrap();
        assert!(apply(&next, &r, EngineVariant::Faithful).is_err());
    }

    #[test]
    fn broken_out_variant_loses_the_object_cancel() {
        let cf = norm(
            "new (a: !(?(nat).end).end, b) (cancel b | \
             new (c: ?(nat).end, c2) (send a c. 0 | send c2 7. 0))",
        );
        let rs = redexes(&cf);
        let cout = rs.iter().find(|r| r.rule == RuleName::COut).unwrap();
        let next = apply(&cf, cout, EngineVariant::OutDropsObjectCancel).unwrap();
        assert!(!next
            .components
            .iter()
            .any(|c| matches!(c, Process::Cancel(n) if n == "c")));
    }

    #[test]
    fn broken_req_variant_loses_the_service_cancel() {
        let src = "new (r: req (?(nat).end), s) (cancel s \
             | new (c: ?(nat).end, c2) (req r c | send c2 1. 0) \
             | new (d: ?(nat).end, d2) (req r d | send d2 2. 0))";
        let cf = norm(src);
        let creq = redexes(&cf)
            .into_iter()
            .find(|r| r.rule == RuleName::CReq)
            .unwrap();
        let good = apply(&cf, &creq, EngineVariant::Faithful).unwrap();
        let bad = apply(&cf, &creq, EngineVariant::ReqDropsPeerCancel).unwrap();
        assert!(good
            .components
            .iter()
            .any(|p| matches!(p, Process::Cancel(n) if n == "s")));
        assert!(!bad
            .components
            .iter()
            .any(|p| matches!(p, Process::Cancel(n) if n == "s")));
    }
}
