//! Observations on running processes: barbs, the active/inactive split,
//! characteristic processes, and the progress check built from them.
//!
//! A characteristic process is the canonical client of a session type: it
//! performs exactly the actions the type prescribes and nothing else, paying
//! out fresh endpoint pairs for every delegation. Composing a stuck-but-active
//! process with the characteristic process of a dual type must always create a
//! redex; `progress_check` verifies that, and reports how a program ends.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::congruence::{embed, normalize, CanonicalForm};
use crate::reduce::{run, run_form, EngineVariant, Trace};
use crate::syntax::{Object, Prefix, Process};
use crate::typecheck::{check, TypeError};
use crate::types::{Interface, Label, Name, PayloadType, SessionType};

/// The ways a parallel component can be ready to interact: a communication
/// prefix (possibly wrapped in a handler), a replicated acceptor, or a
/// cancellation. Conditionals are not atomic; they wait on their test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtomicAction {
    Prefixed(Name),
    Acceptor(Name),
    Cancellation(Name),
}

impl AtomicAction {
    pub fn subject(&self) -> &Name {
        match self {
            AtomicAction::Prefixed(n) | AtomicAction::Acceptor(n) | AtomicAction::Cancellation(n) => n,
        }
    }
}

/// Classifies a single component, if it is an atomic action.
pub fn atomic(p: &Process) -> Option<AtomicAction> {
    match p {
        Process::Act(prefix) | Process::Catch { action: prefix, .. } => {
            Some(AtomicAction::Prefixed(prefix.subject().clone()))
        }
        Process::Accept { subject, .. } => Some(AtomicAction::Acceptor(subject.clone())),
        Process::Cancel(n) => Some(AtomicAction::Cancellation(n.clone())),
        _ => None,
    }
}

/// The observable names: subjects of atomic components that are not bound by
/// one of the form's restrictions.
pub fn barbs(cf: &CanonicalForm) -> BTreeSet<Name> {
    cf.components
        .iter()
        .filter_map(atomic)
        .map(|a| a.subject().clone())
        .filter(|n| cf.restriction_of(n).is_none())
        .collect()
}

/// A form is inactive when nothing remains but replicated acceptors whose
/// subjects are all restricted: the garbage-free terminated state. The empty
/// form counts.
pub fn is_inactive(cf: &CanonicalForm) -> bool {
    cf.components.iter().all(|c| match c {
        Process::Accept { subject, .. } => cf.restriction_of(subject).is_some(),
        _ => false,
    })
}

/// Picks the labels a characteristic process selects at internal choices. The
/// default takes the least label; a scripted chooser consumes its queue first
/// (in construction order) and falls back to the least label after that.
#[derive(Debug, Clone, Default)]
pub struct Chooser {
    queue: VecDeque<Label>,
}

impl Chooser {
    /// Always selects the least label.
    pub fn least() -> Chooser {
        Chooser::default()
    }

    pub fn scripted<I>(labels: I) -> Chooser
    where
        I: IntoIterator<Item = Label>,
    {
        Chooser {
            queue: labels.into_iter().collect(),
        }
    }

    fn pick(&mut self, arms: &BTreeMap<Label, SessionType>) -> Result<Label, CharacteristicError> {
        if let Some(want) = self.queue.pop_front() {
            if !arms.contains_key(&want) {
                return Err(CharacteristicError::LabelNotOffered {
                    label: want,
                    offered: arms.keys().cloned().collect::<Vec<_>>().join(", "),
                });
            }
            return Ok(want);
        }
        match arms.keys().next() {
            Some(label) => Ok(label.clone()),
            None => Err(CharacteristicError::NoLabels),
        }
    }
}

/// Hands out names that collide with nothing seen so far. Seed it with every
/// name the surrounding term mentions; each issued name joins the avoid set.
#[derive(Debug, Clone)]
pub struct NameSupply {
    used: BTreeSet<Name>,
}

impl NameSupply {
    pub fn avoiding<I>(names: I) -> NameSupply
    where
        I: IntoIterator<Item = Name>,
    {
        NameSupply {
            used: names.into_iter().collect(),
        }
    }

    pub fn fresh(&mut self, stem: &str) -> Name {
        for k in 1.. {
            let candidate = format!("{stem}{k}");
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
        unreachable!()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CharacteristicError {
    #[error("label {label} is not offered here (offered: {offered})")]
    LabelNotOffered { label: Label, offered: String },
    #[error("a choice type with no labels has no characteristic process")]
    NoLabels,
}

/// Builds the canonical process conducting the session `t` on `a`: it follows
/// the type action for action, opening a fresh endpoint pair for each
/// delegation and serving the opposite protocol on the kept end. Ground
/// payloads are sent as default literals and received into unused binders.
///
/// The supply must avoid `a` and every name of the term this process will sit
/// next to; all binders come from it, so the result is capture-free wherever
/// it lands.
pub fn characteristic(
    a: &Name,
    t: &SessionType,
    chooser: &mut Chooser,
    supply: &mut NameSupply,
) -> Result<Process, CharacteristicError> {
    Ok(match t {
        SessionType::End => Process::Stop,
        SessionType::Output(payload, cont) => {
            let cont = characteristic(a, cont, chooser, supply)?;
            match payload {
                PayloadType::Ground(g) => Process::Act(Prefix::Send {
                    subject: a.clone(),
                    object: Object::Expr(g.default_literal()),
                    cont: Box::new(cont),
                }),
                PayloadType::Session(s) => {
                    let kept = supply.fresh("b");
                    let sent = supply.fresh("b");
                    let partner = characteristic(&kept, &s.dual(), chooser, supply)?;
                    Process::New {
                        left: kept,
                        annot: s.dual(),
                        right: sent.clone(),
                        body: Box::new(Process::par(
                            Process::Act(Prefix::Send {
                                subject: a.clone(),
                                object: Object::Name(sent),
                                cont: Box::new(cont),
                            }),
                            partner,
                        )),
                    }
                }
            }
        }
        SessionType::Input(payload, cont) => {
            let binder = supply.fresh("x");
            let cont = characteristic(a, cont, chooser, supply)?;
            let body = match payload {
                PayloadType::Ground(_) => cont,
                PayloadType::Session(s) => {
                    Process::par(cont, characteristic(&binder, s, chooser, supply)?)
                }
            };
            Process::Act(Prefix::Recv {
                subject: a.clone(),
                binder,
                cont: Box::new(body),
            })
        }
        SessionType::Select(arms) => {
            let label = chooser.pick(arms)?;
            let cont = characteristic(a, &arms[&label], chooser, supply)?;
            Process::Act(Prefix::Sel {
                subject: a.clone(),
                label,
                cont: Box::new(cont),
            })
        }
        SessionType::Branch(arms) => {
            let mut built = BTreeMap::new();
            for (label, arm) in arms {
                built.insert(label.clone(), characteristic(a, arm, chooser, supply)?);
            }
            Process::Act(Prefix::Branch {
                subject: a.clone(),
                arms: built,
            })
        }
        SessionType::Request(payload) => match payload {
            PayloadType::Ground(g) => Process::Act(Prefix::Req {
                subject: a.clone(),
                object: Object::Expr(g.default_literal()),
                cont: Box::new(Process::Stop),
            }),
            PayloadType::Session(s) => {
                let kept = supply.fresh("b");
                let sent = supply.fresh("b");
                let partner = characteristic(&kept, &s.dual(), chooser, supply)?;
                Process::New {
                    left: kept,
                    annot: s.dual(),
                    right: sent.clone(),
                    body: Box::new(Process::par(
                        Process::Act(Prefix::Req {
                            subject: a.clone(),
                            object: Object::Name(sent),
                            cont: Box::new(Process::Stop),
                        }),
                        partner,
                    )),
                }
            }
        },
        SessionType::Accept(payload) => {
            let binder = supply.fresh("x");
            let body = match payload {
                PayloadType::Ground(_) => Process::Stop,
                PayloadType::Session(s) => characteristic(&binder, s, chooser, supply)?,
            };
            Process::Accept {
                subject: a.clone(),
                binder,
                body: Box::new(body),
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Inactive,
    Active,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::Inactive => write!(f, "inactive"),
            Classification::Active => write!(f, "active"),
        }
    }
}

/// A demonstration that an active normal form can still interact: the barb it
/// was built on, the characteristic partner composed against it, and the trace
/// of the composition taking its first step.
#[derive(Debug, Clone)]
pub struct Witness {
    pub barb: Name,
    pub partner: Process,
    pub trace: Trace,
}

/// How a program ends: the classification of its normal form, the names it
/// still observes, and (when active) the interaction witness.
#[derive(Debug, Clone)]
pub struct ProgressReport {
    pub classification: Classification,
    pub barbs: BTreeSet<Name>,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgressError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("no normal form within {steps} steps")]
    Budget { steps: usize },
    #[error("progress violation: {0}")]
    Violation(String),
}

/// Types the process, runs it to a normal form, and classifies the result.
///
/// An active normal form must observe some declared name. When one of those
/// names has a session type other than `end`, the dual characteristic process
/// is composed against the form and must create a redex; the first firing step
/// is recorded as the witness. An active form whose only observations are
/// cancellations of `end`-typed names gets no witness: its dual partner is
/// inert and the leftover cancellation is plain garbage.
///
/// A `Violation` means the metatheory itself failed on this input: an active
/// typed normal form with nothing to observe, or a composition that cannot
/// react. Neither should be reachable.
pub fn progress_check(
    declared: &Interface,
    p: &Process,
    max_steps: usize,
) -> Result<ProgressReport, ProgressError> {
    check(declared, p)?;
    let trace = run(p, max_steps, EngineVariant::Faithful);
    if trace.exhausted {
        return Err(ProgressError::Budget { steps: max_steps });
    }
    let nf = trace.terminal().clone();
    let observed = barbs(&nf);
    if is_inactive(&nf) {
        return Ok(ProgressReport {
            classification: Classification::Inactive,
            barbs: observed,
            witness: None,
        });
    }
    if observed.is_empty() {
        return Err(ProgressError::Violation(
            "active normal form with no observable name".to_string(),
        ));
    }

    let qualifying = observed.iter().find_map(|n| match declared.get(n) {
        Some(PayloadType::Session(t)) if **t != SessionType::End => Some((n.clone(), (**t).clone())),
        _ => None,
    });
    let Some((barb, t)) = qualifying else {
        // Only end-typed cancellations remain observable; there is no session
        // left to conduct, so there is nothing to witness.
        return Ok(ProgressReport {
            classification: Classification::Active,
            barbs: observed,
            witness: None,
        });
    };

    let residue = embed(&nf);
    let mut avoid = BTreeSet::new();
    residue.all_names(&mut avoid);
    avoid.extend(declared.iter().map(|(n, _)| n.clone()));
    let mut supply = NameSupply::avoiding(avoid);
    let partner_end = supply.fresh(&barb);
    let partner = characteristic(&partner_end, &t.dual(), &mut Chooser::least(), &mut supply)
        .map_err(|e| ProgressError::Violation(format!("no characteristic partner: {e}")))?;

    let composition = Process::New {
        left: barb.clone(),
        annot: t,
        right: partner_end,
        body: Box::new(Process::par(residue, partner.clone())),
    };
    let witness_trace = run_form(normalize(&composition), 1, EngineVariant::Faithful);
    if witness_trace.steps.is_empty() {
        return Err(ProgressError::Violation(format!(
            "composition against the dual of {barb} has no redex"
        )));
    }
    Ok(ProgressReport {
        classification: Classification::Active,
        barbs: observed,
        witness: Some(Witness {
            barb,
            partner,
            trace: witness_trace,
        }),
    })
}

impl std::fmt::Display for ProgressReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "classification: {}", self.classification)?;
        let names: Vec<&str> = self.barbs.iter().map(|n| n.as_str()).collect();
        writeln!(f, "barbs: {{{}}}", names.join(", "))?;
        match &self.witness {
            None => write!(f, "witness: none"),
            Some(w) => {
                writeln!(f, "witness barb: {}", w.barb)?;
                writeln!(f, "witness partner: {}", w.partner)?;
                match w.trace.steps.first() {
                    Some((redex, _)) => write!(f, "witness step: {redex}"),
                    None => write!(f, "witness step: none"),
                }
            }
        }
    }
}
