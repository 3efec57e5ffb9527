//! The property suite: generates typed processes, damages them with
//! cancellations, and checks the metatheory on everything reachable.
//!
//! Generation goes through characteristic processes: a random session type is
//! turned into the composition of its two canonical endpoints, which is closed
//! and well-typed by construction. Mutation then injects the affine fragment,
//! in three ways:
//!
//! - a request client may be duplicated (requests are shareable)
//! - a prefixed subterm may be truncated to cancellations of everything the
//!   discarded remainder held
//! - a prefix may be wrapped in a handler that cancels whatever the action
//!   would have delegated
//!
//! Every case derives its own seed from the suite seed, so a failing case
//! reproduces alone: run the suite again with the reported seed and one case.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{characteristic, progress_check, Chooser, Classification, NameSupply};
use crate::congruence::{congruent_forms, embed, normalize, CanonicalForm};
use crate::reduce::{apply, redexes, EngineVariant, Redex, RuleName};
use crate::syntax::{freshen_binders_against, Object, Prefix, Process};
use crate::typecheck::check;
use crate::types::{GroundType, Interface, Name, PayloadType, SessionType};

/// Budgets per case: reduction steps explored, distinct forms kept, redex
/// pairs tested for the diamond property, and shrink attempts on a failure.
const STEP_BUDGET: usize = 200;
const FORM_BUDGET: usize = 64;
const PAIR_BUDGET: usize = 128;
const SHRINK_BUDGET: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub cases: usize,
    pub max_type_depth: usize,
    pub max_labels: usize,
    pub mutation_rate: f64,
}

impl Default for GenConfig {
    fn default() -> GenConfig {
        GenConfig {
            seed: 42,
            cases: 1000,
            max_type_depth: 5,
            max_labels: 3,
            mutation_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("cases must be at least 1")]
    NoCases,
    #[error("type depth must be at least 1")]
    NoDepth,
    #[error("label count must be at least 1")]
    NoLabels,
    #[error("mutation rate must lie in [0, 1]")]
    BadRate,
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cases < 1 {
            return Err(ConfigError::NoCases);
        }
        if self.max_type_depth < 1 {
            return Err(ConfigError::NoDepth);
        }
        if self.max_labels < 1 {
            return Err(ConfigError::NoLabels);
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(ConfigError::BadRate);
        }
        Ok(())
    }

    /// The seed driving one case. Feeding it back as the suite seed with
    /// `cases = 1` rebuilds exactly that case.
    pub fn case_seed(&self, case: usize) -> u64 {
        self.seed
            .wrapping_add((case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Draws a session type of bounded depth, uniform-ish over the constructors.
/// Depth 1 forces `end`; payloads go ground with probability 0.3.
pub fn gen_type(cfg: &GenConfig, rng: &mut impl Rng) -> SessionType {
    gen_type_at(cfg, cfg.max_type_depth, rng)
}

fn gen_type_at(cfg: &GenConfig, depth: usize, rng: &mut impl Rng) -> SessionType {
    if depth <= 1 {
        return SessionType::End;
    }
    match rng.gen_range(0..7) {
        0 => SessionType::End,
        1 => {
            let p = gen_payload(cfg, depth - 1, rng);
            SessionType::output(p, gen_type_at(cfg, depth - 1, rng))
        }
        2 => {
            let p = gen_payload(cfg, depth - 1, rng);
            SessionType::input(p, gen_type_at(cfg, depth - 1, rng))
        }
        3 => SessionType::Select(gen_arms(cfg, depth, rng)),
        4 => SessionType::Branch(gen_arms(cfg, depth, rng)),
        5 => SessionType::Request(gen_payload(cfg, depth - 1, rng)),
        _ => SessionType::Accept(gen_payload(cfg, depth - 1, rng)),
    }
}

fn gen_payload(cfg: &GenConfig, depth: usize, rng: &mut impl Rng) -> PayloadType {
    if rng.gen_bool(0.3) {
        PayloadType::Ground(match rng.gen_range(0..3) {
            0 => GroundType::Nat,
            1 => GroundType::Str,
            _ => GroundType::Bool,
        })
    } else {
        PayloadType::session(gen_type_at(cfg, depth, rng))
    }
}

fn gen_arms(
    cfg: &GenConfig,
    depth: usize,
    rng: &mut impl Rng,
) -> std::collections::BTreeMap<Name, SessionType> {
    let count = rng.gen_range(1..=cfg.max_labels);
    (1..=count)
        .map(|i| (format!("l{i}"), gen_type_at(cfg, depth - 1, rng)))
        .collect()
}

/// The closed composition of both canonical endpoints of `t`:
/// `new (a1: t, a2) (characteristic(a1, t) | characteristic(a2, dual t))`.
pub fn gen_session_pair(t: &SessionType) -> Process {
    let mut supply = NameSupply::avoiding(["a1".to_string(), "a2".to_string()]);
    let left = characteristic(&"a1".to_string(), t, &mut Chooser::least(), &mut supply)
        .expect("the default chooser is total");
    let right = characteristic(
        &"a2".to_string(),
        &t.dual(),
        &mut Chooser::least(),
        &mut supply,
    )
    .expect("the default chooser is total");
    Process::New {
        left: "a1".to_string(),
        annot: t.clone(),
        right: "a2".to_string(),
        body: Box::new(Process::par(left, right)),
    }
}

/// Damages a characteristic composition while keeping it well-typed: request
/// clients duplicate, prefixed subterms collapse into cancellations, and
/// prefixes gain cancelling handlers, each with probability `mutation_rate`
/// per position. Rate zero returns the process unchanged.
pub fn mutate_cancel(p: &Process, cfg: &GenConfig, rng: &mut impl Rng) -> Process {
    let mut taken = BTreeSet::new();
    p.all_names(&mut taken);
    let duplicated = duplicate_requests(p, cfg, rng, &mut taken);
    cancel_pass(&duplicated, cfg, rng)
}

/// A request cluster is the shape the characteristic request clause builds:
/// a restriction whose body pairs `req s (sent). 0` with the partner of the
/// kept end. Each such cluster may be copied next to itself; the copy asks
/// the same service again through freshly named endpoints.
fn duplicate_requests(
    p: &Process,
    cfg: &GenConfig,
    rng: &mut impl Rng,
    taken: &mut BTreeSet<Name>,
) -> Process {
    match p {
        Process::Stop | Process::Cancel(_) => p.clone(),
        Process::Act(prefix) => Process::Act(duplicate_in_prefix(prefix, cfg, rng, taken)),
        Process::Accept {
            subject,
            binder,
            body,
        } => Process::Accept {
            subject: subject.clone(),
            binder: binder.clone(),
            body: Box::new(duplicate_requests(body, cfg, rng, taken)),
        },
        Process::Par(a, b) => Process::par(
            duplicate_requests(a, cfg, rng, taken),
            duplicate_requests(b, cfg, rng, taken),
        ),
        Process::New {
            left,
            annot,
            right,
            body,
        } => {
            let body = duplicate_requests(body, cfg, rng, taken);
            let rebuilt = Process::New {
                left: left.clone(),
                annot: annot.clone(),
                right: right.clone(),
                body: Box::new(body),
            };
            if is_request_cluster(&rebuilt) && rng.gen_bool(cfg.mutation_rate) {
                let copy = freshen_binders_against(&rebuilt, taken);
                copy.all_names(taken);
                Process::par(rebuilt, copy)
            } else {
                rebuilt
            }
        }
        Process::Catch { action, handler } => Process::Catch {
            action: duplicate_in_prefix(action, cfg, rng, taken),
            handler: Box::new(duplicate_requests(handler, cfg, rng, taken)),
        },
        Process::If {
            test,
            then_branch,
            else_branch,
        } => Process::If {
            test: test.clone(),
            then_branch: Box::new(duplicate_requests(then_branch, cfg, rng, taken)),
            else_branch: Box::new(duplicate_requests(else_branch, cfg, rng, taken)),
        },
    }
}

fn duplicate_in_prefix(
    prefix: &Prefix,
    cfg: &GenConfig,
    rng: &mut impl Rng,
    taken: &mut BTreeSet<Name>,
) -> Prefix {
    match prefix {
        Prefix::Send {
            subject,
            object,
            cont,
        } => Prefix::Send {
            subject: subject.clone(),
            object: object.clone(),
            cont: Box::new(duplicate_requests(cont, cfg, rng, taken)),
        },
        Prefix::Req {
            subject,
            object,
            cont,
        } => Prefix::Req {
            subject: subject.clone(),
            object: object.clone(),
            cont: Box::new(duplicate_requests(cont, cfg, rng, taken)),
        },
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => Prefix::Recv {
            subject: subject.clone(),
            binder: binder.clone(),
            cont: Box::new(duplicate_requests(cont, cfg, rng, taken)),
        },
        Prefix::Sel {
            subject,
            label,
            cont,
        } => Prefix::Sel {
            subject: subject.clone(),
            label: label.clone(),
            cont: Box::new(duplicate_requests(cont, cfg, rng, taken)),
        },
        Prefix::Branch { subject, arms } => Prefix::Branch {
            subject: subject.clone(),
            arms: arms
               .iter()
                .map(|(l, a)| (l.clone(), duplicate_requests(a, cfg, rng, taken)))
                .collect(),
        },
    }
}

fn is_request_cluster(p: &Process) -> bool {
    let Process::New { right, body, .. } = p else {
        return false;
    };
    let Process::Par(first, _) = &**body else {
        return false;
    };
    matches!(
        &**first,
        Process::Act(Prefix::Req {
            object: Object::Name(n),
            ..
        }) if n == right
    )
}

fn cancel_pass(p: &Process, cfg: &GenConfig, rng: &mut impl Rng) -> Process {
    match p {
        Process::Stop | Process::Cancel(_) => p.clone(),
        Process::Act(prefix) => {
            if rng.gen_bool(cfg.mutation_rate) {
                return truncate(prefix);
            }
            let mutated = cancel_in_prefix(prefix, cfg, rng);
            if rng.gen_bool(cfg.mutation_rate) {
                Process::Catch {
                    handler: Box::new(wrap_handler(&mutated)),
                    action: mutated,
                }
            } else {
                Process::Act(mutated)
            }
        }
        Process::Accept {
            subject,
            binder,
            body,
        } => Process::Accept {
            subject: subject.clone(),
            binder: binder.clone(),
            body: Box::new(cancel_pass(body, cfg, rng)),
        },
        Process::Par(a, b) => {
            Process::par(cancel_pass(a, cfg, rng), cancel_pass(b, cfg, rng))
        }
        Process::New {
            left,
            annot,
            right,
            body,
        } => Process::New {
            left: left.clone(),
            annot: annot.clone(),
            right: right.clone(),
            body: Box::new(cancel_pass(body, cfg, rng)),
        },
        Process::Catch { action, handler } => Process::Catch {
            action: cancel_in_prefix(action, cfg, rng),
            handler: Box::new(cancel_pass(handler, cfg, rng)),
        },
        Process::If {
            test,
            then_branch,
            else_branch,
        } => Process::If {
            test: test.clone(),
            then_branch: Box::new(cancel_pass(then_branch, cfg, rng)),
            else_branch: Box::new(cancel_pass(else_branch, cfg, rng)),
        },
    }
}

fn cancel_in_prefix(prefix: &Prefix, cfg: &GenConfig, rng: &mut impl Rng) -> Prefix {
    match prefix {
        Prefix::Send {
            subject,
            object,
            cont,
        } => Prefix::Send {
            subject: subject.clone(),
            object: object.clone(),
            cont: Box::new(cancel_pass(cont, cfg, rng)),
        },
        Prefix::Req {
            subject,
            object,
            cont,
        } => Prefix::Req {
            subject: subject.clone(),
            object: object.clone(),
            cont: Box::new(cancel_pass(cont, cfg, rng)),
        },
        Prefix::Recv {
            subject,
            binder,
            cont,
        } => Prefix::Recv {
            subject: subject.clone(),
            binder: binder.clone(),
            cont: Box::new(cancel_pass(cont, cfg, rng)),
        },
        Prefix::Sel {
            subject,
            label,
            cont,
        } => Prefix::Sel {
            subject: subject.clone(),
            label: label.clone(),
            cont: Box::new(cancel_pass(cont, cfg, rng)),
        },
        Prefix::Branch { subject, arms } => Prefix::Branch {
            subject: subject.clone(),
            arms: arms
                .iter()
                .map(|(l, a)| (l.clone(), cancel_pass(a, cfg, rng)))
                .collect(),
        },
    }
}

/// Replaces a prefixed subterm by cancellations: one for the subject, one for
/// every other session endpoint the discarded remainder held free. Bound
/// binders disappear with the term; the rules cancel their lost values at
/// reduction time instead.
fn truncate(prefix: &Prefix) -> Process {
    let subject = prefix.subject().clone();
    let mut out = Process::Cancel(subject.clone());
    for name in Process::Act(prefix.clone()).free_channel_names() {
        if name != subject {
            out = Process::par(out, Process::Cancel(name));
        }
    }
    out
}

/// The handler for a wrapped prefix: cancel whatever the action would have
/// handed over. The subject itself is the peer's to cancel.
fn wrap_handler(prefix: &Prefix) -> Process {
    let subject = prefix.subject();
    let mut cancels: Vec<Process> = Process::Act(prefix.clone())
        .free_channel_names()
        .into_iter()
        .filter(|n| n != subject)
        .map(Process::Cancel)
        .collect();
    match cancels.len() {
        0 => Process::Stop,
        _ => {
            let first = cancels.remove(0);
            cancels.into_iter().fold(first, Process::par)
        }
    }
}

/// Everything reachable from one start form within the budgets, with each
/// form's one-step successors and the set of rules seen firing.
struct Exploration {
    forms: Vec<CanonicalForm>,
    successors: Vec<Vec<(Redex, CanonicalForm)>>,
    rules: BTreeSet<RuleName>,
}

fn explore(p: &Process, variant: EngineVariant) -> Result<Exploration, String> {
    let mut forms = vec![normalize(p)];
    let mut successors: Vec<Vec<(Redex, CanonicalForm)>> = Vec::new();
    let mut rules = BTreeSet::new();
    let mut applications = 0;
    let mut i = 0;
    while i < forms.len() && applications < STEP_BUDGET {
        let form = forms[i].clone();
        let mut succs = Vec::new();
        for redex in redexes(&form) {
            if applications >= STEP_BUDGET {
                break;
            }
            applications += 1;
            let next = apply(&form, &redex, variant)
                .map_err(|e| format!("engine defect applying {redex}: {e}"))?;
            rules.insert(redex.rule);
            if forms.len() < FORM_BUDGET && !forms.iter().any(|f| congruent_forms(f, &next)) {
                forms.push(next.clone());
            }
            succs.push((redex, next));
        }
        successors.push(succs);
        i += 1;
    }
    Ok(Exploration {
        forms,
        successors,
        rules,
    })
}

/// Re-types every contractum of every reachable form. Returns the rules that
/// fired; a failure reports the step that left typing.
pub fn check_subject_reduction(
    p: &Process,
    variant: EngineVariant,
) -> Result<BTreeSet<RuleName>, String> {
    let ex = explore(p, variant)?;
    let empty = Interface::new();
    for (form, succs) in ex.forms.iter().zip(&ex.successors) {
        for (redex, next) in succs {
            if let Err(e) = check(&empty, &embed(next)) {
                return Err(format!(
                    "{redex} breaks typing: {e}; from {form}; to {next}"
                ));
            }
        }
    }
    Ok(ex.rules)
}

/// Checks that any two redexes of any reachable form either land on congruent
/// forms or rejoin after one more step each.
pub fn check_diamond(p: &Process, variant: EngineVariant) -> Result<(), String> {
    let ex = explore(p, variant)?;
    let mut pairs = 0;
    for (form, succs) in ex.forms.iter().zip(&ex.successors) {
        for i in 0..succs.len() {
            for j in i + 1..succs.len() {
                if pairs >= PAIR_BUDGET {
                    return Ok(());
                }
                pairs += 1;
                let (r1, q1) = &succs[i];
                let (r2, q2) = &succs[j];
                if congruent_forms(q1, q2) {
                    continue;
                }
                if !one_step_joinable(q1, q2, variant)? {
                    return Err(format!(
                        "{r1} and {r2} diverge from {form}: {q1} never rejoins {q2}"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn one_step_joinable(
    q1: &CanonicalForm,
    q2: &CanonicalForm,
    variant: EngineVariant,
) -> Result<bool, String> {
    let step_all = |q: &CanonicalForm| -> Result<Vec<CanonicalForm>, String> {
        redexes(q)
            .iter()
            .map(|r| apply(q, r, variant).map_err(|e| format!("engine defect applying {r}: {e}")))
            .collect()
    };
    let n1 = step_all(q1)?;
    let n2 = step_all(q2)?;
    Ok(n1
        .iter()
        .any(|a| n2.iter().any(|b| congruent_forms(a, b))))
}

const PROPERTIES: [&str; 8] = [
    "duality-involution",
    "characteristic-typability",
    "pair-typability",
    "mutated-typability",
    "round-trip",
    "subject-reduction",
    "diamond",
    "progress",
];

struct Case {
    t: SessionType,
    pair: Process,
    mutated: Process,
}

fn build_case(cfg: &GenConfig, case_seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let t = gen_type(cfg, &mut rng);
    build_case_with_type(cfg, case_seed, t)
}

/// Mutation draws come from their own stream, so a shrunk type reuses the
/// same draw sequence the original case saw.
fn build_case_with_type(cfg: &GenConfig, case_seed: u64, t: SessionType) -> Case {
    let pair = gen_session_pair(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    rng.set_stream(1);
    let mutated = mutate_cancel(&pair, cfg, &mut rng);
    Case { t, pair, mutated }
}

fn evaluate(case: &Case, variant: EngineVariant) -> (Vec<Result<(), String>>, BTreeSet<RuleName>) {
    let empty = Interface::new();
    let mut results = Vec::with_capacity(PROPERTIES.len());

    let double = case.t.dual().dual();
    results.push(if double == case.t {
        Ok(())
    } else {
        Err(format!("dual(dual({})) came back as {double}", case.t))
    });

    results.push(characteristic_typability(&case.t));

    results.push(
        check(&empty, &case.pair)
            .map(|_| ())
            .map_err(|e| e.to_string()),
    );
    results.push(
        check(&empty, &case.mutated)
            .map(|_| ())
            .map_err(|e| e.to_string()),
    );

    results.push(round_trip(&case.mutated));

    let (sr, diamond, rules) = match explore_checks(case, variant) {
        Ok(triple) => triple,
        Err(e) => (Err(e.clone()), Err(e), BTreeSet::new()),
    };
    results.push(sr);
    results.push(diamond);

    results.push(match progress_check(&empty, &case.mutated, STEP_BUDGET) {
        Ok(report) if report.classification == Classification::Inactive => Ok(()),
        Ok(report) => Err(format!(
            "closed process ended active with barbs on {:?}",
            report.barbs
        )),
        Err(e) => Err(e.to_string()),
    });

    (results, rules)
}

#[allow(clippy::type_complexity)]
fn explore_checks(
    case: &Case,
    variant: EngineVariant,
) -> Result<(Result<(), String>, Result<(), String>, BTreeSet<RuleName>), String> {
    let ex = explore(&case.mutated, variant)?;
    let empty = Interface::new();
    let mut sr = Ok(());
    'sr: for (form, succs) in ex.forms.iter().zip(&ex.successors) {
        for (redex, next) in succs {
            if let Err(e) = check(&empty, &embed(next)) {
                sr = Err(format!("{redex} breaks typing: {e}; from {form}; to {next}"));
                break 'sr;
            }
        }
    }
    let mut diamond = Ok(());
    let mut pairs = 0;
    'di: for (form, succs) in ex.forms.iter().zip(&ex.successors) {
        for i in 0..succs.len() {
            for j in i + 1..succs.len() {
                if pairs >= PAIR_BUDGET {
                    break 'di;
                }
                pairs += 1;
                let (r1, q1) = &succs[i];
                let (r2, q2) = &succs[j];
                if congruent_forms(q1, q2) {
                    continue;
                }
                match one_step_joinable(q1, q2, variant) {
                    Ok(true) => {}
                    Ok(false) => {
                        diamond = Err(format!(
                            "{r1} and {r2} diverge from {form}: {q1} never rejoins {q2}"
                        ));
                        break 'di;
                    }
                    Err(e) => {
                        diamond = Err(e);
                        break 'di;
                    }
                }
            }
        }
    }
    Ok((sr, diamond, ex.rules))
}

fn characteristic_typability(t: &SessionType) -> Result<(), String> {
    let a = "a1".to_string();
    let mut supply = NameSupply::avoiding([a.clone()]);
    let p = characteristic(&a, t, &mut Chooser::least(), &mut supply)
        .map_err(|e| e.to_string())?;
    let declared =
        Interface::from_entries([(a.clone(), PayloadType::session(t.clone()))]).unwrap();
    let usage = check(&declared, &p).map_err(|e| e.to_string())?;
    let expected = if *t == SessionType::End {
        Interface::new()
    } else {
        declared
    };
    if usage == expected {
        Ok(())
    } else {
        Err(format!("characteristic of {t} used {usage}"))
    }
}

fn round_trip(p: &Process) -> Result<(), String> {
    let text = p.to_string();
    let back = crate::parse::process(&text).map_err(|e| format!("reparse failed: {e}"))?;
    if back.alpha_eq(p) {
        Ok(())
    } else {
        Err(format!("pretty-printing lost information: {text}"))
    }
}

/// One failing case of one property: where it happened, the seed that
/// replays it, what went wrong, and the smallest type that still fails.
#[derive(Debug, Clone)]
pub struct Failure {
    pub case: usize,
    pub seed: u64,
    pub message: String,
    pub minimal_type: String,
    pub minimal_message: String,
}

#[derive(Debug, Clone)]
pub struct PropertyRow {
    pub name: &'static str,
    pub cases: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub config: GenConfig,
    pub variant: EngineVariant,
    pub rows: Vec<PropertyRow>,
    pub rules: BTreeSet<RuleName>,
    pub missing_rules: Vec<RuleName>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.missing_rules.is_empty() && self.rows.iter().all(|r| r.failures.is_empty())
    }

    /// The human report. Identical configurations render identical bytes.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(
            out,
            "property suite: seed {}, {} cases, type depth {}, max labels {}, mutation rate {:.2}, engine {}",
            c.seed, c.cases, c.max_type_depth, c.max_labels, c.mutation_rate, self.variant
        );
        for row in &self.rows {
            let verdict = if row.failures.is_empty() { "pass" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{verdict} {:<26} {}/{} cases",
                row.name,
                row.cases - row.failures.len(),
                row.cases
            );
            for f in row.failures.iter().take(5) {
                let _ = writeln!(out, "     case {} (seed {:#018x}): {}", f.case, f.seed, f.message);
                if f.minimal_type != "unshrunk" {
                    let _ = writeln!(
                        out,
                        "       shrinks to {}: {}",
                        f.minimal_type, f.minimal_message
                    );
                }
            }
            if row.failures.len() > 5 {
                let _ = writeln!(out, "     ... and {} more", row.failures.len() - 5);
            }
        }
        let fired: Vec<String> = self.rules.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "rules fired: {}", fired.join(" "));
        if !self.missing_rules.is_empty() {
            let missing: Vec<String> = self.missing_rules.iter().map(|r| r.to_string()).collect();
            let _ = writeln!(out, "FAIL rule-coverage: never fired {}", missing.join(" "));
        }
        let _ = writeln!(out, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }

    /// One record per property: name, passes, failures, then failing seeds.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for row in &self.rows {
            let _ = write!(
                out,
                "{} {} {}",
                row.name,
                row.cases - row.failures.len(),
                row.failures.len()
            );
            for f in &row.failures {
                let _ = write!(out, " {:#x}", f.seed);
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "rule-coverage {} {}",
            if self.missing_rules.is_empty() { 1 } else { 0 },
            self.missing_rules.len()
        );
        out
    }
}

/// Generates, mutates, and checks `cfg.cases` cases under the given engine,
/// aggregating one row per property. The first failure of each property is
/// shrunk by type reduction; later failures are recorded as they come.
pub fn run_suite(cfg: &GenConfig, variant: EngineVariant) -> Result<SuiteReport, ConfigError> {
    cfg.validate()?;
    let mut failures: Vec<Vec<Failure>> = vec![Vec::new(); PROPERTIES.len()];
    let mut rules = BTreeSet::new();
    for case_index in 0..cfg.cases {
        let case_seed = cfg.case_seed(case_index);
        let case = build_case(cfg, case_seed);
        let (results, fired) = evaluate(&case, variant);
        rules.extend(fired);
        for (prop, result) in results.into_iter().enumerate() {
            if let Err(message) = result {
                let (minimal_type, minimal_message) = if failures[prop].is_empty() {
                    shrink(cfg, case_seed, prop, &case.t, &message, variant)
                } else {
                    ("unshrunk".to_string(), String::new())
                };
                failures[prop].push(Failure {
                    case: case_index,
                    seed: case_seed,
                    message,
                    minimal_type,
                    minimal_message,
                });
            }
        }
    }
    let required = [
        RuleName::RCom,
        RuleName::RBra,
        RuleName::RSes,
        RuleName::CAcc,
        RuleName::CReq,
        RuleName::COut,
        RuleName::CInp,
        RuleName::CSel,
        RuleName::CBra,
        RuleName::CCat,
    ];
    let missing_rules: Vec<RuleName> = required
        .into_iter()
        .filter(|r| !rules.contains(r))
        .collect();
    let rows = PROPERTIES
        .iter()
        .zip(failures)
        .map(|(name, failures)| PropertyRow {
            name,
            cases: cfg.cases,
            failures,
        })
        .collect();
    Ok(SuiteReport {
        config: *cfg,
        variant,
        rows,
        rules,
        missing_rules,
    })
}

/// Greedy descent through smaller types, rebuilding the case with the same
/// mutation stream and keeping any candidate that still fails the property.
fn shrink(
    cfg: &GenConfig,
    case_seed: u64,
    prop: usize,
    t0: &SessionType,
    message: &str,
    variant: EngineVariant,
) -> (String, String) {
    let mut best = (t0.clone(), message.to_string());
    let mut budget = SHRINK_BUDGET;
    'descend: loop {
        for candidate in shrink_candidates(&best.0) {
            if budget == 0 {
                break 'descend;
            }
            budget -= 1;
            let case = build_case_with_type(cfg, case_seed, candidate.clone());
            let (results, _) = evaluate(&case, variant);
            if let Err(msg) = &results[prop] {
                best = (candidate, msg.clone());
                continue 'descend;
            }
        }
        break;
    }
    (best.0.to_string(), best.1)
}

/// Strictly smaller types to try: `end`, each continuation or arm, payloads
/// promoted to the whole type, session payloads flattened to a ground one,
/// and choices with one arm dropped.
fn shrink_candidates(t: &SessionType) -> Vec<SessionType> {
    let mut out = Vec::new();
    if *t == SessionType::End {
        return out;
    }
    out.push(SessionType::End);
    match t {
        SessionType::End => {}
        SessionType::Output(p, cont) => {
            out.push((**cont).clone());
            if let PayloadType::Session(s) = p {
                out.push((**s).clone());
                out.push(SessionType::output(
                    PayloadType::Ground(GroundType::Nat),
                    (**cont).clone(),
                ));
            }
        }
        SessionType::Input(p, cont) => {
            out.push((**cont).clone());
            if let PayloadType::Session(s) = p {
                out.push((**s).clone());
                out.push(SessionType::input(
                    PayloadType::Ground(GroundType::Nat),
                    (**cont).clone(),
                ));
            }
        }
        SessionType::Select(arms) | SessionType::Branch(arms) => {
            for arm in arms.values() {
                out.push(arm.clone());
            }
            if arms.len() > 1 {
                for label in arms.keys() {
                    let mut smaller = arms.clone();
                    smaller.remove(label);
                    out.push(match t {
                        SessionType::Select(_) => SessionType::Select(smaller),
                        _ => SessionType::Branch(smaller),
                    });
                }
            }
        }
        SessionType::Request(p) => {
            if let PayloadType::Session(s) = p {
                out.push((**s).clone());
                out.push(SessionType::Request(PayloadType::Ground(GroundType::Nat)));
            }
        }
        SessionType::Accept(p) => {
            if let PayloadType::Session(s) = p {
                out.push((**s).clone());
                out.push(SessionType::Accept(PayloadType::Ground(GroundType::Nat)));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::congruence::congruent;
    use crate::reduce::run;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn nat_out() -> SessionType {
        SessionType::output(PayloadType::Ground(GroundType::Nat), SessionType::End)
    }

    #[test]
    fn depth_one_generates_only_end() {
        let cfg = GenConfig {
            max_type_depth: 1,
            ..GenConfig::default()
        };
        let mut r = rng(3);
        for _ in 0..50 {
            assert_eq!(gen_type(&cfg, &mut r), SessionType::End);
        }
    }

    #[test]
    fn generated_types_respect_the_bounds() {
        let cfg = GenConfig::default();
        let mut r = rng(4);
        fn walk(t: &SessionType, depth: usize, max_labels: usize) {
            assert!(depth > 0, "deeper than the bound");
            match t {
                SessionType::End => {}
                SessionType::Output(p, cont) | SessionType::Input(p, cont) => {
                    if let PayloadType::Session(s) = p {
                        walk(s, depth - 1, max_labels);
                    }
                    walk(cont, depth - 1, max_labels);
                }
                SessionType::Select(arms) | SessionType::Branch(arms) => {
                    assert!(!arms.is_empty() && arms.len() <= max_labels);
                    for arm in arms.values() {
                        walk(arm, depth - 1, max_labels);
                    }
                }
                SessionType::Request(p) | SessionType::Accept(p) => {
                    if let PayloadType::Session(s) = p {
                        walk(s, depth - 1, max_labels);
                    }
                }
            }
        }
        for _ in 0..200 {
            let t = gen_type(&cfg, &mut r);
            walk(&t, cfg.max_type_depth, cfg.max_labels);
            assert_eq!(t.dual().dual(), t);
        }
    }

    #[test]
    fn the_end_pair_is_congruent_to_nothing_at_all() {
        let pair = gen_session_pair(&SessionType::End);
        assert!(congruent(&pair, &Process::Stop));
    }

    #[test]
    fn a_ground_output_pair_steps_once_and_finishes() {
        let pair = gen_session_pair(&nat_out());
        let cf = normalize(&pair);
        let rs = redexes(&cf);
        assert_eq!(rs.len(), 1);
        assert_eq!(rs[0].rule, RuleName::RCom);
        let trace = run(&pair, 10, EngineVariant::Faithful);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.terminal().is_empty());
    }

    #[test]
    fn generated_pairs_typecheck_closed() {
        let cfg = GenConfig::default();
        let mut r = rng(5);
        for _ in 0..100 {
            let t = gen_type(&cfg, &mut r);
            let pair = gen_session_pair(&t);
            check(&Interface::new(), &pair).unwrap_or_else(|e| panic!("{t}: {e}"));
        }
    }

    #[test]
    fn zero_rate_leaves_the_pair_alone() {
        let cfg = GenConfig {
            mutation_rate: 0.0,
            ..GenConfig::default()
        };
        let mut r = rng(6);
        let t = gen_type(&cfg, &mut r.clone());
        let pair = gen_session_pair(&t);
        assert_eq!(mutate_cancel(&pair, &cfg, &mut r), pair);
    }

    #[test]
    fn full_rate_truncation_cancels_a_whole_exchange() {
        let cfg = GenConfig {
            mutation_rate: 1.0,
            ..GenConfig::default()
        };
        let pair = gen_session_pair(&nat_out());
        let mutated = mutate_cancel(&pair, &cfg, &mut rng(7));
        assert!(congruent(&mutated, &Process::Stop));
    }

    #[test]
    fn truncation_cancels_the_object_too() {
        let t = SessionType::output(
            PayloadType::session(nat_out()),
            SessionType::End,
        );
        let pair = gen_session_pair(&t);
        let cfg = GenConfig {
            mutation_rate: 1.0,
            ..GenConfig::default()
        };
        let mutated = mutate_cancel(&pair, &cfg, &mut rng(8));
        check(&Interface::new(), &mutated).unwrap();
        let trace = run(&mutated, 20, EngineVariant::Faithful);
        assert!(trace.terminal().is_empty(), "{}", trace.terminal());
    }

    #[test]
    fn mutated_pairs_stay_well_typed() {
        let cfg = GenConfig::default();
        for case in 0..150 {
            let case_seed = cfg.case_seed(case);
            let case = build_case(&cfg, case_seed);
            check(&Interface::new(), &case.mutated)
                .unwrap_or_else(|e| panic!("{} from {}: {e}", case.mutated, case.t));
        }
    }

    #[test]
    fn request_clusters_duplicate_into_two_clients() {
        let t = SessionType::Request(PayloadType::session(nat_out()));
        let pair = gen_session_pair(&t);
        let cfg = GenConfig {
            mutation_rate: 1.0,
            ..GenConfig::default()
        };
        let mut r = rng(9);
        let mut all = BTreeSet::new();
        pair.all_names(&mut all);
        let duplicated = duplicate_requests(&pair, &cfg, &mut r, &mut all);
        let reqs = duplicated.to_string().matches("req a1").count();
        assert_eq!(reqs, 2);
        check(&Interface::new(), &duplicated).unwrap();
    }

    #[test]
    fn subject_reduction_holds_on_generated_cases() {
        let cfg = GenConfig::default();
        for case in 0..60 {
            let case = build_case(&cfg, cfg.case_seed(case));
            check_subject_reduction(&case.pair, EngineVariant::Faithful)
                .unwrap_or_else(|e| panic!("unmutated {}: {e}", case.t));
            check_subject_reduction(&case.mutated, EngineVariant::Faithful)
                .unwrap_or_else(|e| panic!("mutated {}: {e}", case.t));
        }
    }

    #[test]
    fn diamond_holds_on_generated_cases() {
        let cfg = GenConfig::default();
        for case in 0..60 {
            let case = build_case(&cfg, cfg.case_seed(case));
            check_diamond(&case.mutated, EngineVariant::Faithful)
                .unwrap_or_else(|e| panic!("{}: {e}", case.t));
        }
    }

    #[test]
    fn two_clients_of_one_service_rejoin() {
        let t = SessionType::Request(PayloadType::session(nat_out()));
        let pair = gen_session_pair(&t);
        let cfg = GenConfig {
            mutation_rate: 1.0,
            ..GenConfig::default()
        };
        let mut all = BTreeSet::new();
        pair.all_names(&mut all);
        let two = duplicate_requests(&pair, &cfg, &mut rng(10), &mut all);
        let cf = normalize(&two);
        let rs = redexes(&cf);
        assert!(rs.len() >= 2, "expected racing requests, got {rs:?}");
        check_diamond(&two, EngineVariant::Faithful).unwrap();
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let mut cfg = GenConfig::default();
        cfg.cases = 0;
        assert_eq!(cfg.validate(), Err(ConfigError::NoCases));
        cfg = GenConfig::default();
        cfg.max_type_depth = 0;
        assert_eq!(cfg.validate(), Err(ConfigError::NoDepth));
        cfg = GenConfig::default();
        cfg.mutation_rate = 1.5;
        assert_eq!(cfg.validate(), Err(ConfigError::BadRate));
        assert!(run_suite(&cfg, EngineVariant::Faithful).is_err());
    }

    #[test]
    fn a_small_suite_passes_and_reproduces_byte_for_byte() {
        let cfg = GenConfig {
            cases: 40,
            ..GenConfig::default()
        };
        let first = run_suite(&cfg, EngineVariant::Faithful).unwrap();
        let second = run_suite(&cfg, EngineVariant::Faithful).unwrap();
        assert_eq!(first.render(), second.render());
        assert_eq!(first.summary(), second.summary());
        for row in &first.rows {
            assert!(
                row.failures.is_empty(),
                "{}: {}",
                row.name,
                row.failures[0].message
            );
        }
    }

    #[test]
    fn the_broken_output_engine_is_caught() {
        let cfg = GenConfig {
            cases: 60,
            ..GenConfig::default()
        };
        let report = run_suite(&cfg, EngineVariant::OutDropsObjectCancel).unwrap();
        assert!(!report.passed());
        let failures: usize = report.rows.iter().map(|r| r.failures.len()).sum();
        assert!(failures > 0);
    }

    #[test]
    fn failing_cases_reproduce_from_their_seed_alone() {
        let cfg = GenConfig {
            cases: 60,
            ..GenConfig::default()
        };
        let report = run_suite(&cfg, EngineVariant::OutDropsObjectCancel).unwrap();
        let failure = report
            .rows
            .iter()
            .flat_map(|r| r.failures.iter())
            .next()
            .expect("the broken engine must fail somewhere");
        let replay = GenConfig {
            seed: failure.seed,
            cases: 1,
            ..cfg
        };
        let replayed = run_suite(&replay, EngineVariant::OutDropsObjectCancel).unwrap();
        assert!(!replayed.passed());
    }

    #[test]
    fn shrinking_reports_a_smaller_failing_type() {
        let cfg = GenConfig {
            cases: 60,
            ..GenConfig::default()
        };
        let report = run_suite(&cfg, EngineVariant::OutDropsObjectCancel).unwrap();
        let shrunk = report
            .rows
            .iter()
            .flat_map(|r| r.failures.iter())
            .find(|f| f.minimal_type != "unshrunk")
            .expect("the first failure of a property gets shrunk");
        assert!(!shrunk.minimal_message.is_empty());
        let minimal = crate::parse::payload_type(&shrunk.minimal_type).unwrap();
        assert!(matches!(minimal, PayloadType::Session(_)));
    }


}
