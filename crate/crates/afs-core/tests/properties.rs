//! Structural properties of the syntax layer: printing round-trips, the
//! canonical form is stable, and alpha-equivalence behaves like an
//! equivalence. These run on arbitrary (not necessarily typable) terms.

use proptest::prelude::*;

use afs_core::congruence::{congruent, congruent_forms, embed, normalize};
use afs_core::parse;
use afs_core::syntax::{freshen_binders_against, Expr, Object, Prefix, Process};
use afs_core::types::{GroundType, Name, PayloadType, SessionType};

fn name() -> impl Strategy<Value = Name> {
    prop::sample::select(vec!["a", "b", "c", "d", "x", "y"]).prop_map(String::from)
}

fn label() -> BoxedStrategy<Name> {
    prop::sample::select(vec!["go", "no", "up", "cancel"])
        .prop_map(String::from)
        .boxed()
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u64..10).prop_map(Expr::Nat),
        prop::sample::select(vec!["", "hi", "two words", "q\"uote", "back\\slash"])
            .prop_map(|s| Expr::Str(s.to_string())),
        any::<bool>().prop_map(Expr::Bool),
        name().prop_map(Expr::Var),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Less(Box::new(a), Box::new(b))),
        ]
    })
}

fn ground() -> impl Strategy<Value = GroundType> {
    prop::sample::select(vec![GroundType::Nat, GroundType::Str, GroundType::Bool])
}

fn session_type() -> impl Strategy<Value = SessionType> {
    Just(SessionType::End).prop_recursive(3, 16, 3, |inner| {
        let payload = prop_oneof![
            ground().prop_map(PayloadType::Ground),
            inner.clone().prop_map(PayloadType::session),
        ];
        let arms = prop::collection::btree_map(label(), inner.clone(), 1..3);
        prop_oneof![
            (payload.clone(), inner.clone()).prop_map(|(p, t)| SessionType::output(p, t)),
            (payload.clone(), inner.clone()).prop_map(|(p, t)| SessionType::input(p, t)),
            arms.clone().prop_map(SessionType::Select),
            arms.prop_map(SessionType::Branch),
            payload.clone().prop_map(SessionType::Request),
            payload.prop_map(SessionType::Accept),
        ]
    })
}

fn object() -> impl Strategy<Value = Object> {
    prop_oneof![name().prop_map(Object::Name), expr().prop_map(Object::Expr)]
}

fn prefix(inner: BoxedStrategy<Process>) -> BoxedStrategy<Prefix> {
    let arms = prop::collection::btree_map(label(), inner.clone(), 1..3);
    prop_oneof![
        (name(), object(), inner.clone()).prop_map(|(subject, object, cont)| Prefix::Send {
            subject,
            object,
            cont: Box::new(cont),
        }),
        (name(), name(), inner.clone()).prop_map(|(subject, binder, cont)| Prefix::Recv {
            subject,
            binder,
            cont: Box::new(cont),
        }),
        (name(), label(), inner.clone()).prop_map(|(subject, label, cont)| Prefix::Sel {
            subject,
            label,
            cont: Box::new(cont),
        }),
        (name(), arms).prop_map(|(subject, arms)| Prefix::Branch { subject, arms }),
        (name(), object(), inner).prop_map(|(subject, object, cont)| Prefix::Req {
            subject,
            object,
            cont: Box::new(cont),
        }),
    ]
    .boxed()
}

fn process() -> impl Strategy<Value = Process> {
    let leaf = prop_oneof![Just(Process::Stop), name().prop_map(Process::Cancel)];
    leaf.prop_recursive(4, 20, 3, |inner| {
        prop_oneof![
            prefix(inner.clone()).prop_map(Process::Act),
            (name(), name(), inner.clone()).prop_map(|(subject, binder, body)| {
                Process::Accept {
                    subject,
                    binder,
                    body: Box::new(body),
                }
            }),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Process::par(a, b)),
            (name(), session_type(), name(), inner.clone()).prop_map(
                |(left, annot, right, body)| {
                    // A double binder needs two distinct endpoints.
                    let right = if right == left { format!("{right}2") } else { right };
                    Process::New {
                        left,
                        annot,
                        right,
                        body: Box::new(body),
                    }
                }
            ),
            (prefix(inner.clone()), inner.clone()).prop_map(|(action, handler)| {
                Process::Catch {
                    action,
                    handler: Box::new(handler),
                }
            }),
            (expr(), inner.clone(), inner).prop_map(|(test, t, e)| Process::If {
                test,
                then_branch: Box::new(t),
                else_branch: Box::new(e),
            }),
        ]
    })
}

proptest! {
    #[test]
    fn printing_then_parsing_is_alpha_identity(p in process()) {
        let text = p.to_string();
        let back = parse::process(&text)
            .unwrap_or_else(|e| panic!("failed to reparse {text}: {e}"));
        prop_assert!(back.alpha_eq(&p), "{text} came back as {back}");
        prop_assert!(p.alpha_eq(&back));
    }

    #[test]
    fn type_printing_round_trips(t in session_type()) {
        let text = t.to_string();
        let back = parse::session_type(&text)
            .unwrap_or_else(|e| panic!("failed to reparse {text}: {e}"));
        prop_assert_eq!(back, t);
    }

    #[test]
    fn duality_is_an_involution(t in session_type()) {
        prop_assert_eq!(t.dual().dual(), t);
    }

    #[test]
    fn normalization_is_idempotent(p in process()) {
        let once = normalize(&p);
        let twice = normalize(&embed(&once));
        prop_assert!(congruent_forms(&once, &twice), "{once} vs {twice}");
    }

    #[test]
    fn normalization_preserves_free_names(p in process()) {
        prop_assert_eq!(embed(&normalize(&p)).free_names(), p.free_names());
    }

    #[test]
    fn congruence_is_reflexive(p in process()) {
        prop_assert!(congruent(&p, &p));
    }

    #[test]
    fn freshening_binders_preserves_alpha_equality(p in process()) {
        let mut avoid = std::collections::BTreeSet::new();
        p.all_names(&mut avoid);
        let fresh = freshen_binders_against(&p, &avoid);
        prop_assert!(fresh.alpha_eq(&p), "{p} vs {fresh}");
    }

    #[test]
    fn the_parser_never_panics_on_noise(s in "[ -~]{0,80}") {
        let _ = parse::program(&s);
    }
}
