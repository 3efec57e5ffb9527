//! End-to-end acceptance checks. Each test exercises one advertised
//! guarantee of the workbench against frozen expected results and prints a
//! single verdict line.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use afs_core::analysis::{progress_check, Classification};
use afs_core::congruence::{congruent_forms, normalize};
use afs_core::harness::{run_suite, GenConfig, SuiteReport};
use afs_core::parse;
use afs_core::reduce::{redexes, run, EngineVariant, RuleName};
use afs_core::syntax::{Process, Program};
use afs_core::typecheck::{check, TypeErrorKind};
use afs_core::types::Interface;

const PROTO: &str =
    "?(string).!(nat).&{buy: ?(string).+{accepted: end, rejected: end}, cancel: end}";

fn corpus(name: &str) -> Program {
    let path = format!("{}/../../programs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"));
    parse::program(&text).unwrap_or_else(|e| panic!("parse {path}: {e}"))
}

fn must_check(prog: &Program, what: &str) -> Interface {
    check(&prog.interface, &prog.process).unwrap_or_else(|e| panic!("{what} must type: {e}"))
}

static SUITE: OnceLock<SuiteReport> = OnceLock::new();

fn faithful_suite() -> &'static SuiteReport {
    SUITE.get_or_init(|| {
        run_suite(&GenConfig::default(), EngineVariant::Faithful)
            .expect("the default configuration is valid")
    })
}

#[test]
fn criterion_1_golden_typing() {
    // Closed systems type against an empty interface and consume nothing.
    for name in [
        "bookshop.afs",
        "checkprice_a.afs",
        "checkprice_b.afs",
        "buyercancel.afs",
    ] {
        let prog = corpus(name);
        assert!(prog.interface.is_empty(), "{name} declares nothing");
        let usage = must_check(&prog, name);
        assert!(usage.is_empty(), "{name} consumed {usage}");
    }

    // The guarded buyer additionally consumes the printing service.
    let msg = corpus("buyermsg.afs");
    let usage = must_check(&msg, "buyermsg.afs");
    assert_eq!(usage, msg.interface);
    assert_eq!(usage.to_string(), "{print: req string}");

    // Each party of the bookshop types on its own, consuming exactly the
    // session ends it declares.
    let buyer = format!(
        "interface {{seller1: req ({PROTO})}} in \
         new (b1: !(string).?(nat).+{{buy: !(string).&{{accepted: end, rejected: end}}, cancel: end}}, b2) \
         ( req seller1 (b2) \
         | send b1 \"Proofs and Types\". recv b1 (price). \
           if price < 200 \
           then sel b1 buy. send b1 \"1234-5678\". branch b1 {{accepted: 0, rejected: 0}} \
           else sel b1 cancel )"
    );
    let seller = format!(
        "interface {{seller2: acc ({PROTO}), bank1: req (?(nat).?(?(string).+{{accepted: end, rejected: end}}).!(+{{accepted: end, rejected: end}}).+{{accepted: end, rejected: end}})}} in \
         acc seller2 (b). recv b (prod). send b 178. \
         branch b {{ \
           buy: new (k1: !(nat).!(?(string).+{{accepted: end, rejected: end}}).?(+{{accepted: end, rejected: end}}).&{{accepted: end, rejected: end}}, k2) \
                ( req bank1 (k2) \
                | send k1 178. send k1 b. recv k1 (b3). \
                  branch k1 {{accepted: sel b3 accepted, rejected: sel b3 rejected}} ), \
           cancel: 0 }}"
    );
    let bank = "interface {bank2: acc (?(nat).?(?(string).+{accepted: end, rejected: end}).!(+{accepted: end, rejected: end}).+{accepted: end, rejected: end})} in \
         acc bank2 (k). recv k (amount). recv k (b4). recv b4 (card). send k b4. \
         if amount < 500 then sel k accepted else sel k rejected"
        .to_string();
    for (who, src) in [("buyer", &buyer), ("seller", &seller), ("bank", &bank)] {
        let prog = parse::program(src).unwrap_or_else(|e| panic!("{who}: {e}"));
        let usage = must_check(&prog, who);
        assert_eq!(usage, prog.interface, "{who} consumes exactly its declaration");
    }

    // Ground-typed free names travel as payloads.
    let prog = parse::program("interface {b: !(string).end, s: string} in send b s").unwrap();
    assert_eq!(must_check(&prog, "ground payload"), prog.interface);

    // An open client is active on its service name, and the generated
    // characteristic partner demonstrates the interaction.
    let client_body = "new (b1: !(string).?(nat).+{buy: !(string).&{accepted: end, rejected: end}, cancel: end}, b2) \
         ( req seller1 (b2) \
         | send b1 \"Principia Mathematica\". recv b1 (price). (sel b1 cancel | 0) )";
    let client =
        parse::program(&format!("interface {{seller1: req ({PROTO})}} in {client_body}")).unwrap();
    let report = progress_check(&client.interface, &client.process, 200).expect("progress");
    assert_eq!(report.classification, Classification::Active);
    assert_eq!(report.barbs, BTreeSet::from(["seller1".to_string()]));
    let witness = report.witness.expect("a req barb gets a witness");
    assert_eq!(witness.barb, "seller1");
    assert_eq!(witness.trace.steps[0].0.rule, RuleName::RSes);

    // Closing the same client by hand against a matching service drains it.
    let composed = parse::program(&format!(
        "new (seller1: req ({PROTO}), partner) \
         ( {client_body} \
         | acc partner (b). recv b (prod). send b 178. \
           branch b {{buy: recv b (card). sel b accepted, cancel: 0}} )"
    ))
    .unwrap();
    assert!(must_check(&composed, "composed client").is_empty());
    let trace = run(&composed.process, 50, EngineVariant::Faithful);
    assert!(!trace.exhausted);
    assert_eq!(trace.steps.len(), 4);
    let terminal = trace.terminal();
    assert!(redexes(terminal).is_empty());
    assert!(
        terminal
            .components
            .iter()
            .all(|c| matches!(c, Process::Accept { .. })),
        "only the drained service remains: {terminal}"
    );

    println!("PASS: golden typings hold for the full systems and each party alone");
}

#[test]
fn criterion_2_rejections_name_the_defect() {
    let dead = corpus("deadlock_rejected.afs");
    let err = check(&dead.interface, &dead.process).expect_err("the cycle must be rejected");
    assert_eq!(err.kind, TypeErrorKind::SessionCycle);
    assert!(
        err.to_string().contains("b1"),
        "the report names an endpoint on the cycle: {err}"
    );

    let stuck = corpus("stuck_naive.afs");
    let err = check(&stuck.interface, &stuck.process).expect_err("the leak must be rejected");
    assert_eq!(err.kind, TypeErrorKind::UnusedLinear);
    assert!(
        err.to_string().contains("a1"),
        "the report names the dropped endpoint: {err}"
    );

    // And the rejection is earned: run unchecked, the program wedges.
    let trace = run(&stuck.process, 50, EngineVariant::Faithful);
    assert!(!trace.exhausted);
    assert_eq!(trace.steps.len(), 2);
    assert!(
        !trace.terminal().is_empty(),
        "the unchecked run stops early but not empty"
    );

    println!("PASS: ill-structured programs are rejected with the defect named");
}

#[test]
fn criterion_3_golden_traces() {
    // Cancelling a half-finished session tears the rest down.
    let p = parse::process(
        "new (a1: !(nat).!(string).?(bool).end, a2) \
         (send a1 5. send a1 \"hello\". cancel a1 | recv a2 (x). recv a2 (y). send a2 (x + 1 < 2))",
    )
    .unwrap();
    check(&Interface::new(), &p).expect("the cancelling variant types");
    let trace = run(&p, 50, EngineVariant::Faithful);
    let rules: Vec<RuleName> = trace.steps.iter().map(|(r, _)| r.rule).collect();
    assert_eq!(rules, vec![RuleName::RCom, RuleName::RCom, RuleName::COut]);
    assert!(trace.terminal().is_empty(), "left {}", trace.terminal());

    // A failed guarded action is replaced by its handler.
    let prog = parse::program(
        "interface {print: req string} in \
         new (a: !(bool).end, b) \
         (do send a (5 + 1 < 2) catch req print (\"An error occurred\") | cancel b)",
    )
    .unwrap();
    must_check(&prog, "the guarded send");
    let trace = run(&prog.process, 50, EngineVariant::Faithful);
    let rules: Vec<RuleName> = trace.steps.iter().map(|(r, _)| r.rule).collect();
    assert_eq!(rules, vec![RuleName::CCat]);
    let expected = normalize(&parse::process("req print (\"An error occurred\")").unwrap());
    assert!(
        congruent_forms(trace.terminal(), &expected),
        "terminal {} is the handler",
        trace.terminal()
    );

    // Cancellation chases a name a dead session already delivered.
    let prog = parse::program(
        "interface {c: end} in \
         new (a: ?(!(end).end).end, b) (recv a (x). send x c | cancel b)",
    )
    .unwrap();
    must_check(&prog, "the forwarding chain");
    let trace = run(&prog.process, 50, EngineVariant::Faithful);
    let rules: Vec<RuleName> = trace.steps.iter().map(|(r, _)| r.rule).collect();
    assert_eq!(rules, vec![RuleName::CInp, RuleName::COut]);
    let expected = normalize(&parse::process("cancel c").unwrap());
    assert!(
        congruent_forms(trace.terminal(), &expected),
        "terminal {} is cancel c",
        trace.terminal()
    );

    // The three-party purchase runs to completion in the published steps.
    let shop = corpus("bookshop.afs");
    let trace = run(&shop.process, 50, EngineVariant::Faithful);
    assert!(!trace.exhausted);
    let terminal = trace.terminal();
    assert!(redexes(terminal).is_empty(), "the purchase finishes");
    assert_eq!(
        terminal.components.len(),
        2,
        "both services idle on: {terminal}"
    );
    assert!(terminal
        .components
        .iter()
        .all(|c| matches!(c, Process::Accept { .. })));
    let steps: Vec<String> = trace.steps.iter().map(|(r, _)| r.to_string()).collect();
    assert_eq!(
        steps,
        vec![
            "R-Ses on (seller1,seller2)",
            "R-Com on (b1,b2)",
            "R-Com on (b1,b2)",
            "E-If",
            "R-Bra on (b1,b2) [label buy]",
            "R-Ses on (bank1,bank2)",
            "R-Com on (k1_2,k2_2)",
            "R-Com on (k1_2,k2_2)",
            "R-Com on (b1,b2)",
            "R-Com on (k1_2,k2_2)",
            "E-If",
            "R-Bra on (k1_2,k2_2) [label accepted]",
            "R-Bra on (b1,b2) [label accepted]",
        ]
    );

    println!("PASS: the frozen reduction traces reproduce step for step");
}

#[test]
fn criterion_4_property_suite_is_green() {
    let report = faithful_suite();
    assert!(report.passed(), "\n{}", report.render());
    for row in &report.rows {
        assert_eq!(row.cases, report.config.cases, "{} ran every case", row.name);
        assert!(row.failures.is_empty(), "{} failed", row.name);
    }
    assert!(
        report.missing_rules.is_empty(),
        "rules never fired: {:?}",
        report.missing_rules
    );
    println!(
        "PASS: {} generated sessions satisfy all {} properties with full rule coverage",
        report.config.cases,
        report.rows.len()
    );
}

#[test]
fn criterion_5_round_trip() {
    for name in [
        "bookshop.afs",
        "buyermsg.afs",
        "checkprice_a.afs",
        "checkprice_b.afs",
        "buyercancel.afs",
        "deadlock_rejected.afs",
        "stuck_naive.afs",
    ] {
        let prog = corpus(name);
        let printed = prog.to_string();
        let back = parse::program(&printed)
            .unwrap_or_else(|e| panic!("{name} failed to reparse: {e}\n{printed}"));
        assert_eq!(back.interface, prog.interface, "{name}");
        assert!(back.process.alpha_eq(&prog.process), "{name}:\n{printed}");
    }

    let report = faithful_suite();
    let row = report
        .rows
        .iter()
        .find(|r| r.name == "round-trip")
        .expect("the suite has a round-trip row");
    assert!(row.failures.is_empty() && row.cases == report.config.cases);

    println!("PASS: every corpus program and generated case survives print-then-parse");
}

#[test]
fn criterion_6_negative_controls_fail() {
    let cfg = GenConfig {
        cases: 200,
        ..GenConfig::default()
    };
    for variant in [
        EngineVariant::OutDropsObjectCancel,
        EngineVariant::ReqDropsPeerCancel,
    ] {
        let report = run_suite(&cfg, variant).expect("the control configuration is valid");
        assert!(!report.passed(), "{variant} slipped through:\n{}", report.render());
        let sr = report
            .rows
            .iter()
            .find(|r| r.name == "subject-reduction")
            .expect("the suite has a subject-reduction row");
        assert!(
            !sr.failures.is_empty(),
            "{variant} must break subject reduction"
        );
    }
    println!("PASS: both seeded engine defects are caught by the suite");
}
