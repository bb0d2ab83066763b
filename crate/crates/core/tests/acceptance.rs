//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs on the seeded standard corpus (SimConfig defaults).

use std::collections::BTreeMap;
use std::time::Instant;

use autoreview_core::eval::{ablate_n_alternatives, mcnemar, mcnemar_counts, AblationPoint, EvalReport};
use autoreview_core::extraction::{decode_spoken_form, BuiltinExtractor};
use autoreview_core::pipeline::{train_models, ModelBundle, ReviewEngine, TrainConfig, TrainingSummary};
use autoreview_core::pseudolabel::{
    derive_aed_labels, generate_pseudo_labels, golds_from_records, AedReference, BuiltinPseudoLabeler,
    PseudoLabelExample, PseudoLabeler,
};
use autoreview_core::review::{verify_direct, ReviewPolicy};
use autoreview_core::simulator::{generate_corpus, generate_split, SimConfig, SplitCorpus};
use autoreview_core::{
    normalized_edit_distance, CallTranscript, Corpus, FieldId, FieldSpec, ReviewDecision, Speaker, Strategy,
    Utterance, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

struct Outcome {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn outcome(name: &'static str, failures: Vec<String>, detail: String) -> Outcome {
    let ok = failures.is_empty();
    let detail = if ok { detail } else { format!("{detail}; {}", failures.join("; ")) };
    Outcome { name, ok, detail }
}

/// Full matrix edit distance, written independently of the library.
fn dp_distance(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

fn dp_ned(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let m = a.len().max(b.len());
    if m == 0 {
        0.0
    } else {
        dp_distance(&a, &b) as f64 / m as f64
    }
}

/// Everything a pipeline run produces; serialized for the determinism check.
#[derive(Serialize)]
struct RunReport {
    summary: TrainingSummary,
    bundle: ModelBundle,
    reports: BTreeMap<String, EvalReport>,
    decisions: BTreeMap<String, Vec<ReviewDecision>>,
    ablation: Vec<AblationPoint>,
}

fn full_run(cfg: &SimConfig) -> (SplitCorpus, RunReport) {
    let corpus = generate_corpus(cfg).expect("corpus");
    let specs = FieldSpec::defaults();
    let tc = TrainConfig::default();
    let (bundle, summary) = train_models(&corpus.train, &corpus.validation, &specs, &tc).expect("training");
    let mut reports = BTreeMap::new();
    let mut decisions = BTreeMap::new();
    for (name, strategy, correct) in [
        ("extract-baseline", Strategy::DirectExtraction, false),
        ("extract-aec", Strategy::DirectExtraction, true),
        ("verify-aec", Strategy::DirectVerification, true),
        ("hybrid-aec", Strategy::Hybrid, true),
    ] {
        let mut engine = ReviewEngine::new(bundle.clone(), specs.clone(), ReviewPolicy::for_strategy(strategy));
        engine.correct = correct;
        let (d, r) = engine.evaluate(&corpus.test).expect("evaluation");
        reports.insert(name.to_string(), r);
        decisions.insert(name.to_string(), d);
    }
    let ablation = ablate_n_alternatives(
        &corpus.test,
        &specs,
        &bundle.channel,
        &tc.extractor(),
        &[1, 2, 3, 5, 10],
        &tc.correction,
    )
    .expect("ablation");
    (
        corpus,
        RunReport {
            summary,
            bundle,
            reports,
            decisions,
            ablation,
        },
    )
}

fn ceiling(bundle: &ModelBundle, cfg: &SimConfig) -> Outcome {
    let zero = generate_split(&cfg.zero_noise(), "test", 2, 300);
    let specs = FieldSpec::defaults();
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for strategy in [Strategy::DirectExtraction, Strategy::DirectVerification] {
        let engine = ReviewEngine::new(bundle.clone(), specs.clone(), ReviewPolicy::for_strategy(strategy));
        let (_, r) = engine.evaluate(&zero).expect("zero-noise evaluation");
        for (f, m) in &r.per_field {
            if m.precision != 1.0 || m.recall != 1.0 || m.f1 != 1.0 {
                failures.push(format!("{strategy:?}/{f}: P={} R={} F1={}", m.precision, m.recall, m.f1));
            }
        }
        detail.push(format!("{strategy:?} F1={:.4}", r.average.f1));
    }
    outcome("ceiling: zero noise gives P=R=F1=1 for both strategies", failures, detail.join(", "))
}

fn calibration(corpus: &SplitCorpus) -> Outcome {
    let targets = [
        (FieldId::AgentName, 0.1080, 3.23),
        (FieldId::ReferenceNumber, 0.1290, 7.05),
        (FieldId::GroupNumber, 0.0980, 3.76),
    ];
    let records: Vec<_> = [&corpus.train, &corpus.validation, &corpus.test]
        .iter()
        .flat_map(|c| c.records.iter())
        .collect();
    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for (field, rate, dist) in targets {
        let own: Vec<_> = records.iter().filter(|r| r.field_id == field).collect();
        let wrong: Vec<usize> = own
            .iter()
            .filter_map(|r| {
                let g = r.gold_value.as_ref()?;
                (*g != r.live_call_value).then(|| {
                    dp_distance(&r.live_call_value.chars().collect::<Vec<_>>(), &g.chars().collect::<Vec<_>>())
                })
            })
            .collect();
        let measured = wrong.len() as f64 / own.len() as f64;
        let mean = wrong.iter().sum::<usize>() as f64 / wrong.len().max(1) as f64;
        detail.push(format!("{field} {:.2}% d={mean:.2}", measured * 100.0));
        if (measured - rate).abs() > 0.02 {
            failures.push(format!("{field} error rate {measured:.4} vs {rate}"));
        }
        if (mean - dist).abs() > 0.5 {
            failures.push(format!("{field} mean distance {mean:.3} vs {dist}"));
        }
    }
    outcome("calibration: live error rates and edit distances match targets", failures, detail.join(", "))
}

fn aec_trend(run: &RunReport, test: &Corpus) -> Outcome {
    let base = &run.reports["extract-baseline"].average;
    let aec = &run.reports["extract-aec"].average;
    let mut failures = Vec::new();
    if aec.recall - base.recall < 0.05 {
        failures.push(format!("recall gain {:.4} < 0.05", aec.recall - base.recall));
    }
    if base.precision - aec.precision > 0.01 {
        failures.push(format!("precision drop {:.4} > 0.01", base.precision - aec.precision));
    }
    let pairs = paired(&run.decisions["extract-baseline"], &run.decisions["extract-aec"], test);
    let mc = mcnemar(&pairs).expect("pairs");
    outcome(
        "AEC trend: extraction recall +5 points, precision within 1 point",
        failures,
        format!(
            "P {:.4}->{:.4}, R {:.4}->{:.4}, McNemar b={} c={} p={:.2e}",
            base.precision, aec.precision, base.recall, aec.recall, mc.b, mc.c, mc.p_value
        ),
    )
}

/// Paired correctness of two decision lists: a decision is correct when it
/// approves a correct live value or flags a wrong one.
fn paired(a: &[ReviewDecision], b: &[ReviewDecision], test: &Corpus) -> Vec<(bool, bool)> {
    let truth: BTreeMap<_, bool> = test
        .records
        .iter()
        .map(|r| (r.key(), r.live_is_correct().expect("gold")))
        .collect();
    let bmap: BTreeMap<_, _> = b.iter().map(|d| (d.key(), d.approved())).collect();
    a.iter()
        .map(|d| {
            let t = truth[&d.key()];
            (d.approved() == t, bmap[&d.key()] == t)
        })
        .collect()
}

fn trade_off(run: &RunReport) -> Outcome {
    let de = &run.reports["extract-aec"];
    let dv = &run.reports["verify-aec"];
    let mut failures = Vec::new();
    if de.average.precision < dv.average.precision {
        failures.push(format!("precision DE {:.4} < DV {:.4}", de.average.precision, dv.average.precision));
    }
    if dv.average.recall < de.average.recall {
        failures.push(format!("recall DV {:.4} < DE {:.4}", dv.average.recall, de.average.recall));
    }
    let per: Vec<String> = de
        .per_field
        .iter()
        .map(|(f, m)| {
            let v = &dv.per_field[f];
            format!("{f} DE {:.4}/{:.4} DV {:.4}/{:.4}", m.precision, m.recall, v.precision, v.recall)
        })
        .collect();
    outcome(
        "strategy trade-off: extraction more precise, verification higher recall",
        failures,
        format!(
            "average P/R DE {:.4}/{:.4} DV {:.4}/{:.4} ({})",
            de.average.precision,
            de.average.recall,
            dv.average.precision,
            dv.average.recall,
            per.join(", ")
        ),
    )
}

fn ablation(run: &RunReport) -> Outcome {
    let f1 = |f: &FieldId, n: usize| {
        run.ablation
            .iter()
            .find(|p| &p.field_id == f && p.n == n)
            .map(|p| p.f1)
            .expect("ablation point")
    };
    let mut failures = Vec::new();
    let mut strict = 0;
    let mut detail = Vec::new();
    for spec in FieldSpec::defaults() {
        let (a, b) = (f1(&spec.field_id, 1), f1(&spec.field_id, 10));
        detail.push(format!("{} {a:.4}->{b:.4}", spec.field_id));
        if b < a {
            failures.push(format!("{} F1 fell", spec.field_id));
        }
        if b > a {
            strict += 1;
        }
    }
    if strict < 2 {
        failures.push(format!("only {strict} fields improved strictly"));
    }
    outcome("ablation: F1(n=10) >= F1(n=1), strictly for two or more fields", failures, detail.join(", "))
}

fn aed_fixture() -> Vec<(FieldSpec, Vec<&'static str>, &'static str, bool)> {
    let name = FieldSpec::agent_name();
    let reference = FieldSpec::reference_number();
    let group = FieldSpec::group_number();
    // (spec, alternatives, gold, expected label: is the ASR best noisy?)
    vec![
        (group.clone(), vec!["it's a d 0 1 5 6", "it's a d 0 1 5 6"], "AD0156", false),
        (group.clone(), vec!["it's 8 d 0 1 5 6", "it's a d 0 1 5 6"], "AD0156", true),
        (group.clone(), vec!["it's a d 0 1 5", "it's a d 0 1 5 6"], "AD0156", true),
        (group.clone(), vec!["it's a d 0 1 5 6 6", "it's a d 0 1 5 6"], "AD0156", true),
        (group.clone(), vec!["group is x 4 4 1 0", "group is x 4 for 1 0"], "X4410", false),
        // "for" next to a digit reads as 4, so the best hypothesis is clean.
        (group.clone(), vec!["group is x for 4 1 0", "group is x 4 4 1 0"], "X4410", false),
        (group.clone(), vec!["group is x 4 1 0", "group is x 4 4 1 0"], "X4410", true),
        (group.clone(), vec!["it's b as in bravo 7 7 2", "it's b as in bravo 7 7 2"], "B772", false),
        (group.clone(), vec!["it's d as in bravo 7 7 2", "it's b as in bravo 7 7 2"], "B772", false),
        (group.clone(), vec!["it's b as in delta 7 7 2", "it's b as in bravo 7 7 2"], "B772", true),
        (name.clone(), vec!["my name is jane t", "my name is jane t"], "Jane T", false),
        (name.clone(), vec!["my name is jade t", "my name is jane t"], "Jane T", true),
        (name.clone(), vec!["my name is jane c like tango", "my name is jane t"], "Jane T", false),
        (name.clone(), vec!["it's mark s", "it's mark s"], "Mark S", false),
        (name.clone(), vec!["it's mark f", "it's mark s"], "Mark S", true),
        (name.clone(), vec!["it's mike s", "it's mark s", "it's mark s"], "Mark S", true),
        (reference.clone(), vec!["it's sara b 0 3 1 1 2 0 2 4", "it's sara b 0 3 1 1 2 0 2 4"], "Sara B 03112024", false),
        (reference.clone(), vec!["it's sara b 0 3 1 1 2 0 2", "it's sara b 0 3 1 1 2 0 2 4"], "Sara B 03112024", true),
        (reference.clone(), vec!["it's sara d 0 3 1 1 2 0 2 4", "it's sara b 0 3 1 1 2 0 2 4"], "Sara B 03112024", true),
        (reference, vec!["it's tara b 0 3 1 1 2 0 2 4", "it's sara b 0 3 1 1 2 0 2 4"], "Sara B 03112024", true),
    ]
}

fn pseudo_label_audit(corpus: &SplitCorpus) -> Outcome {
    let specs = FieldSpec::defaults();
    let ex = BuiltinExtractor::new(vec!["Ava".into()]);
    let labeler = BuiltinPseudoLabeler::new(ex.clone());
    let (examples, skipped) = generate_pseudo_labels(&corpus.train, &golds_from_records(&corpus.train), &specs, &labeler, &ex);
    let fresh = BuiltinExtractor::new(vec!["Ava".into()]);
    let mut failures = Vec::new();
    let bad = examples
        .iter()
        .filter(|e| {
            let spec = specs.iter().find(|s| s.field_id == e.field_id).expect("spec");
            fresh.extract_text(&e.corrected_text, spec) != e.gold
        })
        .count();
    if bad > 0 || examples.is_empty() {
        failures.push(format!("{bad} of {} examples do not re-extract to gold", examples.len()));
    }
    if skipped.skipped() > 0 {
        failures.push(format!("{} utterances could not be labeled", skipped.skipped()));
    }

    let fixture = aed_fixture();
    let mut built = Vec::new();
    for (spec, alts, gold, _) in &fixture {
        let alts: Vec<String> = alts.iter().map(|s| s.to_string()).collect();
        let chosen = labeler.select(&alts, gold, spec).expect("select");
        let corrected = labeler.correct(&alts[chosen], gold, spec).expect("correct");
        built.push(PseudoLabelExample {
            call_id: "fixture".into(),
            field_id: spec.field_id.clone(),
            utterance_index: 0,
            alternatives: alts,
            gold: gold.to_string(),
            chosen_index: chosen,
            corrected_text: corrected,
        });
    }
    let labels = derive_aed_labels(&built, AedReference::AsrBest);
    for (i, ((_, alts, _, want), got)) in fixture.iter().zip(&labels).enumerate() {
        if got.label != *want {
            failures.push(format!("fixture {i} {:?}: label {} expected {want}", alts[0], got.label));
        }
    }
    outcome(
        "pseudo-label audit: retained labels re-extract to gold; AED fixture labels",
        failures,
        format!(
            "{} examples, {} partial mentions, {} fixture cases",
            examples.len(),
            skipped.partial,
            fixture.len()
        ),
    )
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabet: Vec<char> = "abcde12 XYé".chars().collect();
    let mut failures = Vec::new();
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let mut s = || -> String {
            let n = rng.random_range(0..14);
            (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (s(), s());
        if normalized_edit_distance(&a, &b) != dp_ned(&a, &b) {
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        failures.push(format!("{mismatches} NED mismatches"));
    }
    let r = mcnemar_counts(15, 5);
    if (r.statistic - 4.05).abs() > 1e-9 || r.p_value >= 0.05 {
        failures.push(format!("b=15,c=5 gave {} p={}", r.statistic, r.p_value));
    }
    let r = mcnemar_counts(3, 0);
    if (r.p_value - 0.25).abs() > 1e-6 {
        failures.push(format!("b=3,c=0 gave p={}", r.p_value));
    }
    let (fwd, rev) = (mcnemar_counts(15, 5), mcnemar_counts(5, 15));
    if fwd.statistic != rev.statistic || fwd.p_value != rev.p_value {
        failures.push("McNemar not antisymmetric".into());
    }
    outcome(
        "oracles: NED vs full-matrix DP on 10,000 pairs; McNemar closed forms",
        failures,
        "NED exact on 10000 pairs; 4.05 and p=0.25 reproduced".into(),
    )
}

fn call(turns: &[(Speaker, &str)]) -> CallTranscript {
    CallTranscript::new(
        "nato",
        turns
            .iter()
            .enumerate()
            .map(|(i, (s, t))| Utterance::new(i, *s, vec![t.to_string()]))
            .collect(),
    )
}

fn nato(bundle: &ModelBundle) -> Outcome {
    let mut failures = Vec::new();
    let mut check = |what: &str, got: String, want: &str| {
        if got != want {
            failures.push(format!("{what}: {got:?} != {want:?}"));
        }
    };
    check(
        "C2N3TG",
        decode_spoken_form("c as in Charlie 2 n as in Nancy 3 c as in Tango G is in gold"),
        "C2N3TG",
    );
    check("C like Tango", decode_spoken_form("C like Tango"), "T");
    let ex = BuiltinExtractor::new(vec!["Ava".into()]);
    let name = FieldSpec::agent_name();
    let reference = FieldSpec::reference_number();
    check("Jasmin", ex.extract_text("my name is jasmine j a s m i n", &name), "Jasmin");
    check("Jane T", ex.extract_text("my name is jane c like tango", &name), "Jane T");
    check(
        "Jaquaidia K",
        ex.extract_text("my name is j a qu a i d i a last initial k", &name),
        "Jaquaidia K",
    );
    check(
        "Jaquaidia K 06012024",
        ex.extract_text("the reference is jaquaidia k 0 6 0 1 2 0 2 4", &reference),
        "Jaquaidia K 06012024",
    );

    // The two verification examples, on the standard trained verifier.
    let verifier = &bundle.verifiers[&FieldId::AgentName];
    let jane = call(&[
        (Speaker::AiModel, "may i have your name please"),
        (Speaker::Agent, "sure it's jane c like tango"),
        (Speaker::AiModel, "thank you"),
    ]);
    let d = verify_direct(&jane, &name, "Jane T", verifier);
    if d.verdict != Verdict::AutoApprove || d.score < 0.9 {
        failures.push(format!("Jane T verification {:?} score {:.3}", d.verdict, d.score));
    }
    let jasmin = call(&[
        (Speaker::AiModel, "may i have your name please"),
        (Speaker::Agent, "my name is jasmine j a s m i n"),
        (Speaker::AiModel, "thank you"),
    ]);
    let d = verify_direct(&jasmin, &name, "Jasmine", verifier);
    if d.verdict != Verdict::FlagForHuman {
        failures.push(format!("Jasmine verification approved with score {:.3}", d.score));
    }
    outcome(
        "NATO corpus: decoding and verification examples reproduce",
        failures,
        "C2N3TG, C like Tango, Jasmin, Jaquaidia K 06012024, Jane T approve, Jasmine flag".into(),
    )
}

fn determinism(first: &str, cfg: &SimConfig) -> Outcome {
    let (_, second) = full_run(cfg);
    let second = serde_json::to_string(&second).expect("serialize");
    let mut failures = Vec::new();
    if first != second {
        let at = first.bytes().zip(second.bytes()).position(|(a, b)| a != b).unwrap_or(first.len().min(second.len()));
        failures.push(format!("reports differ at byte {at}"));
    }
    outcome(
        "determinism: two seeded runs give byte-identical reports",
        failures,
        format!("{} bytes compared", first.len()),
    )
}

fn main() {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let (corpus, run) = full_run(&cfg);
    let first = serde_json::to_string(&run).expect("serialize");
    eprintln!("standard run finished in {:.1?}", start.elapsed());

    let outcomes = vec![
        ceiling(&run.bundle, &cfg),
        calibration(&corpus),
        aec_trend(&run, &corpus.test),
        trade_off(&run),
        ablation(&run),
        pseudo_label_audit(&corpus),
        oracles(),
        nato(&run.bundle),
        determinism(&first, &cfg),
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {} ({})", if o.ok { "PASS" } else { "FAIL" }, o.name, o.detail);
        if !o.ok {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1?}",
        outcomes.len() - failed,
        start.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
