//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Criterion 8 needs the FriendsPersona corpus as JSONL; point
//! `PRC_FRIENDSPERSONA` at the file to enable it.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prc_core::affective::{build_affective_content, TemplateSet};
use prc_core::backbone::{BackboneAdapter, ConstantAdapter, Family, RecordedAdapter, TinyAdapter, TinyConfig, TuningMode};
use prc_core::corpus::{compute_stats, flow_prefix, flow_prefix_len, load_dataset, split_dataset, Dialogue, TraitVector};
use prc_core::erc::{EmotionLabel, ErcAnnotator, GoldAnnotator, LexiconAnnotator};
use prc_core::eval::{evaluate_flow, evaluate_overall, flow_target_counts, TraitModel, TraitModels, FLOW_FRACTIONS};
use prc_core::hypotheses::{Polarity, Trait};
use prc_core::nli::{infer_trait, make_training_samples, training_loss, Answer, NliPrompt, NliSample, ScoreQuad};
use prc_core::session::{run_session, SessionState};
use prc_core::synthetic::{generate, SyntheticConfig};
use prc_core::trainer::{accuracy_on, build_samples, labelled_prompts, train_trait_model};
use prc_core::{Ablation, Pipeline, RunConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn two_party(first_is_target: bool) -> Dialogue {
    let turns = if first_is_target {
        [("Ann", "one"), ("Ben", "two"), ("Ann", "three"), ("Ben", "four")]
    } else {
        [("Ben", "one"), ("Ann", "two"), ("Ben", "three"), ("Ann", "four")]
    };
    Dialogue::from_turns("t", "Ann", &turns, TraitVector::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let templates = TemplateSet::default();
    let mut exact = 0;
    let mut mismatches = Vec::new();
    for e in EmotionLabel::ALL {
        let name = e.to_string();
        for first_is_target in [true, false] {
            let d = two_party(first_is_target);
            let ad = build_affective_content(&d, &[e; 4], &templates).unwrap();
            let expected: [String; 2] = if first_is_target {
                [format!("(Ann is initially {name})"), format!("(Then, Ben turns to be {name})")]
            } else {
                [format!("(At the beginning, Ben is {name})"), format!("(Ann responds with {name})")]
            };
            // Items 0 and 1 cover the two first-position and later-position branches.
            for (got, want) in [(&ad.items[0].description, &expected[0]), (&ad.items[1].description, &expected[1])] {
                if got == want {
                    exact += 1;
                } else {
                    mismatches.push(format!("{got:?} != {want:?}"));
                }
            }
        }
    }
    check(exact == 28 && mismatches.is_empty(), format!("{exact}/28 exact {mismatches:?}"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut agree = 0;
    let mut ties = 0;
    let mut tie_errors = 0;
    for i in 0..1000 {
        let q: [f64; 4] = if i % 10 == 0 {
            // Dyadic values so both sums are exact and equal.
            let a = rng.gen_range(0..8) as f64 / 16.0;
            let b = rng.gen_range(0..8) as f64 / 16.0;
            [a, b, b, a]
        } else {
            [rng.gen(), rng.gen(), rng.gen(), rng.gen()]
        };
        let p = infer_trait(&ScoreQuad::<f64>::from_f64(q), Trait::Neu);
        let evidence_pos = q[0] + q[3];
        let evidence_neg = q[2] + q[1];
        let oracle = if evidence_pos > evidence_neg { 1 } else { 0 };
        agree += usize::from(p.label == oracle);
        if evidence_pos == evidence_neg {
            ties += 1;
            tie_errors += usize::from(!(p.tie && p.label == 0));
        }
    }
    check(agree == 1000 && tie_errors == 0 && ties > 0, format!("{agree}/1000 exact, {ties} ties, {tie_errors} tie errors"))
}

fn criterion_3() -> Outcome {
    let pipeline = Pipeline::new(Arc::new(GoldAnnotator));
    let ds = generate(&SyntheticConfig {
        dialogues: 40,
        seed: 3,
        ..SyntheticConfig::default()
    });
    let prepared = pipeline.prepare(&ds[0], true).unwrap();
    let mut exact = 0;
    for t in Trait::ALL {
        let pair = pipeline.prompts(&prepared, t, Ablation::Full);
        for y in [0u8, 1] {
            let samples = make_training_samples(&pair, t, "d", y, false).unwrap();
            let (want_pos, want_neg) = if y == 1 { (Answer::Yes, Answer::No) } else { (Answer::No, Answer::Yes) };
            for s in &samples {
                let want = match s.polarity {
                    Polarity::Positive => want_pos,
                    Polarity::Negative => want_neg,
                };
                exact += usize::from(s.gold == want && s.prompt == *pair.get(s.polarity));
            }
        }
    }
    let mut config = RunConfig::new(Trait::Neu);
    config.ablation = Ablation::OnlyPos;
    let (samples, _) = build_samples(&config, &ds, &pipeline).unwrap();
    let mut per_dialogue: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &samples {
        *per_dialogue.entry(&s.dialogue_id).or_default() += 1;
    }
    let only_pos_ok = samples.iter().all(|s| s.polarity == Polarity::Positive)
        && per_dialogue.len() == ds.len()
        && per_dialogue.values().all(|&n| n == 1);
    check(
        exact == 20 && only_pos_ok,
        format!("{exact}/20 gold answers, only_pos one positive sample per dialogue: {only_pos_ok}"),
    )
}

fn criterion_4() -> Outcome {
    let cases = [([0.5, 0.5, 0.5, 0.5], 1u8, 1.3863), ([0.9, 0.1, 0.1, 0.9], 1, 0.2107), ([0.9, 0.1, 0.1, 0.9], 0, 4.6052)];
    let mut loss_ok = true;
    let mut losses = Vec::new();
    for (q, y, want) in cases {
        let got = training_loss(&ScoreQuad::<f64>::from_f64(q), y).unwrap();
        loss_ok &= (got - want).abs() <= 1e-3;
        losses.push(format!("{got:.4}"));
    }

    let config = TinyConfig {
        premise_buckets: 97,
        hypothesis_buckets: 31,
        dim: 5,
        seed: 4,
        ..TinyConfig::default()
    };
    let adapter = TinyAdapter::<f64>::new(config, Family::MaskFilling, TuningMode::Full).unwrap();
    let sample = |premise: &[&str], hypothesis: &str, gold: Answer| NliSample {
        prompt: NliPrompt {
            premise: premise.iter().map(|s| s.to_string()).collect(),
            hypothesis: hypothesis.to_string(),
        },
        gold,
        dialogue_id: "g".into(),
        trait_: Trait::Neu,
        polarity: Polarity::Positive,
    };
    let batch = vec![
        sample(&["Ann: hello there (Ann is initially Fear)", "Ben: hi (Then, Ben turns to be Joy)"], "Ann is anxious.", Answer::Yes),
        sample(&["Ann: fine (Ann is initially Neutral)"], "Ann is calm.", Answer::No),
    ];
    let (_, grad) = adapter.loss_and_gradient(&batch).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let h = 1e-6;
    for i in 0..grad.len() {
        if grad[i].abs() < 1e-8 && i % 17 != 0 {
            continue;
        }
        let mut plus = adapter.clone();
        plus.params_mut()[i] += h;
        let mut minus = adapter.clone();
        minus.params_mut()[i] -= h;
        let numeric = (plus.loss_and_gradient(&batch).unwrap().0 - minus.loss_and_gradient(&batch).unwrap().0) / (2.0 * h);
        let scale = grad[i].abs().max(numeric.abs());
        let rel = if scale < 1e-7 { 0.0 } else { (grad[i] - numeric).abs() / scale };
        worst = worst.max(rel);
        checked += 1;
    }
    check(
        loss_ok && worst <= 1e-4 && checked > 0,
        format!("losses {losses:?}; gradient check on {checked} parameters, worst relative error {worst:.2e}"),
    )
}

fn synthetic_accuracy(split: &prc_core::DatasetSplit, pipeline: &Pipeline, ablation: Ablation) -> f64 {
    let mut config = RunConfig::new(Trait::Neu);
    config.ablation = ablation;
    config.learning_rate_grid = Some(vec![3e-3, 1e-2, 3e-2]);
    let outcome = train_trait_model::<f64, _, _>(&config, split, pipeline, |c| {
        TinyAdapter::new(c.adapter.tiny.clone(), c.adapter.family, c.adapter.tuning)
    })
    .unwrap();
    let model = outcome.checkpoint.adapter.build().unwrap();
    let test = labelled_prompts(&config, &split.test, pipeline).unwrap();
    accuracy_on(&model, &test, ablation, pipeline).unwrap()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let ds = generate(&SyntheticConfig::default());
    let split = split_dataset(&ds, 0).unwrap();
    let pipeline = Pipeline::new(Arc::new(GoldAnnotator));
    let full = synthetic_accuracy(&split, &pipeline, Ablation::Full);
    let plain = synthetic_accuracy(&split, &pipeline, Ablation::NoAffective);
    let elapsed = start.elapsed();
    check(
        full >= 0.90 && plain <= 0.65 && elapsed < Duration::from_secs(300),
        format!("full {full:.3} (>= 0.90), no_affective {plain:.3} (<= 0.65), {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Dialogues of 1..=20 utterances among two or three speakers, with the
/// target's first turn at a random position.
fn random_dialogues(n: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["good", "sad", "angry", "fine", "okay", "wow", "no", "yes", "maybe", "today"];
    (0..n)
        .map(|i| {
            let m = rng.gen_range(1..=20);
            let speakers = ["Ann", "Ben", "Cal"];
            let k = rng.gen_range(2..=3);
            let first_target = rng.gen_range(0..m);
            let turns: Vec<(String, String)> = (0..m)
                .map(|j| {
                    let s = if j == first_target {
                        "Ann"
                    } else if j < first_target {
                        speakers[rng.gen_range(1..k)]
                    } else {
                        speakers[rng.gen_range(0..k)]
                    };
                    let len = rng.gen_range(1..6);
                    (s.to_string(), (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" "))
                })
                .collect();
            let labels = TraitVector::from_fn(|_| rng.gen_range(0..2));
            Dialogue::from_turns(format!("r{i}"), "Ann", &turns, labels).unwrap()
        })
        .collect()
}

fn tiny_models() -> TraitModels<f64> {
    Trait::ALL
        .into_iter()
        .map(|t| {
            let config = TinyConfig {
                seed: t as u64,
                init_scale: 0.5,
                head_init_scale: 0.5,
                ..TinyConfig::default()
            };
            let a: Box<dyn BackboneAdapter<f64>> = Box::new(TinyAdapter::new(config, Family::MaskFilling, TuningMode::Full).unwrap());
            (t, TraitModel::new(a, Ablation::Full))
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let ds = random_dialogues(200, 6);
    let mut missing_target = 0;
    let mut not_nested = 0;
    for d in &ds {
        let mut previous = 0;
        for f in FLOW_FRACTIONS {
            let p = flow_prefix(d, f);
            missing_target += usize::from(!p.utterances.iter().any(|u| u.is_target));
            not_nested += usize::from(p.utterances.len() < previous || p.utterances[..] != d.utterances[..p.utterances.len()]);
            previous = p.utterances.len();
            assert_eq!(flow_prefix_len(d, f).extended, p.utterances.len());
        }
    }
    let pipeline = Pipeline::new(Arc::new(LexiconAnnotator::reference()));
    let models = tiny_models();
    let overall = evaluate_overall(&models, &ds, &pipeline).unwrap();
    let flow = evaluate_flow(&models, &ds, &pipeline, &FLOW_FRACTIONS).unwrap();
    let identical = flow[3].accuracies == overall
        && overall.per_trait.values().zip(flow[3].accuracies.per_trait.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    check(
        missing_target == 0 && not_nested == 0 && identical,
        format!(
            "{} prefixes without a target: {missing_target}, non-nested: {not_nested}, fraction 1.0 == overall: {identical}",
            ds.len() * 4
        ),
    )
}

fn criterion_7() -> Outcome {
    let pipeline = Pipeline::new(Arc::new(GoldAnnotator));
    let models: TraitModels<f64> = Trait::ALL
        .into_iter()
        .map(|t| {
            let a: Box<dyn BackboneAdapter<f64>> = Box::new(ConstantAdapter::new(0.5, 0.5).unwrap());
            (t, TraitModel::new(a, Ablation::Full))
        })
        .collect();
    let ds = generate(&SyntheticConfig {
        dialogues: 200,
        seed: 7,
        ..SyntheticConfig::default()
    });
    let test = split_dataset(&ds, 7).unwrap().test;
    let acc = evaluate_overall(&models, &test, &pipeline).unwrap();
    let mut exact = 0;
    let mut cells = Vec::new();
    for t in Trait::ALL {
        let base = test.iter().filter(|d| d.labels.get(t) == 0).count() as f64 / test.len() as f64;
        exact += usize::from(acc.get(t) == base);
        cells.push(format!("{t} {:.3}/{base:.3}", acc.get(t)));
    }
    check(exact == 5, format!("{exact}/5 traits equal the negative base rate [{}]", cells.join(", ")))
}

fn criterion_8() -> Outcome {
    let Ok(path) = std::env::var("PRC_FRIENDSPERSONA") else {
        return Outcome::Skip("real data absent; set PRC_FRIENDSPERSONA=<FriendsPersona JSONL> to run".into());
    };
    let ds = match load_dataset(&path) {
        Ok(ds) => ds,
        Err(e) => return Outcome::Fail(format!("cannot load {path}: {e}")),
    };
    let stats = compute_stats(&ds).unwrap();
    let reference = [(Trait::Agr, 0.43), (Trait::Con, 0.46), (Trait::Ext, 0.44), (Trait::Opn, 0.35), (Trait::Neu, 0.47)];
    let mut problems = Vec::new();
    if stats.dialogues != 711 {
        problems.push(format!("{} dialogues", stats.dialogues));
    }
    if stats.unique_utterances != 8157 {
        problems.push(format!("{} unique utterances", stats.unique_utterances));
    }
    for (t, pos) in reference {
        let r = &stats.label_ratios[&t];
        if (r.positive - pos).abs() > 0.01 + 1e-9 {
            problems.push(format!("{t} positive ratio {}", r.positive));
        }
    }
    let mut counts = Vec::new();
    for (f, want) in FLOW_FRACTIONS.into_iter().zip([0.52, 1.48, 2.63, 4.09]) {
        let (natural, _, _) = flow_target_counts(&ds, f);
        counts.push(format!("{natural:.2}"));
        if (natural - want).abs() > 0.05 {
            problems.push(format!("flow {f}: mean target utterances {natural:.3}"));
        }
    }
    check(problems.is_empty(), format!("flow counts {counts:?}; problems {problems:?}"))
}

const TRANSCRIPT: [(&str, &str); 5] = [
    ("Agent", "Good morning, Mrs. Thompson! How are you feeling today?"),
    (
        "Mrs. Thompson",
        "Oh, everything is falling apart! My arthritis is acting up, my cat ran away, and the weather outside is simply dreadful!",
    ),
    ("Agent", "I understand, Mrs. Thompson. How can I help you?"),
    (
        "Mrs. Thompson",
        "I don't know. It just feels like the world is against me... I can't seem to catch a break...",
    ),
    (
        "Agent",
        "It's understandable to feel overwhelmed. Have you ever tried engaging in relaxation exercises or practicing mindfulness during challenging moments?",
    ),
];

fn criterion_9() -> Outcome {
    let target = "Mrs. Thompson";
    let annotator = Arc::new(LexiconAnnotator::reference());
    let pipeline = Pipeline::new(annotator.clone());
    let rows: [(usize, [f64; 5]); 2] = [(2, [0.37, 0.42, 0.45, 0.36, 0.54]), (4, [0.21, 0.41, 0.47, 0.28, 0.68])];

    // A confidence c is recorded as (c, 1-c) on the positive prompt and
    // (1-c, c) on the negative one, so S_pos / (S_pos + S_neg) = c.
    let mut recorded = RecordedAdapter::new(Family::MaskFilling, usize::MAX);
    for (turn, conf) in rows {
        let d = Dialogue::from_turns("session", target, &TRANSCRIPT[..turn], TraitVector::default()).unwrap();
        let prepared = pipeline.prepare(&d, true).unwrap();
        for (t, c) in Trait::ALL.into_iter().zip(conf) {
            let pair = pipeline.prompts(&prepared, t, Ablation::Full);
            recorded.record(&pair.positive, c, 1.0 - c).unwrap();
            recorded.record(&pair.negative, 1.0 - c, c).unwrap();
        }
    }
    let full = Dialogue::from_turns("session", target, &TRANSCRIPT[..4], TraitVector::default()).unwrap();
    let emotions: Vec<String> = annotator.label_utterances(&full).unwrap().iter().map(|e| e.to_string()).collect();

    let models: TraitModels<f64> = Trait::ALL
        .into_iter()
        .map(|t| {
            let a: Box<dyn BackboneAdapter<f64>> = Box::new(recorded.clone());
            (t, TraitModel::new(a, Ablation::Full))
        })
        .collect();
    let input: String = TRANSCRIPT.iter().map(|(s, t)| format!("{s}: {t}\n")).collect();
    let mut out = Vec::new();
    let mut events = Vec::new();
    let mut state = SessionState::<f64>::new(target, 0.6).unwrap();
    if let Err(e) = run_session(&mut state, &models, &pipeline, input.as_bytes(), &mut out, &mut events) {
        return Outcome::Fail(format!("session failed: {e}"));
    }
    let out = String::from_utf8(out).unwrap();
    let events = String::from_utf8(events).unwrap();
    let expected = [
        "[1] Agent  -",
        "[2] Mrs. Thompson  AGR 37%  CON 42%  EXT 45%  OPN 36%  NEU 54%",
        "[3] Agent  -",
        "[4] Mrs. Thompson  AGR 21%  CON 41%  EXT 47%  OPN 28%  NEU 68%",
        "trigger: NEU (68% > 60%)",
        "[5] Agent  -",
    ];
    let lines: Vec<&str> = out.lines().collect();
    let event_lines: Vec<serde_json::Value> = events.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let one_trigger = event_lines.len() == 1 && event_lines[0]["trait"] == "NEU" && event_lines[0]["turn"] == 4;
    check(
        lines == expected && one_trigger && emotions == ["Joy", "Anger", "Neutral", "Sadness"],
        format!("rows match: {}, trigger events {event_lines:?}, emotions {emotions:?}", lines == expected),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("template fidelity", criterion_1),
        ("inference-rule oracle", criterion_2),
        ("training-sample rule", criterion_3),
        ("loss arithmetic and gradient check", criterion_4),
        ("synthetic end-to-end", criterion_5),
        ("flow protocol invariants", criterion_6),
        ("constant-adapter base rate", criterion_7),
        ("real-data reference statistics", criterion_8),
        ("session replay", criterion_9),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {} {tag}: {name}: {detail}", k + 1);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
