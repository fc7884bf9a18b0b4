use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::corpus::{generate_synthetic, PlantedBest, SyntheticSpec, TaskKind};
use crate::generator::{Generator, OracleGenerator, PromptCache};
use crate::metrics::CorpusMetric;
use crate::prompting::{Aggregation, Templates};
use crate::retrieval::DenseRetriever;
use crate::rng::substream;
use crate::textmodel::{Head, Pooling, Vocabulary};

fn parts(entries: &[&str], input: &str) -> PromptParts {
    PromptParts {
        entries: entries.iter().map(|s| s.to_string()).collect(),
        input: input.into(),
        joiner: ", and ".into(),
        connective: ". ".into(),
        aggregation: Aggregation::Prepend,
    }
}

fn example(evals: &[f64]) -> SelectionExample {
    let n = evals.len();
    SelectionExample {
        instance_id: "x".into(),
        target: "a".into(),
        retrievers: RetrieverId::POOL[..n].to_vec(),
        parts: (0..n).map(|i| parts(&[&format!("entry{i}")], "input")).collect(),
        outputs: evals.iter().map(|&e| if e > 0.5 { "a".into() } else { "b".into() }).collect(),
        evals: evals.to_vec(),
        qpp_views: vec![vec![0.0]; n],
        query_len: 1,
    }
}

fn head_params(dim: usize, seed: u64) -> ScorerParams {
    let vocab = Arc::new(Vocabulary::build(["entry0 entry1 entry2 input a b sep"]));
    let mut p = ScorerParams::init(vocab, dim, true, &mut substream(seed, "init"));
    let mut rng = substream(seed, "perturb");
    for v in p.embeddings_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for w in &mut p.head_mut().unwrap().weights {
        *w = rng.random_range(-1.0..1.0);
    }
    p
}

#[test]
fn target_distribution_closed_form() {
    let p = target_selection_distribution(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let e = std::f64::consts::E;
    assert!((p[0] - e / (e + 5.0)).abs() < 1e-12);
    assert!((p[0] - 0.3521).abs() < 1e-4);
    for q in &p[1..] {
        assert!((q - 0.1296).abs() < 1e-4);
    }
    let u = target_selection_distribution(&[0.3; 6]);
    assert!(u.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-12));
}

#[test]
fn zero_head_selects_first() {
    let mut p = head_params(3, 1);
    *p.head_mut().unwrap() = Head {
        weights: vec![0.0; 3],
        bias: 0.7,
    };
    let ex = example(&[0.0, 1.0, 0.0]);
    let scores = selection_scores(&p, &ex, Mode::Pre).unwrap();
    assert!(scores.iter().all(|&s| s == 0.7));
    assert_eq!(select(&scores), 0);
}

#[test]
fn identical_prompts_identical_scores() {
    let p = head_params(4, 2);
    let mut ex = example(&[0.0, 1.0, 0.0]);
    ex.parts[2] = ex.parts[0].clone();
    ex.outputs[2] = ex.outputs[0].clone();
    for mode in [Mode::Pre, Mode::Post] {
        let s = selection_scores(&p, &ex, mode).unwrap();
        assert_eq!(s[0], s[2]);
    }
}

#[test]
fn post_mode_requires_outputs() {
    let p = head_params(2, 3);
    let mut ex = example(&[0.0, 1.0]);
    ex.outputs.clear();
    assert!(selection_scores(&p, &ex, Mode::Post).is_err());
}

#[test]
fn toy_head_matches_hand_dot_products() {
    let vocab = Arc::new(Vocabulary::from_tokens(["a".to_string(), "b".to_string()]));
    // rows: <unk>, a = (1, 0), b = (0, 2)
    let emb = vec![0.0, 0.0, 1.0, 0.0, 0.0, 2.0];
    let head = Head {
        weights: vec![0.5, -1.0],
        bias: 0.1,
    };
    let p = ScorerParams::from_parts(vocab, 2, emb, Some(head)).unwrap();
    // "a b" encodes to (0.5, 1.0)
    assert!((p.head_score("a b").unwrap() - (0.25 - 1.0 + 0.1)).abs() < 1e-12);
    assert!((p.head_score("a").unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn rspg_gradient_matches_finite_differences() {
    let p = head_params(3, 4);
    let ex = example(&[1.0, 0.0]);
    let item = SelectionItem::new(&p, &ex, Mode::Post);
    let (g, loss) = rspg_step(&[&item], &p).unwrap();
    assert!(loss >= 0.0);
    let eps = 1e-6;
    let mut checked = 0;
    for i in 0..p.embeddings().len() {
        let mut plus = p.clone();
        plus.embeddings_mut()[i] += eps;
        let mut minus = p.clone();
        minus.embeddings_mut()[i] -= eps;
        let fd = (rspg_loss(&plus, &item).unwrap() - rspg_loss(&minus, &item).unwrap()) / (2.0 * eps);
        let a = g.embeddings[i];
        if a.abs() > 1e-7 {
            assert!(((fd - a) / a).abs() < 1e-4, "coord {i}: fd {fd} vs {a}");
            checked += 1;
        } else {
            assert!(fd.abs() < 1e-7);
        }
    }
    assert!(checked > 0);
    let gh = g.head.as_ref().unwrap();
    for i in 0..3 {
        let mut plus = p.clone();
        plus.head_mut().unwrap().weights[i] += eps;
        let mut minus = p.clone();
        minus.head_mut().unwrap().weights[i] -= eps;
        let fd = (rspg_loss(&plus, &item).unwrap() - rspg_loss(&minus, &item).unwrap()) / (2.0 * eps);
        assert!(((fd - gh.weights[i]) / gh.weights[i]).abs() < 1e-4);
    }
}

#[test]
fn rspg_zero_gradient_at_target() {
    let mut p = head_params(2, 5);
    *p.head_mut().unwrap() = Head {
        weights: vec![0.0; 2],
        bias: 0.0,
    };
    let ex = example(&[0.4, 0.4, 0.4]);
    let item = SelectionItem::new(&p, &ex, Mode::Pre);
    let (g, loss) = rspg_step(&[&item], &p).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(g.norm() < 1e-12);
}

#[test]
fn truncation_counts_tokens() {
    assert_eq!(truncate_tokens("one, two three!", 2), "one, two");
    assert_eq!(truncate_tokens("one two", 5), "one two");
    assert_eq!(truncate_tokens("one two", 0), "");
}

#[test]
fn post_text_drops_entries_then_output() {
    let p = parts(&["e1 e1", "e2 e2", "e3 e3"], "in put");
    assert_eq!(post_text(&p, "out", 100), format!("{}{POST_SEPARATOR}out", p.render()));
    // entries 6 + joiners 2 + input 2 + separator 1 + output 1 = 12
    let t = post_text(&p, "out", 9);
    assert_eq!(words(&t).len(), 9);
    assert!(t.contains("e2") && !t.contains("e3") && t.ends_with("out"));
    let t = post_text(&p, "o1 o2 o3 o4", 5);
    assert_eq!(t, format!("in put{POST_SEPARATOR}o1 o2"));
}

#[test]
fn success_rate_enumeration() {
    // best sets {A}, {A,B}, {C}; picks A, B, A
    let exs = [example(&[1.0, 0.0, 0.0]), example(&[1.0, 1.0, 0.0]), example(&[0.0, 0.0, 1.0])];
    assert!((success_rate(&[0, 1, 0], &exs) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(success_rate(&[0, 0, 2], &exs), 1.0);
    let unique = [example(&[1.0, 0.0]), example(&[0.0, 1.0])];
    assert_eq!(success_rate(&[1, 0], &unique), 0.0);
}

#[test]
fn winning_rate_enumeration() {
    let exs = [
        example(&[1.0, 0.0, 0.0]),
        example(&[1.0, 1.0, 0.0]),
        example(&[0.0, 0.0, 1.0]),
        example(&[0.5, 0.5, 0.5]),
    ];
    assert_eq!(winning_rate(&exs), vec![0.75, 0.5, 0.5]);
    let tied = [example(&[0.0, 0.0]), example(&[1.0, 1.0])];
    assert_eq!(winning_rate(&tied), vec![1.0, 1.0]);
}

#[test]
fn oracle_bounds_accuracy_and_error_metrics() {
    let exs = [example(&[1.0, 0.0]), example(&[0.0, 1.0])];
    let b = oracle_bounds(&exs, TaskKind::MovieTag, CorpusMetric::Accuracy).unwrap();
    assert_eq!((b.lower, b.upper), (0.0, 1.0));

    let mut r = example(&[0.0, 0.0]);
    r.target = "3".into();
    r.outputs = vec!["1".into(), "3".into()];
    r.evals = vec![0.5, 1.0];
    let b = oracle_bounds(&[r], TaskKind::ProductRating, CorpusMetric::Mae).unwrap();
    assert_eq!((b.lower, b.upper), (2.0, 0.0));

    let same = example(&[1.0, 1.0]);
    let b = oracle_bounds(&[same], TaskKind::MovieTag, CorpusMetric::Accuracy).unwrap();
    assert_eq!(b.lower, b.upper);
}

#[test]
fn summary_reports_choices() {
    let exs = [example(&[1.0, 0.0]), example(&[0.0, 1.0])];
    let s = evaluate_selections("fixed", &[0, 0], &exs, TaskKind::MovieTag).unwrap();
    assert_eq!(s.success_rate, 0.5);
    assert_eq!(s.metrics["accuracy"], 0.5);
    assert_eq!(s.instances[1].chosen, RetrieverId::None);
    assert!(!s.instances[1].success);
    assert!(evaluate_selections("bad", &[0], &exs, TaskKind::MovieTag).is_err());
}

fn synthetic_pool(best: PlantedBest) -> (Vec<SelectionExample>, crate::corpus::SyntheticBenchmark) {
    let bench = generate_synthetic(&SyntheticSpec {
        num_users: 12,
        profile_size: 8,
        marker_vocab_size: 6,
        payload_vocab_size: 5,
        best_retriever_mix: [(best, 1.0)].into_iter().collect(),
        seed: 5,
    })
    .unwrap();
    let templates = Templates::shipped().clone();
    let texts: Vec<String> = bench
        .dataset
        .instances
        .iter()
        .flat_map(|i| {
            let rendered = RenderedProfile::new(i.profile.clone(), i.task, &templates).unwrap();
            std::iter::once(i.input_text.clone()).chain(rendered.texts)
        })
        .collect();
    let vocab = Arc::new(Vocabulary::build(texts.iter().map(String::as_str)));
    let params = Arc::new(ScorerParams::init(vocab.clone(), 8, false, &mut substream(5, "init")));
    let pooling = Pooling::idf(&vocab, texts.iter().map(String::as_str));
    let dense = |id| DenseRetriever {
        id,
        params: params.clone(),
        pooling: pooling.clone(),
    };
    let pool = RetrieverPool {
        templates,
        zero_shot: dense(RetrieverId::DenseZeroShot),
        rl: Some(dense(RetrieverId::RopgRl)),
        kd: Some(dense(RetrieverId::RopgKd)),
    };
    let generator = Generator::new(OracleGenerator::new(bench.synonyms.clone()), PromptCache::in_memory());
    let (examples, dropped) = build_examples(&bench.dataset.instances, &pool, &generator, 4).unwrap();
    assert_eq!(dropped, 0);
    (examples, bench)
}

use crate::retrieval::RenderedProfile;

#[test]
fn planted_bm25_best_on_synthetic_pool() {
    let (examples, _) = synthetic_pool(PlantedBest::Bm25);
    assert_eq!(examples.len(), 12);
    for ex in &examples {
        assert_eq!(ex.retrievers, RetrieverId::POOL.to_vec());
        let bm25 = ex.evals[2];
        assert_eq!(bm25, 1.0, "{}", ex.instance_id);
        assert!(bm25 > ex.evals[0] && bm25 > ex.evals[1]);
        assert_eq!(ex.prompt(0), ex.parts[0].input);
    }
}

#[test]
fn oracle_bounds_brute_force_on_synthetic() {
    let (examples, _) = synthetic_pool(PlantedBest::Recency);
    let b = oracle_bounds(&examples, TaskKind::Synthetic, CorpusMetric::Accuracy).unwrap();
    let n = examples.len() as f64;
    let lo = examples.iter().map(|e| e.evals.iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>() / n;
    let hi = examples.iter().map(|e| e.evals.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum::<f64>() / n;
    assert!((b.lower - lo).abs() < 1e-12 && (b.upper - hi).abs() < 1e-12);
    let picks = vec![3; examples.len()];
    let s = evaluate_selections("dense", &picks, &examples, TaskKind::Synthetic).unwrap();
    assert!(s.metrics["accuracy"] >= b.lower && s.metrics["accuracy"] <= b.upper);
}

#[test]
fn rspg_training_reduces_loss() {
    let (mut examples, _) = synthetic_pool(PlantedBest::Bm25);
    examples.extend(synthetic_pool(PlantedBest::Recency).0);
    let config = RspgConfig {
        epochs: 5,
        batch_size: 4,
        accumulation: 1,
        base_lr: 0.05,
        dim: 8,
        seed: 2,
        ..RspgConfig::default()
    };
    let out = train_rspg(&examples, Mode::Post, &config).unwrap();
    assert_eq!(out.epoch_losses.len(), 6);
    assert!(out.epoch_losses[5] < out.epoch_losses[0]);
    let again = train_rspg(&examples, Mode::Post, &config).unwrap();
    assert_eq!(again.params, out.params);
}

proptest! {
    #[test]
    fn target_sums_to_one(evals in proptest::collection::vec(0.0f64..1.0, 1..8)) {
        let p = target_selection_distribution(&evals);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn select_shift_invariant(scores in proptest::collection::vec(-5.0f64..5.0, 1..8), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        prop_assert_eq!(select(&scores), select(&shifted));
    }

    #[test]
    fn oracle_choice_brackets_any_selection(
        rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..6),
        picks in proptest::collection::vec(0usize..3, 6),
    ) {
        for (row, &pick) in rows.iter().zip(&picks) {
            let lo = row[report_worst(row)];
            let hi = row[argmax(row)];
            prop_assert!(lo <= row[pick] && row[pick] <= hi);
        }
        let exs: Vec<SelectionExample> = rows.iter().map(|r| example(r)).collect();
        prop_assert_eq!(success_rate(&(0..exs.len()).map(|i| argmax(&exs[i].evals)).collect::<Vec<_>>(), &exs), 1.0);
    }
}

fn report_worst(row: &[f64]) -> usize {
    let neg: Vec<f64> = row.iter().map(|v| -v).collect();
    argmax(&neg)
}
