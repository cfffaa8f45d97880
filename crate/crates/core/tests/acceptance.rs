//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dynparse::eval::{evaluate, PunctPolicy};
use dynparse::nn::{
    action_distribution, Gradients, Graph, ModelConfig, ParamId, ParserModel, ParserState,
};
use dynparse::oracle::check::{check_gold, projective_trees, random_projective_tree};
use dynparse::oracle::{optimal_actions, static_sequence, GoldTree};
use dynparse::par::{self, Execution};
use dynparse::synth::toy_treebank;
use dynparse::training::{
    flatten_distribution, marginal_nll, sample_action, sequence_nll, train, train_epoch,
    OracleKind, TrainConfig,
};
use dynparse::transition::{Action, Configuration, System};
use dynparse::treebank::{build_vocab, parse_conll, parse_embeddings, Sentence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_dynparse"))
        .args(["oracle-check", "--max-len", "5"])
        .output()
        .expect("binary runs");
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let summary = text.lines().next().unwrap_or("").to_owned();
    outcome(
        out.status.success() && elapsed < Duration::from_secs(120),
        format!("{summary}; {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Follow the static oracle and compare the result with the gold tree.
fn static_round_trip(gold: &GoldTree, system: System) -> Result<(), String> {
    let n = gold.len();
    let actions = static_sequence(gold, system).map_err(|e| e.to_string())?;
    if actions.len() != 2 * n {
        return Err(format!("{} transitions for n = {n}", actions.len()));
    }
    let mut c = Configuration::initial(n, system).map_err(|e| e.to_string())?;
    for a in actions {
        c.apply_mut(a).map_err(|e| e.to_string())?;
    }
    let tree = c.reconstruct_tree().map_err(|e| e.to_string())?;
    if tree.heads[1..] != gold.heads()[1..] || tree.labels[1..] != gold.labels()[1..] {
        return Err(format!(
            "reconstructed {:?}, gold {:?}",
            tree.heads,
            gold.heads()
        ));
    }
    Ok(())
}

fn static_soundness() -> Outcome {
    let mut exhaustive = 0;
    for n in 1..=6 {
        for heads in projective_trees(n) {
            let gold = check_gold(heads);
            for system in [System::ArcHybrid, System::ArcStandard] {
                if let Err(e) = static_round_trip(&gold, system) {
                    return outcome(false, format!("{system} on {:?}: {e}", gold.heads()));
                }
            }
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(7..=30);
        let gold = check_gold(random_projective_tree(n, &mut rng));
        for system in [System::ArcHybrid, System::ArcStandard] {
            if let Err(e) = static_round_trip(&gold, system) {
                return outcome(false, format!("{system} on {:?}: {e}", gold.heads()));
            }
        }
    }
    outcome(
        true,
        format!(
            "{exhaustive} exhaustive trees (n <= 6) + 1000 random (7 <= n <= 30), both systems"
        ),
    )
}

/// A state reached by a random walk, with its gold tree.
struct Probe {
    sentence: Sentence,
    gold: GoldTree,
    prefix: Vec<Action>,
    optimal: usize,
}

/// `−log Σ_{optimal} p` at the probe state, with gradients when requested.
fn probe_loss(model: &ParserModel, probe: &Probe, grads: Option<&mut Gradients>) -> f64 {
    let encoded = model.encode_sentence(&probe.sentence);
    let mut g = Graph::new(&model.params);
    let mut state = ParserState::new(&mut g, model, &encoded).unwrap();
    for &a in &probe.prefix {
        state.apply(&mut g, a).unwrap();
    }
    let p = state.encode(&mut g).unwrap();
    let valid = state.valid_actions().unwrap();
    let dist = action_distribution(&mut g, model, p, &valid).unwrap();
    let optimal = optimal_actions(state.config(), &probe.gold, model.num_labels(), true).unwrap();
    let loss = marginal_nll(&mut g, &dist, &optimal).unwrap();
    if let Some(grads) = grads {
        g.backward(loss, grads).unwrap();
    }
    g.scalar(loss)
}

fn gradient_fidelity() -> Outcome {
    const H: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    let bank = toy_treebank(40, 99);
    let corpus: Vec<Sentence> = bank.into_iter().filter(|s| s.len() <= 9).collect();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let vectors: String = ["dog", "cat", "the", "saw", "park"]
        .iter()
        .enumerate()
        .map(|(i, w)| format!("{w} {} {} {}\n", 0.1 * i as f64, -0.2, 0.05 * i as f64))
        .collect();
    let table = parse_embeddings(&vectors, &vocab).unwrap();
    let config = ModelConfig {
        pretrained_dim: 3,
        ..ModelConfig::tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut model =
        ParserModel::new(config, System::ArcHybrid, vocab, Some(&table), &mut rng).unwrap();

    // Random-walk states; keep going until enough have several optimal actions.
    let mut probes = Vec::new();
    let mut plural = 0;
    while probes.len() < 24 || plural < 6 {
        let sentence = corpus.choose(&mut rng).unwrap().clone();
        let gold = GoldTree::from_sentence(&sentence, &model.vocab).unwrap();
        let mut c = Configuration::initial(sentence.len(), System::ArcHybrid).unwrap();
        let steps = rng.gen_range(0..2 * sentence.len());
        let mut prefix = Vec::new();
        for _ in 0..steps {
            let valid = c.valid_actions(model.num_labels()).unwrap();
            let a = *valid.as_slice().choose(&mut rng).unwrap();
            c.apply_mut(a).unwrap();
            prefix.push(a);
        }
        let optimal = optimal_actions(&c, &gold, model.num_labels(), true)
            .unwrap()
            .len();
        if optimal >= 2 {
            plural += 1;
        } else if probes.len() >= 24 {
            continue;
        }
        probes.push(Probe {
            sentence,
            gold,
            prefix,
            optimal,
        });
    }

    let groups: Vec<ParamId> = model
        .params
        .ids()
        .filter(|&id| model.params.is_trainable(id))
        .collect();
    let mut covered = vec![false; groups.len()];
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for probe in &probes {
        let mut grads = Gradients::zeros_like(&model.params);
        probe_loss(&model, probe, Some(&mut grads));
        for (gi, &id) in groups.iter().enumerate() {
            let analytic = grads.get(id).to_vec();
            let largest = (0..analytic.len())
                .max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs()))
                .unwrap();
            for k in [largest, rng.gen_range(0..analytic.len())] {
                let orig = model.params.get(id).data[k];
                model.params.get_mut(id).data[k] = orig + H;
                let plus = probe_loss(&model, probe, None);
                model.params.get_mut(id).data[k] = orig - H;
                let minus = probe_loss(&model, probe, None);
                model.params.get_mut(id).data[k] = orig;
                let numeric = (plus - minus) / (2.0 * H);
                let rel =
                    (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-3);
                worst = worst.max(rel);
                checked += 1;
                if analytic[k].abs() > 1e-8 {
                    covered[gi] = true;
                }
                if rel > TOL {
                    return outcome(
                        false,
                        format!(
                            "{}[{k}]: analytic {:.3e} numeric {:.3e} (|optimal| = {})",
                            model.params.name(id),
                            analytic[k],
                            numeric,
                            probe.optimal
                        ),
                    );
                }
            }
        }
    }
    let missing: Vec<&str> = groups
        .iter()
        .zip(&covered)
        .filter(|(_, &c)| !c)
        .map(|(&id, _)| model.params.name(id))
        .collect();
    if !missing.is_empty() {
        return outcome(false, format!("no gradient signal reached {missing:?}"));
    }
    outcome(
        true,
        format!(
            "{} states ({plural} with |optimal| >= 2), {} groups, {checked} entries, worst rel. error {worst:.1e}",
            probes.len(),
            groups.len()
        ),
    )
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

fn argsort(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    idx
}

fn flattening_law() -> Outcome {
    let q = flatten_distribution(&[0.9, 0.1], 0.5).unwrap();
    if (q[0] - 0.75).abs() > 1e-12 || (q[1] - 0.25).abs() > 1e-12 {
        return outcome(false, format!("(0.9, 0.1) -> {q:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let k = rng.gen_range(2..=12);
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-3..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / z).collect();
        if flatten_distribution(&p, 1.0).unwrap() != p {
            return outcome(
                false,
                format!("trial {trial}: not the identity at alpha = 1"),
            );
        }
        let q = flatten_distribution(&p, 0.75).unwrap();
        if argsort(&q) != argsort(&p) {
            return outcome(false, format!("trial {trial}: ordering changed"));
        }
        if entropy(&q) < entropy(&p) {
            return outcome(false, format!("trial {trial}: entropy fell"));
        }
    }
    outcome(
        true,
        "worked case exact to 1e-12; 1000 distributions: identity, argsort, entropy",
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let corpus = parse_conll(&std::fs::read_to_string(data("train20.conll")).unwrap()).unwrap();
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        seed: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model =
        ParserModel::new(ModelConfig::default(), cfg.system, vocab, None, &mut rng).unwrap();
    let mut uas = 0.0;
    for epoch in 0..cfg.epochs {
        train_epoch(&mut model, &corpus, &cfg, epoch, &mut rng).unwrap();
        uas = evaluate(&model, &corpus, &PunctPolicy::Include, Execution::Parallel)
            .unwrap()
            .uas;
        if uas >= 99.0 {
            let secs = start.elapsed().as_secs_f64();
            return outcome(
                secs < 300.0,
                format!(
                    "static oracle: train UAS {uas:.2} after {} epochs, {secs:.1}s",
                    epoch + 1
                ),
            );
        }
    }
    outcome(
        false,
        format!("train UAS {uas:.2} after {} epochs", cfg.epochs),
    )
}

fn exploration_effect() -> Outcome {
    let bank = toy_treebank(200, 11);
    let (train_set, dev_set) = bank.split_at(160);
    let vocab = build_vocab(train_set, 1).unwrap();
    let runs: Vec<(u64, OracleKind)> = (1..=5)
        .flat_map(|s| [(s, OracleKind::Static), (s, OracleKind::Dynamic)])
        .collect();
    let scores = par::map(Execution::Parallel, &runs, |&(seed, oracle)| {
        let cfg = TrainConfig {
            oracle,
            alpha: 0.75,
            epochs: 8,
            seed,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ParserModel::new(
            ModelConfig::default(),
            cfg.system,
            vocab.clone(),
            None,
            &mut rng,
        )
        .unwrap();
        let out = train(
            model,
            train_set,
            dev_set,
            &cfg,
            Execution::Sequential,
            &mut rng,
            |_| Ok(()),
        )
        .unwrap();
        // Dev UAS of the checkpoint the training run keeps.
        out.reports[out.best_epoch - 1].dev_uas.unwrap()
    });
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for pair in scores.chunks(2) {
        let (s, d) = (pair[0], pair[1]);
        if d >= s {
            wins += 1;
        }
        per_seed.push(format!("{s:.2}/{d:.2}"));
    }
    outcome(
        wins >= 4,
        format!(
            "dynamic >= static in {wins}/5 seeds (static/dynamic dev UAS: {})",
            per_seed.join(", ")
        ),
    )
}

fn sequence_consistency() -> Outcome {
    let corpus = toy_treebank(30, 5);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = ParserModel::new(
        ModelConfig::tiny(),
        System::ArcHybrid,
        vocab,
        None,
        &mut rng,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for s in &corpus {
        let encoded = model.encode_sentence(s);
        let mut g = Graph::new(&model.params);
        let mut state = ParserState::new(&mut g, &model, &encoded).unwrap();
        let mut losses = Vec::new();
        let mut product = 1.0;
        while !state.is_terminal() {
            let p = state.encode(&mut g).unwrap();
            let valid = state.valid_actions().unwrap();
            let dist = action_distribution(&mut g, &model, p, &valid).unwrap();
            let a = sample_action(&dist.probs, &valid, &mut rng);
            product *= dist.prob(a);
            losses.push(
                marginal_nll(
                    &mut g,
                    &dist,
                    &dynparse::transition::ActionSet::new(vec![a]),
                )
                .unwrap(),
            );
            state.apply(&mut g, a).unwrap();
        }
        let total = sequence_nll(&mut g, &losses).unwrap();
        let rel = ((-g.scalar(total)).exp() / product - 1.0).abs();
        worst = worst.max(rel);
        if rel > 1e-9 {
            return outcome(
                false,
                format!("relative gap {rel:.2e} on a {}-token walk", s.len()),
            );
        }
    }
    outcome(
        true,
        format!(
            "{} sampled walks, worst relative gap {worst:.1e}",
            corpus.len()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let model = dir.path().join(format!("model-{tag}.txt"));
        let report = dir.path().join(format!("report-{tag}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_dynparse"))
            .arg("train")
            .arg("--train")
            .arg(data("train20.conll"))
            .arg("--dev")
            .arg(data("dev10.conll"))
            .args([
                "--oracle", "dynamic", "--alpha", "0.75", "--epochs", "6", "--seed", "42",
            ])
            .args([
                "--word-dim",
                "16",
                "--hidden-dim",
                "16",
                "--state-dim",
                "16",
            ])
            .arg("--model-out")
            .arg(&model)
            .arg("--report")
            .arg(&report)
            .status()
            .expect("binary runs");
        assert!(status.success());
        (
            std::fs::read(report).unwrap(),
            std::fs::read(model).unwrap(),
        )
    };
    let (r1, m1) = run("a");
    let (r2, m2) = run("b");
    outcome(
        r1 == r2 && m1 == m2 && !r1.is_empty(),
        format!(
            "reports {} bytes, checkpoints {} bytes, identical: {}",
            r1.len(),
            m1.len(),
            r1 == r2 && m1 == m2
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (
            "oracle exactness (oracle-check --max-len 5)",
            oracle_exactness,
        ),
        ("static-oracle soundness", static_soundness),
        ("gradient fidelity", gradient_fidelity),
        ("flattening law", flattening_law),
        ("overfit sanity", overfit),
        ("exploration effect", exploration_effect),
        ("sequence probability consistency", sequence_consistency),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {}",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail
        );
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
