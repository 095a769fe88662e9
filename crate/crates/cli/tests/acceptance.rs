//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use enzyme_cli::RunConfig;
use enzyme_core::alphabet::{self, ALPHABET_SIZE};
use enzyme_core::data::{align_identity, cluster_by_identity, load_corpus, split_clusters, Split, IDENTITY_THRESHOLD};
use enzyme_core::ec::{EcTag, EcTree};
use enzyme_core::geometry::{distance, init_coordinates, knn, random_rigid, Coordinates, Point, CA_SPACING};
use enzyme_core::model::{
    binding_probs, forward_nael_stack, substrate_forward, EnzymeInput, ModelConfig, ParameterStore, SubstrateRecord,
    SUBSTRATE_FEATURES,
};
use enzyme_core::numerics::Tape;
use enzyme_core::sites::{conserved_columns, mine_sites, AlignedFamily};
use enzyme_core::training::{evaluate, train, LogEntry, TrainSchedule, TrainState, TrainingSet};
use enzyme_core::verify::{equivariance_suite, gradient_suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {:.1} s, limit {} s", t.as_secs_f64(), limit.as_secs()))
}

fn toy_tags() -> EcTree {
    let labels = ["1.1.1.1", "1.1.1.2", "1.2.1.1", "2.1.1.1", "2.7.1.1", "3.1.1.1", "3.1.4.1", "4.2.1.1"];
    EcTree::from_labels(labels.iter().map(|l| l.parse().unwrap()))
}

fn small(d: usize, heads: usize, layers: usize, period: usize, tags: &EcTree) -> ModelConfig {
    ModelConfig {
        d,
        heads,
        attention_layers: layers,
        interleave_period: period,
        substrate_layers: 2,
        max_len: 64,
        tag_vocab: tags.vocab_sizes(),
        ..ModelConfig::desk()
    }
}

fn equivariance() -> Check {
    let start = Instant::now();
    let tags = toy_tags();
    let mut cases = 0;
    let mut worst = BTreeMap::<&str, f64>::new();
    for (d, heads) in [(8, 2), (64, 4)] {
        let cfg = small(d, heads, 6, 2, &tags);
        for model in 0..4u64 {
            let params = ParameterStore::init(&cfg, 1000 + model).map_err(|e| e.to_string())?;
            let report = equivariance_suite(&params, &cfg, &tags, 25, model).map_err(|e| e.to_string())?;
            cases += report.cases;
            for c in &report.checks {
                let w = worst.entry(c.property).or_default();
                *w = w.max(c.max_deviation);
                ensure(c.passed(), || format!("d={d}: {} deviation {:e} at {}", c.property, c.max_deviation, c.worst))?;
            }
        }
    }
    ensure(cases >= 200, || format!("only {cases} cases"))?;
    within(start, Duration::from_secs(60))?;
    let dev: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!("{cases} cases, {}", dev.join(", ")))
}

fn gradients() -> Check {
    let start = Instant::now();
    let tags = toy_tags();
    let cfg = small(8, 2, 4, 2, &tags);
    let params = ParameterStore::init(&cfg, 5).map_err(|e| e.to_string())?;
    let expected: usize = params.iter().map(|(_, t)| t.data().len().min(5)).sum();
    let report = gradient_suite(&params, &cfg, &tags, 5, 0).map_err(|e| e.to_string())?;
    ensure(report.cases == expected, || format!("{} coordinates sampled, expected {expected}", report.cases))?;
    let c = &report.checks[0];
    ensure(c.passed(), || format!("relative error {:e} at {}", c.max_deviation, c.worst))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{} tensors, {} coordinates, max relative error {:.1e}",
        params.len(),
        report.cases,
        c.max_deviation
    ))
}

fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
}

fn block_means(v: &[f64], w: usize) -> Vec<f64> {
    v.chunks_exact(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
}

fn strictly_decreasing(v: &[f64]) -> Option<usize> {
    v.windows(2).position(|w| w[1] >= w[0])
}

fn overfit() -> Check {
    let start = Instant::now();
    let run = RunConfig::load(&root().join("configs/toy.toml")).map_err(|e| e.to_string())?;
    let corpus = load_corpus(&run.corpus_spec()).map_err(|e| e.to_string())?;
    let ds = &corpus.dataset;
    let mut cfg = run.model.clone();
    cfg.tag_vocab = ds.tree.vocab_sizes();
    let s = &run.schedule;
    ensure(ds.train.len() == 8 && ds.valid.is_empty() && ds.test.is_empty(), || "expected 8 training enzymes".into())?;
    ensure(ds.train.iter().all(|e| e.record.len() <= 40), || "enzyme longer than 40".into())?;
    ensure(cfg.d == 64 && cfg.coord_weight == 1.0, || "expected d = 64 and coordinate weight 1".into())?;
    ensure(s.total_steps() == 500 && s.learning_rate == 3e-4, || "expected 500 steps at lr 3e-4".into())?;

    let mut state = TrainState::fresh(&cfg, s).map_err(|e| e.to_string())?;
    let mut log: Vec<LogEntry> = Vec::new();
    let set = TrainingSet {
        examples: &ds.train,
        substrates: &ds.substrates,
    };
    train(set, &cfg, s, &mut state, &mut |e, _| {
        log.push(*e);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let ev = evaluate(&ds.train, &state.params, &cfg, s.seed).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(600))?;

    let (nll, rec) = (ev.nll_per_residue(), ev.recovery());
    let summary = format!(
        "seq_nll {nll:.4} nats/residue, recovery {:.1}% of {} free residues",
        100.0 * rec,
        ev.free_residues
    );
    ensure(nll < 0.05 && rec >= 0.99, || summary.clone())?;
    let seq: Vec<f64> = log.iter().map(|e| e.loss.seq_nll).collect();
    let total: Vec<f64> = log.iter().map(|e| e.loss.total).collect();
    if let Some(i) = strictly_decreasing(&moving_average(&seq, 50)) {
        return Err(format!("{summary}; 50-step moving average of seq_nll rises after step {}", i + 50));
    }
    if let Some(i) = strictly_decreasing(&block_means(&total, 50)) {
        let (a, b) = ((i + 1) * 50, (i + 2) * 50);
        return Err(format!("{summary}; mean total of steps {a}..{b} is not below the block before"));
    }
    Ok(summary)
}

fn decomposition() -> Check {
    let corpus = load_corpus(&RunConfig::load(&root().join("configs/toy.toml")).map_err(|e| e.to_string())?.corpus_spec())
        .map_err(|e| e.to_string())?;
    let ds = &corpus.dataset;
    let cfg = small(8, 2, 2, 1, &ds.tree);
    ensure(cfg.coord_weight == 1.0, || "coordinate weight is not 1".into())?;
    let sched = TrainSchedule {
        phase1_steps: 50,
        phase2_steps: 50,
        batch_residues: 64,
        learning_rate: 1e-3,
        seed: 17,
        ..TrainSchedule::with_total(100)
    };
    let mut state = TrainState::fresh(&cfg, &sched).map_err(|e| e.to_string())?;
    let mut log: Vec<LogEntry> = Vec::new();
    let set = TrainingSet {
        examples: &ds.train,
        substrates: &ds.substrates,
    };
    train(set, &cfg, &sched, &mut state, &mut |e, _| {
        log.push(*e);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    ensure(log.len() == 100, || format!("{} batches", log.len()))?;
    for e in &log {
        let l = e.loss;
        ensure(l.total == l.seq_nll + l.coord_l2 + l.binding_ce, || format!("step {}: {l:?}", e.step))?;
        if e.step < 50 {
            ensure(l.binding_ce == 0.0, || format!("phase-one step {} has binding {}", e.step, l.binding_ce))?;
        }
    }
    let bound = log[50..].iter().filter(|e| e.loss.binding_ce > 0.0).count();
    ensure(bound > 0, || "no phase-two batch carried a binding term".into())?;
    Ok(format!("100 batches exact, {bound} phase-two batches with binding"))
}

/// Conserved columns by integer counting with `tau = percent / 100`.
fn counting_oracle(rows: &[Vec<char>], percent: usize) -> Vec<Option<char>> {
    (0..rows[0].len())
        .map(|c| {
            let mut counts = BTreeMap::<char, usize>::new();
            for r in rows.iter().filter(|r| r[c] != '-') {
                *counts.entry(r[c]).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            let leaders: Vec<char> = counts.iter().filter(|(_, &n)| n == top).map(|(&a, _)| a).collect();
            match leaders.as_slice() {
                [a] if 100 * top > percent * rows.len() => Some(*a),
                _ => None,
            }
        })
        .collect()
}

fn sites() -> Check {
    let fixture = ["AKE-LGDWM", "CRETIGNYM", "DSEVKGP-M", "FTE-QGHFM", "HWEY-GI-M"];
    let fam = AlignedFamily::new(fixture.iter().enumerate().map(|(i, r)| (format!("s{i}"), r.to_string())).collect())
        .map_err(|e| e.to_string())?;
    let cols = conserved_columns(&fam, 0.30).map_err(|e| e.to_string())?;
    let want: Vec<Option<char>> = "--E--G--M".chars().map(|c| (c != '-').then_some(c)).collect();
    ensure(cols == want, || format!("fixture columns {cols:?}"))?;
    for ann in mine_sites(&fam, 0.30).map_err(|e| e.to_string())? {
        ensure(ann.letters == ['E', 'G', 'M'], || format!("{} annotated {:?}", ann.id, ann.letters))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    for _ in 0..20 {
        let n_rows = rng.random_range(3..=12);
        let n_cols = rng.random_range(5..=40);
        let letters: Vec<char> = (0..rng.random_range(1..=4)).map(|_| alphabet::letter(rng.random_range(0..20))).collect();
        let rows: Vec<Vec<char>> = (0..n_rows)
            .map(|_| {
                (0..n_cols)
                    .map(|_| if rng.random_bool(0.2) { '-' } else { letters[rng.random_range(0..letters.len())] })
                    .collect()
            })
            .collect();
        let fam = AlignedFamily::new(rows.iter().enumerate().map(|(i, r)| (format!("r{i}"), r.iter().collect())).collect())
            .map_err(|e| e.to_string())?;
        let mut previous: Option<Vec<Vec<usize>>> = None;
        for percent in (5..=100).step_by(5) {
            let tau = percent as f64 / 100.0;
            let got = conserved_columns(&fam, tau).map_err(|e| e.to_string())?;
            ensure(got == counting_oracle(&rows, percent), || format!("tau {tau}: {got:?} on {rows:?}"))?;
            let current: Vec<Vec<usize>> = mine_sites(&fam, tau).map_err(|e| e.to_string())?.into_iter().map(|a| a.indices).collect();
            if let Some(prev) = &previous {
                for (p, c) in prev.iter().zip(&current) {
                    ensure(c.iter().all(|i| p.contains(i)), || format!("sites grew at tau {tau}"))?;
                }
            }
            previous = Some(current);
            compared += 1;
        }
    }
    Ok(format!("fixture E/G/M, {compared} tau settings over 20 alignments"))
}

/// Every pair ordered by squared distance then index; the first K per node.
fn brute_force_knn(pts: &[Point], k: usize) -> Vec<Vec<usize>> {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((0..3).map(|c| (pts[i][c] - pts[j][c]).powi(2)).sum(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.iter().take(k).map(|o| o.1).collect()
        })
        .collect()
}

fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut free = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(1..80);
        let mut given: Vec<(usize, Point)> = Vec::new();
        for i in 0..n {
            if rng.random_bool(0.25) {
                given.push((i, [(); 3].map(|_| rng.random_range(-30.0..30.0))));
            }
        }
        let x = init_coordinates(&given, n, trial).map_err(|e| e.to_string())?;
        for i in 0..n {
            if given.iter().any(|g| g.0 == i) {
                continue;
            }
            let prev = if i == 0 { [0.0; 3] } else { x.points()[i - 1] };
            let dev = (distance(&x.points()[i], &prev) - CA_SPACING).abs();
            worst = worst.max(dev);
            free += 1;
        }
    }
    ensure(worst < 1e-12, || format!("spacing off by {worst:e}"))?;

    for set in 0..100 {
        let n = rng.random_range(2..60);
        let k = rng.random_range(1..40);
        // Every other set sits on an integer lattice so exact ties occur.
        let pts: Vec<Point> = (0..n)
            .map(|_| {
                if set % 2 == 0 {
                    [(); 3].map(|_| rng.random_range(-20.0..20.0))
                } else {
                    [(); 3].map(|_| rng.random_range(-3..=3) as f64)
                }
            })
            .collect();
        let c = Coordinates::new(pts.clone()).map_err(|e| e.to_string())?;
        let got = knn(&c, k).map_err(|e| e.to_string())?;
        ensure(got.lists() == brute_force_knn(&pts, k.min(n - 1)).as_slice(), || format!("set {set}: n {n} k {k}"))?;
    }
    Ok(format!("{free} free residues within {worst:.1e} of {CA_SPACING} Å, 100 kNN sets match"))
}

fn leak_freedom() -> Check {
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records: Vec<(String, Vec<usize>)> = Vec::new();
        for p in 0..20 {
            let base: Vec<usize> = (0..40).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect();
            let twin: Vec<usize> =
                base.iter().map(|&a| if rng.random_bool(0.35) { rng.random_range(0..ALPHABET_SIZE) } else { a }).collect();
            records.push((format!("p{p:02}a"), base));
            records.push((format!("p{p:02}b"), twin));
        }
        for s in 0..10 {
            records.push((format!("s{s:02}"), (0..40).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect()));
        }
        let clusters = cluster_by_identity(&records, IDENTITY_THRESHOLD);
        let manifest = split_clusters(&clusters, &|_| true, 0.1, 0.3, seed);
        ensure(manifest.entries.len() == 50, || "manifest size".into())?;
        ensure(!manifest.ids(Split::Test).is_empty() && !manifest.ids(Split::Train).is_empty(), || {
            format!("seed {seed}: degenerate split")
        })?;
        for i in 0..records.len() {
            for j in 0..i {
                if align_identity(&records[i].1, &records[j].1) >= IDENTITY_THRESHOLD {
                    let (a, b) = (manifest.get(&records[i].0).unwrap(), manifest.get(&records[j].0).unwrap());
                    ensure(a.split == b.split, || format!("seed {seed}: {} in {} but {} in {}", a.record_id, a.split, b.record_id, b.split))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("20 corpora of 50 records, {checked} similar pairs kept together"))
}

fn random_substrate(m: usize, rng: &mut ChaCha8Rng) -> SubstrateRecord {
    let atoms = (0..m).map(|_| [(); SUBSTRATE_FEATURES].map(|_| rng.random_range(-2.0..2.0))).collect();
    let coords = Coordinates::new((0..m).map(|_| [(); 3].map(|_| rng.random_range(-6.0..6.0))).collect()).unwrap();
    SubstrateRecord::new("s", atoms, coords).unwrap()
}

fn binding_of(params: &ParameterStore, cfg: &ModelConfig, input: &EnzymeInput, x0: &Coordinates, sub: &SubstrateRecord) -> [f64; 2] {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let out = forward_nael_stack(&mut tape, &p, cfg, input, x0).unwrap();
    let hs = substrate_forward(&mut tape, &p, cfg, sub).unwrap();
    let probs = binding_probs(&mut tape, &p, out.features, hs).unwrap();
    let v = tape.value(probs).data();
    [v[0], v[1]]
}

fn binding() -> Check {
    let tags = toy_tags();
    let cfg = small(8, 2, 2, 1, &tags);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut perm_dev, mut rigid_dev): (f64, f64) = (0.0, 0.0);
    let mut spread: f64 = 0.0;
    for case in 0..100u64 {
        let mut params = ParameterStore::init(&cfg, case).map_err(|e| e.to_string())?;
        let wb = params.get_mut("bind.wb").map_err(|e| e.to_string())?;
        for v in wb.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
        let n = rng.random_range(2..30);
        let residues: Vec<Option<usize>> = (0..n)
            .map(|_| {
                let a = rng.random_range(0..ALPHABET_SIZE);
                rng.random_bool(0.4).then_some(a)
            })
            .collect();
        let given: Vec<(usize, Point)> = (0..n)
            .filter(|&i| residues[i].is_some())
            .map(|i| (i, [(); 3].map(|_| rng.random_range(-10.0..10.0))))
            .collect();
        let tag = EcTag([0, 1, 2, 3].map(|l| rng.random_range(0..cfg.tag_vocab[l])));
        let input = EnzymeInput {
            residues,
            given_coords: given.clone(),
            tag,
        };
        let x0 = init_coordinates(&given, n, case).map_err(|e| e.to_string())?;
        let sub = random_substrate(rng.random_range(1..12), &mut rng);
        let base = binding_of(&params, &cfg, &input, &x0, &sub);
        spread = spread.max((base[0] - 0.5).abs());

        let mut order: Vec<usize> = (0..sub.atoms.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = SubstrateRecord::new(
            "p",
            order.iter().map(|&i| sub.atoms[i]).collect(),
            Coordinates::new(order.iter().map(|&i| sub.coords.points()[i]).collect()).unwrap(),
        )
        .unwrap();
        let p = binding_of(&params, &cfg, &input, &x0, &permuted);
        perm_dev = perm_dev.max((p[0] - base[0]).abs()).max((p[1] - base[1]).abs());

        let (ge, gs) = (random_rigid(2 * case + 1), random_rigid(2 * case + 2));
        let moved_input = EnzymeInput {
            given_coords: given.iter().map(|&(i, q)| (i, ge.apply(&q))).collect(),
            ..input.clone()
        };
        let moved_sub = SubstrateRecord::new("m", sub.atoms.clone(), sub.coords.transformed(&gs)).unwrap();
        let r = binding_of(&params, &cfg, &moved_input, &x0.transformed(&ge), &moved_sub);
        rigid_dev = rigid_dev.max((r[0] - base[0]).abs()).max((r[1] - base[1]).abs());
    }
    ensure(perm_dev <= 1e-12, || format!("permutation deviation {perm_dev:e}"))?;
    ensure(rigid_dev <= 1e-9, || format!("rigid deviation {rigid_dev:e}"))?;
    ensure(spread > 1e-3, || "binding probabilities never left 0.5".into())?;
    Ok(format!("100 cases, permutation {perm_dev:.1e}, rigid {rigid_dev:.1e}"))
}

fn enzyme(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_enzyme"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("enzyme {}: {}", args[0], String::from_utf8_lossy(&out.stderr)))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let toy = root().join("data/toy");
    let s = |p: &Path| p.display().to_string();
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in ["a", "b"] {
        let config = dir.path().join(format!("{run}.toml"));
        let text = format!(
            "[model]\nd = 16\nheads = 2\nattention_layers = 4\ninterleave_period = 2\nmax_len = 64\n\
             [schedule]\nphase1_steps = 3\nphase2_steps = 3\nmlm_pretrain_steps = 2\nseed = 9\n\
             [data]\nstructures = '{}'\nalignments = '{}'\nsubstrates = '{}'\npairs = '{}'\n\
             [output]\ndir = '{run}'\n",
            s(&toy.join("structures")),
            s(&toy.join("alignments")),
            s(&toy.join("substrates.tsv")),
            s(&toy.join("pairs.tsv")),
        );
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        enzyme(&["train", "--config", &s(&config), "--pretrain-mlm"])?;
        let out_dir = dir.path().join(run);
        let designs = out_dir.join("designs.tsv");
        enzyme(&[
            "generate",
            "--checkpoint",
            &s(&out_dir.join("checkpoint.bin")),
            "--motif",
            &s(&toy.join("motif.txt")),
            "--tag",
            "1.1.1.1",
            "--out",
            &s(&designs),
            "--num-candidates",
            "3",
            "--seed",
            "4",
        ])?;
        let files = ["checkpoint.bin", "loss.tsv", "pretrain_loss.tsv", "designs.tsv"];
        outputs.push(files.iter().map(|f| std::fs::read(out_dir.join(f)).unwrap_or_default()).collect());
    }
    let names = ["checkpoint", "loss log", "pretraining log", "designs"];
    for (k, name) in names.iter().enumerate() {
        ensure(!outputs[0][k].is_empty(), || format!("{name} missing"))?;
        ensure(outputs[0][k] == outputs[1][k], || format!("{name} differs between runs"))?;
    }
    Ok(format!("train and generate outputs byte-identical ({} checkpoint bytes)", outputs[0][0].len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("SE(3) equivariance", equivariance),
        ("gradient audit", gradients),
        ("overfit oracle", overfit),
        ("loss decomposition", decomposition),
        ("site miner", sites),
        ("geometry", geometry),
        ("split leak-freedom", leak_freedom),
        ("binding invariances", binding),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {n}. {name}: {detail} [{t:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {n}. {name}: {why} [{t:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
