use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::Context;
use enzyme_core::checkpoint::Checkpoint;
use enzyme_core::data::{list_files, load_corpus, load_family, parse_motif, write_tsv, Structure, ALIGNMENT_EXTENSIONS};
use enzyme_core::ec::{EcLabel, EC_LEVELS};
use enzyme_core::model::{forward_with_seed, greedy_decode, ModelConfig, ModelError};
use enzyme_core::sites::{mine_sites, write_manifest};
use enzyme_core::training::{evaluate, mlm_pretrain, train, LogEntry, TrainState, TrainingError, TrainingSet};
use enzyme_core::verify::{equivariance_suite, gradient_suite, SuiteReport};
use enzyme_core::{geometry::Coordinates, numerics::Tape};

use crate::config::RunConfig;
use crate::CliError;

/// Equivariance cases run by `verify`, alternating N = 5 and N = 50.
pub const EQUIVARIANCE_CASES: usize = 200;
/// Finite-difference samples per parameter tensor in `verify`.
pub const GRADIENT_SAMPLES: usize = 5;

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Config { .. } | ModelError::Vocabulary(_) => CliError::Usage(e.to_string()),
        e => CliError::Failed(e.into()),
    }
}

fn training_error(e: TrainingError) -> CliError {
    match e {
        TrainingError::Schedule { .. } => CliError::Usage(e.to_string()),
        TrainingError::Model(m) => model_error(m),
        e => CliError::Failed(e.into()),
    }
}

/// Mine every alignment in `dir`. Families that fail to load are reported
/// and skipped; the manifest of the rest is still written, but the command
/// fails.
pub fn mine_sites_cmd(dir: &Path, tau: f64, out: &Path) -> Result<(), CliError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CliError::Usage(format!("--tau must be in (0, 1), got {tau}")));
    }
    let files = list_files(dir, &ALIGNMENT_EXTENSIONS).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut annotations = Vec::new();
    let mut failed = 0;
    for path in &files {
        match load_family(path).and_then(|f| Ok(mine_sites(&f.family, tau)?)) {
            Ok(a) => annotations.extend(a),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    write_file(out, &write_manifest(&annotations))?;
    log::info!("{} annotations from {} families", annotations.len(), files.len() - failed);
    if failed > 0 {
        return Err(CliError::Failed(anyhow::anyhow!("{failed} of {} alignments failed", files.len())));
    }
    Ok(())
}

/// Load and assemble the corpus, then write the site and split manifests.
pub fn build_dataset_cmd(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let corpus = load_corpus(&cfg.corpus_spec()).map_err(|e| CliError::Failed(e.into()))?;
    write_file(&cfg.output.dir.join("sites.tsv"), &write_manifest(&corpus.sites))?;
    write_file(&cfg.output.dir.join("splits.tsv"), &corpus.splits.to_text())?;
    let ds = &corpus.dataset;
    println!(
        "train {}  valid {}  test {}  substrates {}  tags {}",
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.substrates.len(),
        ds.tree.labels().len()
    );
    Ok(())
}

/// Loss-log lines recorded before `step`; later lines are dropped so a
/// resumed run continues the log where the checkpoint left it.
fn log_prefix(path: &Path, step: u64) -> Result<String, CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
        Err(e) => return Err(CliError::Failed(anyhow::Error::new(e).context(path.display().to_string()))),
    };
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry = LogEntry::parse(line).map_err(|e| CliError::Failed(anyhow::anyhow!("{}: {e}", path.display())))?;
        if entry.step < step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

struct LossLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl LossLog {
    fn open(path: &Path, keep_before: u64) -> Result<Self, CliError> {
        let prefix = log_prefix(path, keep_before)?;
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut file = std::io::BufWriter::new(file);
        file.write_all(prefix.as_bytes())?;
        Ok(Self { file })
    }

    fn push(&mut self, e: &LogEntry) -> Result<(), TrainingError> {
        writeln!(self.file, "{}", e.to_line()).map_err(|e| TrainingError::Log(e.to_string()))
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.file.flush()?;
        Ok(())
    }
}

fn snapshot(cfg: &ModelConfig, tags: &enzyme_core::ec::EcTree, state: &TrainState) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        tags: tags.clone(),
        params: state.params.clone(),
        step: state.step,
        mlm_step: state.mlm_step,
        adam: Some(state.adam.clone()),
    }
}

/// Assemble the corpus, optionally pretrain with masked residues, then run
/// the two-phase schedule. Writes `checkpoint.bin` and `loss.tsv` under the
/// output directory; on divergence the last finite state is saved and the
/// command fails.
pub fn train_cmd(config: &Path, pretrain_mlm: bool, resume: bool) -> Result<(), CliError> {
    let run = RunConfig::load(config)?;
    let corpus = load_corpus(&run.corpus_spec()).map_err(|e| CliError::Failed(e.into()))?;
    let ds = &corpus.dataset;
    let tags = ds.tree.clone();
    let cfg = ModelConfig {
        tag_vocab: tags.vocab_sizes(),
        ..run.model.clone()
    };
    cfg.validate().map_err(model_error)?;
    std::fs::create_dir_all(&run.output.dir).with_context(|| format!("creating {}", run.output.dir.display()))?;
    let ckpt_path = run.checkpoint_path();

    let mut state = if resume {
        let ck = Checkpoint::load(&ckpt_path).map_err(|e| CliError::Failed(e.into()))?;
        if ck.config != cfg || ck.tags != tags {
            return Err(CliError::Usage(format!(
                "{} was trained with a different model config or corpus",
                ckpt_path.display()
            )));
        }
        let adam = ck
            .adam
            .ok_or_else(|| CliError::Usage(format!("{} holds no optimiser state", ckpt_path.display())))?;
        log::info!("resuming at step {} (pretraining step {})", ck.step, ck.mlm_step);
        TrainState {
            params: ck.params,
            adam,
            step: ck.step,
            mlm_step: ck.mlm_step,
        }
    } else {
        TrainState::fresh(&cfg, &run.schedule).map_err(training_error)?
    };

    let data = TrainingSet {
        examples: &ds.train,
        substrates: &ds.substrates,
    };
    let every = run.output.checkpoint_every;
    let save = |state: &TrainState| -> Result<(), TrainingError> {
        snapshot(&cfg, &tags, state)
            .save(&ckpt_path)
            .map_err(|e| TrainingError::Log(e.to_string()))
    };

    let outcome = (|| -> Result<(), CliError> {
        if pretrain_mlm && run.schedule.mlm_pretrain_steps > 0 {
            let mut log = LossLog::open(&run.pretrain_log_path(), state.mlm_step)?;
            let r = mlm_pretrain(data, &cfg, &run.schedule, &mut state, &mut |e, s| {
                log.push(e)?;
                if every > 0 && s.mlm_step % every == 0 {
                    save(s)?;
                }
                Ok(())
            });
            log.finish()?;
            r.map_err(training_error)?;
        }
        let mut log = LossLog::open(&run.loss_log_path(), state.step)?;
        let total = run.schedule.total_steps();
        let r = train(data, &cfg, &run.schedule, &mut state, &mut |e, s| {
            log.push(e)?;
            if (e.step + 1) % 50 == 0 || e.step + 1 == total {
                log::info!(
                    "step {} seq {:.3} coord {:.3} bind {:.4} total {:.3}",
                    e.step + 1,
                    e.loss.seq_nll,
                    e.loss.coord_l2,
                    e.loss.binding_ce,
                    e.loss.total
                );
            }
            if every > 0 && s.step % every == 0 {
                save(s)?;
            }
            Ok(())
        });
        log.finish()?;
        r.map_err(training_error)
    })();

    // The state holds the last finite parameters even after divergence.
    snapshot(&cfg, &tags, &state)
        .save(&ckpt_path)
        .map_err(|e| CliError::Failed(e.into()))?;
    outcome?;

    let ev = evaluate(&ds.train, &state.params, &cfg, run.schedule.seed).map_err(training_error)?;
    println!(
        "train  seq_nll/residue {:.4}  recovery {:.4}  ({} free residues)",
        ev.nll_per_residue(),
        ev.recovery(),
        ev.free_residues
    );
    if !ds.valid.is_empty() {
        let ev = evaluate(&ds.valid, &state.params, &cfg, run.schedule.seed).map_err(training_error)?;
        println!(
            "valid  seq_nll/residue {:.4}  recovery {:.4}  ({} free residues)",
            ev.nll_per_residue(),
            ev.recovery(),
            ev.free_residues
        );
    }
    Ok(())
}

/// Design `candidates` sequences for a motif. Candidate `k` draws its
/// initial coordinates with `seed + k`; sequences are greedy per draw.
pub fn generate_cmd(
    checkpoint: &Path,
    motif: &Path,
    tag: &str,
    out: &Path,
    candidates: usize,
    seed: u64,
) -> Result<(), CliError> {
    if candidates == 0 {
        return Err(CliError::Usage("--num-candidates must be at least 1".into()));
    }
    let label: EcLabel = tag.parse().map_err(|e| CliError::Usage(format!("--tag: {e}")))?;
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::Failed(e.into()))?;
    let text = std::fs::read_to_string(motif).with_context(|| format!("reading {}", motif.display()))?;
    let spec = parse_motif(&motif.display().to_string(), &text).map_err(|e| CliError::Failed(e.into()))?;
    if spec.tag != label {
        log::warn!("motif header tag {} differs from --tag {label}; using --tag", spec.tag);
    }
    let ec = ck
        .tags
        .tag(&label)
        .map_err(|e| CliError::Usage(format!("--tag {label}: {e}")))?;
    let input = spec.to_input(ec);

    let mut designs = Vec::with_capacity(candidates);
    for k in 0..candidates {
        let mut tape = Tape::new();
        let p = ck.params.bind(&mut tape, false);
        let (output, _) = forward_with_seed(&mut tape, &p, &ck.config, &input, seed.wrapping_add(k as u64)).map_err(model_error)?;
        let sequence = greedy_decode(tape.value(output.logits), &input.residues);
        let coords = Coordinates::from_tensor(tape.value(output.coords)).context("output coordinates")?;
        designs.push(Structure {
            id: format!("design_{k}"),
            sequence,
            coords,
        });
    }
    write_file(out, &write_tsv(&designs))?;
    for d in &designs {
        println!("{}\t{}", d.id, enzyme_core::alphabet::decode(&d.sequence));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Equivariance,
    Gradients,
    All,
}

fn print_report(r: &SuiteReport) {
    println!("{} suite ({} cases)", r.suite, r.cases);
    for c in &r.checks {
        println!(
            "  {:<26} max deviation {:.3e}  tolerance {:.0e}  {}",
            c.property,
            c.max_deviation,
            c.tolerance,
            if c.passed() { "ok" } else { "FAILED" }
        );
        if !c.passed() {
            println!("    worst at {}", c.worst);
        }
    }
}

/// Run the property suites against a checkpoint's weights.
pub fn verify_cmd(checkpoint: &Path, suite: Suite, seed: u64) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::Failed(e.into()))?;
    let mut reports = Vec::new();
    if matches!(suite, Suite::Equivariance | Suite::All) {
        reports.push(equivariance_suite(&ck.params, &ck.config, &ck.tags, EQUIVARIANCE_CASES, seed).map_err(model_error)?);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        reports.push(gradient_suite(&ck.params, &ck.config, &ck.tags, GRADIENT_SAMPLES, seed).map_err(training_error)?);
    }
    for r in &reports {
        print_report(r);
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures().map(move |c| format!("{}: {}", r.suite, c.property)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(anyhow::anyhow!("property violated: {}", failed.join(", "))))
    }
}

/// One row per fourth-level tag: the sum of its four level embeddings.
pub fn export_embeddings_cmd(checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint).map_err(|e| CliError::Failed(e.into()))?;
    let tables = (0..EC_LEVELS)
        .map(|l| ck.params.get(&format!("embed.tag.{l}")).cloned())
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_error)?;
    let mut text = String::new();
    for label in ck.tags.labels() {
        let tag = ck.tags.tag(label).map_err(|e| CliError::Failed(e.into()))?;
        let mut row = vec![0.0; ck.config.d];
        for (level, table) in tables.iter().enumerate() {
            for (r, v) in row.iter_mut().zip(table.row(tag.0[level])) {
                *r += v;
            }
        }
        let _ = write!(text, "{label}");
        for v in row {
            let _ = write!(text, "\t{v}");
        }
        text.push('\n');
    }
    write_file(out, &text)
}
