use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use sentgram_core::checkpoint::Checkpoint;
use sentgram_core::eval::{evaluate, EvalReport};
use sentgram_core::grammar::Grammar;
use sentgram_core::oracle::{run_discrete_suite, run_gm_suite, run_wg_lvg_suite, Grid, SuiteConfig};
use sentgram_core::synthetic::generate;
use sentgram_core::training::{
    self, encode, finite_diff_check, fit, predict_map_wg, EpochRecord, Example, ModelKind, Params,
};
use sentgram_core::treebank::{build_vocab, load_embeddings, prepare_corpus, read_trees, LabeledTree, TaskSpec};
use sentgram_core::Error;

use crate::config::{sha256_hex, RunConfig};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn verification() -> Self {
        Failure {
            code: EXIT_VERIFY,
            message: String::new(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Unsupported(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Error::io(path, e).into()
}

type Outcome = Result<(), Failure>;

/// CSV writer whose first line is `# config_sha256=<hash>`.
fn csv_writer(path: Option<&Path>, hash: &str) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let mut sink: Box<dyn Write> = match path {
        Some(p) => Box::new(fs::File::create(p).map_err(io_err(p))?),
        None => Box::new(io::stdout()),
    };
    writeln!(sink, "# config_sha256={hash}").map_err(|e| Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    })?;
    Ok(csv::Writer::from_writer(sink))
}

fn load_task_trees(path: &Path, task: &str) -> Result<(TaskSpec, Vec<LabeledTree>), Failure> {
    let spec = TaskSpec::from_name(task)?;
    let trees = read_trees(path, 5)?;
    Ok((spec, prepare_corpus(&trees, &spec)))
}

fn load_for_eval(checkpoint: &Path, trees: &Path, task: &str) -> Result<(Checkpoint, Vec<Example>), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let (spec, trees) = load_task_trees(trees, task)?;
    if spec.classes != ck.config.classes {
        return Err(Error::Shape(format!(
            "task {task} has {} classes but the checkpoint was trained with {}",
            spec.classes, ck.config.classes
        ))
        .into());
    }
    let data = trees.into_iter().map(|t| Example::new(t, &ck.vocab)).collect();
    Ok((ck, data))
}

fn checkpoint_hash(ck: &Checkpoint, extra: &str) -> String {
    sha256_hex(&format!("{:?}\n{extra}", ck.config))
}

fn summary_line(r: &EvalReport) -> String {
    format!(
        "root {:.4} ({}/{})  phrase {:.4} ({}/{})",
        r.root_accuracy(),
        r.root_correct,
        r.root_total,
        r.phrase_accuracy(),
        r.phrase_correct,
        r.phrase_total
    )
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> Outcome {
    let cfg = RunConfig::load(config, overrides)?;
    let train_path = cfg.require_train()?.to_path_buf();
    let spec = cfg.task_spec();
    let read = |p: &Path| -> Result<Vec<LabeledTree>, Failure> { Ok(prepare_corpus(&read_trees(p, 5)?, &spec)) };
    let train_trees = read(&train_path)?;
    if train_trees.is_empty() {
        return Err(Error::config("train", "no usable sentences").into());
    }
    let vocab = build_vocab(train_trees.iter(), cfg.min_count)?;
    let model = cfg.model_config();
    let mut params = Params::init(&model, vocab.len());
    if let Some(path) = &cfg.embeddings {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        params.encoder.embedding = load_embeddings(path, &vocab, cfg.embed_dim, &mut rng)?;
    }
    let to_examples = |trees: Vec<LabeledTree>| -> Vec<Example> {
        trees.into_iter().map(|t| Example::new(t, &vocab)).collect()
    };
    let train_data = to_examples(train_trees);
    let dev_data = cfg.dev.as_deref().map(read).transpose()?.map(to_examples);
    let test_data = cfg.test.as_deref().map(read).transpose()?.map(to_examples);

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let rendered = cfg.render();
    let hash = sha256_hex(&rendered);
    fs::write(cfg.out_dir.join("config.cfg"), &rendered).map_err(io_err(&cfg.out_dir))?;
    let log_path = cfg.out_dir.join("train.log");
    let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut metrics = csv_writer(Some(&metrics_path), &hash)?;
    metrics.write_record(["epoch", "mean_loss", "steps", "skipped_steps", "seconds", "dev_root", "dev_phrase"])?;

    let mut log_err = None;
    let header = format!(
        "training {} on {} sentences ({} dev), vocabulary {}, {} parameters, config {hash}",
        model.kind.name(),
        train_data.len(),
        dev_data.as_ref().map_or(0, Vec::len),
        vocab.len(),
        params.num_params()
    );
    eprintln!("{header}");
    writeln!(log, "{header}").map_err(io_err(&log_path))?;
    let on_epoch = |r: &EpochRecord| {
        let m = &r.metrics;
        let (root, phrase) = r
            .dev
            .as_ref()
            .map_or((String::new(), String::new()), |d| {
                (format!("{:.6}", d.root_accuracy()), format!("{:.6}", d.phrase_accuracy()))
            });
        let line = format!(
            "epoch {} loss {:.6} steps {} skipped {} time {:.1}s dev_root {} dev_phrase {}",
            m.epoch + 1,
            m.mean_loss,
            m.steps,
            m.skipped_steps,
            m.seconds,
            if root.is_empty() { "-" } else { &root },
            if phrase.is_empty() { "-" } else { &phrase }
        );
        eprintln!("{line}");
        let res = writeln!(log, "{line}").map_err(|e| e.to_string()).and_then(|_| {
            metrics
                .write_record([
                    (m.epoch + 1).to_string(),
                    format!("{:.6}", m.mean_loss),
                    m.steps.to_string(),
                    m.skipped_steps.to_string(),
                    format!("{:.3}", m.seconds),
                    root,
                    phrase,
                ])
                .and_then(|_| metrics.flush().map_err(csv::Error::from))
                .map_err(|e| e.to_string())
        });
        if let Err(e) = res {
            log_err.get_or_insert(e);
        }
    };
    let (best, _) = fit(
        &train_data,
        dev_data.as_deref(),
        &mut params,
        &model,
        cfg.lr,
        &cfg.train_options(),
        cfg.epochs,
        on_epoch,
    )?;
    if let Some(e) = log_err {
        return Err(Failure {
            code: EXIT_DATA,
            message: e,
        });
    }
    let ck_path = cfg.out_dir.join("checkpoint.json");
    Checkpoint::new(model, vocab, best.clone()).save(&ck_path)?;
    eprintln!("saved {}", ck_path.display());
    if let Some(test) = &test_data {
        let r = evaluate(&best, &model, test)?;
        let line = format!("test {}", summary_line(&r));
        println!("{line}");
        writeln!(log, "{line}").map_err(io_err(&log_path))?;
    }
    Ok(())
}

pub fn eval(checkpoint: &Path, trees: &Path, task: &str, out: Option<&Path>) -> Outcome {
    let (ck, data) = load_for_eval(checkpoint, trees, task)?;
    let report = evaluate(&ck.params, &ck.config, &data)?;
    println!("{} sentences  {}", report.sentences, summary_line(&report));
    let map_report = if ck.config.kind == ModelKind::Wg {
        let mut r = EvalReport::new(ck.config.classes);
        for ex in &data {
            r.add(&ex.tree, &predict_map_wg(&ck.params, ex)?)?;
        }
        println!("map decode     {}", summary_line(&r));
        Some(r)
    } else {
        None
    };
    for (h, acc, n) in report.height_accuracy() {
        println!("height {h:>3}  accuracy {acc:.4}  ({n} nodes)");
    }
    let Some(dir) = out else { return Ok(()) };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let hash = checkpoint_hash(&ck, task);

    let mut w = csv_writer(Some(&dir.join("summary.csv")), &hash)?;
    w.write_record(["decoder", "sentences", "root_accuracy", "phrase_accuracy", "root_total", "phrase_total"])?;
    for (name, r) in std::iter::once(("mrp", &report)).chain(map_report.as_ref().map(|r| ("map", r))) {
        w.write_record([
            name.to_string(),
            r.sentences.to_string(),
            format!("{:.6}", r.root_accuracy()),
            format!("{:.6}", r.phrase_accuracy()),
            r.root_total.to_string(),
            r.phrase_total.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(Some(&dir.join("heights.csv")), &hash)?;
    w.write_record(["height", "accuracy", "count"])?;
    for (h, acc, n) in report.height_accuracy() {
        w.write_record([h.to_string(), format!("{acc:.6}"), n.to_string()])?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(Some(&dir.join("confusion.csv")), &hash)?;
    let classes = ck.config.classes;
    let mut header = vec!["gold".to_string()];
    header.extend((0..classes).map(|c| format!("pred_{c}")));
    w.write_record(&header)?;
    for (g, row) in report.normalized_confusion().iter().enumerate() {
        let mut rec = vec![g.to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(dir))?;
    Ok(())
}

pub fn predict(checkpoint: &Path, trees: &Path, task: &str) -> Outcome {
    let (ck, data) = load_for_eval(checkpoint, trees, task)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for ex in &data {
        let labels = training::predict(&ck.params, &ck.config, ex);
        writeln!(out, "{}", ex.tree.with_labels(&labels).to_sexpr()).map_err(io_err(Path::new("<stdout>")))?;
    }
    Ok(())
}

pub fn gradcheck(kind: &str, cases: u64, seed: u64, tolerance: Option<f64>) -> Outcome {
    let kinds: Vec<ModelKind> = match kind {
        "all" => vec![ModelKind::Baseline, ModelKind::Wg, ModelKind::Lvg, ModelKind::Lveg],
        k => vec![ModelKind::from_name(k)?],
    };
    if cases == 0 {
        return Err(Failure::usage("--cases must be at least 1"));
    }
    let mut ok = true;
    for k in kinds {
        let tol = tolerance.unwrap_or(if k == ModelKind::Lveg { 1e-3 } else { 1e-4 });
        let mut worst: f64 = 0.0;
        let mut coords = 0;
        let mut failures = Vec::new();
        for s in seed..seed + cases {
            let r = finite_diff_check(k, s, tol)?;
            worst = worst.max(r.max_rel_err);
            coords += r.coordinates;
            failures.extend(r.failures.iter().map(|f| (s, *f)));
        }
        let status = if failures.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<8} {cases} configurations, {coords} coordinates, max relative error {worst:.3e} (tolerance {tol:.0e})",
            k.name()
        );
        for (s, (t, i, a, n)) in failures.iter().take(5) {
            println!("  seed {s} tensor {t} offset {i}: analytic {a:.9e} numeric {n:.9e}");
        }
        ok &= failures.is_empty();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::verification())
    }
}

/// Largest suites the oracle command will run.
const MAX_ORACLE_CASES: usize = 5000;

pub fn oracle(cases: usize, gm_cases: usize, seed: u64, tolerance: Option<f64>) -> Outcome {
    if cases > MAX_ORACLE_CASES || gm_cases > MAX_ORACLE_CASES {
        return Err(Failure::usage(format!("at most {MAX_ORACLE_CASES} cases per suite")));
    }
    if tolerance.is_some_and(|t| !(t > 0.0)) {
        return Err(Failure::usage("--tolerance must be positive"));
    }
    let reports = [
        run_discrete_suite(SuiteConfig {
            seed,
            cases,
            tolerance: tolerance.unwrap_or(1e-9),
        }),
        run_wg_lvg_suite(SuiteConfig {
            seed,
            cases: cases.min(50),
            tolerance: 1e-12,
        }),
        run_gm_suite(
            SuiteConfig {
                seed,
                cases: gm_cases,
                tolerance: tolerance.unwrap_or(1e-3),
            },
            Grid::default(),
        ),
    ];
    for r in &reports {
        print!("{}", r.summary());
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::verification())
    }
}

const LABEL_NAMES_5: [&str; 5] = ["strong-negative", "negative", "neutral", "positive", "strong-positive"];
const LABEL_NAMES_2: [&str; 2] = ["negative", "positive"];

fn parse_label(label: &str, classes: usize) -> Result<usize, Failure> {
    let names: &[&str] = if classes == 2 { &LABEL_NAMES_2 } else { &LABEL_NAMES_5 };
    names
        .iter()
        .position(|n| *n == label)
        .or_else(|| label.parse().ok().filter(|&l: &usize| l < classes))
        .ok_or_else(|| Failure::usage(format!("unknown label {label:?} (expected one of {})", names.join(", "))))
}

pub fn export_subtypes(
    checkpoint: &Path,
    trees: &Path,
    task: &str,
    label: Option<&str>,
    max_length: usize,
    out: Option<&Path>,
) -> Outcome {
    let (ck, data) = load_for_eval(checkpoint, trees, task)?;
    let Some(Grammar::Gm(g)) = &ck.params.grammar else {
        return Err(Failure::usage(format!(
            "export-subtypes needs an lveg checkpoint, got {}",
            ck.config.kind.name()
        )));
    };
    let want = label.map(|l| parse_label(l, ck.config.classes)).transpose()?;
    let hash = checkpoint_hash(&ck, &format!("{task} {label:?} {max_length}"));
    let mut w = csv_writer(out, &hash)?;
    let mut header = vec!["phrase".to_string(), "label".to_string()];
    for j in 0..g.components {
        header.extend((0..g.dim).map(|k| format!("mu{j}_{k}")));
    }
    w.write_record(&header)?;
    for ex in &data {
        let pred = training::predict(&ck.params, &ck.config, ex);
        let state = encode(&ck.params, ex);
        for (v, node) in ex.tree.nodes.iter().enumerate() {
            let Some(gold) = node.gold else { continue };
            if pred[v] != gold || node.span_len() > max_length || want.is_some_and(|l| l != gold) {
                continue;
            }
            let mut rec = vec![ex.tree.phrase_text(v), gold.to_string()];
            for head in &g.heads[gold] {
                rec.extend(head.mu.apply(&state.nodes[v].h).iter().map(|x| format!("{x:.6}")));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(io_err(out.unwrap_or(Path::new("<stdout>"))))?;
    Ok(())
}

pub fn synth(out: &Path, train: usize, dev: usize, test: usize, seed: u64) -> Outcome {
    fs::create_dir_all(out).map_err(io_err(out))?;
    for (name, count, offset) in [("train", train, 0u64), ("dev", dev, 1), ("test", test, 2)] {
        let path: PathBuf = out.join(format!("{name}.txt"));
        let text: String = generate(count, seed.wrapping_mul(3).wrapping_add(offset))
            .iter()
            .map(|t| t.to_sexpr() + "\n")
            .collect();
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
