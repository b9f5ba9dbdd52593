use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use aak::config::RunConfig;
use aak::corpus::{
    finalize_dataset, instance_from_pair, preprocess, read_jsonl, write_jsonl, AnaphoraInstance, AnnotatedRecord,
    BuildOptions, MatchMode, ShellNounRecord, Vocabulary,
};
use aak::datagen::{generate_corpus, GeneratedPair, GenerationConfig, RuleSet, SubstitutionOptions};
use aak::eval::{
    acceptable, anaphor_sensitivity, evaluate, filter_subset, joint_representation_dump, parse_table,
    preceding_sentence_baseline, rank, render_matrix_tsv, render_table, tag_baseline, TableRow, BASELINE_SEEDS,
};
use aak::glove::{embedding_matrix, read_glove};
use aak::model::Model;
use aak::train::{fit, write_epoch_log};
use aak::treebank::{parse_many_with, ConstituencyTree, ReadOptions, Span};
use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{list_files, manifest_for, Run};
use crate::{
    Baseline, BuildArgs, DedupArgs, EvalArgs, FinalizeArgs, GenerateArgs, JointArgs, ReportArgs, SensitivityArgs,
    StatsArgs, TrainArgs,
};

const SUBSETS: [&str; 3] = ["all", "nominal", "pronominal"];

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("{}: cannot open", path.display()))?))
}

fn read_records<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(open(path)?).with_context(|| format!("{}: malformed JSONL", path.display()))
}

fn write_records<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("{}: cannot create", path.display()))?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

/// `(doc_id, file)` for a tree file or every file of a directory. The
/// document id is the file stem.
fn tree_documents(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let files = if path.is_dir() { list_files(path)? } else { vec![path.to_path_buf()] };
    Ok(files
        .into_iter()
        .map(|f| {
            let doc = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (doc, f)
        })
        .collect())
}

fn read_trees(file: &Path, opts: ReadOptions) -> Result<Vec<ConstituencyTree>> {
    parse_many_with(&read_text(file)?, opts).with_context(|| format!("{}: malformed trees", file.display()))
}

fn read_options(keep_empty_elements: bool) -> ReadOptions {
    ReadOptions { keep_empty_elements }
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.trees)?;
    let rules = match &args.rules {
        Some(p) => {
            run.input(p)?;
            RuleSet::from_json(&read_text(p)?).with_context(|| format!("{}: bad rules", p.display()))?
        }
        None => RuleSet::standard(),
    };
    let mut exclude = HashSet::new();
    if let Some(p) = &args.exclude_ids {
        run.input(p)?;
        for line in read_text(p)?.lines() {
            let id = line.trim();
            if !id.is_empty() && !id.starts_with('#') {
                exclude.insert(id.to_string());
            }
        }
    }
    let config = GenerationConfig {
        seed: args.seed,
        rules,
        substitution: SubstitutionOptions {
            min_anaphs_len: args.min_anaphs_len,
            drop_adjacent_punct: args.drop_adjacent_punct,
        },
        exclude_doc_ids: exclude,
    };
    run.seed("generation", args.seed);
    run.config(json!({
        "min_anaphs_len": args.min_anaphs_len,
        "drop_adjacent_punct": args.drop_adjacent_punct,
        "keep_empty_elements": args.keep_empty_elements,
        "rules": config.rules,
        "excluded_documents": config.exclude_doc_ids.len(),
    }))?;

    let opts = read_options(args.keep_empty_elements);
    let docs = tree_documents(&args.trees)?;
    let records = docs.iter().flat_map(|(doc, file)| match read_trees(file, opts) {
        Ok(trees) => trees.into_iter().map(|t| Ok((doc.clone(), t))).collect::<Vec<_>>(),
        Err(e) => vec![Err(aak::Error::Io(std::io::Error::other(format!("{e:#}"))))],
    });
    let tmp = run.stage(&args.out)?;
    let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("{}: cannot create", tmp.display()))?);
    let stats = generate_corpus(records, &config, |pair| {
        serde_json::to_writer(&mut w, &pair)?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    w.flush()?;
    drop(w);
    eprintln!(
        "{} sentences, {} sites, {} pairs, rejected {:?}",
        stats.sentences, stats.sites, stats.pairs, stats.rejected
    );
    run.summary(&stats)?;
    run.finish(&manifest_for(&args.out))
}

fn build_options(f: &FinalizeArgs) -> BuildOptions {
    BuildOptions {
        training: !f.test,
        max_candidates: f.max_candidates,
        seed: f.seed,
    }
}

fn finalize_config(run: &mut Run, f: &FinalizeArgs) -> Result<()> {
    run.seed("sampling", f.seed);
    run.config(json!({ "test": f.test, "max_candidates": f.max_candidates }))
}

fn instances_from_pairs(pairs: &Path, trees: &Path, opts: ReadOptions) -> Result<Vec<AnaphoraInstance>> {
    let mut sentences: HashMap<(String, usize), ConstituencyTree> = HashMap::new();
    for (doc, file) in tree_documents(trees)? {
        for (i, t) in read_trees(&file, opts)?.into_iter().enumerate() {
            sentences.insert((doc.clone(), i), t);
        }
    }
    let pairs: Vec<GeneratedPair> = read_records(pairs)?;
    pairs
        .iter()
        .map(|p| {
            let tree = sentences.get(&(p.doc_id.clone(), p.sentence_index)).ok_or_else(|| {
                aak::Error::Contract(format!(
                    "pair {} refers to sentence {} of {:?}, which is not in the treebank",
                    p.instance_id(),
                    p.sentence_index,
                    p.doc_id
                ))
            })?;
            let mut inst = instance_from_pair(p, tree)?;
            if p.sentence_index > 0 {
                inst.prev_sentence = sentences
                    .get(&(p.doc_id.clone(), p.sentence_index - 1))
                    .map(|t| preprocess(&t.tokens()));
            }
            Ok(inst)
        })
        .collect()
}

pub fn corpus_build(args: BuildArgs) -> Result<()> {
    let mut run = Run::new();
    let instances = if let (Some(pairs), Some(trees)) = (&args.pairs, &args.trees) {
        run.input(pairs)?;
        run.input(trees)?;
        instances_from_pairs(pairs, trees, read_options(args.keep_empty_elements))?
    } else if let Some(p) = &args.annotated {
        run.input(p)?;
        read_records::<AnnotatedRecord>(p)?
            .into_iter()
            .map(AnnotatedRecord::into_instance)
            .collect::<aak::Result<_>>()?
    } else if let Some(p) = &args.shell_nouns {
        run.input(p)?;
        read_records::<ShellNounRecord>(p)?
            .into_iter()
            .map(ShellNounRecord::into_instance)
            .collect::<aak::Result<_>>()?
    } else {
        anyhow::bail!("one of --pairs, --annotated or --shell-nouns is required");
    };
    finalize_config(&mut run, &args.finalize)?;
    let (instances, report) = finalize_dataset(instances, &build_options(&args.finalize));
    eprintln!("{} of {} instances kept", report.kept, report.input);
    let tmp = run.stage(&args.out)?;
    write_records(&tmp, &instances)?;
    run.summary(&report)?;
    run.finish(&manifest_for(&args.out))
}

pub fn corpus_stats(args: StatsArgs) -> Result<()> {
    let instances: Vec<AnaphoraInstance> = read_records(&args.input)?;
    let stats = aak::corpus::corpus_stats(&instances)?;
    let text = serde_json::to_string_pretty(&stats)? + "\n";
    print!("{text}");
    if let Some(out) = &args.out {
        let mut run = Run::new();
        run.input(&args.input)?;
        fs::write(run.stage(out)?, &text)?;
        run.summary(&stats)?;
        run.finish(&manifest_for(out))?;
    }
    Ok(())
}

pub fn corpus_dedup(args: DedupArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.input)?;
    finalize_config(&mut run, &args.finalize)?;
    let instances: Vec<AnaphoraInstance> = read_records(&args.input)?;
    let (instances, report) = finalize_dataset(instances, &build_options(&args.finalize));
    eprintln!("{} of {} instances kept", report.kept, report.input);
    write_records(&run.stage(&args.out)?, &instances)?;
    run.summary(&report)?;
    run.finish(&manifest_for(&args.out))
}

fn read_instances(path: &Path) -> Result<Vec<AnaphoraInstance>> {
    let instances: Vec<AnaphoraInstance> = read_records(path)?;
    if instances.is_empty() {
        return Err(aak::Error::EmptyInput).with_context(|| format!("{}: no instances", path.display()));
    }
    for inst in &instances {
        inst.validate()?;
    }
    Ok(instances)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.config)?;
    run.input(&args.train)?;
    run.input(&args.dev)?;
    let cfg = RunConfig::parse(&read_text(&args.config)?).with_context(|| format!("{}", args.config.display()))?;
    let train = read_instances(&args.train)?;
    let dev = read_instances(&args.dev)?;
    let vocab = Vocabulary::build(&train, cfg.train.min_word_freq);
    let vectors = match &args.embeddings {
        Some(p) => {
            run.input(p)?;
            let v = read_glove(open(p)?, cfg.model.d_word).with_context(|| format!("{}", p.display()))?;
            Some(v)
        }
        None => None,
    };
    let seed = cfg.train.seed;
    let (emb, found) = embedding_matrix(&vocab, vectors.as_ref(), cfg.model.d_word, seed);
    let model = Model::new(cfg.model, vocab, emb, seed)?;
    let parameters = model.params.parameter_count();
    eprintln!(
        "{} words ({found} pre-trained), {parameters} parameters, {} training instances",
        model.vocab.len(),
        train.len()
    );
    let result = fit(model, &train, &dev, &cfg.train, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.6}  dev s@1 {:.4}  {:.1}s",
            e.epoch, e.train_loss, e.dev_s1, e.wall_time
        );
    })?;

    run.seed("init", seed);
    run.seed("shuffle", seed);
    run.config(&cfg)?;
    let tmp = run.stage_dir(&args.out)?;
    result.best.save(&tmp)?;
    let mut log = Vec::new();
    write_epoch_log(&mut log, &result.log)?;
    fs::write(tmp.join("epochs.tsv"), log)?;
    fs::write(tmp.join("config.cfg"), cfg.render())?;
    run.adopt_dir(&tmp, &args.out)?;
    run.summary(json!({
        "best_epoch": result.best_epoch,
        "vocabulary": result.best.vocab.len(),
        "pretrained_words": found,
        "parameters": parameters,
        "train_instances": train.len(),
        "dev_instances": dev.len(),
    }))?;
    run.finish(&args.out.join("manifest.json"))
}

#[derive(Serialize)]
struct RankedCandidate<'a> {
    candidate: usize,
    score: f64,
    tag: &'a str,
    tokens: &'a [String],
    acceptable: bool,
}

#[derive(Serialize)]
struct RankedInstance<'a> {
    id: &'a str,
    first_hit: Option<usize>,
    ranked: Vec<RankedCandidate<'a>>,
}

fn subsets_with_instances(instances: &[AnaphoraInstance], subset: Option<&str>) -> Result<Vec<(String, Vec<AnaphoraInstance>)>> {
    let names: Vec<&str> = subset.map_or(SUBSETS.to_vec(), |s| vec![s]);
    let mut out = Vec::new();
    for name in names {
        let part = filter_subset(instances, name)?;
        if part.is_empty() {
            if subset.is_some() {
                return Err(aak::Error::EmptyInput).context(format!("no {name} instances"));
            }
            continue;
        }
        out.push((name.to_string(), part));
    }
    Ok(out)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.test)?;
    let instances = read_instances(&args.test)?;
    let mode = if args.strict { MatchMode::Strict } else { MatchMode::Lenient };
    let mut rows = Vec::new();
    let mut dump = Vec::new();
    if let Some(baseline) = args.baseline {
        let name = args.variant.clone().unwrap_or_else(|| match baseline {
            Baseline::Tag => "TAG".into(),
            Baseline::Ps => "PS".into(),
        });
        for (subset, part) in subsets_with_instances(&instances, args.subset.as_deref())? {
            let s1 = match baseline {
                Baseline::Tag => tag_baseline(&part, &BASELINE_SEEDS, mode)?,
                Baseline::Ps => preceding_sentence_baseline(&part, mode)?,
            };
            rows.push(TableRow::baseline(&name, &subset, s1));
        }
        if matches!(baseline, Baseline::Tag) {
            for (i, s) in BASELINE_SEEDS.iter().enumerate() {
                run.seed(&format!("tag_baseline_{i}"), *s);
            }
        }
    } else {
        let dir = args.model.as_ref().expect("clap requires --model without --baseline");
        run.input(dir)?;
        let model = Model::load(dir).with_context(|| format!("{}: cannot load model", dir.display()))?;
        let variant = args.variant.clone().unwrap_or_else(|| model.params.config.flags.variant_name());
        let part = match &args.subset {
            Some(s) => subsets_with_instances(&instances, Some(s))?.remove(0).1,
            None => instances.clone(),
        };
        let report = evaluate(&model, &part, mode)?;
        for s in report.subsets.iter().filter(|s| args.subset.as_deref().is_none_or(|x| x == s.subset)) {
            rows.push(TableRow::from_scores(&variant, s));
        }
        if args.dump.is_some() {
            for (inst, r) in part.iter().zip(&report.instances) {
                dump.push((inst.clone(), r.scores.clone(), r.first_hit));
            }
        }
    }
    run.config(json!({
        "subset": args.subset,
        "baseline": args.baseline.map(|b| match b { Baseline::Tag => "tag", Baseline::Ps => "ps" }),
        "match": mode,
        "variant": rows.first().map(|r| r.variant.clone()),
    }))?;
    for r in &rows {
        eprintln!("{}", render_table(std::slice::from_ref(r)).lines().nth(1).unwrap_or_default());
    }
    fs::write(run.stage(&args.out)?, render_table(&rows))?;
    if let Some(path) = &args.dump {
        let ranked: Vec<RankedInstance> = dump
            .iter()
            .map(|(inst, scores, first_hit)| RankedInstance {
                id: &inst.id,
                first_hit: *first_hit,
                ranked: rank(scores)
                    .into_iter()
                    .map(|i| {
                        let c = &inst.candidates[i];
                        RankedCandidate {
                            candidate: i,
                            score: scores[i],
                            tag: &c.tag,
                            tokens: &c.tokens,
                            acceptable: acceptable(inst, c, mode),
                        }
                    })
                    .collect(),
            })
            .collect();
        write_records(&run.stage(path)?, &ranked)?;
    }
    run.summary(&rows)?;
    run.finish(&manifest_for(&args.out))
}

fn parse_position(text: &str) -> Result<(Span, usize)> {
    let parts: Vec<usize> = text
        .split(':')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad anaphor position {text:?}, expected start:end:head"))?;
    match parts[..] {
        [start, end, head] => Ok((Span::new(start, end), head)),
        _ => anyhow::bail!("bad anaphor position {text:?}, expected start:end:head"),
    }
}

pub fn sensitivity(args: SensitivityArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.model)?;
    let model = Model::load(&args.model).with_context(|| format!("{}: cannot load model", args.model.display()))?;
    let tokens: Vec<String> = preprocess(&args.sentence.split_whitespace().map(String::from).collect::<Vec<_>>());
    let (a, b) = (parse_position(&args.a)?, parse_position(&args.b)?);
    for (span, head) in [a, b] {
        if span.is_empty() || span.end > tokens.len() || !(span.start..span.end).contains(&head) {
            return Err(aak::Error::Contract(format!(
                "anaphor {span} with head {head} does not fit a sentence of {} tokens",
                tokens.len()
            ))
            .into());
        }
    }
    let matrix = anaphor_sensitivity(&model, &tokens, a, b)?;
    run.config(json!({ "sentence": tokens, "a": args.a, "b": args.b }))?;
    fs::write(run.stage(&args.out)?, render_matrix_tsv(&tokens, &matrix))?;
    run.finish(&manifest_for(&args.out))
}

pub fn joint(args: JointArgs) -> Result<()> {
    let mut run = Run::new();
    run.input(&args.model)?;
    run.input(&args.test)?;
    let model = Model::load(&args.model).with_context(|| format!("{}: cannot load model", args.model.display()))?;
    let instances = read_instances(&args.test)?;
    let take = args.limit.unwrap_or(instances.len());
    let mut rows = Vec::new();
    for inst in instances.iter().take(take).filter(|i| !i.candidates.is_empty()) {
        rows.extend(joint_representation_dump(&model, inst)?);
    }
    run.config(json!({ "limit": args.limit }))?;
    write_records(&run.stage(&args.out)?, &rows)?;
    run.summary(json!({ "rows": rows.len() }))?;
    run.finish(&manifest_for(&args.out))
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut run = Run::new();
    let mut rows = Vec::new();
    for p in &args.inputs {
        run.input(p)?;
        rows.extend(parse_table(&read_text(p)?).with_context(|| format!("{}", p.display()))?);
    }
    let table = render_table(&rows);
    print!("{table}");
    fs::write(run.stage(&args.out)?, &table)?;
    run.summary(json!({ "rows": rows.len() }))?;
    run.finish(&manifest_for(&args.out))
}
