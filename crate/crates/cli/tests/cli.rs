mod common;

use std::fs;
use std::path::Path;

use aak::corpus::{read_jsonl, AnaphoraInstance};
use aak::datagen::GeneratedPair;
use aak::eval::{parse_table, TABLE_HEADER};
use common::{aak, aak_ok, p, repo_file, stderr, write_treebank};
use serde_json::Value;

fn sha256(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_reproducible_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..20);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    aak_ok(&["generate", "--trees", p(&trees), "--seed", "7", "--out", p(&a)]);
    aak_ok(&["generate", "--trees", p(&trees), "--seed", "7", "--out", p(&b)]);
    assert_eq!(sha256(&a), sha256(&b));

    let pairs: Vec<GeneratedPair> = read_jsonl(fs::File::open(&a).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(pairs.len(), 20);
    let m = manifest(&dir.path().join("a.jsonl.manifest.json"));
    assert_eq!(m["seeds"]["generation"], 7);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    let first = &m["inputs"][0];
    assert_eq!(first["sha256"], sha256(Path::new(first["path"].as_str().unwrap())));
    assert_eq!(m["outputs"][0], p(&a));
    assert_eq!(m["summary"]["pairs"], 20);
    // No temporary files are left behind.
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn exclusion_and_minimum_length_flags() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..10);
    let ids = dir.path().join("exclude.txt");
    fs::write(&ids, "# held out\nsyn001\n").unwrap();
    let out = dir.path().join("pairs.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--exclude-ids", p(&ids), "--out", p(&out)]);
    let pairs: Vec<GeneratedPair> = read_jsonl(fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(pairs.len(), 5);
    assert!(pairs.iter().all(|q| q.doc_id == "syn000"));
    aak_ok(&["generate", "--trees", p(&trees), "--min-anaphs-len", "40", "--out", p(&out)]);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.mrg");
    let out = aak(&["generate", "--trees", p(&missing), "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(p(&missing)), "{}", stderr(&out));
    assert!(!dir.path().join("x.jsonl").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(aak(&["generate"]).status.code(), Some(2));
    assert_eq!(aak(&["eval", "--test", "x.jsonl", "--out", "y.tsv"]).status.code(), Some(2));
    assert_eq!(aak(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn contract_violations_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = aak(&["eval", "--baseline", "tag", "--test", p(&empty), "--out", p(&dir.path().join("t.tsv"))]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // Pairs whose source sentences are not in the given treebank.
    let trees = write_treebank(&dir.path().join("trees"), 0..5);
    let other = write_treebank(&dir.path().join("other"), 5..10);
    let pairs = dir.path().join("pairs.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--out", p(&pairs)]);
    let out = aak(&[
        "corpus", "build", "--pairs", p(&pairs), "--trees", p(&other), "--out", p(&dir.path().join("i.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn corpus_build_stats_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..20);
    let pairs = dir.path().join("pairs.jsonl");
    let inst = dir.path().join("inst.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--out", p(&pairs)]);
    aak_ok(&[
        "corpus", "build", "--pairs", p(&pairs), "--trees", p(&trees), "--max-candidates", "6", "--out", p(&inst),
    ]);
    let instances: Vec<AnaphoraInstance> = read_jsonl(fs::read(&inst).unwrap().as_slice()).unwrap();
    assert!(!instances.is_empty());
    for i in &instances {
        assert!(i.candidates.len() <= 6 && i.n_positive() >= 1);
        // Sentences after the first of a document know their predecessor.
        assert_eq!(i.prev_sentence.is_some(), !i.id.split(':').nth(1).is_some_and(|s| s == "0"), "{}", i.id);
    }
    let raw: Value = serde_json::from_str(fs::read_to_string(&inst).unwrap().lines().next().unwrap()).unwrap();
    for key in ["id", "kind", "anaphs", "anaphor_span", "anaphor_head", "candidates"] {
        assert!(raw.get(key).is_some(), "{key}");
    }
    assert_eq!(raw["candidates"][0]["label"].as_str().map(|l| l == "positive" || l == "negative"), Some(true));

    let stats = aak_ok(&["corpus", "stats", "--input", p(&inst)]);
    let stats: Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(stats["instances"], instances.len());
    assert_eq!(stats["pronominal"], instances.len());

    let again = dir.path().join("again.jsonl");
    aak_ok(&["corpus", "dedup", "--input", p(&inst), "--out", p(&again)]);
    assert_eq!(fs::read(&inst).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn annotated_and_shell_noun_records() {
    let dir = tempfile::tempdir().unwrap();
    let annotated = dir.path().join("annotated.jsonl");
    fs::write(
        &annotated,
        r#"{"id":"a1","kind":"nominal","anaphs":["This","plan","failed","."],"anaphor_span":[0,2],"anaphor_head":0,"antecedents":[["they","would","cut","taxes"]],"sentences":["(ROOT (S (NP (PRP They)) (VP (VBD said) (SBAR (IN that) (S (NP (PRP they)) (VP (MD would) (VP (VB cut) (NP (NNS taxes))))))) (. .)))"]}
"#,
    )
    .unwrap();
    let out = dir.path().join("a.jsonl");
    aak_ok(&["corpus", "build", "--annotated", p(&annotated), "--test", "--out", p(&out)]);
    let inst: Vec<AnaphoraInstance> = read_jsonl(fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(inst.len(), 1);
    assert!(inst[0].candidates.iter().any(|c| c.is_positive() && c.tag == "S"));

    let shell = dir.path().join("shell.jsonl");
    fs::write(
        &shell,
        r#"{"id":"s1","tree":"(ROOT (S (NP (DT The) (NN fact)) (SBAR (IN that) (S (NP (PRP he)) (VP (VBD left)))) (VP (VBD surprised) (NP (PRP us))) (. .)))","antecedent_span":[3,5],"shell_noun":"fact"}
"#,
    )
    .unwrap();
    aak_ok(&["corpus", "build", "--shell-nouns", p(&shell), "--test", "--out", p(&out)]);
    let inst: Vec<AnaphoraInstance> = read_jsonl(fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(inst[0].anaphs.join(" "), "this fact surprised us .");
}

#[test]
fn baseline_runs_without_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..20);
    let pairs = dir.path().join("pairs.jsonl");
    let inst = dir.path().join("inst.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--out", p(&pairs)]);
    aak_ok(&["corpus", "build", "--pairs", p(&pairs), "--trees", p(&trees), "--test", "--out", p(&inst)]);
    for (baseline, name) in [("tag", "TAG"), ("ps", "PS")] {
        let out = dir.path().join(format!("{baseline}.tsv"));
        aak_ok(&["eval", "--baseline", baseline, "--test", p(&inst), "--out", p(&out)]);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with(TABLE_HEADER));
        let rows = parse_table(&text).unwrap();
        // Generated anaphors are all pronominal, so the nominal row is absent.
        assert_eq!(rows.iter().map(|r| r.subset.as_str()).collect::<Vec<_>>(), ["all", "pronominal"]);
        assert_eq!(rows[0].values, rows[1].values);
        assert_eq!(rows[0].variant, name);
        assert!(rows[0].values[0].is_some() && rows[0].values[1..].iter().all(Option::is_none));
        assert!(manifest(&dir.path().join(format!("{baseline}.tsv.manifest.json")))["inputs"].as_array().unwrap().len() == 1);
    }
}

#[test]
fn report_merges_tables() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    fs::write(&a, format!("{TABLE_HEADER}\nfull\tall\t0.5000\t0.6000\t0.7000\t0.8000\n")).unwrap();
    fs::write(&b, format!("{TABLE_HEADER}\n-ctx\tall\t0.4000\t0.5000\t0.6000\t0.7000\n")).unwrap();
    let out = dir.path().join("table.tsv");
    aak_ok(&["report", p(&a), p(&b), "--out", p(&out)]);
    let rows = parse_table(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.variant.as_str()).collect::<Vec<_>>(), ["full", "-ctx"]);
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "not a table\n").unwrap();
    assert_eq!(aak(&["report", p(&bad), "--out", p(&out)]).status.code(), Some(2));
}

#[test]
fn embeddings_of_the_wrong_dimension_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..10);
    let pairs = dir.path().join("pairs.jsonl");
    let inst = dir.path().join("inst.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--out", p(&pairs)]);
    aak_ok(&["corpus", "build", "--pairs", p(&pairs), "--trees", p(&trees), "--out", p(&inst)]);
    let glove = dir.path().join("glove.txt");
    fs::write(&glove, "the 0.1 0.2 0.3\n").unwrap();
    let out = aak(&[
        "train", "--config", p(&repo_file("configs/tiny.cfg")), "--train", p(&inst), "--dev", p(&inst),
        "--embeddings", p(&glove), "--out", p(&dir.path().join("model")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("expected 16"), "{}", stderr(&out));
}

#[test]
fn train_eval_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let trees = write_treebank(&dir.path().join("trees"), 0..20);
    let pairs = dir.path().join("pairs.jsonl");
    let inst = dir.path().join("inst.jsonl");
    aak_ok(&["generate", "--trees", p(&trees), "--out", p(&pairs)]);
    aak_ok(&["corpus", "build", "--pairs", p(&pairs), "--trees", p(&trees), "--max-candidates", "6", "--out", p(&inst)]);
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, "d_word = 4\nd_tag = 2\nh_lstm = 3\nh_ffl1 = 4\nh_ffl2 = 4\nepochs = 2\nf_w = 1\nseed = 3\n").unwrap();
    let glove = dir.path().join("glove.txt");
    fs::write(&glove, "the 0.1 0.2 0.3 0.4\nmarket 1 2 3 4\n").unwrap();
    let model = dir.path().join("model");
    aak_ok(&[
        "train", "--config", p(&cfg), "--train", p(&inst), "--dev", p(&inst), "--embeddings", p(&glove), "--out",
        p(&model),
    ]);
    for f in ["model.json", "vocab.json", "params.bin", "params.json", "epochs.tsv", "config.cfg", "manifest.json"] {
        assert!(model.join(f).exists(), "{f}");
    }
    assert!(!model.join(".partial").exists());
    let m = manifest(&model.join("manifest.json"));
    assert_eq!(m["config"]["train"]["epochs"], 2);
    assert_eq!(m["summary"]["pretrained_words"], 2);
    assert_eq!(fs::read_to_string(model.join("epochs.tsv")).unwrap().lines().count(), 3);

    // Retraining gives the same parameters.
    let again = dir.path().join("again");
    aak_ok(&["train", "--config", p(&cfg), "--train", p(&inst), "--dev", p(&inst), "--embeddings", p(&glove), "--out", p(&again)]);
    assert_eq!(sha256(&model.join("params.bin")), sha256(&again.join("params.bin")));

    let table = dir.path().join("eval.tsv");
    let dump = dir.path().join("ranked.jsonl");
    aak_ok(&["eval", "--model", p(&model), "--test", p(&inst), "--out", p(&table), "--dump", p(&dump)]);
    let rows = parse_table(&fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(rows[0].variant, "full");
    assert!(rows.iter().all(|r| r.is_monotone()));
    let ranked: Vec<Value> = read_jsonl(fs::read(&dump).unwrap().as_slice()).unwrap();
    assert_eq!(ranked.len(), fs::read_to_string(&inst).unwrap().lines().count());
    let scores: Vec<f64> = ranked[0]["ranked"].as_array().unwrap().iter().map(|c| c["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let strict = dir.path().join("strict.tsv");
    aak_ok(&["eval", "--model", p(&model), "--test", p(&inst), "--strict", "--variant", "mine", "--subset", "pronominal", "--out", p(&strict)]);
    let rows = parse_table(&fs::read_to_string(&strict).unwrap()).unwrap();
    assert_eq!((rows[0].variant.as_str(), rows[0].subset.as_str()), ("mine", "pronominal"));
    let nominal = aak(&["eval", "--model", p(&model), "--test", p(&inst), "--subset", "nominal", "--out", p(&strict)]);
    assert_eq!(nominal.status.code(), Some(1));

    let heat = dir.path().join("heat.tsv");
    aak_ok(&[
        "inspect", "sensitivity", "--model", p(&model), "--sentence", "He doubts this , but warns of a risk .",
        "--a", "2:3:2", "--b", "7:9:8", "--out", p(&heat),
    ]);
    let text = fs::read_to_string(&heat).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split('\t').count(), 11);
    assert_eq!(lines.len(), 1 + 2 * 3);
    let bad = aak(&["inspect", "sensitivity", "--model", p(&model), "--sentence", "a b", "--a", "0:1:0", "--b", "1:3:2", "--out", p(&heat)]);
    assert_eq!(bad.status.code(), Some(1));

    let joint = dir.path().join("joint.jsonl");
    aak_ok(&["inspect", "joint", "--model", p(&model), "--test", p(&inst), "--limit", "2", "--out", p(&joint)]);
    let rows: Vec<Value> = read_jsonl(fs::read(&joint).unwrap().as_slice()).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[0]["vector"].as_array().unwrap().len(), 4);
}
