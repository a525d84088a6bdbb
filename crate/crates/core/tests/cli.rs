use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use rc_instruct::bootstrap::client::{PromptedClient, TranscriptEntry, TranscriptTransport};
use rc_instruct::bootstrap::mock::encode_box;
use rc_instruct::eval::{EvalItem, Target};
use rc_instruct::geometry::{self, NormBox};
use rc_instruct::model::ImageBundle;
use rc_instruct::TemplateBank;

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/pipeline.toml")
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rc-instruct"))
        .arg("--config")
        .arg(config())
        .arg("--output-dir")
        .arg(out)
        .args(args)
        .env_remove("RC_INSTRUCT_API_TOKEN")
        .output()
        .expect("spawn binary")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Transcript in which the model describes each candidate and grounds the
/// description `shift` to the right of the original box.
fn transcript(dir: &Path, shift: f64) -> PathBuf {
    let bank = TemplateBank::builtin();
    let client = PromptedClient::new(TranscriptTransport::default(), bank);
    let text = fs::read_to_string(dir.join("bundles/o365.jsonl")).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        let b: ImageBundle = serde_json::from_str(line).unwrap();
        for o in &b.objects {
            let coords = geometry::quantize(&geometry::normalize(&o.bbox, &b.image).unwrap()).unwrap();
            let desc = encode_box(&coords);
            let g = coords.to_box();
            let moved = NormBox::new((g.x_min() + shift).min(1.0), g.y_min(), (g.x_max() + shift).min(1.0), g.y_max()).unwrap();
            let answer = format!("It is at {}.", geometry::quantize(&moved).unwrap());
            for (prompt, response) in [
                (client.describe_prompt(&coords).unwrap(), desc.clone()),
                (client.ground_prompt(&desc).unwrap(), answer),
            ] {
                let e = TranscriptEntry {
                    image_id: b.image.image_id.clone(),
                    prompt,
                    response,
                };
                out.push_str(&serde_json::to_string(&e).unwrap());
                out.push('\n');
            }
        }
    }
    let path = dir.join("transcript.jsonl");
    fs::write(&path, out).unwrap();
    path
}

fn transcript_arg(path: &Path) -> String {
    format!("client.transcript={}", path.display())
}

#[test]
fn ingest_writes_bundles_and_stats() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["ingest"]);
    let stats = json(&dir.path().join("stats.json"));
    let vg = &stats["sources"]["vg"];
    assert_eq!(vg["image_count"], 2);
    assert_eq!(vg["images_invalid"], 1);
    assert_eq!(vg["object_count"], 9);
    assert_eq!(vg["relation_count"], 3);
    assert_eq!(vg["relations_invalid"], 1);
    assert_eq!(vg["region_count"], 3);
    let o365 = &stats["sources"]["o365"];
    assert_eq!(o365["image_count"], 2);
    assert_eq!(o365["object_count"], 5);
    assert_eq!(o365["objects_dropped_by_area"], 1);
    assert_eq!(o365["bootstrap_candidates"], 4);
    assert_eq!(stats["total"]["object_count"], 14);
    assert_eq!(lines(&dir.path().join("bundles/vg.jsonl")).len(), 2);

    // a second run over the same inputs is byte-identical
    let first = fs::read(dir.path().join("bundles/o365.jsonl")).unwrap();
    ok(dir.path(), &["ingest"]);
    assert_eq!(first, fs::read(dir.path().join("bundles/o365.jsonl")).unwrap());
}

#[test]
fn missing_input_fails_before_writing() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["--set", "sources.0.objects=/nonexistent/objects.json", "ingest"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/objects.json"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_config_value_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["--set", "bootstrap.lambda=1.5", "ingest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bootstrap_from_transcript_then_refilter() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["ingest"]);
    let t = transcript(dir.path(), 0.0);
    let set = transcript_arg(&t);
    ok(dir.path(), &["--set", &set, "bootstrap"]);
    let report = json(&dir.path().join("bootstrap_report.json"));
    assert_eq!(report["o365"]["generated"], 4);
    assert_eq!(report["o365"]["retained"], 4);
    assert_eq!(report["o365"]["mean_iou_retained"], 1.0);
    let exprs = lines(&dir.path().join("expressions/o365.jsonl"));
    assert!(exprs.iter().all(|e| e["retained"] == true && e["text"].as_str().unwrap().starts_with("object ")));

    // a shifted grounding drops boxes gradually as lambda rises
    let t = transcript(dir.path(), 0.05);
    let set = transcript_arg(&t);
    ok(dir.path(), &["--set", &set, "bootstrap", "--lambda", "0"]);
    let mut last = u64::MAX;
    let mut seen = Vec::new();
    for lambda in ["0", "0.3", "0.5", "0.7", "0.9", "1"] {
        ok(dir.path(), &["refilter", "--lambda", lambda]);
        let r = &json(&dir.path().join("bootstrap_report.json"))["o365"];
        let retained = r["retained"].as_u64().unwrap();
        assert!(retained <= last);
        assert_eq!(r["generated"].as_u64().unwrap(), retained + r["filtered"].as_u64().unwrap() + r["no_box_parsed"].as_u64().unwrap());
        let on_disk = lines(&dir.path().join("expressions/o365.jsonl"))
            .iter()
            .filter(|e| e["retained"] == true)
            .count() as u64;
        assert_eq!(on_disk, retained);
        last = retained;
        seen.push(retained);
    }
    assert_eq!(seen[0], 4);
    assert_eq!(*seen.last().unwrap(), 0);
}

#[test]
fn unreachable_endpoint_aborts_with_report() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["ingest"]);
    let o = run(
        dir.path(),
        &[
            "--set",
            "client.endpoint=http://127.0.0.1:9/complete",
            "--set",
            "bootstrap.retry_limit=0",
            "--set",
            "bootstrap.request_timeout=2.0",
            "bootstrap",
        ],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("bootstrap_report.json"));
    assert_eq!(report["o365"]["request_failures"], 4);
}

#[test]
fn generate_is_reproducible_and_accounted() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["ingest"]);
    let t = transcript(dir.path(), 0.0);
    ok(dir.path(), &["--set", &transcript_arg(&t), "bootstrap"]);

    ok(dir.path(), &["generate", "--epoch-size", "60"]);
    let corpus = fs::read(dir.path().join("corpus.jsonl")).unwrap();
    let manifest = json(&dir.path().join("manifest.json"));
    for workers in ["1", "4"] {
        ok(dir.path(), &["--workers", workers, "generate", "--epoch-size", "60"]);
        assert_eq!(corpus, fs::read(dir.path().join("corpus.jsonl")).unwrap());
    }

    let samples = lines(&dir.path().join("corpus.jsonl"));
    for (name, counts) in manifest["sources"].as_object().unwrap() {
        let from_provenance = samples
            .iter()
            .filter(|s| s["provenance"].as_str().unwrap().split('/').next() == Some(name.as_str()))
            .count() as u64;
        assert_eq!(counts["emitted"].as_u64().unwrap(), from_provenance, "{name}");
    }
    let emitted: u64 = manifest["tasks"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(emitted as usize, samples.len());
    assert_eq!(samples.len() as u64 + manifest["skipped"].as_u64().unwrap(), 60);

    // bootstrapped descriptions feed the caption tasks
    ok(dir.path(), &["generate", "--exclude-source", "vg", "--epoch-size", "200"]);
    let samples = lines(&dir.path().join("corpus.jsonl"));
    let uses_expr = |s: &Value| {
        s["conversations"]
            .as_array()
            .unwrap()
            .iter()
            .any(|t| t["value"].as_str().unwrap().contains("object "))
    };
    assert!(samples.iter().any(|s| s["task"] == "grounding" && uses_expr(s)));
    assert!(samples.iter().any(|s| s["task"] == "ground_caption" && uses_expr(s)));

    ok(dir.path(), &["generate", "--exclude-source", "o365", "--epoch-size", "30"]);
    let samples = lines(&dir.path().join("corpus.jsonl"));
    assert!(!samples.is_empty());
    assert!(samples.iter().all(|s| s["provenance"].as_str().unwrap().starts_with("vg/")));

    let o = run(dir.path(), &["generate", "--exclude-source", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stats_reports_stage_outputs() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["ingest"]);
    ok(dir.path(), &["generate"]);
    let o = ok(dir.path(), &["stats"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["bundles"]["vg"]["object_count"], 9);
    assert_eq!(v["corpus"]["epoch_size"], 20);
}

fn eval_items() -> Vec<EvalItem> {
    let b = NormBox::new(0.1, 0.2, 0.4, 0.6).unwrap();
    let coords = geometry::quantize(&b).unwrap().to_string();
    let mut items = Vec::new();
    for i in 0..5 {
        items.push(EvalItem::new(format!("g{i}"), Target::Grounding(b), format!("at {coords}")));
        items.push(EvalItem::new(format!("v{i}"), Target::Vqa(vec!["red".into(); 10]), "Red."));
        items.push(EvalItem::new(format!("c{i}"), Target::Counting(i), i.to_string()));
    }
    items
}

fn write_items(path: &Path, items: &[EvalItem]) {
    let text: String = items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

#[test]
fn eval_scores_self_predictions_and_ignores_order() {
    let dir = TempDir::new().unwrap();
    let mut items = eval_items();
    let preds = dir.path().join("preds.jsonl");
    write_items(&preds, &items);
    let per_item = dir.path().join("per_item.json");
    ok(dir.path(), &["eval", preds.to_str().unwrap(), "--per-item", per_item.to_str().unwrap()]);
    let first = json(&dir.path().join("eval_results.json"));
    let results = first["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r["value"], 100.0, "{r}");
        assert_eq!(r["item_count"], 5);
    }
    assert_eq!(json(&per_item)["counting_accuracy"].as_array().unwrap().len(), 5);

    items.reverse();
    write_items(&preds, &items);
    ok(dir.path(), &["eval", preds.to_str().unwrap()]);
    assert_eq!(first, json(&dir.path().join("eval_results.json")));
}

#[test]
fn eval_names_the_bad_line() {
    let dir = TempDir::new().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let good = serde_json::to_string(&eval_items()[0]).unwrap();
    fs::write(&preds, format!("{good}\n{good}\n{{not json\n")).unwrap();
    let o = run(dir.path(), &["eval", preds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("eval_results.json").exists());
}
