//! Synthetic export → ingest → evaluate, through files on disk.

use sigscore::experiments::{export_dependency, DependencyConfig, ExportShape};
use sigscore::harness::{emit_report, run_eval, EvalManifest, Outcome, ScoreName, ScoreReport};
use sigscore::synthgen::{make_dependency_set, GpSpec, JumpParams};

fn exported(dir: &std::path::Path, windows: usize) -> EvalManifest {
    let shape = ExportShape {
        windows,
        samples: 10,
        train: 256,
        seed: 3,
    };
    let path = export_dependency(dir, &DependencyConfig::default(), &shape).unwrap();
    EvalManifest::load(&path).unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn report_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = exported(dir.path(), 5);
    let one = in_pool(1, || run_eval(&manifest).unwrap().to_json().unwrap());
    let three = in_pool(3, || run_eval(&manifest).unwrap().to_json().unwrap());
    assert_eq!(one, three);
    let back = ScoreReport::from_json(&one).unwrap();
    assert_eq!(back.to_json().unwrap(), one);
}

#[test]
fn outcomes_follow_the_one_percent_rule() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_eval(&exported(dir.path(), 4)).unwrap();
    for (metric, per_model) in &report.outcomes {
        let scores: Vec<f64> = report.models.iter().map(|m| report.scores[m][metric]).collect();
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let unique_best = scores.iter().filter(|&&s| s <= best + 0.01 * best.abs()).count() == 1;
        for (model, s) in report.models.iter().zip(&scores) {
            let expected = if *s == best && unique_best {
                Outcome::Win
            } else if *s <= best + 0.01 * best.abs() {
                Outcome::Tie
            } else {
                Outcome::Loss
            };
            assert_eq!(per_model[model], expected, "{metric:?} {model}");
        }
    }
    let tally = &report.tallies[&ScoreName::Sig];
    assert_eq!(tally.wins + tally.ties + tally.losses, report.models.len());
}

#[test]
fn subsampling_keeps_per_window_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = exported(dir.path(), 6);
    let full = run_eval(&manifest).unwrap();
    manifest.config.subsample = Some(3);
    let part = run_eval(&manifest).unwrap();
    assert_eq!(part.windows.len(), 3);
    for w in &part.per_window {
        let same = full
            .per_window
            .iter()
            .find(|f| f.window_id == w.window_id && f.model == w.model)
            .unwrap();
        assert_eq!(same.scores, w.scores);
    }
}

#[test]
fn emitted_tables_match_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_eval(&exported(&dir.path().join("data"), 3)).unwrap();
    let out = dir.path().join("out");
    emit_report(&report, &out).unwrap();
    let csv = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), report.models.len() * report.tallies.len());
    let f1_sig = rows.iter().find(|r| r.starts_with("F1,Sig,")).unwrap();
    let value: f64 = f1_sig.split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(value, report.scores["F1"][&ScoreName::Sig]);
}

#[test]
fn jump_free_forecaster_matches_the_truth_law() {
    let spec = GpSpec::new(6, 2);
    let none = make_dependency_set(&spec, 8, 5, JumpParams { prob: 0.0, sigma: 1.0 }).unwrap();
    assert_eq!(none.f1, none.f4);
    let some = make_dependency_set(&spec, 8, 5, JumpParams::default()).unwrap();
    assert_eq!(none.f1, some.f1);
    assert_ne!(some.f1, some.f4);
}
