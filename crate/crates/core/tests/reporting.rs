use bigjump::experiments::{cmd_reproduce, run_and_emit, Emit, ExperimentSpec, Format, Outcome};
use bigjump::report::content_hash;

#[test]
fn git_blob_hash_of_known_content() {
    // `printf 'hello\n' | git hash-object` under the sha256 object format
    assert_eq!(
        content_hash(b"hello\n"),
        "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
    );
}

#[test]
fn manifest_hashes_match_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let opts = Emit {
        out_dir: dir.path().to_path_buf(),
        format: Format::Csv,
        svg: true,
        verdict_file: true,
    };
    let (out, manifest) = run_and_emit(|| cmd_reproduce(&ExperimentSpec::example(4)), &opts).unwrap();
    assert_eq!(out.outcome, Outcome::Pass);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(m["command"], "reproduce example4");
    let files = m["outputs"].as_array().unwrap();
    assert!(files.iter().any(|f| f["file"] == "verdict.txt"));
    assert!(files.iter().any(|f| f["file"].as_str().unwrap().ends_with(".svg")));
    for f in files {
        let bytes = std::fs::read(dir.path().join(f["file"].as_str().unwrap())).unwrap();
        assert_eq!(f["hash"].as_str().unwrap(), content_hash(&bytes));
    }
}

#[test]
fn overrides_reach_the_resolved_config() {
    let spec = ExperimentSpec::example(4).with_overrides(serde_json::json!({"slope_tol": 0.5}));
    let out = cmd_reproduce(&spec).unwrap();
    assert_eq!(out.config["slope_tol"], 0.5);
    let bad = ExperimentSpec::example(4).with_overrides(serde_json::json!({"slope_tolerance": 0.5}));
    assert!(cmd_reproduce(&bad).is_err());
}
