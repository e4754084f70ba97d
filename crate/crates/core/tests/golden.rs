use std::path::PathBuf;

use stefan_homog::config::ProblemSpec;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Set `UPDATE_GOLDEN=1` to rewrite the reference file.
#[test]
fn canonical_form_matches_golden() {
    let spec = ProblemSpec::load(&root().join("configs/stefan_1d.json")).unwrap();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/stefan_1d.canonical.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, spec.canonical()).unwrap();
    }
    let expected = std::fs::read_to_string(&golden).unwrap();
    assert_eq!(spec.canonical(), expected);
}

#[test]
fn canonical_form_is_a_fixed_point() {
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let path = entry.unwrap().path();
        let spec = ProblemSpec::load(&path).unwrap();
        let again = ProblemSpec::parse(&spec.canonical()).unwrap();
        assert_eq!(again.canonical(), spec.canonical(), "{}", path.display());
        assert_eq!(again.hash(), spec.hash());
        assert_eq!(spec.hash().len(), 64);
    }
}
