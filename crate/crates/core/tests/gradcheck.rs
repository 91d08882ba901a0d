use fuseformer::gradcheck::{registry, worst, CheckOptions, Scope};

#[test]
fn every_registered_target_passes() {
    let opts = CheckOptions::default();
    let mut failures = Vec::new();
    for target in registry() {
        let report = (target.run)(&opts).unwrap_or_else(|e| panic!("{}: {e}", target.name));
        let w = worst(&report).expect("at least one tensor");
        if w.rel_err >= target.threshold {
            failures.push(format!(
                "{} ({}): {} {:e}",
                target.name, target.scope, w.name, w.rel_err
            ));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn registry_covers_all_scopes() {
    let targets = registry();
    for scope in [Scope::Op, Scope::Block, Scope::Model] {
        assert!(targets.iter().any(|t| t.scope == scope));
    }
    let names: Vec<_> = targets.iter().map(|t| t.name).collect();
    for op in [
        "matmul",
        "softmax",
        "soft_split",
        "soft_composite",
        "normalized_composite",
        "f3n",
        "msa",
        "layer_norm",
    ] {
        assert!(names.contains(&op), "{op} missing");
    }
}
