use iobf::corpus::{bundled_corpus_dir, load_corpus, MIN_INPUTS};
use iobf::ir::{parse_module, print_module};

#[test]
fn bundled_corpus_loads_cleanly() {
    let (entries, diags) = load_corpus(&bundled_corpus_dir()).unwrap();
    assert!(diags.is_empty(), "{diags:#?}");
    assert!(entries.len() >= 20, "{} entries", entries.len());
    for e in &entries {
        assert!(e.manifest.inputs.len() >= MIN_INPUTS, "{}", e.name);
        assert!(
            e.module.functions.iter().any(|f| f.blocks.len() >= 3),
            "{} has no function with two non-entry blocks",
            e.name
        );
        let text = print_module(&e.module);
        assert_eq!(parse_module(&text).unwrap(), e.module, "{}", e.name);
    }
}

#[test]
fn kth_smallest_is_bundled() {
    let (entries, _) = load_corpus(&bundled_corpus_dir()).unwrap();
    let e = entries.iter().find(|e| e.manifest.ir == "kth_smallest.ir").expect("kth_smallest.ir bundled");
    let f = e.module.functions.iter().find(|f| f.source_name == "kthSmallest").unwrap();
    assert_eq!(f.mangled_name, "_O11kthSmallestii");
    assert_eq!(e.manifest.entry, "kthSmallest");
}
