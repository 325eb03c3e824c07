use std::sync::OnceLock;

use iobf::bogus_flow::{indegree_obfuscate, make_opaque_predicate, PredicateFamily};
use iobf::cfg::{build_cfg, in_degree_gap};
use iobf::corpus::{bundled_corpus_dir, load_corpus, CorpusEntry};
use iobf::identifier::rename_random;
use iobf::interp::{run, Status};
use iobf::ir::{parse_module, print_module, validate};
use iobf::metrics::{multiset_similarity, similarity};
use iobf::pipeline::{oracle_check, PassName, Pipeline, PipelineConfig};
use proptest::prelude::*;

fn corpus() -> &'static [CorpusEntry] {
    static CORPUS: OnceLock<Vec<CorpusEntry>> = OnceLock::new();
    CORPUS.get_or_init(|| load_corpus(&bundled_corpus_dir()).unwrap().0)
}

fn entry() -> impl Strategy<Value = &'static CorpusEntry> {
    (0..corpus().len()).prop_map(|i| &corpus()[i])
}

fn passes() -> impl Strategy<Value = Vec<PassName>> {
    prop::collection::vec(prop::sample::select(PassName::ALL.to_vec()), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn any_pipeline_preserves_behavior(e in entry(), passes in passes(), seed in any::<u64>()) {
        let out = Pipeline::new(PipelineConfig::new(passes, seed)).run_module(&e.module).unwrap();
        prop_assert!(validate(&out.module).is_empty());
        let reparsed = parse_module(&out.text).unwrap();
        prop_assert_eq!(print_module(&reparsed), out.text.clone());
        prop_assert_eq!(oracle_check(e, &out, seed), vec![]);
    }

    #[test]
    fn same_seed_same_output(e in entry(), passes in passes(), seed in any::<u64>()) {
        let p = Pipeline::new(PipelineConfig::new(passes, seed));
        prop_assert_eq!(p.run_module(&e.module).unwrap().text, p.run_module(&e.module).unwrap().text);
    }

    #[test]
    fn fuel_is_monotone(e in entry(), pick in any::<prop::sample::Index>(), extra in 0u64..10_000) {
        let args = pick.get(&e.manifest.inputs);
        let full = run(&e.module, &e.manifest.entry, args, 1_000_000).unwrap();
        prop_assert!(matches!(full.status, Status::Returned(_)));
        let exact = run(&e.module, &e.manifest.entry, args, full.steps + extra).unwrap();
        prop_assert_eq!(exact.observable(), full.observable());
        let short = run(&e.module, &e.manifest.entry, args, full.steps - 1).unwrap();
        prop_assert_eq!(short.status, Status::FuelExhausted);
    }

    #[test]
    fn indeg_dominates_for_any_margin(e in entry(), seed in any::<u64>(), margin in 1usize..5) {
        for f in e.module.functions.iter().filter(|f| f.blocks.len() >= 2) {
            let (g, report) = indegree_obfuscate(f, seed, margin).unwrap();
            let gap = in_degree_gap(&build_cfg(&g));
            prop_assert!(gap.bogus_dominates());
            prop_assert!(gap.min_bogus_indeg.unwrap() >= gap.max_real_indeg.max(1) + margin);
            prop_assert_eq!(report.after, gap);
        }
    }

    #[test]
    fn random_renaming_is_injective(e in entry(), seed in any::<u64>()) {
        let (m, map) = rename_random(&e.module, seed);
        prop_assert!(map.is_injective());
        prop_assert_eq!(map.entries.len(), e.module.functions.len());
        prop_assert!(validate(&m).is_empty());
    }

    #[test]
    fn similarity_bounds(a in entry(), b in entry()) {
        let s = similarity(&a.module, &a.module);
        prop_assert_eq!((s.bb_sim, s.ji_sim, s.fn_sim, s.prog_sim), (100.0, 100.0, 100.0, 1.0));
        let ab = similarity(&a.module, &b.module);
        let ba = similarity(&b.module, &a.module);
        prop_assert_eq!(ab, ba);
        for v in [ab.bb_sim, ab.ji_sim, ab.fn_sim] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }

    #[test]
    fn multiset_similarity_is_symmetric(a in prop::collection::vec(0u8..6, 0..20), b in prop::collection::vec(0u8..6, 0..20)) {
        let x = multiset_similarity(a.clone(), b.clone());
        prop_assert_eq!(x, multiset_similarity(b, a));
        prop_assert!((0.0..=100.0).contains(&x));
    }

    #[test]
    fn opaque_predicates_hold_on_all_i64(seed in any::<u64>(), truth in any::<bool>(), x in any::<i64>(), y in any::<i64>()) {
        let p = make_opaque_predicate(seed, truth);
        let inputs = [x, y];
        prop_assert_eq!(p.evaluate(&inputs[..p.family.arity()]), truth);
        prop_assert!(p.family.holds(&inputs[..p.family.arity()]));
    }

    #[test]
    fn square_mod4_reference_formula(x in any::<i64>()) {
        prop_assert!(PredicateFamily::SquareMod4.holds(&[x]));
    }
}
