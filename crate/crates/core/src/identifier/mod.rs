//! Function identifier obfuscation.
//!
//! Three substitution schemes (random names, dictionary names, Greek
//! homoglyphs) rename every defined function module-wide. Overloading adds
//! never-called decoy functions that share a base name with a real one but
//! differ in parameter types, hence in mangled name.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::bogus_flow::mutate_clone;
use crate::error::PassError;
use crate::ir::{is_ident, mangle, Inst, IrFunction, IrModule, Param, Type};
use crate::rng::{self, PassRng};

/// Length of names produced by [`rename_random`].
pub const RANDOM_NAME_LEN: usize = 11;

const DEFAULT_DICTIONARY: &str = include_str!("dictionary.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenameMode {
    Random,
    Directory,
    Illegal,
    OverloadCombined,
}

/// Old name → new name for every renamed function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenameMap {
    pub mode: RenameMode,
    /// Mangled names.
    pub entries: BTreeMap<String, String>,
    /// Source base names.
    pub bases: BTreeMap<String, String>,
}

impl RenameMap {
    fn new(mode: RenameMode) -> Self {
        RenameMap { mode, entries: BTreeMap::new(), bases: BTreeMap::new() }
    }

    pub fn is_injective(&self) -> bool {
        let values: BTreeSet<&String> = self.entries.values().collect();
        values.len() == self.entries.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rename map serializes")
    }
}

/// Ordered list of replacement identifiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    pub entries: Vec<String>,
}

impl Dictionary {
    /// One identifier per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, PassError> {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let word = line.split('#').next().unwrap_or("").trim();
            if word.is_empty() {
                continue;
            }
            if !is_ident(word) {
                return Err(PassError::InvalidParameter(format!("dictionary line {}: `{word}` is not an identifier", n + 1)));
            }
            if !seen.insert(word.to_string()) {
                return Err(PassError::InvalidParameter(format!("dictionary line {}: duplicate `{word}`", n + 1)));
            }
            entries.push(word.to_string());
        }
        Ok(Dictionary { entries })
    }

    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        Dictionary { entries: words.into_iter().map(Into::into).collect() }
    }

    pub fn bundled() -> Self {
        Dictionary::parse(DEFAULT_DICTIONARY).expect("bundled dictionary is well formed")
    }
}

/// Latin → Greek look-alikes.
pub const HOMOGLYPHS: [(char, char); 10] = [
    ('a', 'α'),
    ('o', 'ο'),
    ('p', 'ρ'),
    ('v', 'ν'),
    ('x', 'χ'),
    ('y', 'γ'),
    ('k', 'κ'),
    ('n', 'η'),
    ('t', 'τ'),
    ('u', 'υ'),
];

/// Appended when a name has no mappable letter, or to break a collision.
const GREEK_SUFFIXES: [char; 8] = ['λ', 'μ', 'ξ', 'π', 'σ', 'φ', 'ψ', 'ω'];

pub fn homoglyph(c: char) -> Option<char> {
    HOMOGLYPHS.iter().find(|(l, _)| *l == c).map(|(_, g)| *g)
}

/// Mangled names of all defined functions, in module order. Externs are
/// never renamed.
pub fn collect_custom_identifiers(m: &IrModule) -> Vec<String> {
    m.functions.iter().map(|f| f.mangled_name.clone()).collect()
}

/// Distinct source base names in module order.
fn collect_bases(m: &IrModule) -> Vec<String> {
    let mut seen = HashSet::new();
    m.functions.iter().filter(|f| seen.insert(f.source_name.clone())).map(|f| f.source_name.clone()).collect()
}

fn new_mangled(f: &IrFunction, base: &str) -> String {
    if f.is_mangled() {
        mangle(base, &f.param_types())
    } else {
        base.to_string()
    }
}

/// Rename bases per `choose`, which receives the old base and the set of
/// names already taken and must return a fresh base.
fn substitute(
    m: &IrModule,
    mode: RenameMode,
    mut choose: impl FnMut(&str, &BTreeSet<String>) -> Result<String, PassError>,
) -> Result<(IrModule, RenameMap), PassError> {
    let mut taken = m.symbol_names();
    let mut map = RenameMap::new(mode);
    for base in collect_bases(m) {
        loop {
            let candidate = choose(&base, &taken)?;
            let mangled: Vec<String> =
                m.functions.iter().filter(|f| f.source_name == base).map(|f| new_mangled(f, &candidate)).collect();
            if taken.contains(&candidate) || mangled.iter().any(|n| taken.contains(n)) {
                taken.insert(candidate);
                continue;
            }
            taken.insert(candidate.clone());
            taken.extend(mangled);
            map.bases.insert(base.clone(), candidate);
            break;
        }
    }
    let mut out = m.clone();
    for f in &mut out.functions {
        let base = &map.bases[&f.source_name];
        let renamed = new_mangled(f, base);
        map.entries.insert(f.mangled_name.clone(), renamed.clone());
        f.source_name = base.clone();
        f.mangled_name = renamed;
    }
    for f in &mut out.functions {
        for b in &mut f.blocks {
            for inst in &mut b.insts {
                if let Inst::Call { callee, .. } = inst {
                    if let Some(new) = map.entries.get(callee) {
                        *callee = new.clone();
                    }
                }
            }
        }
    }
    Ok((out, map))
}

fn random_name(rng: &mut PassRng) -> String {
    const FIRST: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_";
    const REST: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_";
    let mut s = String::with_capacity(RANDOM_NAME_LEN);
    s.push(*FIRST.choose(rng).expect("non-empty") as char);
    while s.len() < RANDOM_NAME_LEN {
        s.push(*REST.choose(rng).expect("non-empty") as char);
    }
    s
}

/// Replace every function name with a random 11-character identifier.
pub fn rename_random(m: &IrModule, seed: u64) -> (IrModule, RenameMap) {
    let mut rng = rng::rng(seed);
    substitute(m, RenameMode::Random, |_, _| Ok(random_name(&mut rng))).expect("random renaming cannot fail")
}

/// Replace function names with entries sampled without replacement from
/// `dict`. Entries that already name something in the module are unusable.
pub fn rename_dictionary(m: &IrModule, dict: &Dictionary, seed: u64) -> Result<(IrModule, RenameMap), PassError> {
    let needed = collect_bases(m).len();
    let symbols = m.symbol_names();
    let mut usable: Vec<&String> = dict.entries.iter().filter(|e| !symbols.contains(*e)).collect();
    if usable.len() < needed {
        return Err(PassError::DictionaryExhausted { needed, available: usable.len() });
    }
    usable.shuffle(&mut rng::rng(seed));
    let mut pool = usable.into_iter();
    substitute(m, RenameMode::Directory, |_, _| {
        pool.next()
            .cloned()
            .ok_or(PassError::DictionaryExhausted { needed, available: dict.entries.len() })
    })
}

/// Map Latin letters to Greek look-alikes.
pub fn rename_homoglyph(m: &IrModule) -> (IrModule, RenameMap) {
    substitute(m, RenameMode::Illegal, |base, taken| {
        let mapped: String = base.chars().map(|c| homoglyph(c).unwrap_or(c)).collect();
        let mut name = if mapped == base { format!("{mapped}{}", GREEK_SUFFIXES[0]) } else { mapped };
        let mut i = 0;
        while taken.contains(&name) {
            name.push(GREEK_SUFFIXES[i % GREEK_SUFFIXES.len()]);
            i += 1;
        }
        Ok(name)
    })
    .expect("homoglyph renaming cannot fail")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverloadDecoy {
    pub original: String,
    pub decoy: String,
    pub params: Vec<Type>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverloadReport {
    pub decoys_per_fn: usize,
    pub decoys: Vec<OverloadDecoy>,
}

const MAX_DECOY_PARAMS: usize = 5;

/// Build a decoy of `f` with parameter types `params`: the original
/// parameters become locals and every block is a mutated clone.
fn overload_decoy(f: &IrFunction, mangled: String, params: &[Type], rng: &mut PassRng) -> IrFunction {
    let locals: Vec<Param> = f.params.iter().chain(f.locals.iter()).cloned().collect();
    let mut names: HashSet<String> = locals.iter().map(|p| p.name.clone()).collect();
    let mut new_params = Vec::with_capacity(params.len());
    for (i, ty) in params.iter().enumerate() {
        let mut name = format!("a{i}");
        while names.contains(&name) {
            name.push('_');
        }
        names.insert(name.clone());
        new_params.push(Param { name, ty: *ty });
    }
    let mut decoy = IrFunction {
        mangled_name: mangled,
        source_name: f.source_name.clone(),
        params: new_params,
        ret: f.ret,
        locals,
        blocks: f.blocks.clone(),
    };
    for i in 0..decoy.blocks.len() {
        let (insts, _) = mutate_clone(&decoy.blocks[i].insts, &decoy, rng);
        decoy.blocks[i].insts = insts;
    }
    decoy
}

/// Add `decoys_per_fn` never-called overloads of every defined function.
pub fn add_overloads(m: &IrModule, seed: u64, decoys_per_fn: usize) -> Result<(IrModule, OverloadReport), PassError> {
    if decoys_per_fn < 1 {
        return Err(PassError::InvalidParameter("decoys per function must be at least 1".into()));
    }
    let mut rng = rng::rng(seed);
    let mut taken = m.symbol_names();
    let mut out = IrModule { functions: Vec::new(), ..m.clone() };
    let mut report = OverloadReport { decoys_per_fn, decoys: Vec::new() };
    for f in &m.functions {
        out.functions.push(f.clone());
        for _ in 0..decoys_per_fn {
            // Regenerate until the mangled name is unused.
            let (mangled, params) = loop {
                let len = rng.gen_range(0..=MAX_DECOY_PARAMS);
                let params: Vec<Type> =
                    (0..len).map(|_| if rng.gen_bool(0.5) { Type::Int } else { Type::Bool }).collect();
                let mangled = mangle(&f.source_name, &params);
                if !taken.contains(&mangled) && mangled != f.mangled_name {
                    break (mangled, params);
                }
            };
            taken.insert(mangled.clone());
            out.functions.push(overload_decoy(f, mangled.clone(), &params, &mut rng));
            report.decoys.push(OverloadDecoy { original: f.mangled_name.clone(), decoy: mangled, params });
        }
    }
    Ok((out, report))
}

/// Which substitution [`obfuscate_identifiers_default`] picked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DefaultReport {
    pub substitution: RenameMode,
    pub overloads: OverloadReport,
}

/// Pick one substitution scheme by seed, then add overloads that reuse the
/// substituted base names.
pub fn obfuscate_identifiers_default(
    m: &IrModule,
    seed: u64,
    dict: &Dictionary,
) -> Result<(IrModule, RenameMap, DefaultReport), PassError> {
    let choice = rng::rng(rng::fork(seed, &["choose"])).gen_range(0..3);
    let sub_seed = rng::fork(seed, &["substitute"]);
    let (renamed, mut map) = match choice {
        0 => rename_random(m, sub_seed),
        1 => rename_dictionary(m, dict, sub_seed)?,
        _ => rename_homoglyph(m),
    };
    let substitution = map.mode;
    map.mode = RenameMode::OverloadCombined;
    let (out, overloads) = add_overloads(&renamed, rng::fork(seed, &["overload"]), 2)?;
    Ok((out, map, DefaultReport { substitution, overloads }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{run_function, RunOptions};
    use crate::ir::{parse_module, print_module, validate};

    const TWO: &str = "extern @print_int(int) -> void\n\
        func @_O3addii src \"add\" (%a: int, %b: int) -> int { e: %a = add %a, %b ret %a }\n\
        func @main() -> int { local %r: int\n e: %r = call @_O3addii(2, 3) call @print_int(%r) ret %r }";

    fn check(m: &IrModule) -> IrModule {
        assert!(validate(m).is_empty(), "{:?}", validate(m));
        let text = print_module(m);
        let back = parse_module(&text).unwrap();
        assert_eq!(print_module(&back), text);
        back
    }

    fn observe(m: &IrModule, mangled: &str) -> (crate::interp::Status, Vec<i64>) {
        let r = run_function(m, mangled, &[], RunOptions::fuel(1000)).unwrap();
        (r.status, r.output)
    }

    #[test]
    fn collects_defined_functions_only() {
        let m = parse_module(TWO).unwrap();
        assert_eq!(collect_custom_identifiers(&m), vec!["_O3addii", "main"]);
        assert!(collect_custom_identifiers(&IrModule::default()).is_empty());
    }

    #[test]
    fn random_names() {
        let m = parse_module(TWO).unwrap();
        let (r, map) = rename_random(&m, 7);
        let r = check(&r);
        assert_eq!(map.entries.len(), 2);
        assert!(map.is_injective());
        for base in map.bases.values() {
            assert_eq!(base.chars().count(), RANDOM_NAME_LEN);
            let first = base.chars().next().unwrap();
            assert!(first.is_ascii_alphabetic() || first == '_');
            assert!(base.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        }
        assert_eq!(observe(&r, &map.entries["main"]), observe(&m, "main"));
        assert_eq!(rename_random(&m, 7), rename_random(&m, 7));
        assert_ne!(rename_random(&m, 7).1, rename_random(&m, 8).1);
        let (same, empty) = rename_random(&IrModule::default(), 1);
        assert_eq!(same, IrModule::default());
        assert!(empty.entries.is_empty());
    }

    #[test]
    fn mangled_names_are_rebuilt() {
        let m = parse_module(TWO).unwrap();
        let (r, map) = rename_dictionary(&m, &Dictionary::from_words(["alpha", "beta"]), 0).unwrap();
        let add = r.functions.iter().find(|f| f.params.len() == 2).unwrap();
        assert_eq!(add.mangled_name, mangle(&add.source_name, &[Type::Int, Type::Int]));
        assert!(add.is_mangled());
        let main = map.entries["main"].clone();
        assert!(r.function(&main).unwrap().source_name == main);
    }

    #[test]
    fn dictionary_single_and_exhausted() {
        let one = parse_module("func @f() -> int { e: ret 1 }").unwrap();
        let (r, map) = rename_dictionary(&one, &Dictionary::from_words(["alpha"]), 3).unwrap();
        assert_eq!(r.functions[0].mangled_name, "alpha");
        assert_eq!(map.entries["f"], "alpha");
        let three = parse_module("func @f() -> int { e: ret 1 } func @g() -> int { e: ret 2 } func @h() -> int { e: ret 3 }")
            .unwrap();
        assert_eq!(
            rename_dictionary(&three, &Dictionary::from_words(["a", "b"]), 0),
            Err(PassError::DictionaryExhausted { needed: 3, available: 2 })
        );
    }

    #[test]
    fn dictionary_skips_existing_names() {
        let m = parse_module("global @init = 0\nfunc @f() -> int { e: ret 1 }").unwrap();
        let err = rename_dictionary(&m, &Dictionary::from_words(["init"]), 0).unwrap_err();
        assert_eq!(err, PassError::DictionaryExhausted { needed: 1, available: 0 });
    }

    #[test]
    fn bundled_dictionary() {
        let d = Dictionary::bundled();
        assert!(d.entries.len() >= 200);
        assert!(d.entries.iter().all(|e| is_ident(e)));
        assert_eq!(d.entries.iter().collect::<HashSet<_>>().len(), d.entries.len());
        for w in ["init", "update"] {
            assert!(d.entries.iter().any(|e| e == w));
        }
        assert!(Dictionary::parse("a\n# c\n\nb # trailing\n").unwrap().entries == ["a", "b"]);
        assert!(Dictionary::parse("a\na\n").is_err());
        assert!(Dictionary::parse("9x\n").is_err());
    }

    #[test]
    fn homoglyph_table() {
        let codes: HashSet<char> = HOMOGLYPHS.iter().map(|(_, g)| *g).collect();
        assert_eq!(codes.len(), HOMOGLYPHS.len());
        assert!(codes.iter().all(|&g| ('\u{0370}'..='\u{03FF}').contains(&g)));
        let m = parse_module("func @count() -> int { e: ret 1 } func @qqq() -> int { e: ret 2 }").unwrap();
        let (r, map) = rename_homoglyph(&m);
        assert_eq!(map.entries["count"], "cουητ");
        let q = &map.entries["qqq"];
        assert_eq!(q.chars().count(), 4);
        assert!(q.starts_with("qqq") && ('\u{0370}'..='\u{03FF}').contains(&q.chars().last().unwrap()));
        check(&r);
    }

    #[test]
    fn homoglyph_collisions_get_suffix() {
        let m = parse_module("func @cουητ() -> int { e: ret 1 } func @count() -> int { e: ret 2 }").unwrap();
        let (r, map) = rename_homoglyph(&m);
        assert!(map.is_injective());
        let names: HashSet<_> = r.functions.iter().map(|f| f.mangled_name.clone()).collect();
        assert_eq!(names.len(), 2);
        assert!(!names.contains("cουητ") || map.entries["count"] != "cουητ");
        check(&r);
    }

    #[test]
    fn overloads_share_base_name() {
        let m = parse_module("func @_O1fi src \"f\" (%x: int) -> int { e: %x = add %x, 1 ret %x }").unwrap();
        let (r, report) = add_overloads(&m, 5, 2).unwrap();
        let r = check(&r);
        assert_eq!(r.functions.len(), 3);
        assert!(r.functions.iter().all(|f| f.source_name == "f"));
        let mangled: HashSet<_> = r.functions.iter().map(|f| f.mangled_name.clone()).collect();
        assert_eq!(mangled.len(), 3);
        assert_eq!(report.decoys.len(), 2);
        assert!(r.inst_count() > m.inst_count());
        assert!(add_overloads(&m, 5, 0).is_err());
    }

    #[test]
    fn overloads_keep_behavior_and_call_graph() {
        let m = parse_module(TWO).unwrap();
        let (r, _) = add_overloads(&m, 1, 3).unwrap();
        let r = check(&r);
        assert_eq!(r.functions.len(), 8);
        assert_eq!(observe(&r, "main"), observe(&m, "main"));
        let callees: Vec<&str> = r
            .functions
            .iter()
            .flat_map(|f| f.blocks.iter().flat_map(|b| b.insts.iter()))
            .filter_map(|i| if let Inst::Call { callee, .. } = i { Some(callee.as_str()) } else { None })
            .collect();
        assert!(callees.iter().all(|c| ["_O3addii", "print_int"].contains(c)));
    }

    #[test]
    fn default_composition() {
        let m = parse_module(TWO).unwrap();
        let mut seen = HashSet::new();
        for seed in 0..30 {
            let (r, map, report) = obfuscate_identifiers_default(&m, seed, &Dictionary::bundled()).unwrap();
            let r = check(&r);
            seen.insert(report.substitution);
            assert_eq!(r.functions.len(), 6);
            let new_bases: HashSet<_> = map.bases.values().cloned().collect();
            assert!(r.functions.iter().all(|f| new_bases.contains(&f.source_name)));
            if report.substitution == RenameMode::Illegal {
                assert!(r.functions.iter().all(|f| f.source_name.chars().any(|c| ('\u{0370}'..='\u{03FF}').contains(&c))));
            }
            assert_eq!(observe(&r, &map.entries["main"]), observe(&m, "main"));
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn substitution_is_space_neutral() {
        let m = parse_module(TWO).unwrap();
        assert_eq!(rename_random(&m, 1).0.inst_count(), m.inst_count());
        assert_eq!(rename_homoglyph(&m).0.inst_count(), m.inst_count());
    }
}
