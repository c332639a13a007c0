//! Generator of Java accessor/collection style methods with JavaDoc first
//! lines, for smoke tests, benchmarks and demos when no real corpus is at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::RawPair;

const NOUNS: &[&str] = &[
    "account", "address", "amount", "balance", "buffer", "cache", "channel", "child", "client", "color", "config",
    "connection", "consumption", "count", "customer", "date", "depth", "device", "document", "element", "entry",
    "event", "file", "filter", "group", "handler", "header", "height", "image", "index", "item", "key", "label",
    "layer", "limit", "listener", "message", "mode", "name", "node", "order", "owner", "oxygen", "page", "parent",
    "part", "path", "port", "price", "query", "rate", "record", "request", "result", "role", "session", "size",
    "source", "state", "status", "style", "target", "task", "text", "time", "timeout", "title", "token", "type",
    "user", "value", "version", "weight", "width", "window",
];

const MODIFIERS: &[&str] = &[
    "current", "default", "maximum", "minimum", "total", "last", "first", "next", "previous", "selected", "base",
    "local", "remote", "initial", "primary",
];

const ADJECTIVES: &[&str] = &[
    "active", "empty", "enabled", "visible", "valid", "closed", "dirty", "locked", "modified", "running", "ready",
    "editable", "expanded", "connected",
];

const PRIMITIVES: &[&str] = &["String", "int", "double", "long", "boolean", "float"];

fn cap(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

struct Name {
    words: Vec<&'static str>,
}

impl Name {
    fn random(rng: &mut impl Rng, max_words: usize) -> Self {
        let n = rng.gen_range(1..=max_words);
        let mut words = Vec::with_capacity(n);
        if n > 1 && rng.gen_bool(0.4) {
            words.push(*MODIFIERS.choose(rng).unwrap());
        }
        while words.len() < n {
            words.push(*NOUNS.choose(rng).unwrap());
        }
        Self { words }
    }

    fn camel(&self) -> String {
        let mut s = self.words[0].to_string();
        for w in &self.words[1..] {
            s.push_str(&cap(w));
        }
        s
    }

    fn pascal(&self) -> String {
        self.words.iter().map(|w| cap(w)).collect()
    }

    fn upper_snake(&self) -> String {
        self.words.iter().map(|w| w.to_ascii_uppercase()).collect::<Vec<_>>().join("_")
    }

    fn spaced(&self) -> String {
        self.words.join(" ")
    }
}

fn one_pair(rng: &mut impl Rng) -> RawPair {
    let field = Name::random(rng, 3);
    let owner = Name::random(rng, 1);
    let item = Name::random(rng, 2);
    let key = Name::random(rng, 1);
    let ty = if rng.gen_bool(0.6) {
        PRIMITIVES.choose(rng).unwrap().to_string()
    } else {
        Name::random(rng, 2).pascal()
    };
    let (f, fp, fs) = (field.camel(), field.pascal(), field.spaced());
    let (i, ip, is) = (item.camel(), item.pascal(), item.spaced());
    let (o, op) = (owner.spaced(), owner.pascal());
    let (method, comment) = match rng.gen_range(0..12) {
        0 => (
            format!("public {ty} get{fp}() {{\n    return {f};\n}}"),
            match rng.gen_range(0..3) {
                0 => format!("Gets the {fs}."),
                1 => format!("Returns the {fs}."),
                _ => format!("Returns the {fs} of this {o}."),
            },
        ),
        1 => (
            format!("public void set{fp}({ty} {f}) {{\n    this.{f} = {f};\n}}"),
            if rng.gen_bool(0.5) {
                format!("Sets the {fs}.")
            } else {
                format!("Sets the {fs} of this {o}.")
            },
        ),
        2 => {
            let adj = ADJECTIVES.choose(rng).unwrap();
            (
                format!("public boolean is{}() {{\n    return {adj};\n}}", cap(adj)),
                format!("Returns true if this {o} is {adj}."),
            )
        }
        3 => (
            format!(
                "public void add{ip}({ip} {i}) {{\n    if ({i} == null) {{\n        throw new IllegalArgumentException(\"{i} is null\");\n    }}\n    {i}s.add({i});\n}}"
            ),
            format!("Adds a {is} to this {o}."),
        ),
        4 => (
            format!("public boolean remove{ip}({ip} {i}) {{\n    return {i}s.remove({i});\n}}"),
            format!("Removes the given {is} from the list."),
        ),
        5 => (
            format!("public int get{ip}Count() {{\n    return {i}s.size();\n}}"),
            format!("Returns the number of {is}s."),
        ),
        6 => {
            let (k, kp) = (key.camel(), key.pascal());
            (
                format!(
                    "public {ip} find{ip}By{kp}(String {k}) {{\n    for ({ip} {i} : {i}s) {{\n        if ({i}.get{kp}().equals({k})) {{\n            return {i};\n        }}\n    }}\n    return null;\n}}"
                ),
                format!("Finds the {is} with the given {}.", key.spaced()),
            )
        }
        7 => (
            format!(
                "public String toString() {{\n    StringBuilder sb = new StringBuilder();\n    sb.append(\"{op}[{f}=\").append({f}).append(\"]\");\n    return sb.toString();\n}}"
            ),
            format!("Returns a string representation of this {o}."),
        ),
        8 => (
            format!("public void clear{ip}s() {{\n    {i}s.clear();\n    fireStateChanged();\n}}"),
            format!("Removes all {is}s from this {o}."),
        ),
        9 => (
            format!(
                "public static {op} create{op}(String name) {{\n    {op} result = new {op}();\n    result.setName(name);\n    return result;\n}}"
            ),
            format!("Creates a new {o} with the given name."),
        ),
        10 => (
            format!("public boolean has{ip}s() {{\n    return !{i}s.isEmpty();\n}}"),
            format!("Checks whether this {o} has any {is}s."),
        ),
        _ => (
            format!(
                "public {ty} get{fp}() {{\n    return getValueAs{}({});\n}}",
                cap(&ty.to_ascii_lowercase()),
                field.upper_snake()
            ),
            format!("Gets the {fs}."),
        ),
    };
    RawPair { method, comment }
}

/// `n` pairs, deterministic under `seed`.
pub fn generate(n: usize, seed: u64) -> Vec<RawPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| one_pair(&mut rng)).collect()
}
