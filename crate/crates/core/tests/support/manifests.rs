//! Seeded generator of valid manifests with awkward but legal text.

use agent_forge::registry::{ChangelogEntry, ParameterDoc, ReturnsDoc, SkillManifest};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

const WORDS: &[&str] = &[
    "parse",
    "the",
    "file",
    "--query",
    "\"quoted\"",
    "a:b",
    "(paren)",
    "x=1;",
    "#tag",
    "##",
    "-",
    "- item",
    "café",
    "naïve",
    "日本",
    "`code`",
    "{json}",
    "[link](url)",
    "50%",
    "v2",
    "|",
    "*",
    "@user",
    "path/to/f",
];

fn line(rng: &mut StdRng) -> String {
    let n = rng.gen_range(1..7);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    // A line starting with `##` would read as a section header.
    while words[0].starts_with("##") {
        words[0] = "ok";
    }
    words.join(" ")
}

fn block(rng: &mut StdRng, max_lines: usize) -> String {
    let n = rng.gen_range(1..=max_lines);
    (0..n).map(|_| line(rng)).collect::<Vec<_>>().join("\n")
}

fn sem_type(rng: &mut StdRng) -> String {
    [
        "text",
        "json",
        "list of urls",
        "file path",
        "number",
        "map {k, v}",
        "audio_file",
    ]
    .choose(rng)
    .unwrap()
    .to_string()
}

fn name(rng: &mut StdRng) -> String {
    let first = rng.gen_range(b'a'..=b'z') as char;
    let len = rng.gen_range(0..20);
    let rest: String = (0..len)
        .map(|_| {
            *b"abcdefghijklmnopqrstuvwxyz0123456789-_"
                .choose(rng)
                .unwrap() as char
        })
        .collect();
    format!("{first}{rest}")
}

pub fn generate(rng: &mut StdRng) -> SkillManifest {
    let name = name(rng);
    let version = rng.gen_range(1..12);
    let parameters = (0..rng.gen_range(0..5))
        .map(|i| ParameterDoc {
            name: format!("arg_{i}"),
            semantic_type: sem_type(rng),
            required: rng.gen(),
            description: line(rng),
        })
        .collect();
    let mut usage = format!("{name} --query \"{}\"", line(rng).replace('"', "'"));
    if rng.gen_bool(0.5) {
        usage.push('\n');
        usage.push_str(&block(rng, 3));
    }
    let mut changelog = Vec::new();
    for v in 2..=version {
        if rng.gen_bool(0.7) {
            changelog.push(ChangelogEntry {
                version: v,
                summary: line(rng),
            });
        }
    }
    SkillManifest {
        description: block(rng, 4),
        parameters,
        returns: ReturnsDoc {
            semantic_type: sem_type(rng),
            description: line(rng),
        },
        usage,
        version,
        changelog,
        name,
    }
}
