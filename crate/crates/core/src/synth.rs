//! Seeded generator of claim-like synthetic patents. Each CPC section gets its
//! own content vocabulary (disjoint across sections) while the claim grammar
//! and function words are shared, so section labels are recoverable from word
//! choice alone.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::claim::Claim;
use crate::corpus::{CpcSection, PatentRecord};

pub struct Lexicon {
    pub section: CpcSection,
    pub devices: &'static [&'static str],
    pub parts: &'static [&'static str],
    pub verbs: &'static [&'static str],
    pub adjectives: &'static [&'static str],
}

pub const LEXICONS: &[Lexicon] = &[
    Lexicon {
        section: CpcSection::A,
        devices: &["catheter assembly", "infusion pump", "surgical stapler", "dental implant", "orthopedic brace"],
        parts: &[
            "lumen", "balloon", "needle", "cannula", "syringe", "plunger", "stent", "suture", "tourniquet",
            "splint", "cuff", "bandage", "dressing", "implant", "abutment", "retainer",
        ],
        verbs: &["inflate", "puncture", "irrigate", "suture", "sterilize", "immobilize", "dilate", "cauterize"],
        adjectives: &["biocompatible", "sterile", "absorbable", "hypodermic", "antimicrobial", "flexible"],
    },
    Lexicon {
        section: CpcSection::B,
        devices: &["bicycle frame", "conveyor apparatus", "milling machine", "cargo trailer", "lifting crane"],
        parts: &[
            "axle", "chassis", "sprocket", "pulley", "spindle", "gearbox", "hitch", "winch", "boom", "bogie",
            "trolley", "clamp", "chuck", "roller", "hopper", "chute",
        ],
        verbs: &["haul", "hoist", "grind", "convey", "tow", "clamp", "drill", "steer"],
        adjectives: &["telescopic", "articulated", "hydraulic", "rugged", "towable", "rotary"],
    },
    Lexicon {
        section: CpcSection::C,
        devices: &["polymer composition", "catalytic reactor", "fermentation vessel", "coating formulation", "distillation column"],
        parts: &[
            "monomer", "solvent", "catalyst", "resin", "enzyme", "precipitate", "emulsion", "oligomer",
            "reagent", "zeolite", "surfactant", "electrolyte", "alloy", "slurry", "crystal", "filtrate",
        ],
        verbs: &["polymerize", "catalyze", "dissolve", "ferment", "oxidize", "distill", "hydrolyze", "crystallize"],
        adjectives: &["aqueous", "anhydrous", "crosslinked", "acidic", "viscous", "porous"],
    },
    Lexicon {
        section: CpcSection::G,
        devices: &["computing device", "navigation system", "optical scanner", "data storage system", "measurement instrument"],
        parts: &[
            "processor", "memory", "register", "cache", "display", "lens", "photodetector", "gyroscope",
            "encoder", "buffer", "interferometer", "clock", "database", "compiler", "thermometer", "scanner",
        ],
        verbs: &["compute", "store", "render", "measure", "encrypt", "index", "calibrate", "query"],
        adjectives: &["volatile", "optical", "digital", "virtual", "programmable", "redundant"],
    },
    Lexicon {
        section: CpcSection::H,
        devices: &["power converter", "antenna array", "battery pack", "wireless transceiver", "semiconductor package"],
        parts: &[
            "transistor", "inductor", "capacitor", "transformer", "antenna", "amplifier", "diode", "electrode",
            "busbar", "oscillator", "rectifier", "modulator", "waveguide", "resistor", "inverter", "terminal",
        ],
        verbs: &["amplify", "rectify", "modulate", "transmit", "charge", "switch", "ground", "insulate"],
        adjectives: &["insulated", "conductive", "resonant", "bipolar", "shielded", "differential"],
    },
];

pub fn lexicon(section: CpcSection) -> Option<&'static Lexicon> {
    LEXICONS.iter().find(|l| l.section == section)
}

/// Sections that have a synthetic vocabulary.
pub fn synthetic_sections() -> Vec<CpcSection> {
    LEXICONS.iter().map(|l| l.section).collect()
}

fn third_person(verb: &str) -> String {
    if verb.ends_with('s') || verb.ends_with("sh") || verb.ends_with("ch") || verb.ends_with('x') {
        format!("{verb}es")
    } else if let Some(stem) = verb.strip_suffix('y') {
        format!("{stem}ies")
    } else {
        format!("{verb}s")
    }
}

struct Pool<'a> {
    lex: Vec<&'a Lexicon>,
}

impl Pool<'_> {
    fn pick<'s>(&self, rng: &mut ChaCha8Rng, field: impl Fn(&Lexicon) -> &'static [&'static str]) -> &'static str {
        let lex = self.lex.choose(rng).expect("non-empty pool");
        field(lex).choose(rng).expect("non-empty lexicon")
    }

    fn distinct_parts(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
        let mut all: Vec<&'static str> = self.lex.iter().flat_map(|l| l.parts.iter().copied()).collect();
        all.shuffle(rng);
        all.truncate(n);
        all
    }
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn independent_claim(pool: &Pool, rng: &mut ChaCha8Rng, device: &str, parts: &[&str]) -> String {
    let mut elements = vec![format!("{} {}", article(parts[0]), parts[0])];
    for (i, part) in parts.iter().enumerate().skip(1) {
        let prev = parts[rng.random_range(0..i)];
        let el = match rng.random_range(0..4) {
            0 => format!("{} {part}", article(part)),
            1 => format!("{} {part} coupled to the {prev}", article(part)),
            2 => format!("{} {part} configured to {} the {prev}", article(part), pool.pick(rng, |l| l.verbs)),
            _ => {
                let adj = pool.pick(rng, |l| l.adjectives);
                format!("{} {adj} {part} disposed on the {prev}", article(adj))
            }
        };
        elements.push(el);
    }
    let last = elements.len() - 1;
    elements[last] = format!("and {}", elements[last]);
    let lead = if article(device) == "an" { "An" } else { "A" };
    let mut text = format!("{lead} {device} comprising: {}", elements.join("; "));
    if rng.random_bool(0.4) {
        let part = parts.choose(rng).expect("parts");
        text.push_str(&format!(", wherein the {part} is {}", pool.pick(rng, |l| l.adjectives)));
    }
    text.push('.');
    text
}

fn dependent_claim(pool: &Pool, rng: &mut ChaCha8Rng, device: &str, parent: u32, parts: &[&str], spare: &str) -> String {
    let a = parts.choose(rng).expect("parts");
    match rng.random_range(0..3) {
        0 => format!("The {device} of claim {parent}, wherein the {a} is {}.", pool.pick(rng, |l| l.adjectives)),
        1 => format!("The {device} of claim {parent}, further comprising {} {spare} coupled to the {a}.", article(spare)),
        _ => {
            let b = parts.iter().find(|p| *p != a).unwrap_or(a);
            let verb = third_person(pool.pick(rng, |l| l.verbs));
            format!("The {device} of claim {parent}, wherein the {a} {verb} the {b}.")
        }
    }
}

/// `n` patents labeled with `sections`; content words are drawn from the
/// union of those sections' lexicons. Ids are `<prefix><index>`.
pub fn synth_patents(sections: &BTreeSet<CpcSection>, n: usize, id_prefix: &str, seed: u64) -> Vec<PatentRecord> {
    let lex: Vec<&Lexicon> = sections.iter().filter_map(|&s| lexicon(s)).collect();
    assert!(!lex.is_empty(), "no synthetic lexicon for {sections:?}");
    let pool = Pool { lex };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = NaiveDate::from_ymd_opt(2015, 1, 6).expect("valid date");
    (0..n)
        .map(|i| {
            let device = pool.pick(&mut rng, |l| l.devices);
            let n_parts = rng.random_range(2..=4);
            let mut parts = pool.distinct_parts(&mut rng, n_parts + 1);
            let spare = parts.pop().expect("spare part");
            let patent_id = format!("{id_prefix}{i:06}");
            let mut claims = vec![Claim::new(&patent_id, 1, independent_claim(&pool, &mut rng, device, &parts))];
            for number in 2..=rng.random_range(2..=4u32) {
                let parent = if number > 2 && rng.random_bool(0.3) { number - 1 } else { 1 };
                let text = dependent_claim(&pool, &mut rng, device, parent, &parts, spare);
                claims.push(Claim::new(&patent_id, number, text).with_parent(parent));
            }
            PatentRecord {
                patent_id,
                grant_date: base + chrono::Days::new(7 * i as u64),
                cpc_sections: sections.clone(),
                cited_patent_ids: Vec::new(),
                citing_patent_ids: Vec::new(),
                inventor_ids: Vec::new(),
                claims,
            }
        })
        .collect()
}

/// Content words of one section (parts, verbs in both forms, adjectives, device words).
pub fn section_words(section: CpcSection) -> BTreeSet<String> {
    let Some(l) = lexicon(section) else { return BTreeSet::new() };
    let mut out: BTreeSet<String> = l.parts.iter().chain(l.adjectives).map(|w| w.to_string()).collect();
    for v in l.verbs {
        out.insert(v.to_string());
        out.insert(third_person(v));
    }
    out.extend(l.devices.iter().flat_map(|d| d.split(' ')).map(str::to_string));
    out
}
