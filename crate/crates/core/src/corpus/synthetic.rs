//! Deterministic synthetic product Q&A corpus and noisy user-query log.
//!
//! Every product gets one CQA pair per attribute it draws (battery, material,
//! weight, ...). Questions are well formed and name the attribute; answers
//! mostly carry values ("4000 mah", "soft satin") and often share no word
//! with their question. User queries are short keyword strings, corrupted
//! with probability `noise_level` by four operations: truncation, synonym
//! substitution from a user-language table, adjacent character swaps and
//! character deletions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CqaPair, Product, Relevance, UserQueryRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_products: usize,
    pub pairs_per_product: usize,
    pub num_queries: usize,
    pub noise_level: f64,
    pub seed: u64,
}

pub struct Attribute {
    pub name: &'static str,
    questions: &'static [&'static str],
    answers: &'static [&'static str],
    queries: &'static [&'static str],
    values: &'static [&'static str],
    numbers: (u32, u32),
}

// Placeholders: {item} product noun, {v}/{w} two distinct values,
// {n}/{m} two numbers from the attribute range.
pub const ATTRIBUTES: &[Attribute] = &[
    Attribute {
        name: "battery",
        questions: &[
            "How long does the battery last?",
            "What is the battery capacity of this {item}?",
            "How is the battery life on this {item}?",
            "How good is the battery performance?",
        ],
        answers: &[
            "It has a {v} mah cell that runs about {n} hours.",
            "Around {n} hours of use per charge.",
            "The {v} mah cell easily lasts a full day.",
            "This {item} has a wonderful {v} mah battery, good for {n} hours.",
        ],
        queries: &["battery life", "battery backup", "battery lasts", "battery performance", "battery capacity"],
        values: &["3500", "4000", "4500", "5000", "6000"],
        numbers: (8, 20),
    },
    Attribute {
        name: "material",
        questions: &[
            "What material is this {item} made of?",
            "Which material is used for this {item}?",
            "Is the material good quality?",
        ],
        answers: &["It is like soft {v}.", "Made of {v}, feels premium.", "Pure {v} with a {w} lining."],
        queries: &["material", "material quality", "material details", "material used"],
        values: &["cotton", "silk", "satin", "leather", "steel", "aluminium", "plastic", "wood", "bamboo", "nylon"],
        numbers: (1, 2),
    },
    Attribute {
        name: "weight",
        questions: &[
            "What is the weight of this {item}?",
            "What is the net weight?",
            "What is the total weight including the box?",
        ],
        answers: &["About {n} kgs.", "It is roughly {n}00 grams.", "{n} kgs with the packaging."],
        queries: &["weight", "total weight", "weight kg", "product weight"],
        values: &[],
        numbers: (1, 12),
    },
    Attribute {
        name: "size",
        questions: &[
            "What is the size of this {item}?",
            "Is this available in a larger size?",
            "What is the exact size in inches?",
        ],
        answers: &[
            "It measures {n} by {m} inches.",
            "Available sizes are {n}x{m} and {m}x{n} inches.",
            "Roughly {n}0 cm across.",
        ],
        queries: &["size", "size inches", "bigger size", "size chart"],
        values: &[],
        numbers: (4, 14),
    },
    Attribute {
        name: "compatibility",
        questions: &[
            "Is it compatible with {v}?",
            "Is this {item} compatible with {v} devices?",
            "Which devices is it compatible with?",
        ],
        answers: &["Yes, works fine with {v}.", "Yes it runs {v} without issues.", "Works with {v} and {w}."],
        queries: &["{v} compatible", "compatible devices", "device compatible"],
        values: &["android", "iphone", "windows", "mac", "linux", "ps5", "xbox"],
        numbers: (1, 2),
    },
    Attribute {
        name: "color",
        questions: &[
            "What color options are available?",
            "Is the color same as in the picture?",
            "Does it come in any other color?",
        ],
        answers: &["Comes in {v} and {w}.", "Yes, the {v} shade matches the photo.", "Only {v} right now."],
        queries: &["color", "color variants", "other color", "color options"],
        values: &["red", "black", "white", "blue", "green", "grey", "pink", "golden"],
        numbers: (1, 2),
    },
    Attribute {
        name: "warranty",
        questions: &[
            "Does this {item} come with a warranty?",
            "How long is the warranty period?",
            "Is there any manufacturer warranty?",
        ],
        answers: &[
            "{n} year brand warranty.",
            "Yes, {n} years from the manufacturer.",
            "Covered for {n} years against defects.",
        ],
        queries: &["warranty", "warranty period", "warranty coverage"],
        values: &[],
        numbers: (1, 3),
    },
    Attribute {
        name: "waterproof",
        questions: &[
            "Is this {item} waterproof?",
            "Is it waterproof against splashes?",
            "Is it waterproof enough to use in rain?",
        ],
        answers: &[
            "Yes, rated {v} for splashes.",
            "It survives rain but not submersion.",
            "Splash resistant only, avoid swimming.",
        ],
        queries: &["waterproof", "waterproof rating", "waterproof level"],
        values: &["ip67", "ip68", "ipx4", "ipx7"],
        numbers: (1, 2),
    },
    Attribute {
        name: "charging",
        questions: &[
            "How long does charging take?",
            "Does it support fast charging?",
            "What type of charging port does it have?",
        ],
        answers: &[
            "Fully charged in {n} minutes with the {v}w adapter.",
            "Yes, a {v}w adapter is in the box.",
            "It uses a usb c port.",
        ],
        queries: &["charging time", "fast charging", "charging port"],
        values: &["18", "25", "33", "65"],
        numbers: (30, 90),
    },
    Attribute {
        name: "delivery",
        questions: &[
            "How many days for delivery?",
            "Is delivery free for this {item}?",
            "When will the delivery happen?",
        ],
        answers: &[
            "Usually arrives in {n} days.",
            "Free shipping above {n}00 rupees.",
            "Dispatch within {n} days of order.",
        ],
        queries: &["delivery", "delivery time", "delivery days"],
        values: &[],
        numbers: (2, 9),
    },
    Attribute {
        name: "price",
        questions: &[
            "What is the price after discount?",
            "Is the price negotiable?",
            "Why is the price so high?",
        ],
        answers: &[
            "Currently {n}99 after the sale offer.",
            "No, the listed amount is final.",
            "It costs {n}99 in the offer.",
        ],
        queries: &["price", "discount price", "best price", "price negotiable"],
        values: &[],
        numbers: (5, 99),
    },
    Attribute {
        name: "installation",
        questions: &[
            "Is installation provided by the seller?",
            "How easy is the installation?",
            "Do I need tools for installation?",
        ],
        answers: &[
            "A technician comes home to fix it.",
            "Takes about {n} minutes, no tools needed.",
            "Plug and play, very simple.",
        ],
        queries: &["installation", "installation process", "installation tools", "easy installation"],
        values: &[],
        numbers: (10, 45),
    },
];

const ITEMS: &[&str] = &[
    "phone", "laptop", "dress", "bottle", "chair", "backpack", "speaker", "watch", "shoes", "headphones", "scarf", "table",
];
const BRANDS: &[&str] = &["Acme", "Zenith", "Nova", "Orbit", "Lumen", "Vertex", "Pico", "Terra"];

/// User-language replacements. Most entries never occur in CQA text.
const SYNONYMS: &[(&str, &[&str])] = &[
    ("battery", &["backup", "juice", "bettry", "batery", "batrrey"]),
    ("life", &["lyf", "backup"]),
    ("performance", &["perfon", "perfomance"]),
    ("capacity", &["capictiy", "mah"]),
    ("lasts", &["stays"]),
    ("material", &["fabric", "cloth", "matrial"]),
    ("quality", &["qualty"]),
    ("made", &["build"]),
    ("weight", &["heavy", "wt", "wieght"]),
    ("kg", &["kilo"]),
    ("size", &["sise", "measurement", "fit"]),
    ("inches", &["inch", "dimension"]),
    ("bigger", &["large", "big"]),
    ("available", &["avail"]),
    ("compatible", &["compatable", "works"]),
    ("devices", &["device", "gadgets"]),
    ("color", &["colour", "colur", "shade"]),
    ("options", &["choice"]),
    ("warranty", &["guarantee", "waranty", "garanty"]),
    ("period", &["duration"]),
    ("waterproof", &["rainproof", "waterprof", "splashproof"]),
    ("not", &["nt"]),
    ("charging", &["charjing", "recharge"]),
    ("port", &["socket", "pin"]),
    ("fast", &["quick", "turbo"]),

    ("time", &["duration", "tym"]),
    ("delivery", &["dlivery", "shipment", "arrival"]),

    ("days", &["dayz"]),
    ("price", &["rate", "prize", "mrp"]),
    ("negotiable", &["negotiate", "bargain"]),
    ("best", &["lowest", "cheap"]),
    ("discount", &["deal", "sale"]),
    ("installation", &["instalation", "fitting"]),
    ("tools", &["tool", "instal"]),
    ("easy", &["simple", "ez"]),
    ("process", &["steps"]),
    ("how", &["hw"]),
    ("what", &["wat"]),
    ("much", &["mch"]),
];

struct Slots {
    item: &'static str,
    v: &'static str,
    w: &'static str,
    n: u32,
    m: u32,
}

fn fill(template: &str, s: &Slots) -> String {
    template
        .replace("{item}", s.item)
        .replace("{v}", s.v)
        .replace("{w}", s.w)
        .replace("{n}", &s.n.to_string())
        .replace("{m}", &s.m.to_string())
}

fn draw_slots(attr: &Attribute, item: &'static str, rng: &mut ChaCha8Rng) -> Slots {
    let (v, w) = match attr.values.len() {
        0 => ("", ""),
        1 => (attr.values[0], attr.values[0]),
        len => {
            let i = rng.gen_range(0..len);
            let j = (i + rng.gen_range(1..len)) % len;
            (attr.values[i], attr.values[j])
        }
    };
    let (lo, hi) = attr.numbers;
    Slots {
        item,
        v,
        w,
        n: rng.gen_range(lo..=hi),
        m: rng.gen_range(lo..=hi),
    }
}

fn synonyms(token: &str) -> Option<&'static [&'static str]> {
    SYNONYMS.iter().find(|(w, _)| *w == token).map(|(_, s)| *s)
}

fn corrupt_chars(token: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = token.chars().collect();
    // keep the first character; edits elsewhere mimic fast thumb typing
    let pos = rng.gen_range(1..chars.len() - 1);
    if rng.gen_bool(0.5) {
        chars.swap(pos, pos + 1);
    } else {
        chars.remove(pos);
    }
    chars.into_iter().collect()
}

fn make_query(clean: &str, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let mut tokens: Vec<String> = clean.split_whitespace().map(str::to_owned).collect();

    // Random draws are made unconditionally so the same seed selects the same
    // products and attributes at every noise level.
    let u_trunc: f64 = rng.gen();
    let keep_front = rng.gen_bool(0.5);
    if u_trunc < noise && tokens.len() >= 2 {
        let keep = (tokens.len() - 1).min(4);
        if keep_front {
            tokens.truncate(keep);
        } else {
            tokens.drain(..tokens.len() - keep);
        }
    }

    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let u_syn: f64 = rng.gen();
        let u_edit: f64 = rng.gen();
        let syn_pick: usize = rng.gen_range(0..8);
        match synonyms(&tok) {
            Some(options) if u_syn < noise => out.push(options[syn_pick % options.len()].to_owned()),
            _ if u_edit < noise * 0.5 && tok.chars().count() >= 4 => out.push(corrupt_chars(&tok, rng)),
            _ => out.push(tok),
        }
    }

    let mut text = out.join(" ");
    let u_punct: f64 = rng.gen();
    if u_punct < noise * 0.5 {
        text.push_str("??");
    }
    text
}

/// Generates `(products, queries)`; identical configs give identical output.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<(Vec<Product>, Vec<UserQueryRecord>)> {
    if config.num_products == 0 {
        return Err(Error::InvalidConfig("num_products must be >= 1".into()));
    }
    if config.pairs_per_product < 2 {
        return Err(Error::InvalidConfig("pairs_per_product must be >= 2".into()));
    }
    if !(0.0..=1.0).contains(&config.noise_level) {
        return Err(Error::InvalidConfig(format!("noise_level {} outside [0, 1]", config.noise_level)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut products = Vec::with_capacity(config.num_products);
    // per product: (attribute index, slots) for each pair
    let mut pair_meta: Vec<Vec<(usize, Slots)>> = Vec::with_capacity(config.num_products);

    for p in 0..config.num_products {
        let item = ITEMS[rng.gen_range(0..ITEMS.len())];
        let brand = BRANDS[rng.gen_range(0..BRANDS.len())];
        let product_id = format!("p{p:04}");

        let mut attrs: Vec<usize> = Vec::with_capacity(config.pairs_per_product);
        while attrs.len() < config.pairs_per_product {
            let mut round: Vec<usize> = (0..ATTRIBUTES.len()).collect();
            round.shuffle(&mut rng);
            let need = config.pairs_per_product - attrs.len();
            attrs.extend(round.into_iter().take(need));
        }

        let mut pairs = Vec::with_capacity(attrs.len());
        let mut meta = Vec::with_capacity(attrs.len());
        for (j, &a) in attrs.iter().enumerate() {
            let attr = &ATTRIBUTES[a];
            let slots = draw_slots(attr, item, &mut rng);
            let q = attr.questions.choose(&mut rng).expect("templates");
            let ans = attr.answers.choose(&mut rng).expect("templates");
            pairs.push(CqaPair {
                qa_id: format!("{product_id}-q{j:02}"),
                question: fill(q, &slots),
                answer: fill(ans, &slots),
            });
            meta.push((a, slots));
        }
        products.push(Product {
            product_id,
            title: Some(format!("{brand} {item}")),
            pairs,
        });
        pair_meta.push(meta);
    }

    let mut queries = Vec::with_capacity(config.num_queries);
    for qi in 0..config.num_queries {
        let p = rng.gen_range(0..products.len());
        let product = &products[p];
        let j = rng.gen_range(0..product.pairs.len());
        let (attr_idx, slots) = &pair_meta[p][j];
        let attr = &ATTRIBUTES[*attr_idx];
        let clean = fill(attr.queries.choose(&mut rng).expect("templates"), slots);
        let text = make_query(&clean, config.noise_level, &mut rng);
        let labels: BTreeMap<String, Relevance> = product
            .pairs
            .iter()
            .zip(&pair_meta[p])
            .map(|(pair, (a, _))| {
                let r = if a == attr_idx {
                    Relevance::Relevant
                } else {
                    Relevance::Irrelevant
                };
                (pair.qa_id.clone(), r)
            })
            .collect();
        queries.push(UserQueryRecord {
            query_id: format!("u{qi:05}"),
            product_id: product.product_id.clone(),
            query_text: text,
            teacher_qa_id: None,
            relevance_labels: Some(labels),
        });
    }
    Ok((products, queries))
}
