use crate::hashing::hashed_vector;

pub const EMBED_DIM: usize = 64;
const TRIGRAM_DIM: usize = 32;
const TOKEN_DIM: usize = 32;
const TRIGRAM_WEIGHT: f64 = 0.15;
const TRIGRAM_SALT: u64 = 0x7419;
const TOKEN_SALT: u64 = 0x51ab;

/// Synonym groups; each occupies one fixed dimension of the token block.
const CONCEPTS: &[&[&str]] = &[
    &[
        "on",
        "top",
        "atop",
        "upon",
        "supported",
        "support",
        "resting",
        "standing",
        "sitting",
    ],
    &["in", "inside", "within", "into", "stored", "contained", "enclosed"],
    &["near", "next", "beside", "adjacent", "close", "nearby"],
    &["above", "over"],
    &["below", "under", "beneath", "underneath"],
    &["attached", "mounted", "fixed", "hanging", "affixed"],
    &["facing", "looking", "oriented", "toward", "pointing"],
    &["front"],
    &["behind"],
    &["touching", "contact", "leaning", "against", "holding", "carrying"],
    &["used", "belongs", "belong", "owned", "part", "task"],
];

const STOPWORDS: &[&str] = &["of", "to", "by", "with", "from", "at", "for", "and"];

/// Prepositions that act as particles after another concept word
/// ("mounted on", "stored in").
const PARTICLES: &[&str] = &["on", "in"];

/// `in` before these words is part of a fixed expression, not containment.
const IN_EXPRESSIONS: &[&str] = &["front", "contact"];

fn concept_of(token: &str) -> Option<usize> {
    CONCEPTS.iter().position(|g| g.contains(&token))
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn token_block(normalized: &str) -> Vec<f64> {
    let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    let mut v = vec![0.0; TOKEN_DIM];
    let free = TOKEN_DIM - CONCEPTS.len();
    for (k, t) in tokens.iter().enumerate() {
        if STOPWORDS.contains(t) {
            continue;
        }
        if *t == "in" && tokens.get(k + 1).is_some_and(|n| IN_EXPRESSIONS.contains(n)) {
            continue;
        }
        let after_concept = k > 0 && concept_of(tokens[k - 1]).is_some();
        if after_concept && PARTICLES.contains(t) {
            continue;
        }
        match concept_of(t) {
            Some(c) => v[c] += 1.0,
            None => {
                // Unknown words hash into the dimensions no concept uses.
                let h = hashed_vector(TOKEN_SALT, free, [*t]);
                for (d, x) in h.iter().enumerate() {
                    v[CONCEPTS.len() + d] += x;
                }
            }
        }
    }
    unit(v)
}

fn trigram_block(normalized: &str) -> Vec<f64> {
    let padded: Vec<char> = format!("#{normalized}#").chars().collect();
    let grams: Vec<String> = padded.windows(3).map(|w| w.iter().collect()).collect();
    hashed_vector(TRIGRAM_SALT, TRIGRAM_DIM, grams.iter().map(String::as_str))
}

/// Deterministic 64-dim phrase embedding: a character-trigram block and a
/// token block with synonyms folded together, weighted 0.15 / 0.85 in
/// squared norm and L2-normalized as a whole.
pub fn embed_phrase(normalized: &str) -> Vec<f64> {
    let tri = trigram_block(normalized);
    let tok = token_block(normalized);
    let (wt, wk) = (TRIGRAM_WEIGHT.sqrt(), (1.0 - TRIGRAM_WEIGHT).sqrt());
    let v: Vec<f64> = tri.iter().map(|x| x * wt).chain(tok.iter().map(|x| x * wk)).collect();
    let v = unit(v);
    if v.iter().all(|x| *x == 0.0) {
        // Only reachable for the empty string.
        let mut e = vec![0.0; EMBED_DIM];
        e[0] = 1.0;
        return e;
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
