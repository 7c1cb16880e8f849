use std::collections::HashMap;

/// A symmetric text similarity in `[0, 1]`.
pub trait SimilarityStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, a: &str, b: &str) -> f64;
}

/// Cosine over character 3-gram count vectors. Strings shorter than three
/// characters form a single gram.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramCosine;

fn grams(text: &str) -> HashMap<&str, u32> {
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let n = bounds.len() - 1;
    let mut out = HashMap::new();
    if n == 0 {
        return out;
    }
    if n < 3 {
        out.insert(text, 1);
        return out;
    }
    for i in 0..=n - 3 {
        *out.entry(&text[bounds[i]..bounds[i + 3]]).or_insert(0) += 1;
    }
    out
}

impl SimilarityStrategy for TrigramCosine {
    fn name(&self) -> &'static str {
        "trigram_cosine"
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 1.0;
        }
        let (ga, gb) = (grams(a), grams(b));
        if ga.is_empty() || gb.is_empty() {
            return 0.0;
        }
        let norm = |g: &HashMap<&str, u32>| g.values().map(|&c| f64::from(c).powi(2)).sum::<f64>().sqrt();
        let (small, large) = if ga.len() <= gb.len() { (&ga, &gb) } else { (&gb, &ga) };
        let dot: f64 = small
            .iter()
            .filter_map(|(g, &c)| large.get(g).map(|&d| f64::from(c) * f64::from(d)))
            .sum();
        (dot / (norm(&ga) * norm(&gb))).clamp(0.0, 1.0)
    }
}

/// Default strategy by name.
pub fn strategy_by_name(name: &str) -> Option<Box<dyn SimilarityStrategy>> {
    match name {
        "trigram_cosine" => Some(Box::new(TrigramCosine)),
        _ => None,
    }
}
