//! The synthetic marketplace: categories, words with latent topic vectors,
//! bid keywords, ads with per-keyword prices, and a Zipf-weighted query
//! population. Persisted as a versioned line-oriented text file.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(CategoryId);
id_type!(WordId);
id_type!(KeywordId);
id_type!(AdId);
id_type!(QueryId);

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub surface: String,
    pub category: CategoryId,
    /// Unit-norm ground-truth topic vector (primary sense).
    pub topic: Vec<f32>,
    /// Second sense for polysemous words. Which sense a token realizes
    /// depends on its neighbor (see [`Universe::resolved_topics`]), which is
    /// what makes phrase meaning context-dependent rather than a plain
    /// bag-of-words mean.
    pub topic_alt: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyword {
    pub words: Vec<WordId>,
    pub category: CategoryId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ad {
    pub category: CategoryId,
    /// Bought keywords with bid prices, sorted by keyword id.
    pub bought: Vec<(KeywordId, f64)>,
    pub topic: Vec<f32>,
}

impl Ad {
    pub fn price(&self, keyword: KeywordId) -> Option<f64> {
        self.bought
            .binary_search_by_key(&keyword, |(k, _)| *k)
            .ok()
            .map(|i| self.bought[i].1)
    }

    pub fn buys(&self, keyword: KeywordId) -> bool {
        self.price(keyword).is_some()
    }

    /// The coarse per-ad bid the click-log serving policy ranks by.
    pub fn mean_bid(&self) -> f64 {
        self.bought.iter().map(|(_, p)| *p).sum::<f64>() / self.bought.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub words: Vec<WordId>,
    /// Parallel to `words`: true for filler words that carry no intent
    /// signal. The surface contains them; the ground-truth topic does not.
    pub filler: Vec<bool>,
    pub category: CategoryId,
    /// Unnormalized Zipf traffic weight.
    pub weight: f64,
    /// Held-out paraphrases never enter the click log; they only appear as
    /// live traffic in the A/B simulation.
    pub holdout: bool,
}

impl Query {
    pub fn content_words(&self) -> Vec<WordId> {
        self.words
            .iter()
            .zip(&self.filler)
            .filter(|(_, f)| !**f)
            .map(|(w, _)| *w)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub latent_dim: usize,
    pub n_categories: usize,
    /// Sharpness of the ground-truth click model.
    pub click_sharpness: f64,
    /// Softness of the legacy log serving policy (0 = exact argmax).
    pub serve_temperature: f64,
    /// Scale of the legacy policy's persistent per-query error in its
    /// propensity estimate (0 = the policy knows ground truth).
    pub policy_noise: f64,
    pub words: Vec<Word>,
    pub keywords: Vec<Keyword>,
    pub ads: Vec<Ad>,
    pub queries: Vec<Query>,
}

/// Which sense each token of a sequence realizes. Two signals combine: the
/// XOR parity of the adjacent word pair (distance 1, within reach of the
/// width-3 convolution stack) and, for tokens with three or more
/// predecessors, the parity of the word three back (beyond the convolution
/// stack's receptive field, so carrying it takes attention). A bag-of-words
/// mean captures neither; the leading token always reads in its primary
/// sense.
pub fn sense_flags(words: &[WordId]) -> Vec<bool> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if i == 0 {
                return false;
            }
            let local = (words[i - 1].0 ^ w.0) & 1 == 1;
            let long_range = i >= 3 && words[i - 3].0 & 1 == 1;
            local != long_range
        })
        .collect()
}

/// Per-token ground-truth topics with senses resolved in context.
pub fn resolved_topics<'a>(universe: &'a Universe, words: &[WordId]) -> Vec<&'a [f32]> {
    sense_flags(words)
        .into_iter()
        .zip(words)
        .map(|(alt, w)| {
            let word = &universe.words[w.index()];
            match (&word.topic_alt, alt) {
                (Some(alt_topic), true) => alt_topic.as_slice(),
                _ => word.topic.as_slice(),
            }
        })
        .collect()
}

fn normalized_mean_topic(universe: &Universe, words: &[WordId]) -> Vec<f64> {
    let g = universe.latent_dim;
    let mut mean = vec![0.0f64; g];
    for topic in resolved_topics(universe, words) {
        for (m, v) in mean.iter_mut().zip(topic) {
            *m += f64::from(*v);
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for m in &mut mean {
            *m /= norm;
        }
    }
    mean
}

pub fn cosine_f64(a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        num / (na.sqrt() * nb.sqrt())
    }
}

impl Universe {
    pub fn surface(&self, words: &[WordId]) -> String {
        words
            .iter()
            .map(|w| self.words[w.index()].surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn keyword_surface(&self, id: KeywordId) -> String {
        self.surface(&self.keywords[id.index()].words)
    }

    pub fn query_surface(&self, id: QueryId) -> String {
        self.surface(&self.queries[id.index()].words)
    }

    /// Ground-truth intent topic of a query: unit-normalized mean of its
    /// content word topics (fillers carry no intent).
    pub fn query_topic(&self, id: QueryId) -> Vec<f64> {
        let q = &self.queries[id.index()];
        let content = q.content_words();
        if content.is_empty() {
            normalized_mean_topic(self, &q.words)
        } else {
            normalized_mean_topic(self, &content)
        }
    }

    pub fn keyword_topic(&self, id: KeywordId) -> Vec<f64> {
        normalized_mean_topic(self, &self.keywords[id.index()].words)
    }

    pub fn ad_topic(&self, id: AdId) -> Vec<f64> {
        self.ads[id.index()].topic.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn keywords_of_category(&self, cat: CategoryId) -> Vec<KeywordId> {
        (0..self.keywords.len() as u32)
            .map(KeywordId)
            .filter(|k| self.keywords[k.index()].category == cat)
            .collect()
    }

    pub fn ads_of_category(&self, cat: CategoryId) -> Vec<AdId> {
        (0..self.ads.len() as u32)
            .map(AdId)
            .filter(|a| self.ads[a.index()].category == cat)
            .collect()
    }

    /// Number of ads bidding on each keyword, indexed by keyword id.
    pub fn bidder_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.keywords.len()];
        for ad in &self.ads {
            for (k, _) in &ad.bought {
                counts[k.index()] += 1;
            }
        }
        counts
    }

    /// Ads bidding each keyword with their prices, indexed by keyword id.
    pub fn bidders(&self) -> Vec<Vec<(AdId, f64)>> {
        let mut out = vec![Vec::new(); self.keywords.len()];
        for (i, ad) in self.ads.iter().enumerate() {
            for (k, p) in &ad.bought {
                out[k.index()].push((AdId(i as u32), *p));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let check_cat = |cat: CategoryId, what: &str| {
            if cat.index() >= self.n_categories {
                Err(Error::Format(format!("{what} references category {cat}")))
            } else {
                Ok(())
            }
        };
        for (i, word) in self.words.iter().enumerate() {
            check_cat(word.category, "word")?;
            let mut check_topic = |topic: &[f32], what: &str| {
                if topic.len() != self.latent_dim {
                    return Err(Error::Format(format!("word {i} {what} dim")));
                }
                let norm: f64 = topic.iter().map(|v| f64::from(*v) * f64::from(*v)).sum();
                if (norm.sqrt() - 1.0).abs() > 1e-4 {
                    return Err(Error::Format(format!("word {i} {what} not unit norm")));
                }
                Ok(())
            };
            check_topic(&word.topic, "topic")?;
            if let Some(alt) = &word.topic_alt {
                check_topic(alt, "alt topic")?;
            }
        }
        for (i, kw) in self.keywords.iter().enumerate() {
            check_cat(kw.category, "keyword")?;
            if kw.words.is_empty() {
                return Err(Error::Format(format!("keyword {i} empty")));
            }
            for w in &kw.words {
                if w.index() >= self.words.len() {
                    return Err(Error::Format(format!("keyword {i} word id {w}")));
                }
                if self.words[w.index()].category != kw.category {
                    return Err(Error::Format(format!("keyword {i} crosses categories")));
                }
            }
        }
        for (i, ad) in self.ads.iter().enumerate() {
            check_cat(ad.category, "ad")?;
            if ad.bought.is_empty() {
                return Err(Error::Format(format!("ad {i} buys no keywords")));
            }
            for (k, price) in &ad.bought {
                if k.index() >= self.keywords.len() {
                    return Err(Error::Format(format!("ad {i} keyword id {k}")));
                }
                if self.keywords[k.index()].category != ad.category {
                    return Err(Error::Format(format!("ad {i} buys outside its category")));
                }
                if !(*price > 0.0) {
                    return Err(Error::Format(format!("ad {i} non-positive price")));
                }
            }
            if ad.bought.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Format(format!("ad {i} keywords not sorted")));
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            check_cat(q.category, "query")?;
            if q.words.is_empty() {
                return Err(Error::Format(format!("query {i} empty")));
            }
            if q.filler.len() != q.words.len() {
                return Err(Error::Format(format!("query {i} filler mask length")));
            }
            for w in &q.words {
                if w.index() >= self.words.len() {
                    return Err(Error::Format(format!("query {i} word id {w}")));
                }
            }
            if !(q.weight > 0.0) {
                return Err(Error::Format(format!("query {i} non-positive weight")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "universe\t1\tg={}\tcategories={}\tclick_sharpness={}\tserve_temperature={}\tpolicy_noise={}\n",
            self.latent_dim,
            self.n_categories,
            self.click_sharpness,
            self.serve_temperature,
            self.policy_noise
        ));
        for (i, w) in self.words.iter().enumerate() {
            let topic = w
                .topic
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let alt = match &w.topic_alt {
                Some(t) => t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "word\t{i}\t{}\t{}\t{topic}\t{alt}\n",
                w.category, w.surface
            ));
        }
        for (i, k) in self.keywords.iter().enumerate() {
            let words = k
                .words
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("keyword\t{i}\t{}\t{words}\n", k.category));
        }
        for (i, a) in self.ads.iter().enumerate() {
            let topic = a
                .topic
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let bought = a
                .bought
                .iter()
                .map(|(k, p)| format!("{k}:{p}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!("ad\t{i}\t{}\t{topic}\t{bought}\n", a.category));
        }
        for (i, q) in self.queries.iter().enumerate() {
            let words = q
                .words
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let filler: String = q.filler.iter().map(|f| if *f { '1' } else { '0' }).collect();
            out.push_str(&format!(
                "query\t{i}\t{}\t{words}\t{filler}\t{}\t{}\n",
                q.category,
                q.weight,
                if q.holdout { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty universe file".into()))?;
        let hfields: Vec<&str> = header.split('\t').collect();
        if hfields.first() != Some(&"universe") {
            return Err(Error::Format("missing universe header".into()));
        }
        if hfields.get(1) != Some(&"1") {
            return Err(Error::Format(format!(
                "unsupported universe version {:?}",
                hfields.get(1)
            )));
        }
        let mut latent_dim = None;
        let mut n_categories = None;
        let mut click_sharpness = None;
        let mut serve_temperature = None;
        let mut policy_noise = None;
        for field in &hfields[2..] {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field {field}")))?;
            match key {
                "g" => latent_dim = Some(parse(value, "g")?),
                "categories" => n_categories = Some(parse(value, "categories")?),
                "click_sharpness" => click_sharpness = Some(parse(value, "click_sharpness")?),
                "serve_temperature" => serve_temperature = Some(parse(value, "serve_temperature")?),
                "policy_noise" => policy_noise = Some(parse(value, "policy_noise")?),
                other => return Err(Error::Format(format!("unknown header key {other}"))),
            }
        }
        let mut universe = Universe {
            latent_dim: latent_dim.ok_or_else(|| Error::Format("header missing g".into()))?,
            n_categories: n_categories
                .ok_or_else(|| Error::Format("header missing categories".into()))?,
            click_sharpness: click_sharpness
                .ok_or_else(|| Error::Format("header missing click_sharpness".into()))?,
            serve_temperature: serve_temperature
                .ok_or_else(|| Error::Format("header missing serve_temperature".into()))?,
            policy_noise: policy_noise
                .ok_or_else(|| Error::Format("header missing policy_noise".into()))?,
            words: Vec::new(),
            keywords: Vec::new(),
            ads: Vec::new(),
            queries: Vec::new(),
        };
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| Error::Format(format!("line {}: {msg}", lineno + 2));
            match fields.first() {
                Some(&"word") => {
                    if fields.len() != 6 {
                        return Err(bad("word record needs 6 fields"));
                    }
                    expect_index(fields[1], universe.words.len(), "word")?;
                    universe.words.push(Word {
                        category: CategoryId(parse(fields[2], "category")?),
                        surface: fields[3].to_string(),
                        topic: parse_list(fields[4], "topic")?,
                        topic_alt: if fields[5] == "-" {
                            None
                        } else {
                            Some(parse_list(fields[5], "alt topic")?)
                        },
                    });
                }
                Some(&"keyword") => {
                    if fields.len() != 4 {
                        return Err(bad("keyword record needs 4 fields"));
                    }
                    expect_index(fields[1], universe.keywords.len(), "keyword")?;
                    universe.keywords.push(Keyword {
                        category: CategoryId(parse(fields[2], "category")?),
                        words: parse_list::<u32>(fields[3], "words")?
                            .into_iter()
                            .map(WordId)
                            .collect(),
                    });
                }
                Some(&"ad") => {
                    if fields.len() != 5 {
                        return Err(bad("ad record needs 5 fields"));
                    }
                    expect_index(fields[1], universe.ads.len(), "ad")?;
                    let mut bought = Vec::new();
                    for pair in fields[4].split(';') {
                        let (k, p) = pair
                            .split_once(':')
                            .ok_or_else(|| bad("bad keyword:price pair"))?;
                        bought.push((KeywordId(parse(k, "keyword id")?), parse(p, "price")?));
                    }
                    universe.ads.push(Ad {
                        category: CategoryId(parse(fields[2], "category")?),
                        topic: parse_list(fields[3], "topic")?,
                        bought,
                    });
                }
                Some(&"query") => {
                    if fields.len() != 7 {
                        return Err(bad("query record needs 7 fields"));
                    }
                    expect_index(fields[1], universe.queries.len(), "query")?;
                    let filler: Vec<bool> = fields[4]
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            other => Err(bad(&format!("bad filler flag {other}"))),
                        })
                        .collect::<Result<_>>()?;
                    universe.queries.push(Query {
                        category: CategoryId(parse(fields[2], "category")?),
                        words: parse_list::<u32>(fields[3], "words")?
                            .into_iter()
                            .map(WordId)
                            .collect(),
                        filler,
                        weight: parse(fields[5], "weight")?,
                        holdout: match fields[6] {
                            "0" => false,
                            "1" => true,
                            other => return Err(bad(&format!("bad holdout flag {other}"))),
                        },
                    });
                }
                Some(other) => return Err(bad(&format!("unknown record type {other}"))),
                None => return Err(bad("empty line")),
            }
        }
        universe.validate()?;
        Ok(universe)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// FNV-1a hash of the serialized form; stored in checkpoints so that
    /// evaluation can detect a universe/checkpoint mismatch.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse {what} from {s:?}")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',').map(|part| parse(part, what)).collect()
}

fn expect_index(field: &str, expected: usize, what: &str) -> Result<()> {
    let got: usize = parse(field, "record id")?;
    if got != expected {
        return Err(Error::Format(format!(
            "{what} records out of order: got {got}, expected {expected}"
        )));
    }
    Ok(())
}
