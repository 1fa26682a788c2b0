//! Seeded synthetic corpora with planted relevance.
//!
//! Every dataset has its own topic anchors. A page draws a topic and a few
//! page-specific "fact" vectors; most tokens are noisy copies of the topic
//! anchor, and each fact fills a horizontal band of the grid (or a share of
//! one tile). A query mixes tokens near its target page's facts with tokens
//! near the topic, so exactly one page is relevant and same-topic pages act
//! as hard distractors. Pages and queries are derived from independent
//! per-item RNG streams, so any page can be regenerated on its own and the
//! output is identical regardless of generation order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_normalize, Matrix};
use crate::model::{Dtype, GridLayout, RawModelOutput};
use crate::scoring::QueryEmbedding;

use super::trec::QrelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_datasets: usize,
    /// Pages per dataset.
    pub n_pages: usize,
    /// Queries per dataset (at most `n_pages`).
    pub n_queries: usize,
    pub d: usize,
    /// Layout of each page's visual tokens.
    pub layout: GridLayout,
    pub n_topics: usize,
    /// Perturbation of fact and query tokens.
    pub noise: f64,
    /// Perturbation of background (topic) tokens.
    pub background_noise: f64,
    pub facts_per_page: usize,
    /// Fraction of a grid row covered by a fact band.
    pub fact_width: f64,
    pub query_tokens: usize,
    /// How many of the query tokens point at the topic instead of a fact.
    pub topic_tokens: usize,
    pub prefix_nonvisual: usize,
    pub suffix_nonvisual: usize,
    /// Each page gets between 0 and this many trailing zero rows.
    pub max_padding: usize,
    pub emit_mask: bool,
    /// Unit-normalize every token.
    pub normalize: bool,
    pub dtype: Dtype,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_datasets: 1,
            n_pages: 200,
            n_queries: 50,
            d: 128,
            layout: GridLayout::FixedGrid {
                height: 32,
                width: 32,
            },
            n_topics: 16,
            noise: 3.0,
            background_noise: 1.0,
            facts_per_page: 4,
            fact_width: 0.5,
            query_tokens: 10,
            topic_tokens: 3,
            prefix_nonvisual: 0,
            suffix_nonvisual: 0,
            max_padding: 0,
            emit_mask: false,
            normalize: true,
            dtype: Dtype::F32,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_datasets == 0 || self.n_pages == 0 || self.d == 0 {
            return bad("n_datasets, n_pages and d must be positive");
        }
        if self.n_queries > self.n_pages {
            return bad("n_queries must not exceed n_pages");
        }
        if self.n_topics == 0 || self.facts_per_page == 0 {
            return bad("n_topics and facts_per_page must be positive");
        }
        if self.query_tokens == 0 || self.topic_tokens >= self.query_tokens {
            return bad("need at least one fact token per query");
        }
        if self.layout.token_count() == 0 {
            return bad("layout has no tokens");
        }
        if !(self.noise >= 0.0 && self.background_noise >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if !(self.fact_width > 0.0 && self.fact_width <= 1.0) {
            return bad("fact_width must lie in (0, 1]");
        }
        Ok(())
    }
}

const STREAM_PAGE: u64 = 1;
const STREAM_QUERY: u64 = 2;
const STREAM_ANCHOR: u64 = 3;
const STREAM_SPECIAL: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream(seed: u64, dataset: usize, kind: u64, item: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [dataset as u64, kind, item as u64] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Deterministic corpus generator; see the module docs.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    spec: SyntheticSpec,
    /// `[dataset][topic]` anchor directions.
    anchors: Vec<Vec<Vec<f32>>>,
    special: Vec<f32>,
}

impl SyntheticCorpus {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let anchors = (0..spec.n_datasets)
            .map(|ds| {
                let mut rng = stream(spec.seed, ds, STREAM_ANCHOR, 0);
                (0..spec.n_topics)
                    .map(|_| unit_vector(&mut rng, spec.d))
                    .collect()
            })
            .collect();
        let special = unit_vector(&mut stream(spec.seed, 0, STREAM_SPECIAL, 0), spec.d);
        Ok(Self {
            spec,
            anchors,
            special,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn dataset_id(&self, dataset: usize) -> String {
        format!("ds{dataset}")
    }

    pub fn page_id(&self, page: usize) -> String {
        format!("p{page:05}")
    }

    pub fn query_id(&self, dataset: usize, query: usize) -> String {
        format!("{}-q{query:05}", self.dataset_id(dataset))
    }

    /// Page targeted by query `query`.
    pub fn target_page(&self, query: usize) -> usize {
        query * self.spec.n_pages / self.spec.n_queries.max(1)
    }

    fn page_plan(&self, dataset: usize, page: usize) -> (ChaCha8Rng, usize, Vec<Vec<f32>>) {
        let mut rng = stream(self.spec.seed, dataset, STREAM_PAGE, page);
        let topic = rng.random_range(0..self.spec.n_topics);
        let facts = (0..self.spec.facts_per_page)
            .map(|_| unit_vector(&mut rng, self.spec.d))
            .collect();
        (rng, topic, facts)
    }

    /// Raw encoder-style output for one page, including any planted
    /// non-visual tokens and padding.
    pub fn page(&self, dataset: usize, page: usize) -> RawModelOutput {
        let s = &self.spec;
        let d = s.d;
        let (mut rng, topic, facts) = self.page_plan(dataset, page);
        let anchor = &self.anchors[dataset][topic];
        let visual = s.layout.token_count();
        let mut owner: Vec<Option<usize>> = vec![None; visual];
        for (j, cells) in fact_cells(&s.layout, s.facts_per_page, s.fact_width, &mut rng)
            .into_iter()
            .enumerate()
        {
            for c in cells {
                owner[c] = Some(j);
            }
        }
        let padding = if s.max_padding > 0 {
            rng.random_range(0..=s.max_padding)
        } else {
            0
        };
        let total = s.prefix_nonvisual + visual + s.suffix_nonvisual + padding;
        let mut data = Vec::with_capacity(total * d);
        let special = |rng: &mut ChaCha8Rng, data: &mut Vec<f32>| {
            data.extend(noisy(rng, &self.special, 0.1, s.normalize));
        };
        for _ in 0..s.prefix_nonvisual {
            special(&mut rng, &mut data);
        }
        for o in &owner {
            let tok = match o {
                Some(j) => noisy(&mut rng, &facts[*j], s.noise, s.normalize),
                None => noisy(&mut rng, anchor, s.background_noise, s.normalize),
            };
            data.extend(tok);
        }
        for _ in 0..s.suffix_nonvisual {
            special(&mut rng, &mut data);
        }
        data.resize(total * d, 0.0);
        let visual_mask = s.emit_mask.then(|| {
            let mut m = vec![false; total];
            m[s.prefix_nonvisual..s.prefix_nonvisual + visual]
                .iter_mut()
                .for_each(|b| *b = true);
            m
        });
        let mut vectors = Matrix::from_vec(total, d, data).expect("finite synthetic tokens");
        if s.dtype == Dtype::F16 {
            vectors = crate::matrix::Matrix16::from_f32(&vectors).to_f32();
        }
        RawModelOutput {
            page_id: self.page_id(page),
            dataset_id: self.dataset_id(dataset),
            layout: s.layout,
            vectors,
            visual_mask,
            dtype: s.dtype,
        }
    }

    pub fn query(&self, dataset: usize, query: usize) -> QueryEmbedding {
        let s = &self.spec;
        let target = self.target_page(query);
        let (_, topic, facts) = self.page_plan(dataset, target);
        let anchor = &self.anchors[dataset][topic];
        let mut rng = stream(s.seed, dataset, STREAM_QUERY, query);
        let mut data = Vec::with_capacity(s.query_tokens * s.d);
        for t in 0..s.query_tokens {
            let tok = if t < s.topic_tokens {
                noisy(&mut rng, anchor, s.noise, s.normalize)
            } else {
                noisy(&mut rng, &facts[(t - s.topic_tokens) % facts.len()], s.noise, s.normalize)
            };
            data.extend(tok);
        }
        let tokens = Matrix::from_vec(s.query_tokens, s.d, data).expect("finite synthetic tokens");
        QueryEmbedding::new(self.query_id(dataset, query), tokens)
            .expect("query has tokens")
            .with_dataset(self.dataset_id(dataset))
    }

    /// Every query of every dataset, dataset-major.
    pub fn queries(&self) -> Vec<QueryEmbedding> {
        (0..self.spec.n_datasets)
            .flat_map(|ds| (0..self.spec.n_queries).map(move |q| (ds, q)))
            .map(|(ds, q)| self.query(ds, q))
            .collect()
    }

    /// One relevant page (grade 1) per query, by dataset-local page id.
    pub fn qrels(&self) -> QrelSet {
        let mut out = QrelSet::default();
        for ds in 0..self.spec.n_datasets {
            for q in 0..self.spec.n_queries {
                out.insert(self.query_id(ds, q), self.page_id(self.target_page(q)), 1);
            }
        }
        out
    }

    /// Queries as raw outputs for an embedding bundle (`H = Q`, `W = 1`).
    pub fn query_bundle(&self) -> Vec<RawModelOutput> {
        self.queries()
            .into_iter()
            .map(|q| RawModelOutput {
                page_id: q.query_id,
                dataset_id: q.dataset_id,
                layout: GridLayout::FixedGrid {
                    height: q.tokens.rows(),
                    width: 1,
                },
                vectors: q.tokens,
                visual_mask: None,
                dtype: Dtype::F32,
            })
            .collect()
    }
}

/// Token indices covered by each fact.
fn fact_cells(layout: &GridLayout, n_facts: usize, width: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let band = |rng: &mut ChaCha8Rng, h: usize, w: usize| -> Vec<Vec<usize>> {
        let span = ((w as f64 * width).ceil() as usize).clamp(1, w);
        let h0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..=w - span);
        (0..n_facts)
            .map(|j| {
                let row = (h0 + j) % h;
                (c0..c0 + span).map(|c| row * w + c).collect()
            })
            .collect()
    };
    match *layout {
        GridLayout::FixedGrid { height, width: w } => band(rng, height, w),
        GridLayout::MergedGrid { h_eff, w_eff } => band(rng, h_eff, w_eff),
        GridLayout::TileGrid {
            n_rows,
            n_cols,
            patches_per_tile: p,
            has_global_tile,
        } => {
            let tiles = n_rows * n_cols;
            let tile = if tiles > 0 { rng.random_range(0..tiles) } else { 0 };
            let share = (p / n_facts).max(1);
            (0..n_facts)
                .map(|j| {
                    let mut cells: Vec<usize> = (0..share)
                        .map(|k| tile * p + (j * share + k) % p)
                        .collect();
                    if has_global_tile {
                        cells.push(tiles * p + j % p);
                    }
                    cells
                })
                .collect()
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    l2_normalize(&mut v);
    v
}

/// `base + noise * z` with `z ~ N(0, I/d)`, optionally unit-normalized.
fn noisy(rng: &mut ChaCha8Rng, base: &[f32], noise: f64, normalize: bool) -> Vec<f32> {
    let scale = (noise / (base.len() as f64).sqrt()) as f32;
    let mut v: Vec<f32> = base
        .iter()
        .map(|&b| b + scale * rng.sample::<f32, _>(StandardNormal))
        .collect();
    if normalize {
        l2_normalize(&mut v);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_pages: 12,
            n_queries: 4,
            d: 16,
            layout: GridLayout::FixedGrid {
                height: 4,
                width: 4,
            },
            n_topics: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let a = SyntheticCorpus::new(small()).unwrap();
        let b = SyntheticCorpus::new(small()).unwrap();
        assert_eq!(a.page(0, 7), b.page(0, 7));
        assert_eq!(a.queries(), b.queries());
        let other = SyntheticCorpus::new(SyntheticSpec { seed: 9, ..small() }).unwrap();
        assert_ne!(a.page(0, 7).vectors, other.page(0, 7).vectors);
    }

    #[test]
    fn planted_nonvisual_tokens() {
        let spec = SyntheticSpec {
            prefix_nonvisual: 2,
            suffix_nonvisual: 3,
            max_padding: 5,
            emit_mask: true,
            ..small()
        };
        let c = SyntheticCorpus::new(spec).unwrap();
        for i in 0..12 {
            let p = c.page(0, i);
            let mask = p.visual_mask.as_ref().unwrap();
            assert_eq!(mask.iter().filter(|&&b| b).count(), 16);
            assert!(p.total_tokens() >= 21 && p.total_tokens() <= 26);
        }
    }

    #[test]
    fn tokens_are_unit() {
        let c = SyntheticCorpus::new(small()).unwrap();
        for row in c.page(0, 3).vectors.iter_rows() {
            let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn qrels_cover_queries() {
        let c = SyntheticCorpus::new(SyntheticSpec { n_datasets: 2, ..small() }).unwrap();
        let q = c.qrels();
        assert_eq!(q.len(), 8);
        assert_eq!(q.get("ds1-q00002").unwrap()["p00006"], 1);
        assert!(SyntheticCorpus::new(SyntheticSpec { n_queries: 13, ..small() }).is_err());
    }
}
