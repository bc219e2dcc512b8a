use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Corpus, LanguageModel, MeasurementModel};
use crate::rng::WatermarkRng;
use crate::semantics::{GreenList, SemanticKey};
use crate::vocab::TokenId;
use crate::watermark::{generate_with_semantics, kgw_generate, kgw_green_list, KgwParams, KgwScheme, Semantics, WatermarkParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpoofConfig {
    /// Number of attacker queries.
    pub generations: usize,
    /// Size `C` of the common-token pool.
    pub pool: usize,
    /// Size `H` of the inferred green set.
    pub top: usize,
    /// Tokens per query.
    pub length: usize,
    pub seed: u64,
}

impl Default for SpoofConfig {
    fn default() -> Self {
        Self {
            generations: 5000,
            pool: 181,
            top: 50,
            length: 200,
            seed: 0,
        }
    }
}

impl SpoofConfig {
    pub fn validate(&self) -> Result<()> {
        if self.generations == 0 || self.top == 0 || self.top > self.pool || self.length == 0 {
            return Err(Error::invalid("spoofing needs generations >= 1, length >= 1 and 1 <= H <= C"));
        }
        Ok(())
    }
}

/// Something the attacker can query repeatedly.
pub trait SpoofTarget: Sync {
    fn vocab_size(&self) -> usize;

    /// One watermarked generation of `length` tokens.
    fn query(&self, index: usize, length: usize, rng: &mut WatermarkRng) -> Result<Vec<TokenId>>;

    /// The green list the attacker is trying to recover.
    fn green_set(&self) -> GreenList;

    /// The tokens whose frequencies the attacker counts.
    fn observed(&self, text: &[TokenId]) -> Vec<TokenId> {
        text.to_vec()
    }
}

/// KGW-0, or KGW-1 analysed after one fixed prefix token.
pub struct KgwTarget<'a> {
    pub lm: &'a dyn LanguageModel,
    pub params: KgwParams,
    pub prompts: &'a [Vec<TokenId>],
    /// The prefix token whose successors are counted under KGW-1.
    pub prefix: TokenId,
}

impl SpoofTarget for KgwTarget<'_> {
    fn vocab_size(&self) -> usize {
        self.lm.vocab_size()
    }

    fn query(&self, index: usize, length: usize, rng: &mut WatermarkRng) -> Result<Vec<TokenId>> {
        let kp = KgwParams {
            max_tokens: length,
            ..self.params.clone()
        };
        kgw_generate(self.lm, prompt(self.prompts, index), &kp, rng)
    }

    fn green_set(&self) -> GreenList {
        kgw_green_list(&self.params, self.lm.vocab_size(), Some(self.prefix))
    }

    fn observed(&self, text: &[TokenId]) -> Vec<TokenId> {
        match self.params.scheme {
            KgwScheme::Kgw0 => text.to_vec(),
            KgwScheme::Kgw1 => text.windows(2).filter(|w| w[0] == self.prefix).map(|w| w[1]).collect(),
        }
    }
}

/// The adaptive scheme. With `fixed_embedding` set every query keys steps
/// `t > M` on that embedding (the strengthened attack), and also steps
/// `t <= M` when `pin_opening` is set; the target is that embedding's green
/// list. Otherwise the target is the opening sentence's green list and
/// semantics run free.
pub struct AdaptiveTarget<'a> {
    pub lm: &'a dyn LanguageModel,
    pub mm: &'a dyn MeasurementModel,
    pub key: &'a SemanticKey,
    pub params: WatermarkParams,
    pub prompts: &'a [Vec<TokenId>],
    pub fixed_embedding: Option<Vec<f64>>,
    pub pin_opening: bool,
}

impl SpoofTarget for AdaptiveTarget<'_> {
    fn vocab_size(&self) -> usize {
        self.key.vocab_size()
    }

    fn query(&self, index: usize, length: usize, rng: &mut WatermarkRng) -> Result<Vec<TokenId>> {
        let wp = WatermarkParams {
            max_tokens: length,
            ..self.params.clone()
        };
        let semantics = match (&self.fixed_embedding, self.pin_opening) {
            (Some(u), false) => Semantics::Fixed(u),
            (Some(u), true) => Semantics::FixedAll(u),
            (None, _) => Semantics::Free,
        };
        let trace = generate_with_semantics(self.lm, self.mm, self.key, prompt(self.prompts, index), &wp, semantics, rng)?;
        Ok(trace.tokens())
    }

    fn green_set(&self) -> GreenList {
        match &self.fixed_embedding {
            Some(u) => self.key.green_list_for_embedding(u),
            None => self.key.green_list(&self.params.opening),
        }
    }
}

fn prompt(prompts: &[Vec<TokenId>], index: usize) -> &[TokenId] {
    if prompts.is_empty() {
        &[]
    } else {
        &prompts[index % prompts.len()]
    }
}

/// The `n` most frequent tokens of `corpus`, most frequent first (lower id on ties).
pub fn common_tokens(corpus: &Corpus, vocab_size: usize, n: usize) -> Vec<TokenId> {
    let mut counts = vec![0u64; vocab_size];
    for &t in corpus.documents.iter().flat_map(|d| &d.ids) {
        if let Some(c) = counts.get_mut(t as usize) {
            *c += 1;
        }
    }
    let mut ids: Vec<usize> = (0..vocab_size).filter(|&i| counts[i] > 0).collect();
    ids.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    ids.truncate(n);
    ids.into_iter().map(|i| i as TokenId).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoofReport {
    /// The top-`H` pool tokens by observed frequency.
    pub inferred: Vec<TokenId>,
    /// `|H ∩ G| / |H|`.
    pub decryption_rate: f64,
    /// Effective `C` after dropping unobserved pool tokens.
    pub pool_size: usize,
    /// Fraction of the effective pool that is truly green.
    pub pool_green_fraction: f64,
    /// Mean count of green pool tokens minus mean count of red ones, over the
    /// mean count of the whole pool.
    pub frequency_gap: f64,
    pub counted_tokens: u64,
}

/// Frequency-analysis spoofing: count pool tokens over many queries and
/// guess that the `H` most frequent ones are green.
pub fn spoof_attack(target: &dyn SpoofTarget, pool: &[TokenId], sc: &SpoofConfig) -> Result<SpoofReport> {
    sc.validate()?;
    let v = target.vocab_size();
    if pool.is_empty() {
        return Err(Error::invalid("empty common-token pool"));
    }
    if let Some(&id) = pool.iter().find(|&&id| id as usize >= v) {
        return Err(Error::TokenOutOfRange { id: id as usize, size: v });
    }
    let mut slot = vec![usize::MAX; v];
    for (i, &t) in pool.iter().enumerate() {
        slot[t as usize] = i;
    }

    let per_query: Vec<Vec<u64>> = (0..sc.generations)
        .into_par_iter()
        .map(|i| {
            let mut rng = WatermarkRng::derived(sc.seed, &format!("spoof:{i}"));
            let text = target.query(i, sc.length, &mut rng)?;
            let mut counts = vec![0u64; pool.len()];
            for t in target.observed(&text) {
                if let Some(c) = counts.get_mut(slot[t as usize]) {
                    *c += 1;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; pool.len()];
    for q in &per_query {
        for (c, x) in counts.iter_mut().zip(q) {
            *c += x;
        }
    }

    let mut observed: Vec<usize> = (0..pool.len()).filter(|&i| counts[i] > 0).collect();
    if observed.len() < pool.len() {
        log::warn!("only {} of {} pool tokens observed; shrinking the pool", observed.len(), pool.len());
    }
    if observed.is_empty() {
        return Err(Error::invalid("no pool token was observed"));
    }
    let green = target.green_set();
    observed.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(pool[a].cmp(&pool[b])));
    let top = sc.top.min(observed.len());
    let inferred: Vec<TokenId> = observed[..top].iter().map(|&i| pool[i]).collect();
    let hits = inferred.iter().filter(|&&t| green.contains(t)).count();

    let (mut g_sum, mut g_n, mut r_sum, mut r_n) = (0u64, 0usize, 0u64, 0usize);
    for &i in &observed {
        if green.contains(pool[i]) {
            g_sum += counts[i];
            g_n += 1;
        } else {
            r_sum += counts[i];
            r_n += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let mean_all = total as f64 / observed.len() as f64;
    let frequency_gap = if g_n > 0 && r_n > 0 {
        (g_sum as f64 / g_n as f64 - r_sum as f64 / r_n as f64) / mean_all
    } else {
        0.0
    };
    Ok(SpoofReport {
        inferred,
        decryption_rate: hits as f64 / top as f64,
        pool_size: observed.len(),
        pool_green_fraction: g_n as f64 / observed.len() as f64,
        frequency_gap,
        counted_tokens: total,
    })
}
