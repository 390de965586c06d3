//! Randomized metric instances compared against the set-based oracle.

use std::collections::BTreeSet;

use decoupled_rerank::retrieval::{p_at_n, pbt_at_n, ptb_at_n, ListSource, RankedList};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{hit, surfaces_beyond};

pub struct Instance {
    pub question_ids: Vec<String>,
    pub reranked: Vec<Vec<String>>,
    pub tfidf: Vec<Vec<String>>,
    pub relevant: Vec<BTreeSet<String>>,
    pub n: usize,
}

fn random_list(rng: &mut ChaCha8Rng, pool: &[String]) -> Vec<String> {
    let len = rng.gen_range(0..=pool.len());
    let mut docs = pool.to_vec();
    docs.shuffle(rng);
    docs.truncate(len);
    docs
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let questions = rng.gen_range(1..=6);
        let pool: Vec<String> = (0..rng.gen_range(1..=10)).map(|i| format!("d{i}")).collect();
        let mut inst = Instance {
            question_ids: (0..questions).map(|i| format!("q{i}")).collect(),
            reranked: vec![],
            tfidf: vec![],
            relevant: vec![],
            n: rng.gen_range(1..=pool.len() + 2),
        };
        for _ in 0..questions {
            inst.reranked.push(random_list(&mut rng, &pool));
            inst.tfidf.push(random_list(&mut rng, &pool));
            inst.relevant
                .push(pool.iter().filter(|_| rng.gen_bool(0.25)).cloned().collect());
        }
        inst
    }

    fn lists(&self, docs: &[Vec<String>], source: ListSource) -> Vec<RankedList> {
        self.question_ids
            .iter()
            .zip(docs)
            .map(|(q, list)| {
                let n = list.len();
                // Strictly decreasing scores preserve the given order.
                let scored = list.iter().enumerate().map(|(i, d)| (d.clone(), (n - i) as f64)).collect();
                RankedList::from_scores(q.clone(), scored, source).unwrap()
            })
            .collect()
    }

    fn expected(&self, f: impl Fn(usize) -> bool) -> f64 {
        let hits = (0..self.question_ids.len()).filter(|&i| f(i)).count();
        hits as f64 / self.question_ids.len() as f64
    }

    /// Exact agreement of all three metrics with the oracle, plus the
    /// PBT/PTB role swap.
    pub fn check(&self) -> Result<(), String> {
        let rr = self.lists(&self.reranked, ListSource::Reranker);
        let tf = self.lists(&self.tfidf, ListSource::Tfidf);
        let qids = &self.question_ids;
        let judge = |q: &str, d: &str| {
            let i = qids.iter().position(|x| x == q).unwrap();
            self.relevant[i].contains(d)
        };
        let n = self.n;
        let p = p_at_n(&rr, qids, &judge, n).map_err(|e| e.to_string())?;
        let pbt = pbt_at_n(&rr, &tf, qids, &judge, n).map_err(|e| e.to_string())?;
        let ptb = ptb_at_n(&rr, &tf, qids, &judge, n).map_err(|e| e.to_string())?;
        let want_p = self.expected(|i| hit(&self.reranked[i], &self.relevant[i], n));
        let want_pbt = self.expected(|i| surfaces_beyond(&self.reranked[i], &self.tfidf[i], &self.relevant[i], n));
        let want_ptb = self.expected(|i| surfaces_beyond(&self.tfidf[i], &self.reranked[i], &self.relevant[i], n));
        if p != want_p || pbt != want_pbt || ptb != want_ptb {
            return Err(format!(
                "got P {p} PBT {pbt} PTB {ptb}, oracle P {want_p} PBT {want_pbt} PTB {want_ptb}"
            ));
        }
        let swapped_pbt = pbt_at_n(&tf, &rr, qids, &judge, n).map_err(|e| e.to_string())?;
        let swapped_ptb = ptb_at_n(&tf, &rr, qids, &judge, n).map_err(|e| e.to_string())?;
        if swapped_pbt != ptb || swapped_ptb != pbt {
            return Err(format!("role swap broke symmetry: {swapped_pbt} vs {ptb}, {swapped_ptb} vs {pbt}"));
        }
        Ok(())
    }
}
