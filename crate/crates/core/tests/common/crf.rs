use handover_ie::crf::Scores;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Every label sequence of length `len` over `k` labels.
pub fn all_paths(len: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn random_scores(rng: &mut ChaCha8Rng, integer: bool) -> Scores {
    let len = rng.gen_range(1..=5);
    let k = rng.gen_range(1..=4);
    let mut s = Scores::zeros(len, k);
    let draw = |rng: &mut ChaCha8Rng| {
        if integer {
            rng.gen_range(-2..=2) as f64
        } else {
            rng.gen_range(-3.0..3.0)
        }
    };
    for v in s.unary.data_mut() {
        *v = draw(rng);
    }
    for v in s.transition.data_mut() {
        *v = draw(rng);
    }
    s
}
