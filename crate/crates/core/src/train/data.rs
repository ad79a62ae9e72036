use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::textpipe::NumericalizedCorpus;

/// Concatenates all streams, shuffling document order first when `rng` is given.
pub fn lm_stream(corpus: &NumericalizedCorpus, rng: Option<&mut Rng>) -> Vec<u32> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    if let Some(rng) = rng {
        rng.shuffle(&mut order);
    }
    order.iter().flat_map(|&i| corpus.streams[i].iter().copied()).collect()
}

/// Splits `stream` into `batch_size` contiguous rows of equal length, dropping
/// the remainder. The batch shrinks when the stream is too short to give every
/// row at least two tokens.
pub fn batchify(stream: &[u32], batch_size: usize) -> Result<Vec<Vec<u32>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if stream.len() < 2 {
        return Err(Error::invalid("corpus has fewer than two tokens"));
    }
    let b = batch_size.min(stream.len() / 2);
    let len = stream.len() / b;
    Ok((0..b).map(|r| stream[r * len..(r + 1) * len].to_vec()).collect())
}

/// One truncated-BPTT window: inputs and next-token targets, `batch × steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmWindow {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

/// Consecutive windows of at most `bptt` steps over batchified rows.
pub fn lm_windows(rows: &[Vec<u32>], bptt: usize) -> Result<Vec<LmWindow>> {
    if bptt == 0 {
        return Err(Error::invalid("bptt length must be at least 1"));
    }
    let len = rows.first().map_or(0, Vec::len);
    if len < 2 || rows.iter().any(|r| r.len() != len) {
        return Err(Error::invalid("rows must share a length of at least 2"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < len {
        let steps = bptt.min(len - 1 - start);
        out.push(LmWindow {
            inputs: rows.iter().map(|r| r[start..start + steps].to_vec()).collect(),
            targets: rows.iter().map(|r| r[start + 1..start + 1 + steps].to_vec()).collect(),
        });
        start += steps;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::SplitTag;

    #[test]
    fn batchify_is_contiguous() {
        let s: Vec<u32> = (0..23).collect();
        let rows = batchify(&s, 4).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], (5..10).collect::<Vec<_>>());
        assert_eq!(batchify(&s[..6], 128).unwrap().len(), 3);
        assert!(batchify(&s[..1], 4).is_err());
    }

    #[test]
    fn windows_cover_every_target_once() {
        let rows = vec![(0..12).collect::<Vec<u32>>(), (100..112).collect()];
        let w = lm_windows(&rows, 5).unwrap();
        assert_eq!(w.iter().map(|x| x.inputs[0].len()).collect::<Vec<_>>(), vec![5, 5, 1]);
        let targets: Vec<u32> = w.iter().flat_map(|x| x.targets[1].clone()).collect();
        assert_eq!(targets, (101..112).collect::<Vec<_>>());
        for x in &w {
            for (i, t) in x.inputs.iter().zip(&x.targets) {
                assert!(i.iter().zip(t).all(|(a, b)| b - a == 1));
            }
        }
    }

    #[test]
    fn shuffled_stream_is_permutation_of_documents() {
        let c = NumericalizedCorpus::unlabeled(vec![vec![1, 2], vec![3], vec![4, 5, 6]], SplitTag::Train);
        let mut rng = Rng::new(3);
        let mut s = lm_stream(&c, Some(&mut rng));
        assert_eq!(s.len(), 6);
        s.sort();
        assert_eq!(s, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(lm_stream(&c, None), vec![1, 2, 3, 4, 5, 6]);
    }
}
