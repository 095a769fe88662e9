use crate::numerics::Tensor;

/// Per-position argmax over the amino-acid logits, ties to the lower index.
/// Motif positions keep their input residue.
pub fn greedy_decode(logits: &Tensor, residues: &[Option<usize>]) -> Vec<usize> {
    residues
        .iter()
        .enumerate()
        .map(|(i, r)| match *r {
            Some(a) => a,
            None => {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            }
        })
        .collect()
}
