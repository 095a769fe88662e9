//! The 20 standard amino acids, in one-letter alphabetical order. The index
//! of a residue here is its row in the amino-acid embedding table.

pub const ALPHABET_SIZE: usize = 20;

pub const ONE_LETTER: [char; ALPHABET_SIZE] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W',
    'Y',
];

pub const THREE_LETTER: [&str; ALPHABET_SIZE] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR",
];

/// Index of a one-letter code, case-insensitive.
pub fn index_of(c: char) -> Option<usize> {
    let upper = c.to_ascii_uppercase();
    ONE_LETTER.iter().position(|&a| a == upper)
}

pub fn from_three_letter(code: &str) -> Option<usize> {
    let upper = code.trim().to_ascii_uppercase();
    THREE_LETTER.iter().position(|&a| a == upper)
}

pub fn letter(index: usize) -> char {
    ONE_LETTER[index]
}

/// Parse a one-letter sequence into residue indices.
pub fn encode(seq: &str) -> Result<Vec<usize>, char> {
    seq.chars().map(|c| index_of(c).ok_or(c)).collect()
}

pub fn decode(indices: &[usize]) -> String {
    indices.iter().map(|&i| letter(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_agree() {
        assert_eq!(index_of('a'), Some(0));
        assert_eq!(index_of('G'), Some(5));
        assert_eq!(from_three_letter("gly"), Some(5));
        assert_eq!(index_of('X'), None);
        assert_eq!(from_three_letter("MSE"), None);
        assert_eq!(decode(&encode("MKV").unwrap()), "MKV");
        assert_eq!(encode("MB"), Err('B'));
    }
}
