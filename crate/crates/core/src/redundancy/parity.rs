//! Single-parity XOR over equal-sized pages.

/// `dst ^= src`, eight bytes at a time.
pub fn xor_into(dst: &mut [u8], src: &[u8]) {
    assert_eq!(dst.len(), src.len(), "xor operands differ in length");
    let mut d = dst.chunks_exact_mut(8);
    let mut s = src.chunks_exact(8);
    for (dw, sw) in (&mut d).zip(&mut s) {
        let x = u64::from_ne_bytes(dw.try_into().unwrap()) ^ u64::from_ne_bytes(sw.try_into().unwrap());
        dw.copy_from_slice(&x.to_ne_bytes());
    }
    for (db, sb) in d.into_remainder().iter_mut().zip(s.remainder()) {
        *db ^= sb;
    }
}

/// Parity page of a stripe: the byte-wise XOR of its data pages.
///
/// Pages absent from a trailing partial stripe are implicit zero pages and
/// may simply be omitted.
pub fn compute_parity<P: AsRef<[u8]>>(pages: &[P]) -> Vec<u8> {
    let first = pages.first().expect("a stripe has at least one data page").as_ref();
    let mut parity = first.to_vec();
    for page in &pages[1..] {
        xor_into(&mut parity, page.as_ref());
    }
    parity
}

/// Rebuilds the one missing data page of a stripe from its parity and the
/// surviving siblings.
pub fn reconstruct<P: AsRef<[u8]>>(parity: &[u8], survivors: &[P]) -> Vec<u8> {
    let mut page = parity.to_vec();
    for s in survivors {
        xor_into(&mut page, s.as_ref());
    }
    page
}
