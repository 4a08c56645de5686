use sha2::{Digest, Sha256};

/// Short hex digest used to tie artifacts to the inputs that produced them.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Fingerprint of a value's `Debug` rendering. Float fields render with their
/// shortest round-trip representation, so equal configs hash equally.
pub fn fingerprint_debug<T: std::fmt::Debug>(value: &T) -> String {
    fingerprint(format!("{value:?}").as_bytes())
}
