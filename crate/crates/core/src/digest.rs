use sha2::{Digest as _, Sha256};

use crate::tensor::Tensor;

/// SHA-256 accumulator truncated to 64 bits.
#[derive(Clone, Default)]
pub struct Digest64(Sha256);

impl Digest64 {
    pub fn new(tag: &str) -> Self {
        let mut d = Self(Sha256::new());
        d.bytes(tag.as_bytes());
        d
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn tensor(&mut self, t: &Tensor) -> &mut Self {
        self.u64(t.shape().len() as u64);
        for &s in t.shape() {
            self.u64(s as u64);
        }
        let bytes: Vec<u8> = t.value_bytes().collect();
        self.0.update(&bytes);
        self
    }

    pub fn finish(self) -> u64 {
        let out = self.0.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
    }

    pub fn finish_hex(self) -> String {
        format!("{:016x}", self.finish())
    }
}
