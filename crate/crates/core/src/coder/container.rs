use crate::error::{MtrError, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MTRB";
pub const CONTAINER_VERSION: u8 = 1;
/// magic(4) + version(1) + width(2) + height(2) + gop(1) + hash(8) + 3 lengths(12)
pub const CONTAINER_HEADER_LEN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u8,
    pub width: u16,
    pub height: u16,
    pub gop_size: u8,
    /// FNV-1a 64 of the weights file the stream was produced with.
    pub weights_hash: u64,
}

/// One coded group of pictures: header plus the hyper, memory and skeleton
/// payloads, in that order on the wire. All integers are little-endian.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub header: ContainerHeader,
    pub hyper: Vec<u8>,
    pub memory: Vec<u8>,
    pub skeleton: Vec<u8>,
}

impl BitstreamContainer {
    pub fn pack(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(h.version);
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.push(h.gop_size);
        out.extend_from_slice(&h.weights_hash.to_le_bytes());
        for payload in [&self.hyper, &self.memory, &self.skeleton] {
            let len = u32::try_from(payload.len())
                .map_err(|_| MtrError::contract(format!("payload of {} bytes exceeds 2^32", payload.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
        }
        out.extend_from_slice(&self.hyper);
        out.extend_from_slice(&self.memory);
        out.extend_from_slice(&self.skeleton);
        Ok(out)
    }

    pub fn unpack(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CONTAINER_MAGIC {
            return Err(MtrError::decode(format!("bad container magic {magic:?}")));
        }
        let version = r.take(1, "version")?[0];
        if version != CONTAINER_VERSION {
            return Err(MtrError::decode(format!("unsupported container version {version}")));
        }
        let width = u16::from_le_bytes(r.take(2, "width")?.try_into().unwrap());
        let height = u16::from_le_bytes(r.take(2, "height")?.try_into().unwrap());
        let gop_size = r.take(1, "gop size")?[0];
        let weights_hash = u64::from_le_bytes(r.take(8, "weights hash")?.try_into().unwrap());
        let mut lens = [0usize; 3];
        for (len, name) in lens.iter_mut().zip(["hyper length", "memory length", "skeleton length"]) {
            *len = u32::from_le_bytes(r.take(4, name)?.try_into().unwrap()) as usize;
        }
        let hyper = r.take(lens[0], "hyper payload")?.to_vec();
        let memory = r.take(lens[1], "memory payload")?.to_vec();
        let skeleton = r.take(lens[2], "skeleton payload")?.to_vec();
        if r.pos != bytes.len() {
            return Err(MtrError::decode(format!("{} trailing bytes after skeleton payload", bytes.len() - r.pos)));
        }
        Ok(BitstreamContainer {
            header: ContainerHeader { version, width, height, gop_size, weights_hash },
            hyper,
            memory,
            skeleton,
        })
    }

    pub fn byte_len(&self) -> usize {
        CONTAINER_HEADER_LEN + self.hyper.len() + self.memory.len() + self.skeleton.len()
    }

    /// Total coded size in bits, header included.
    pub fn total_bits(&self) -> u64 {
        8 * self.byte_len() as u64
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            MtrError::decode(format!(
                "truncated container: missing {section} ({} of {n} bytes present)",
                self.bytes.len().saturating_sub(self.pos)
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> ContainerHeader {
        ContainerHeader { version: CONTAINER_VERSION, width: 32, height: 24, gop_size: 10, weights_hash: 0xDEAD_BEEF }
    }

    #[test]
    fn minimal_container_is_thirty_bytes() {
        let c = BitstreamContainer { header: header(), hyper: vec![], memory: vec![], skeleton: vec![] };
        let bytes = c.pack().unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 2 + 2 + 1 + 8 + 12);
        assert_eq!(c.total_bits(), 240);
        assert_eq!(&bytes[..4], b"MTRB");
        assert_eq!(BitstreamContainer::unpack(&bytes).unwrap(), c);
    }

    #[test]
    fn layout_is_little_endian() {
        let c = BitstreamContainer { header: header(), hyper: vec![1], memory: vec![2, 3], skeleton: vec![4, 5, 6] };
        let b = c.pack().unwrap();
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..7], &[32, 0]);
        assert_eq!(&b[7..9], &[24, 0]);
        assert_eq!(b[9], 10);
        assert_eq!(&b[10..18], &0xDEAD_BEEFu64.to_le_bytes());
        assert_eq!(&b[18..30], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[30..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn truncation_names_section() {
        let c = BitstreamContainer { header: header(), hyper: vec![1; 4], memory: vec![2; 9], skeleton: vec![3; 5] };
        let b = c.pack().unwrap();
        let err = BitstreamContainer::unpack(&b[..b.len() - 2]).unwrap_err().to_string();
        assert!(err.contains("skeleton payload"), "{err}");
        let err = BitstreamContainer::unpack(&b[..12]).unwrap_err().to_string();
        assert!(err.contains("weights hash"), "{err}");
        let err = BitstreamContainer::unpack(&b[..24]).unwrap_err().to_string();
        assert!(err.contains("memory length"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let c = BitstreamContainer { header: header(), hyper: vec![], memory: vec![], skeleton: vec![] };
        let mut b = c.pack().unwrap();
        b[4] = 2;
        assert!(matches!(BitstreamContainer::unpack(&b), Err(MtrError::Decode(_))));
        b[4] = 1;
        b[0] = b'X';
        assert!(matches!(BitstreamContainer::unpack(&b), Err(MtrError::Decode(_))));
    }

    proptest! {
        #[test]
        fn round_trip(w in any::<u16>(), h in any::<u16>(), g in any::<u8>(), hash in any::<u64>(),
                      a in proptest::collection::vec(any::<u8>(), 0..64),
                      m in proptest::collection::vec(any::<u8>(), 0..64),
                      s in proptest::collection::vec(any::<u8>(), 0..64)) {
            let c = BitstreamContainer {
                header: ContainerHeader { version: CONTAINER_VERSION, width: w, height: h, gop_size: g, weights_hash: hash },
                hyper: a, memory: m, skeleton: s,
            };
            let bytes = c.pack().unwrap();
            prop_assert_eq!(bytes.len(), c.byte_len());
            prop_assert_eq!(BitstreamContainer::unpack(&bytes).unwrap(), c);
        }
    }
}
