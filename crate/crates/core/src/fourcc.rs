// SPDX-License-Identifier: Apache-2.0

use std::fmt;

/// Four-character ASCII code used for MP4 box types and GPMF keys.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct FourCC(pub [u8; 4]);

impl FourCC {
    pub const fn new(code: &[u8; 4]) -> Self {
        FourCC(*code)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 4] = bytes.get(..4)?.try_into().ok()?;
        Some(FourCC(arr))
    }

    /// All four bytes are printable 7-bit ASCII (space through `~`).
    pub fn is_printable(&self) -> bool {
        self.0.iter().all(|&b| (0x20..0x7f).contains(&b))
    }

    pub fn as_bytes(&self) -> &[u8; 4] {
        &self.0
    }
}

impl From<&[u8; 4]> for FourCC {
    fn from(code: &[u8; 4]) -> Self {
        FourCC(*code)
    }
}

impl std::str::FromStr for FourCC {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = s.as_bytes();
        if bytes.len() != 4 {
            return Err(format!("fourcc must be 4 bytes, got {s:?}"));
        }
        Ok(FourCC([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

impl fmt::Display for FourCC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            if (0x20..0x7f).contains(&b) {
                write!(f, "{}", b as char)?;
            } else {
                write!(f, "\\x{b:02x}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for FourCC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FourCC({self})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_escapes_non_printable() {
        assert_eq!(FourCC(*b"ACCL").to_string(), "ACCL");
        assert_eq!(FourCC([0, b'a', b'b', b'c']).to_string(), "\\x00abc");
        assert!(!FourCC([0, b'a', b'b', b'c']).is_printable());
    }

    #[test]
    fn parse_requires_four_bytes() {
        assert_eq!("GYRO".parse::<FourCC>().unwrap(), FourCC(*b"GYRO"));
        assert!("GYR".parse::<FourCC>().is_err());
    }
}
