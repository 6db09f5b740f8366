use std::fmt;

/// Product Fock states of `modes` oscillators truncated to `levels` each,
/// optionally capped in total excitation number.
#[derive(Clone)]
pub struct FockBasis {
    modes: usize,
    levels: usize,
    states: Vec<Vec<u8>>,
    lookup: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl FockBasis {
    pub fn full(modes: usize, levels: usize) -> Self {
        Self::build(modes, levels, None)
    }

    /// Only states with at most `max_excitations` quanta in total.
    pub fn truncated(modes: usize, levels: usize, max_excitations: usize) -> Self {
        Self::build(modes, levels, Some(max_excitations))
    }

    fn build(modes: usize, levels: usize, cap: Option<usize>) -> Self {
        assert!(levels >= 2 && levels <= 255, "levels must be in 2..=255");
        let total = levels.checked_pow(modes as u32).expect("basis size overflows");
        let mut lookup = vec![ABSENT; total];
        let mut states = Vec::new();
        let mut s = vec![0u8; modes];
        for code in 0..total {
            let mut c = code;
            for slot in s.iter_mut() {
                *slot = (c % levels) as u8;
                c /= levels;
            }
            let n: usize = s.iter().map(|&v| v as usize).sum();
            if cap.map_or(true, |cap| n <= cap) {
                lookup[code] = states.len() as u32;
                states.push(s.clone());
            }
        }
        Self {
            modes,
            levels,
            states,
            lookup,
        }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, n: usize) -> &[u8] {
        &self.states[n]
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn index(&self, occupation: &[u8]) -> Option<usize> {
        if occupation.len() != self.modes || occupation.iter().any(|&v| v as usize >= self.levels) {
            return None;
        }
        let code = occupation
            .iter()
            .rev()
            .fold(0usize, |acc, &v| acc * self.levels + v as usize);
        match self.lookup[code] {
            ABSENT => None,
            n => Some(n as usize),
        }
    }

    /// Index of the state obtained from `n` by moving occupation `delta` on `mode`.
    pub fn shifted(&self, n: usize, mode: usize, delta: i32) -> Option<usize> {
        let s = &self.states[n];
        let v = s[mode] as i32 + delta;
        if v < 0 || v as usize >= self.levels {
            return None;
        }
        let mut code = 0usize;
        for (m, &occ) in s.iter().enumerate().rev() {
            let o = if m == mode { v as usize } else { occ as usize };
            code = code * self.levels + o;
        }
        match self.lookup[code] {
            ABSENT => None,
            idx => Some(idx as usize),
        }
    }
}

impl fmt::Debug for FockBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FockBasis({} modes x {} levels, dim {})", self.modes, self.levels, self.dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(FockBasis::full(3, 3).dim(), 27);
        // 0, 1 and 2 quanta over 4 three-level modes: 1 + 4 + (4 + 6)
        assert_eq!(FockBasis::truncated(4, 3, 2).dim(), 15);
    }

    #[test]
    fn index_and_shift_agree() {
        let b = FockBasis::truncated(3, 3, 2);
        let n = b.index(&[1, 0, 0]).unwrap();
        let up = b.shifted(n, 1, 1).unwrap();
        assert_eq!(b.state(up), &[1, 1, 0]);
        assert!(b.shifted(up, 2, 1).is_none());
        assert!(b.shifted(n, 1, -1).is_none());
    }
}
