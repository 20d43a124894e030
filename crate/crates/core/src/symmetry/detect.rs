//! Permutation search over the member-typed graph.
//!
//! A node permutation is kept when it maps every bar onto a bar and every
//! string onto a string. The search assigns nodes one at a time and only
//! tries images with the same (bar degree, string degree) signature whose
//! adjacency to the already-assigned nodes agrees.

use super::{kind_code, Permutation};
use crate::error::{invalid, Result};
use crate::structure::{ConnectivityMatrix, MemberKind};

pub const DEFAULT_MAX_NODES: usize = 64;

/// Upper bound on the number of automorphisms enumerated.
const MAX_RESULTS: usize = 100_000;

/// All permutations preserving the bar set and the string set, in
/// lexicographic order of their image lists. The identity is always present
/// and the list is closed under inversion.
pub fn detect_permutations(
    n_nodes: usize,
    bars: &[(usize, usize)],
    strings: &[(usize, usize)],
    max_nodes: usize,
) -> Result<Vec<Permutation>> {
    if n_nodes > max_nodes {
        return invalid(format!(
            "permutation search is capped at {max_nodes} nodes, structure has {n_nodes}"
        ));
    }
    let all: Vec<(usize, usize)> = bars.iter().chain(strings).copied().collect();
    // validates indices, self-loops and duplicates
    ConnectivityMatrix::from_members(n_nodes, &all)?;

    let mut adj = vec![vec![0u8; n_nodes]; n_nodes];
    let mut signature = vec![(0usize, 0usize); n_nodes];
    let tagged = bars
        .iter()
        .map(|&e| (e, MemberKind::Bar))
        .chain(strings.iter().map(|&e| (e, MemberKind::String)));
    for ((i, j), kind) in tagged {
        let code = kind_code(kind);
        adj[i][j] = code;
        adj[j][i] = code;
        for v in [i, j] {
            match kind {
                MemberKind::Bar => signature[v].0 += 1,
                MemberKind::String => signature[v].1 += 1,
            }
        }
    }

    let mut search = Search {
        adj: &adj,
        signature: &signature,
        image: vec![usize::MAX; n_nodes],
        used: vec![false; n_nodes],
        found: Vec::new(),
        truncated: false,
    };
    search.extend(0);
    if search.truncated {
        log::warn!("automorphism enumeration truncated at {MAX_RESULTS} permutations");
    }
    let mut found = search.found;
    found.sort();
    Ok(found)
}

struct Search<'a> {
    adj: &'a [Vec<u8>],
    signature: &'a [(usize, usize)],
    image: Vec<usize>,
    used: Vec<bool>,
    found: Vec<Permutation>,
    truncated: bool,
}

impl Search<'_> {
    fn extend(&mut self, v: usize) {
        if self.truncated {
            return;
        }
        let n = self.image.len();
        if v == n {
            if self.found.len() >= MAX_RESULTS {
                self.truncated = true;
                return;
            }
            self.found.push(Permutation(self.image.clone()));
            return;
        }
        for w in 0..n {
            if self.used[w] || self.signature[w] != self.signature[v] {
                continue;
            }
            let consistent = (0..v).all(|u| self.adj[v][u] == self.adj[w][self.image[u]]);
            if !consistent {
                continue;
            }
            self.image[v] = w;
            self.used[w] = true;
            self.extend(v + 1);
            self.used[w] = false;
            self.image[v] = usize::MAX;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_always_found() {
        let perms = detect_permutations(3, &[(0, 1)], &[(1, 2)], 64).unwrap();
        assert!(perms.iter().any(|p| p.is_identity()));
        // path bar-string has no other automorphism
        assert_eq!(perms.len(), 1);
    }

    #[test]
    fn square_cross_has_dihedral_automorphisms() {
        let perms = detect_permutations(4, &[(0, 2), (1, 3)], &[(0, 1), (1, 2), (2, 3), (3, 0)], 64).unwrap();
        assert_eq!(perms.len(), 8);
        assert!(perms.contains(&Permutation::from_one_based(&[3, 4, 1, 2]).unwrap()));
        for p in &perms {
            assert!(perms.contains(&p.inverse()));
        }
    }

    #[test]
    fn node_cap_is_enforced() {
        assert!(detect_permutations(5, &[(0, 1)], &[], 4).is_err());
    }

    #[test]
    fn member_kinds_are_respected() {
        // triangle with one bar: only the swap of the bar's ends survives
        let perms = detect_permutations(3, &[(0, 1)], &[(1, 2), (2, 0)], 64).unwrap();
        assert_eq!(perms, vec![Permutation(vec![0, 1, 2]), Permutation(vec![1, 0, 2])]);
    }
}
