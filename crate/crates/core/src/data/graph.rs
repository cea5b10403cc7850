use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

/// Undirected region adjacency graph. Regions are indexed `0..n` internally;
/// `names` carries the labels used in input files.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    names: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    components: Vec<Vec<usize>>,
}

impl RegionGraph {
    pub fn new(names: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = names.len();
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::Adjacency(format!("region index out of range: ({a}, {b})")));
            }
            if a == b {
                return Err(Error::Adjacency(format!("self-loop on region `{}`", names[a])));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let components = connected_components(n, &edges);
        Ok(Self { names, edges, components })
    }

    /// Regions on a path `0 - 1 - ... - (n-1)`, labelled `R1..Rn`.
    pub fn path(n: usize) -> Self {
        let names = (1..=n).map(|i| format!("R{i}")).collect();
        Self::new(names, (1..n).map(|i| (i - 1, i))).expect("valid path graph")
    }

    /// Rectangular lattice with rook adjacency, labelled `R1..R(rows*cols)`
    /// in row-major order.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let names = (1..=rows * cols).map(|i| format!("R{i}")).collect();
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if c + 1 < cols {
                    pairs.push((k, k + 1));
                }
                if r + 1 < rows {
                    pairs.push((k, k + cols));
                }
            }
        }
        Self::new(names, pairs).expect("valid lattice")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.len()];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }
}

fn connected_components(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let k = *slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[k].push(i);
    }
    groups
}

/// Parses adjacency text. Each non-empty, non-comment line is either a pair
/// `A B` (whitespace or comma separated), a neighbor list `A: n1 n2 ...`, or
/// a lone label `A` declaring a region without listing neighbors.
///
/// With `known` set, labels must come from it and the graph uses its order;
/// otherwise regions are numbered by first appearance.
pub fn parse_adjacency(text: &str, known: Option<&[String]>) -> Result<RegionGraph> {
    let mut names: Vec<String> = known.map(|k| k.to_vec()).unwrap_or_default();
    let mut index: HashMap<String, usize> =
        names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    let mut pairs = Vec::new();

    let mut lookup = |label: &str, line: usize| -> Result<usize> {
        if let Some(&i) = index.get(label) {
            return Ok(i);
        }
        if known.is_some() {
            return Err(Error::Adjacency(format!("line {line}: unknown region label `{label}`")));
        }
        names.push(label.to_string());
        index.insert(label.to_string(), names.len() - 1);
        Ok(names.len() - 1)
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let tokens = |s: &str| -> Vec<String> {
            s.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect()
        };
        if let Some((head, rest)) = line.split_once(':') {
            let a = lookup(head.trim(), lineno)?;
            for t in tokens(rest) {
                let b = lookup(&t, lineno)?;
                if a == b {
                    return Err(Error::Adjacency(format!("line {lineno}: self-loop on `{t}`")));
                }
                pairs.push((a, b));
            }
        } else {
            let toks = tokens(line);
            match toks.as_slice() {
                [a] => {
                    lookup(a, lineno)?;
                }
                [a, b] => {
                    let (ia, ib) = (lookup(a, lineno)?, lookup(b, lineno)?);
                    if ia == ib {
                        return Err(Error::Adjacency(format!("line {lineno}: self-loop on `{a}`")));
                    }
                    pairs.push((ia, ib));
                }
                _ => {
                    return Err(Error::Adjacency(format!(
                        "line {lineno}: expected `A B` or `A: n1 n2 ...`"
                    )))
                }
            }
        }
    }
    RegionGraph::new(names, pairs)
}

pub fn ingest_adjacency(path: impl AsRef<Path>, known: Option<&[String]>) -> Result<RegionGraph> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    parse_adjacency(&text, known)
}
