use std::collections::{HashMap, HashSet};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::{EnvError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub capacity: f64,
}

/// A candidate path: the visited nodes and the resolved link indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<String>,
    pub links: Vec<usize>,
}

impl Path {
    pub fn label(&self) -> String {
        self.nodes.concat()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Commodity {
    pub source: String,
    pub destination: String,
    pub paths: Vec<Path>,
}

/// On-disk form: paths are node sequences, each hop naming a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub name: String,
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
    pub commodities: Vec<CommodityFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommodityFile {
    pub source: String,
    pub destination: String,
    pub paths: Vec<Vec<String>>,
}

/// A validated network. Agents are indexed like commodities.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub name: String,
    pub nodes: Vec<String>,
    pub links: Vec<Link>,
    pub commodities: Vec<Commodity>,
    observed: Vec<Vec<usize>>,
}

const LARGE_TOPOLOGY: &str = include_str!("../../data/large.json");

impl Topology {
    /// Built-in topologies: `small`, `moderate`, `large`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "small" => Self::small(10.0),
            "moderate" => Self::moderate(10.0),
            "large" => Self::from_json(LARGE_TOPOLOGY),
            other => Err(EnvError::UnknownTopology(other.to_string())),
        }
    }

    /// Built-in name or path to a JSON topology file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::builtin(name_or_path) {
            Err(EnvError::UnknownTopology(_)) if FsPath::new(name_or_path).exists() => {
                Self::load(name_or_path)
            }
            other => other,
        }
    }

    /// Two agents, A->C and B->D, each with a direct link and a detour
    /// through the shared E->F link.
    pub fn small(capacity: f64) -> Result<Self> {
        let links = [
            ("A", "C"),
            ("B", "D"),
            ("A", "E"),
            ("B", "E"),
            ("E", "F"),
            ("F", "C"),
            ("F", "D"),
        ];
        let file = TopologyFile {
            name: "small".into(),
            nodes: names(&["A", "B", "C", "D", "E", "F"]),
            links: links
                .iter()
                .map(|(a, b)| Link {
                    from: a.to_string(),
                    to: b.to_string(),
                    capacity,
                })
                .collect(),
            commodities: vec![
                CommodityFile {
                    source: "A".into(),
                    destination: "C".into(),
                    paths: vec![names(&["A", "E", "F", "C"]), names(&["A", "C"])],
                },
                CommodityFile {
                    source: "B".into(),
                    destination: "D".into(),
                    paths: vec![names(&["B", "E", "F", "D"]), names(&["B", "D"])],
                },
            ],
        };
        Self::from_file(file)
    }

    /// Two agents, A->G and B->G, each with three paths: through relays 1-2,
    /// direct, and through relays 3-4. Relay links are shared.
    pub fn moderate(capacity: f64) -> Result<Self> {
        let links = [
            ("A", "1"),
            ("B", "1"),
            ("1", "2"),
            ("2", "G"),
            ("A", "G"),
            ("B", "G"),
            ("A", "3"),
            ("B", "3"),
            ("3", "4"),
            ("4", "G"),
        ];
        let commodity = |src: &str| CommodityFile {
            source: src.into(),
            destination: "G".into(),
            paths: vec![
                names(&[src, "1", "2", "G"]),
                names(&[src, "G"]),
                names(&[src, "3", "4", "G"]),
            ],
        };
        let file = TopologyFile {
            name: "moderate".into(),
            nodes: names(&["A", "B", "1", "2", "3", "4", "G"]),
            links: links
                .iter()
                .map(|(a, b)| Link {
                    from: a.to_string(),
                    to: b.to_string(),
                    capacity,
                })
                .collect(),
            commodities: vec![commodity("A"), commodity("B")],
        };
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("topology serializes")
    }

    /// Resolves node-sequence paths to link indices and checks every
    /// invariant, reporting all violations at once.
    pub fn from_file(file: TopologyFile) -> Result<Self> {
        let mut errors = Vec::new();
        let node_set: HashSet<&str> = file.nodes.iter().map(String::as_str).collect();
        if node_set.len() != file.nodes.len() {
            errors.push("duplicate node names".to_string());
        }
        let mut link_index: HashMap<(&str, &str), usize> = HashMap::new();
        for (i, link) in file.links.iter().enumerate() {
            for end in [&link.from, &link.to] {
                if !node_set.contains(end.as_str()) {
                    errors.push(format!("link {i} references unknown node {end:?}"));
                }
            }
            if link.from == link.to {
                errors.push(format!("link {i} is a self-loop"));
            }
            if !(link.capacity > 0.0 && link.capacity.is_finite()) {
                errors.push(format!(
                    "link {}->{} has non-positive capacity {}",
                    link.from, link.to, link.capacity
                ));
            }
            if link_index
                .insert((link.from.as_str(), link.to.as_str()), i)
                .is_some()
            {
                errors.push(format!("duplicate link {}->{}", link.from, link.to));
            }
        }
        if file.commodities.is_empty() {
            errors.push("no commodities".to_string());
        }
        let mut commodities = Vec::with_capacity(file.commodities.len());
        for (c, com) in file.commodities.iter().enumerate() {
            if com.paths.len() < 2 {
                errors.push(format!(
                    "commodity {c} ({}->{}) has {} candidate paths, need at least 2",
                    com.source,
                    com.destination,
                    com.paths.len()
                ));
            }
            let mut paths = Vec::with_capacity(com.paths.len());
            let mut seen = HashSet::new();
            for (p, nodes) in com.paths.iter().enumerate() {
                let tag = format!("commodity {c} path {p}");
                if nodes.len() < 2 {
                    errors.push(format!("{tag} has fewer than two nodes"));
                    continue;
                }
                if nodes.first() != Some(&com.source) || nodes.last() != Some(&com.destination) {
                    errors.push(format!(
                        "{tag} does not run {}->{}",
                        com.source, com.destination
                    ));
                }
                let distinct: HashSet<&String> = nodes.iter().collect();
                if distinct.len() != nodes.len() {
                    errors.push(format!("{tag} revisits a node"));
                }
                if !seen.insert(nodes.clone()) {
                    errors.push(format!("{tag} duplicates an earlier path"));
                }
                let mut links = Vec::with_capacity(nodes.len() - 1);
                for hop in nodes.windows(2) {
                    match link_index.get(&(hop[0].as_str(), hop[1].as_str())) {
                        Some(&l) => links.push(l),
                        None => errors.push(format!("{tag}: no link {}->{}", hop[0], hop[1])),
                    }
                }
                paths.push(Path {
                    nodes: nodes.clone(),
                    links,
                });
            }
            commodities.push(Commodity {
                source: com.source.clone(),
                destination: com.destination.clone(),
                paths,
            });
        }
        if !errors.is_empty() {
            return Err(EnvError::InvalidTopology(errors));
        }
        let observed = commodities.iter().map(observed_links).collect();
        Ok(Self {
            name: file.name,
            nodes: file.nodes,
            links: file.links,
            commodities,
            observed,
        })
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            links: self.links.clone(),
            commodities: self
                .commodities
                .iter()
                .map(|c| CommodityFile {
                    source: c.source.clone(),
                    destination: c.destination.clone(),
                    paths: c.paths.iter().map(|p| p.nodes.clone()).collect(),
                })
                .collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.commodities.len()
    }

    pub fn num_paths(&self, agent: usize) -> usize {
        self.commodities[agent].paths.len()
    }

    /// Width of the agent's observation feature vector.
    pub fn feature_width(&self, agent: usize) -> usize {
        let l = self.observed_links(agent).len();
        super::HISTORY + super::HISTORY * l + l + self.num_paths(agent)
    }

    /// Links on the agent's own candidate paths, in order of first appearance.
    pub fn observed_links(&self, agent: usize) -> &[usize] {
        &self.observed[agent]
    }

    pub fn link_label(&self, link: usize) -> String {
        let l = &self.links[link];
        format!("{}{}", l.from, l.to)
    }

    pub fn find_link(&self, from: &str, to: &str) -> Option<usize> {
        self.links.iter().position(|l| l.from == from && l.to == to)
    }

    /// Smallest capacity along a path.
    pub fn bottleneck(&self, agent: usize, path: usize) -> f64 {
        self.commodities[agent].paths[path]
            .links
            .iter()
            .map(|&l| self.links[l].capacity)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_capacity(&self) -> f64 {
        self.links.iter().map(|l| l.capacity).sum::<f64>() / self.links.len() as f64
    }

    pub fn set_capacity(&mut self, link: usize, capacity: f64) -> Result<()> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(EnvError::InvalidTopology(vec![format!(
                "capacity {capacity} is not positive"
            )]));
        }
        self.links[link].capacity = capacity;
        Ok(())
    }
}

fn observed_links(commodity: &Commodity) -> Vec<usize> {
    let mut out = Vec::new();
    for path in &commodity.paths {
        for &l in &path.links {
            if !out.contains(&l) {
                out.push(l);
            }
        }
    }
    out
}

fn names(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}
