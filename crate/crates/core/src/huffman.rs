//! Huffman tree construction, code assignment and tree (de)serialization.
//!
//! Nodes live in an arena. Leaves take ids `0..vocab_size` in table order,
//! inner nodes take ids `vocab_size..` in merge order, so the root is always
//! the last node. Of each merged pair the higher-priority node (lower
//! probability, then lower id) becomes the left child.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::corpus::TermFrequencyTable;
use crate::error::{Error, Result};

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf {
        token: usize,
    },
    Inner {
        left: usize,
        right: usize,
        inner_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub prob: f64,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<(usize, usize)> {
        match self.kind {
            NodeKind::Inner { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn inner_index(&self) -> Option<usize> {
        match self.kind {
            NodeKind::Inner { inner_index, .. } => Some(inner_index),
            NodeKind::Leaf { .. } => None,
        }
    }
}

/// Full binary tree over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanTree {
    tokens: Vec<String>,
    nodes: Vec<TreeNode>,
    root: usize,
    depth: usize,
    inner_size: usize,
    /// token index -> leaf node id
    leaf_ids: Vec<usize>,
    /// inner_index -> node id
    inner_ids: Vec<usize>,
    /// token index -> depth of its leaf
    leaf_depths: Vec<usize>,
}

#[derive(Clone, Copy)]
struct QueueEntry<W> {
    weight: W,
    id: usize,
}

impl<W: PartialOrd> PartialEq for QueueEntry<W> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<W: PartialOrd> Eq for QueueEntry<W> {}

impl<W: PartialOrd> PartialOrd for QueueEntry<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<W: PartialOrd> Ord for QueueEntry<W> {
    // BinaryHeap is a max-heap: the "greatest" entry is the lowest weight,
    // then the lowest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .partial_cmp(&self.weight)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Run the Huffman merge loop. Returns `(left, right)` for every merge, the
/// k-th merge creating node `weights.len() + k`.
fn merge_order<W>(weights: &[W]) -> Vec<(usize, usize)>
where
    W: PartialOrd + Copy + Add<Output = W>,
{
    let n = weights.len();
    let mut queue: BinaryHeap<QueueEntry<W>> = weights
        .iter()
        .enumerate()
        .map(|(id, &weight)| QueueEntry { weight, id })
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while queue.len() >= 2 {
        let a = queue.pop().expect("len >= 2");
        let b = queue.pop().expect("len >= 2");
        let id = n + merges.len();
        merges.push((a.id, b.id));
        queue.push(QueueEntry {
            weight: a.weight + b.weight,
            id,
        });
    }
    merges
}

impl HuffmanTree {
    /// Build the Huffman tree for `table`.
    ///
    /// Priorities are compared on exact integer counts when the table carries
    /// them, otherwise on the `f64` probabilities with exact equality as the
    /// tie condition.
    pub fn build(table: &TermFrequencyTable) -> Result<Self> {
        let n = table.len();
        if n == 0 {
            return Err(Error::EmptyVocabulary);
        }
        let merges = match table.counts() {
            Some(counts) => {
                let w: Vec<u128> = counts.iter().map(|&c| c as u128).collect();
                merge_order(&w)
            }
            None => merge_order(table.probs()),
        };

        let mut nodes: Vec<TreeNode> = table
            .probs()
            .iter()
            .enumerate()
            .map(|(i, &prob)| TreeNode {
                id: i,
                prob,
                kind: NodeKind::Leaf { token: i },
            })
            .collect();
        for (left, right) in merges {
            let id = nodes.len();
            nodes.push(TreeNode {
                id,
                prob: nodes[left].prob + nodes[right].prob,
                // inner_index is assigned below once the shape is known
                kind: NodeKind::Inner {
                    left,
                    right,
                    inner_index: usize::MAX,
                },
            });
        }
        let root = nodes.len() - 1;

        // Breadth-first inner_index, root = 0, left before right.
        let mut next = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(id) = queue.pop_front() {
            if let NodeKind::Inner {
                left,
                right,
                ref mut inner_index,
            } = nodes[id].kind
            {
                *inner_index = next;
                next += 1;
                queue.push_back(left);
                queue.push_back(right);
            }
        }

        Self::from_nodes(table.tokens().to_vec(), nodes, root)
    }

    /// Assemble a tree from an arena, checking that it is a full binary tree
    /// with consistent probabilities and a gap-free inner-node enumeration.
    pub fn from_nodes(tokens: Vec<String>, nodes: Vec<TreeNode>, root: usize) -> Result<Self> {
        let vocab = tokens.len();
        let invalid = |msg: String| Err(Error::InvalidTree(msg));
        if vocab == 0 {
            return Err(Error::EmptyVocabulary);
        }
        if nodes.len() != 2 * vocab - 1 {
            return invalid(format!(
                "{} nodes for vocabulary of {vocab}, expected {}",
                nodes.len(),
                2 * vocab - 1
            ));
        }
        if root >= nodes.len() {
            return invalid(format!("root id {root} out of range"));
        }
        let inner_size = vocab - 1;
        let mut leaf_ids = vec![usize::MAX; vocab];
        let mut inner_ids = vec![usize::MAX; inner_size];
        let mut parent_count = vec![0usize; nodes.len()];
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return invalid(format!("node at position {pos} has id {}", node.id));
            }
            if !(node.prob > 0.0 && node.prob <= 1.0 + 1e-12) {
                return invalid(format!("node {pos} has probability {} outside (0,1]", node.prob));
            }
            match node.kind {
                NodeKind::Leaf { token } => {
                    if token >= vocab || leaf_ids[token] != usize::MAX {
                        return invalid(format!("leaf {pos} has invalid or duplicate token {token}"));
                    }
                    leaf_ids[token] = pos;
                }
                NodeKind::Inner {
                    left,
                    right,
                    inner_index,
                } => {
                    if left >= nodes.len() || right >= nodes.len() || left == right {
                        return invalid(format!("inner node {pos} has invalid children"));
                    }
                    if inner_index >= inner_size || inner_ids[inner_index] != usize::MAX {
                        return invalid(format!(
                            "inner node {pos} has invalid or duplicate inner_index {inner_index}"
                        ));
                    }
                    inner_ids[inner_index] = pos;
                    parent_count[left] += 1;
                    parent_count[right] += 1;
                    let sum = nodes[left].prob + nodes[right].prob;
                    if (node.prob - sum).abs() > 1e-12 {
                        return invalid(format!(
                            "inner node {pos} probability {} differs from child sum {sum}",
                            node.prob
                        ));
                    }
                }
            }
        }
        for (id, &count) in parent_count.iter().enumerate() {
            let expected = usize::from(id != root);
            if count != expected {
                return invalid(format!("node {id} has {count} parents, expected {expected}"));
            }
        }

        // Every node has one parent and the root none; reaching all nodes from
        // the root rules out detached cycles.
        let mut depth_of = vec![usize::MAX; nodes.len()];
        depth_of[root] = 0;
        let mut stack = vec![root];
        let mut seen = 0;
        while let Some(id) = stack.pop() {
            seen += 1;
            if let Some((l, r)) = nodes[id].children() {
                for c in [l, r] {
                    if depth_of[c] != usize::MAX {
                        return invalid(format!("node {c} reached twice"));
                    }
                    depth_of[c] = depth_of[id] + 1;
                    stack.push(c);
                }
            }
        }
        if seen != nodes.len() {
            return invalid("tree is not connected".into());
        }
        let leaf_depths: Vec<usize> = leaf_ids.iter().map(|&id| depth_of[id]).collect();
        let depth = leaf_depths.iter().copied().max().unwrap_or(0);

        Ok(Self {
            tokens,
            nodes,
            root,
            depth,
            inner_size,
            leaf_ids,
            inner_ids,
            leaf_depths,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn inner_size(&self) -> usize {
        self.inner_size
    }

    pub fn leaf_id(&self, token: usize) -> usize {
        self.leaf_ids[token]
    }

    pub fn inner_node_id(&self, inner_index: usize) -> usize {
        self.inner_ids[inner_index]
    }

    pub fn leaf_depth(&self, token: usize) -> usize {
        self.leaf_depths[token]
    }

    /// Root-to-leaf branch directions for `token` (`false` = left).
    ///
    /// Empty for the single-leaf tree.
    pub fn path_bits(&self, token: usize) -> Vec<bool> {
        self.path(token).into_iter().map(|(_, bit)| bit).collect()
    }

    /// `(inner node id, went_right)` for each step from the root to `token`.
    pub fn path(&self, token: usize) -> Vec<(usize, bool)> {
        // Parent links are not stored; search downward from the root. Each
        // stack frame keeps the path so far, so this is O(nodes · depth) in
        // the worst case. Callers needing all paths use `walk_paths`.
        let target = self.leaf_ids[token];
        let mut out = Vec::new();
        self.walk_paths(|leaf_token, path| {
            if self.leaf_ids[leaf_token] == target {
                out = path.to_vec();
            }
        });
        out
    }

    /// Visit every leaf with its root-to-leaf path of `(inner node id, went_right)`.
    pub fn walk_paths<F: FnMut(usize, &[(usize, bool)])>(&self, mut visit: F) {
        // Explicit stack: Huffman trees over skewed distributions can be as
        // deep as the vocabulary.
        let mut path: Vec<(usize, bool)> = Vec::with_capacity(self.depth);
        // (node, depth at which it hangs, branch bit leading to it)
        let mut stack = vec![(self.root, 0usize, None::<(usize, bool)>)];
        while let Some((id, depth, step)) = stack.pop() {
            path.truncate(depth.saturating_sub(1));
            if let Some(step) = step {
                path.push(step);
            }
            match self.nodes[id].kind {
                NodeKind::Leaf { token } => visit(token, &path),
                NodeKind::Inner { left, right, .. } => {
                    stack.push((right, depth + 1, Some((id, true))));
                    stack.push((left, depth + 1, Some((id, false))));
                }
            }
        }
    }
}

/// Token to bit-string map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBook {
    tokens: Vec<String>,
    codes: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl CodeBook {
    pub fn code(&self, token: &str) -> Option<&str> {
        self.lookup.get(token).map(|&i| self.codes[i].as_str())
    }

    pub fn code_at(&self, token_index: usize) -> &str {
        &self.codes[token_index]
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// `(token, code)` pairs in token-table order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.tokens
            .iter()
            .map(String::as_str)
            .zip(self.codes.iter().map(String::as_str))
    }

    pub fn code_lengths(&self) -> Vec<usize> {
        self.codes.iter().map(String::len).collect()
    }

    /// Map a concatenation of codes back to token indices.
    pub fn decode_bits(&self, bits: &str) -> Result<Vec<usize>> {
        let by_code: HashMap<&str, usize> =
            self.codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let longest = self.codes.iter().map(String::len).max().unwrap_or(0);
        let mut out = Vec::new();
        let mut start = 0;
        for end in 1..=bits.len() {
            if let Some(&tok) = by_code.get(&bits[start..end]) {
                out.push(tok);
                start = end;
            } else if end - start >= longest {
                break;
            }
        }
        if start != bits.len() {
            return Err(Error::Malformed(format!(
                "bit string does not decode past offset {start}"
            )));
        }
        Ok(out)
    }
}

/// Assign codes by descent: left appends `0`, right appends `1`.
///
/// The single-leaf tree gets the code `"0"` so that every token consumes at
/// least one decoding step.
pub fn assign_codes(tree: &HuffmanTree) -> CodeBook {
    let mut codes = vec![String::new(); tree.vocab_size()];
    tree.walk_paths(|token, path| {
        codes[token] = path.iter().map(|&(_, right)| if right { '1' } else { '0' }).collect();
    });
    if tree.vocab_size() == 1 {
        codes[0] = "0".to_string();
    }
    let lookup = tree
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    CodeBook {
        tokens: tree.tokens().to_vec(),
        codes,
        lookup,
    }
}

/// `Σ p_i · |code_i|` over the table, using the codes from [`assign_codes`].
pub fn expected_code_length(tree: &HuffmanTree, table: &TermFrequencyTable) -> Result<f64> {
    if tree.tokens() != table.tokens() {
        return Err(Error::VocabularyMismatch(format!(
            "tree has {} tokens, table has {} (or ordering differs)",
            tree.vocab_size(),
            table.len()
        )));
    }
    let book = assign_codes(tree);
    Ok(table
        .probs()
        .iter()
        .zip(book.code_lengths())
        .map(|(p, len)| p * len as f64)
        .sum())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDocument {
    format_version: u32,
    vocab_size: usize,
    depth: usize,
    inner_size: usize,
    root: usize,
    tokens: Vec<String>,
    nodes: Vec<NodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codes: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    kind: NodeRecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inner_index: Option<usize>,
    prob: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum NodeRecordKind {
    Leaf,
    Inner,
}

/// Serialize a tree (with its codebook) to a versioned JSON document.
pub fn serialize_tree(tree: &HuffmanTree) -> Vec<u8> {
    let book = assign_codes(tree);
    let doc = TreeDocument {
        format_version: TREE_FORMAT_VERSION,
        vocab_size: tree.vocab_size(),
        depth: tree.depth(),
        inner_size: tree.inner_size(),
        root: tree.root(),
        tokens: tree.tokens().to_vec(),
        nodes: tree
            .nodes()
            .iter()
            .map(|n| match n.kind {
                NodeKind::Leaf { token } => NodeRecord {
                    id: n.id,
                    kind: NodeRecordKind::Leaf,
                    token: Some(token),
                    children: None,
                    inner_index: None,
                    prob: n.prob,
                },
                NodeKind::Inner {
                    left,
                    right,
                    inner_index,
                } => NodeRecord {
                    id: n.id,
                    kind: NodeRecordKind::Inner,
                    token: None,
                    children: Some([left, right]),
                    inner_index: Some(inner_index),
                    prob: n.prob,
                },
            })
            .collect(),
        codes: Some(book.codes),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("tree document is always serializable");
    out.push(b'\n');
    out
}

pub fn deserialize_tree(bytes: &[u8]) -> Result<HuffmanTree> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Malformed("missing format_version".into()))?;
    if version != u64::from(TREE_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: TREE_FORMAT_VERSION,
        });
    }
    let doc: TreeDocument =
        serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;

    let nodes = doc
        .nodes
        .into_iter()
        .map(|r| {
            let kind = match (r.kind, r.token, r.children, r.inner_index) {
                (NodeRecordKind::Leaf, Some(token), None, None) => NodeKind::Leaf { token },
                (NodeRecordKind::Inner, None, Some([left, right]), Some(inner_index)) => {
                    NodeKind::Inner {
                        left,
                        right,
                        inner_index,
                    }
                }
                _ => {
                    return Err(Error::Malformed(format!(
                        "node {} has fields inconsistent with its kind",
                        r.id
                    )))
                }
            };
            Ok(TreeNode {
                id: r.id,
                prob: r.prob,
                kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = doc.tokens.iter().find(|t| !seen.insert(t.as_str())) {
        return Err(Error::Malformed(format!("duplicate token {dup:?}")));
    }

    let tree = HuffmanTree::from_nodes(doc.tokens, nodes, doc.root)?;
    if tree.vocab_size() != doc.vocab_size
        || tree.depth() != doc.depth
        || tree.inner_size() != doc.inner_size
    {
        return Err(Error::Malformed(
            "header fields disagree with node structure".into(),
        ));
    }
    if let Some(codes) = doc.codes {
        if codes != assign_codes(&tree).codes {
            return Err(Error::Malformed("stored codes disagree with tree".into()));
        }
    }
    Ok(tree)
}
