use crate::huffman::{HuffmanTree, NodeKind, TreeNode};

/// w1 and w2 share an inner node on the left, w3 hangs directly off the root
/// on the right: codes 00, 01, 1; root has inner_index 0, the other inner
/// node 1.
pub(crate) fn three_leaf_tree() -> HuffmanTree {
    let tokens = vec!["w1".to_string(), "w2".to_string(), "w3".to_string()];
    let nodes = vec![
        TreeNode { id: 0, prob: 0.25, kind: NodeKind::Leaf { token: 0 } },
        TreeNode { id: 1, prob: 0.25, kind: NodeKind::Leaf { token: 1 } },
        TreeNode { id: 2, prob: 0.5, kind: NodeKind::Leaf { token: 2 } },
        TreeNode {
            id: 3,
            prob: 0.5,
            kind: NodeKind::Inner { left: 0, right: 1, inner_index: 1 },
        },
        TreeNode {
            id: 4,
            prob: 1.0,
            kind: NodeKind::Inner { left: 3, right: 2, inner_index: 0 },
        },
    ];
    HuffmanTree::from_nodes(tokens, nodes, 4).unwrap()
}
