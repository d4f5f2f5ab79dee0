"""Static SVG rendering of a single weight tree.

Split nodes show their rule (left branch = rule holds), leaves show the
terminal value and the share of panel rows routed to them.  Output is plain
standalone SVG with no external references.
"""

from __future__ import annotations

import numpy as np

from .trees import TreeNode

_X_STEP = 150
_Y_STEP = 95
_MARGIN = 30
_BOX_W = 126
_BOX_H = 46


def _leaf_slots(node: TreeNode, next_slot: list[int], pos: dict) -> float:
    """Post-order slot layout: leaves take consecutive slots, parents center."""
    if node.is_leaf:
        x = next_slot[0]
        next_slot[0] += 1
        pos[id(node)] = float(x)
        return float(x)
    lx = _leaf_slots(node.left, next_slot, pos)
    rx = _leaf_slots(node.right, next_slot, pos)
    x = 0.5 * (lx + rx)
    pos[id(node)] = x
    return x


def _depths(node: TreeNode, depth: int, out: dict) -> int:
    out[id(node)] = depth
    if node.is_leaf:
        return depth
    return max(_depths(node.left, depth + 1, out),
               _depths(node.right, depth + 1, out))


def _row_counts(node: TreeNode, rows: np.ndarray, idx: np.ndarray, out: dict) -> None:
    out[id(node)] = idx.size
    if node.is_leaf:
        return
    go_left = rows[idx, node.var] <= node.threshold
    _row_counts(node.left, rows, idx[go_left], out)
    _row_counts(node.right, rows, idx[~go_left], out)


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_tree_svg(root: TreeNode, labels, rows: np.ndarray) -> str:
    labels = list(labels)
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    pos: dict = {}
    _leaf_slots(root, [0], pos)
    depths: dict = {}
    max_depth = _depths(root, 0, depths)
    counts: dict = {}
    _row_counts(root, rows, np.arange(rows.shape[0]), counts)
    n_rows = max(rows.shape[0], 1)

    n_leaves = int(max(pos.values())) + 1

    width = 2 * _MARGIN + max(n_leaves * _X_STEP, _X_STEP)
    height = 2 * _MARGIN + (max_depth + 1) * _Y_STEP

    def cx(node):
        return _MARGIN + pos[id(node)] * _X_STEP + _X_STEP / 2

    def cy(node):
        return _MARGIN + depths[id(node)] * _Y_STEP + _BOX_H / 2

    edges, nodes = [], []

    def walk(node):
        x, y = cx(node), cy(node)
        if node.is_leaf:
            share = 100.0 * counts[id(node)] / n_rows
            fill = "#e4f2e4" if node.value >= 0 else "#f7e6e4"
            nodes.append(
                f'<g><rect x="{x - _BOX_W / 2:.1f}" y="{y - _BOX_H / 2:.1f}" '
                f'width="{_BOX_W}" height="{_BOX_H}" rx="6" fill="{fill}" '
                f'stroke="#7a7a7a"/>'
                f'<text x="{x:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                f'font-size="13" font-family="sans-serif">{node.value:+.3f}</text>'
                f'<text x="{x:.1f}" y="{y + 14:.1f}" text-anchor="middle" '
                f'font-size="11" fill="#555" font-family="sans-serif">'
                f'{share:.0f}% of rows</text></g>')
            return
        rule = f"{labels[node.var] if node.var < len(labels) else f'z{node.var}'}"
        rule = _esc(f"{rule} ≤ {node.threshold:.4g}")
        for child, tag in ((node.left, "yes"), (node.right, "no")):
            x2, y2 = cx(child), cy(child)
            edges.append(f'<line x1="{x:.1f}" y1="{y + _BOX_H / 2:.1f}" '
                         f'x2="{x2:.1f}" y2="{y2 - _BOX_H / 2:.1f}" stroke="#9aa7b8"/>')
            mx, my = (x + x2) / 2, (y + _BOX_H / 2 + y2 - _BOX_H / 2) / 2
            edges.append(f'<text x="{mx:.1f}" y="{my:.1f}" text-anchor="middle" '
                         f'font-size="10" fill="#666" font-family="sans-serif">{tag}</text>')
        nodes.append(
            f'<g><rect x="{x - _BOX_W / 2:.1f}" y="{y - _BOX_H / 2:.1f}" '
            f'width="{_BOX_W}" height="{_BOX_H}" rx="6" fill="#e8eef7" '
            f'stroke="#46618c"/>'
            f'<text x="{x:.1f}" y="{y + 4:.1f}" text-anchor="middle" '
            f'font-size="12" font-family="sans-serif">{rule}</text></g>')
        walk(node.left)
        walk(node.right)

    walk(root)
    body = "\n".join(edges + nodes)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f"{body}\n</svg>\n")
