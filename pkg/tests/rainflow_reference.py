"""Independent batch rainflow counter used as the equivalence oracle.

Implements the classic ASTM E1049-85 three/four-point counting rule on a
complete sequence: reduce the signal to turning points, then sweep once with
a stack, emitting full cycles for interior closures and half cycles both for
closures that still contain the starting point and for the final residue.

Kept deliberately separate from the package's streaming counter so the two
routes share no code.
"""


def turning_points(samples):
    """Collapse a sample sequence to its strict local extrema (with endpoints)."""
    pts = []
    for v in samples:
        v = float(v)
        if pts and v == pts[-1]:
            continue
        if len(pts) >= 2 and (pts[-1] - pts[-2]) * (v - pts[-1]) > 0:
            pts[-1] = v
        else:
            pts.append(v)
    return pts


def rainflow_batch(samples):
    """Count cycles of a full sequence; returns a list of (depth, n_cyc).

    n_cyc is 1.0 for a closed interior cycle and 0.5 for a half cycle
    (start-containing closures and the terminal residue sweep).
    """
    stack = []
    out = []
    for p in turning_points(samples):
        stack.append(p)
        while len(stack) >= 3:
            x = abs(stack[-1] - stack[-2])
            y = abs(stack[-2] - stack[-3])
            if x < y:
                break
            if len(stack) == 3:
                # range still touches the starting point: half cycle
                out.append((y, 0.5))
                stack.pop(0)
            else:
                out.append((y, 1.0))
                del stack[-3:-1]
    for a, b in zip(stack, stack[1:]):
        out.append((abs(b - a), 0.5))
    return out
