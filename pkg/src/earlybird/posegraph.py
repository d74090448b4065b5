"""SE(2) pose graphs: residuals, robust cost, damped Gauss-Newton and g2o text I/O.

Poses are ``(x, y, theta)`` float arrays with theta wrapped to (-pi, pi].
An edge ``(i, j, z)`` measures the pose of ``j`` expressed in the frame of ``i``.
Residuals follow the g2o SE2 convention: the pose vector of ``z^-1 (x_i^-1 x_j)``.
"""
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotConnected, ParseError, SingularNormalEquations, UnknownTag

DEFAULT_ODOMETRY_INFORMATION = np.diag([20.0, 20.0, 20.0])


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]; values already in range are returned unchanged."""
    a = np.asarray(a, dtype=np.float64)
    w = np.where((a > -np.pi) & (a <= np.pi), a, np.pi - np.mod(np.pi - a, 2.0 * np.pi))
    return float(w) if np.ndim(w) == 0 else w


def pose(x, y, theta):
    return np.array([float(x), float(y), wrap_angle(theta)])


def se2_matrix(p):
    c, s = np.cos(p[2]), np.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0.0, 0.0, 1.0]])


def se2_from_matrix(m):
    return pose(m[0, 2], m[1, 2], np.arctan2(m[1, 0], m[0, 0]))


def se2_compose(a, b):
    c, s = np.cos(a[2]), np.sin(a[2])
    return pose(a[0] + c * b[0] - s * b[1], a[1] + s * b[0] + c * b[1], a[2] + b[2])


def se2_inverse(a):
    c, s = np.cos(a[2]), np.sin(a[2])
    return pose(-c * a[0] - s * a[1], s * a[0] - c * a[1], -a[2])


def se2_between(a, b):
    """Pose of ``b`` in the frame of ``a``."""
    return se2_compose(se2_inverse(a), b)


def integrate(start, motions):
    """Dead-reckon a trajectory from a start pose and successive relative motions."""
    out = [pose(*start)]
    for m in motions:
        out.append(se2_compose(out[-1], m))
    return out


class EdgeKind(str, Enum):
    ODOMETRY = "odometry"
    LOOP = "loop"


@dataclass
class SE2Constraint:
    from_id: int
    to_id: int
    measurement: np.ndarray
    information: np.ndarray = field(default_factory=lambda: DEFAULT_ODOMETRY_INFORMATION.copy())
    kind: EdgeKind = EdgeKind.ODOMETRY

    def __post_init__(self):
        self.measurement = pose(*self.measurement)
        info = np.asarray(self.information, dtype=np.float64)
        if info.shape != (3, 3) or not np.allclose(info, info.T, atol=1e-12, rtol=0.0):
            raise ValueError("information must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(info) <= 0.0):
            raise ValueError("information must be positive definite")
        self.information = info
        self.kind = EdgeKind(self.kind)

    @property
    def dx(self):
        return float(self.measurement[0])

    @property
    def dy(self):
        return float(self.measurement[1])

    @property
    def dtheta(self):
        return float(self.measurement[2])


@dataclass
class PoseGraph:
    vertices: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    anchor_id: int = None

    def add_vertex(self, vid, p):
        self.vertices[int(vid)] = pose(*p)
        if self.anchor_id is None:
            self.anchor_id = int(vid)

    def add_edge(self, e):
        self.edges.append(e)

    @property
    def anchor(self):
        if self.anchor_id is not None:
            return self.anchor_id
        return min(self.vertices) if self.vertices else None

    def copy(self):
        return PoseGraph({k: v.copy() for k, v in self.vertices.items()},
                         [SE2Constraint(e.from_id, e.to_id, e.measurement.copy(), e.information.copy(), e.kind)
                          for e in self.edges],
                         self.anchor_id)

    def validate(self):
        for e in self.edges:
            for vid in (e.from_id, e.to_id):
                if vid not in self.vertices:
                    raise ValueError(f"edge endpoint {vid} is not a vertex")
        if not self.vertices:
            return
        anchor = self.anchor
        if anchor not in self.vertices:
            raise ValueError(f"anchor {anchor} is not a vertex")
        nbrs = {v: [] for v in self.vertices}
        for e in self.edges:
            nbrs[e.from_id].append(e.to_id)
            nbrs[e.to_id].append(e.from_id)
        seen = {anchor}
        queue = deque([anchor])
        while queue:
            for n in nbrs[queue.popleft()]:
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        if len(seen) != len(self.vertices):
            missing = sorted(set(self.vertices) - seen)
            raise NotConnected(f"{len(missing)} vertices unreachable from anchor, e.g. {missing[:5]}")

    def positions(self, ids=None):
        ids = sorted(self.vertices) if ids is None else ids
        return np.array([self.vertices[i][:2] for i in ids])


@dataclass(frozen=True)
class RobustKernel:
    kind: str = "none"
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "cauchy"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "cauchy" and not self.c > 0:
            raise ValueError("Cauchy scale must be positive")

    def rho(self, s):
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "none":
            return s
        c2 = self.c * self.c
        return c2 * np.log1p(s / c2)

    def weight(self, s):
        """Derivative of ``rho`` with respect to the squared error."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "none":
            return np.ones_like(s)
        return 1.0 / (1.0 + s / (self.c * self.c))


NO_KERNEL = RobustKernel("none")


def edge_residual(e, xi, xj):
    z = e.measurement if isinstance(e, SE2Constraint) else np.asarray(e, dtype=np.float64)
    r, _, _ = _residuals_and_jacobians(z[None], np.asarray(xi)[None], np.asarray(xj)[None])
    return r[0]


def edge_jacobians(e, xi, xj):
    """Analytic ``(d r / d xi, d r / d xj)``, each 3x3."""
    z = e.measurement if isinstance(e, SE2Constraint) else np.asarray(e, dtype=np.float64)
    _, ji, jj = _residuals_and_jacobians(z[None], np.asarray(xi)[None], np.asarray(xj)[None])
    return ji[0], jj[0]


def _residuals_and_jacobians(z, xi, xj):
    ci, si = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
    dx = xj[:, 0] - xi[:, 0]
    dy = xj[:, 1] - xi[:, 1]
    # x_i^-1 x_j translation
    tx = ci * dx + si * dy
    ty = -si * dx + ci * dy
    ux = tx - z[:, 0]
    uy = ty - z[:, 1]
    r = np.empty_like(z)
    r[:, 0] = cz * ux + sz * uy
    r[:, 1] = -sz * ux + cz * uy
    r[:, 2] = wrap_angle(xj[:, 2] - xi[:, 2] - z[:, 2])

    # A = Rz^T Ri^T
    a00 = cz * ci - sz * si
    a01 = cz * si + sz * ci
    a10 = -sz * ci - cz * si
    a11 = -sz * si + cz * ci
    # d(Ri^T d)/d theta_i
    dtx = -si * dx + ci * dy
    dty = -ci * dx - si * dy
    m = len(z)
    jj = np.zeros((m, 3, 3))
    jj[:, 0, 0], jj[:, 0, 1] = a00, a01
    jj[:, 1, 0], jj[:, 1, 1] = a10, a11
    jj[:, 2, 2] = 1.0
    ji = np.zeros((m, 3, 3))
    ji[:, :2, :2] = -jj[:, :2, :2]
    ji[:, 0, 2] = cz * dtx + sz * dty
    ji[:, 1, 2] = -sz * dtx + cz * dty
    ji[:, 2, 2] = -1.0
    return r, ji, jj


class _Problem:
    def __init__(self, g):
        self.ids = sorted(g.vertices)
        self.index = {v: k for k, v in enumerate(self.ids)}
        self.x = np.array([g.vertices[v] for v in self.ids], dtype=np.float64).reshape(-1, 3)
        self.ei = np.array([self.index[e.from_id] for e in g.edges], dtype=np.intp)
        self.ej = np.array([self.index[e.to_id] for e in g.edges], dtype=np.intp)
        self.z = np.array([e.measurement for e in g.edges], dtype=np.float64).reshape(-1, 3)
        self.omega = np.array([e.information for e in g.edges], dtype=np.float64).reshape(-1, 3, 3)
        anchor = g.anchor
        self.free = np.array([k for k, v in enumerate(self.ids) if v != anchor], dtype=np.intp)
        self.slot = np.full(len(self.ids), -1, dtype=np.intp)
        self.slot[self.free] = np.arange(len(self.free))

    def squared_errors(self, x):
        r, _, _ = _residuals_and_jacobians(self.z, x[self.ei], x[self.ej])
        return np.einsum("ma,mab,mb->m", r, self.omega, r)


def chi2(g, kernel=NO_KERNEL):
    """Total robust cost ``sum rho(r^T Omega r)`` over the graph's edges."""
    if not g.edges:
        return 0.0
    prob = _Problem(g)
    return float(np.sum(kernel.rho(prob.squared_errors(prob.x))))


def _normal_equations(prob, x, kernel):
    r, ji, jj = _residuals_and_jacobians(prob.z, x[prob.ei], x[prob.ej])
    s = np.einsum("ma,mab,mb->m", r, prob.omega, r)
    w = kernel.weight(s)
    wo = prob.omega * w[:, None, None]
    n = 3 * len(prob.free)
    b = np.zeros(n)
    rows, cols, vals = [], [], []
    blocks = {"i": (ji, prob.slot[prob.ei]), "j": (jj, prob.slot[prob.ej])}
    wor = np.einsum("mab,mb->ma", wo, r)
    for ka, (ja, sa) in blocks.items():
        keep = sa >= 0
        g = np.einsum("mba,mb->ma", ja, wor)
        np.add.at(b, (3 * sa[keep, None] + np.arange(3)).ravel(), g[keep].ravel())
        for kb, (jb, sb) in blocks.items():
            both = keep & (sb >= 0)
            hab = np.einsum("mca,mcd,mdb->mab", ja, wo, jb)[both]
            ra = 3 * sa[both, None, None] + np.arange(3)[None, :, None]
            cb = 3 * sb[both, None, None] + np.arange(3)[None, None, :]
            rows.append(np.broadcast_to(ra, hab.shape).ravel())
            cols.append(np.broadcast_to(cb, hab.shape).ravel())
            vals.append(hab.ravel())
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsc()
    return H, b


def _solve_damped(H, b, lam):
    d = H.diagonal()
    if np.any(d <= 0.0):
        raise SingularNormalEquations("a free vertex has no constraining edge")
    A = (H + sp.diags(lam * d, format="csc")).tocsc()
    try:
        return spla.splu(A).solve(-b)
    except RuntimeError as exc:
        raise SingularNormalEquations(str(exc)) from None


class OptimizeResult(NamedTuple):
    graph: PoseGraph
    trace: list
    iterations: int


def optimize(g, kernel=NO_KERNEL, max_iter=100, tol=1e-9, initial_damping=1e-4):
    """Robust Levenberg-damped Gauss-Newton with the anchor vertex held fixed.

    Robust kernels enter through iteratively reweighted least squares. A step
    is accepted only when the robust cost decreases; ``trace`` lists the cost
    at the start and after every accepted step.
    """
    g.validate()
    out = g.copy()
    if not g.edges or len(g.vertices) < 2:
        return OptimizeResult(out, [chi2(g, kernel)], 0)
    prob = _Problem(g)
    x = prob.x.copy()
    cost = float(np.sum(kernel.rho(prob.squared_errors(x))))
    trace = [cost]
    lam = initial_damping
    it = 0
    while it < max_iter and cost > 0.0:
        it += 1
        H, b = _normal_equations(prob, x, kernel)
        delta = _solve_damped(H, b, lam)
        if not np.all(np.isfinite(delta)):
            raise SingularNormalEquations("normal equations produced a non-finite step")
        xn = x.copy()
        xn[prob.free] += delta.reshape(-1, 3)
        xn[:, 2] = wrap_angle(xn[:, 2])
        new_cost = float(np.sum(kernel.rho(prob.squared_errors(xn))))
        if new_cost < cost:
            done = abs(cost - new_cost) < tol * cost
            x, cost = xn, new_cost
            trace.append(cost)
            lam *= 0.5
            if done:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    for k, vid in enumerate(prob.ids):
        out.vertices[vid] = x[k].copy()
    return OptimizeResult(out, trace, it)


def _fmt(v):
    return repr(float(v))


def write_g2o(g):
    lines = []
    for vid in sorted(g.vertices):
        p = g.vertices[vid]
        lines.append(f"VERTEX_SE2 {vid} {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for e in g.edges:
        info = e.information
        upper = [info[0, 0], info[0, 1], info[0, 2], info[1, 1], info[1, 2], info[2, 2]]
        m = e.measurement
        lines.append(f"EDGE_SE2 {e.from_id} {e.to_id} {_fmt(m[0])} {_fmt(m[1])} {_fmt(m[2])} "
                     + " ".join(_fmt(v) for v in upper))
    return "".join(line + "\n" for line in lines)


def parse_g2o(text):
    """Parse ``VERTEX_SE2`` / ``EDGE_SE2`` lines.

    Edges between consecutive ids are tagged odometry, all others loop. Blank
    lines and ``#`` comments are ignored; any other tag is rejected.
    """
    g = PoseGraph()
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        tag = tok[0]
        if tag == "VERTEX_SE2":
            if len(tok) != 5:
                raise ParseError(lineno, f"VERTEX_SE2 needs 4 fields, got {len(tok) - 1}")
            try:
                vid = int(tok[1])
                vals = [float(t) for t in tok[2:]]
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if vid in g.vertices:
                raise ParseError(lineno, f"duplicate vertex {vid}")
            g.vertices[vid] = pose(*vals)
        elif tag == "EDGE_SE2":
            if len(tok) != 12:
                raise ParseError(lineno, f"EDGE_SE2 needs 5 pose fields and 6 information entries, "
                                         f"got {len(tok) - 1} fields")
            try:
                i, j = int(tok[1]), int(tok[2])
                vals = [float(t) for t in tok[3:]]
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            a, b_, c, d, e_, f = vals[3:]
            info = np.array([[a, b_, c], [b_, d, e_], [c, e_, f]])
            kind = EdgeKind.ODOMETRY if j == i + 1 else EdgeKind.LOOP
            try:
                g.edges.append(SE2Constraint(i, j, np.array(vals[:3]), info, kind))
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
        else:
            raise UnknownTag(lineno, tag)
    if g.vertices:
        g.anchor_id = min(g.vertices)
    return g


def write_trajectory_csv(path, ids, poses):
    with open(path, "w") as f:
        f.write("id,x,y,theta\n")
        for i, p in zip(ids, poses):
            f.write(f"{int(i)},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}\n")


def read_trajectory_csv(path):
    ids, poses = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "id,x,y,theta":
            raise ParseError(1, f"unexpected header {header!r}")
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != 4:
                raise ParseError(lineno, "expected 4 columns")
            ids.append(int(parts[0]))
            poses.append(pose(*(float(p) for p in parts[1:])))
    return ids, poses
