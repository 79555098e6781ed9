"""Plane and Kirchhoff-Love plate analysis on trimmed patches.

Assembly applies one quadrature family per element group: nothing on
inactive elements, mapped Gauss cells on trimmed elements, the patch-wise
tensor rule on patch-wise elements, and mixed integration on transition
elements, where patch-wise points serve pairs of untrimmed functions and
full-element Gauss points serve every pair involving a trimmed function.
A plain per-element Gauss method over the active elements is available as
the reference ("gauss") integration path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ElementGeometryError,
    SolverError,
    UnsupportedContinuityError,
)
from .quadrature import (
    CountReport,
    gauss_on_interval,
    predict_counts,
    solve_patchwise_1d,
    tensor_rule,
)
from .splines import (
    Mesh2D,
    NurbsSurfacePatch,
    SplineSpace1D,
    eval_basis_many,
    target_space,
)
from .trimming import (
    DomainClassification,
    F_TRIMMED,
    G_IA,
    G_PW,
    G_T,
    G_TRA,
    classify_domain,
    map_gauss_to_cell,
)

EDGES = ("u_min", "u_max", "v_min", "v_max")


@dataclass(frozen=True)
class Material:
    """Linear elastic material for plane or plate-bending analysis."""

    E: float
    nu: float
    thickness: float = 1.0
    mode: str = "plane_stress"

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if self.mode not in ("plane_stress", "plane_strain", "plate_bending"):
            raise ValueError(f"unknown material mode {self.mode!r}")

    def d_matrix(self) -> np.ndarray:
        e, nu, t = self.E, self.nu, self.thickness
        if self.mode == "plane_stress":
            return e / (1 - nu ** 2) * np.array(
                [[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
        if self.mode == "plane_strain":
            c = e / ((1 + nu) * (1 - 2 * nu))
            return c * np.array([[1 - nu, nu, 0], [nu, 1 - nu, 0],
                                 [0, 0, (1 - 2 * nu) / 2]])
        d = e * t ** 3 / (12 * (1 - nu ** 2))
        return d * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])

    @property
    def bending_stiffness(self) -> float:
        return self.E * self.thickness ** 3 / (12 * (1 - self.nu ** 2))


@dataclass(frozen=True)
class KirschField:
    """Exact stress field of a uniaxially loaded plate with a circular hole.

    The hole is centred at the parametric origin and the far-field tension
    acts along x.
    """

    tx: float
    radius: float

    def stress(self, x, y):
        """Cartesian stresses (sxx, syy, sxy) at physical points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        rho2 = (self.radius / r) ** 2
        rho4 = rho2 ** 2
        c2, s2 = np.cos(2 * theta), np.sin(2 * theta)
        tx = self.tx
        srr = 0.5 * tx * (1 - rho2) + 0.5 * tx * (1 - 4 * rho2 + 3 * rho4) * c2
        stt = 0.5 * tx * (1 + rho2) - 0.5 * tx * (1 + 3 * rho4) * c2
        srt = -0.5 * tx * (1 + 2 * rho2 - 3 * rho4) * s2
        c, s = np.cos(theta), np.sin(theta)
        sxx = srr * c ** 2 + stt * s ** 2 - 2 * srt * s * c
        syy = srr * s ** 2 + stt * c ** 2 + 2 * srt * s * c
        sxy = (srr - stt) * s * c + srt * (c ** 2 - s ** 2)
        return sxx, syy, sxy

    def traction(self, x, y, normal):
        sxx, syy, sxy = self.stress(x, y)
        nx, ny = normal
        return sxx * nx + sxy * ny, sxy * nx + syy * ny


@dataclass(frozen=True)
class DirichletBC:
    """Homogeneous constraint of one displacement component on a patch edge."""

    edge: str
    component: str  # "x" | "y" for plane, "w" for plates

    def __post_init__(self):
        if self.edge not in EDGES:
            raise ValueError(f"unknown edge {self.edge!r}")
        if self.component not in ("x", "y", "w"):
            raise ValueError(f"unknown component {self.component!r}")


@dataclass(frozen=True)
class NeumannBC:
    """Traction on an untrimmed patch edge.

    ``traction`` is either a callable ``(x, y, normal) -> (tx, ty)`` or the
    tag ``"kirsch"``, which evaluates the problem's exact hole field.
    """

    edge: str
    traction: object = "kirsch"

    def __post_init__(self):
        if self.edge not in EDGES:
            raise ValueError(f"unknown edge {self.edge!r}")


@dataclass
class ProblemSpec:
    """One benchmark discretization: geometry, trimming, physics, method."""

    patch: NurbsSurfacePatch
    loops: list
    material: Material
    element_type: str                     # "plane" | "kl_plate"
    dirichlet: list = field(default_factory=list)
    neumann: list = field(default_factory=list)
    body_load: float | None = None        # transverse pressure q_z (plates)
    quadrature: str = "pw_trimm"           # "pw_trimm" | "gauss"
    kirsch: KirschField | None = None
    reference_energy: float | None = None
    probes: list = field(default_factory=list)   # (name, x, y)
    name: str = "problem"

    def __post_init__(self):
        if self.element_type not in ("plane", "kl_plate"):
            raise ValueError(f"unknown element type {self.element_type!r}")
        if self.quadrature not in ("pw_trimm", "gauss"):
            raise ValueError(f"unknown quadrature method {self.quadrature!r}")
        if self.element_type == "kl_plate" \
                and self.material.mode != "plate_bending":
            raise ValueError("kl_plate needs a plate_bending material")
        if self.element_type == "plane" \
                and self.material.mode == "plate_bending":
            raise ValueError("plane element needs a plane material mode")

    @property
    def n_components(self) -> int:
        return 2 if self.element_type == "plane" else 1


@dataclass
class AssembledSystem:
    """Stiffness and load over the active dofs, plus bookkeeping."""

    K: sp.csr_matrix
    f: np.ndarray
    spec: ProblemSpec
    classification: DomainClassification
    active_id: np.ndarray          # (n_fu, n_fv) -> active function index or -1
    active_pairs: np.ndarray       # (n_active, 2) function (i, j)
    n_components: int
    counts: CountReport
    free: np.ndarray | None = None  # boolean mask after BC application

    @property
    def n_dofs(self) -> int:
        return self.f.size

    def dof(self, i: int, j: int, comp: int = 0) -> int:
        a = self.active_id[i, j]
        if a < 0:
            raise KeyError(f"function ({i}, {j}) is inactive")
        return int(a) * self.n_components + comp


@dataclass(frozen=True)
class EnergyReport:
    """Elastic energy of a solved system and its reference error."""

    energy: float
    reference: float | None
    rel_error: float | None
    n_dofs: int
    counts: CountReport


# ---------------------------------------------------------------------------
# Element kernels
# ---------------------------------------------------------------------------


def _plane_b_matrix(nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices, shape (npts, 3, 2*nloc)."""
    npts, nloc = nx.shape
    b = np.zeros((npts, 3, 2 * nloc))
    b[:, 0, 0::2] = nx
    b[:, 1, 1::2] = ny
    b[:, 2, 0::2] = ny
    b[:, 2, 1::2] = nx
    return b


def element_stiffness_plane(nx, ny, weights, material: Material) -> np.ndarray:
    """Sum of B^T D B contributions; ``weights`` already carry det J.

    The thickness multiplies the result; D follows the plane_stress or
    plane_strain closed form.
    """
    b = _plane_b_matrix(nx, ny)
    d = material.d_matrix() * material.thickness
    k = np.einsum("pki,kl,plj,p->ij", b, d, b, weights, optimize=True)
    return 0.5 * (k + k.T)


def element_stiffness_plate(nxx, nyy, nxy, weights,
                            material: Material) -> np.ndarray:
    """Bending stiffness from physical second derivatives."""
    npts, nloc = nxx.shape
    b = np.empty((npts, 3, nloc))
    b[:, 0, :] = nxx
    b[:, 1, :] = nyy
    b[:, 2, :] = 2.0 * nxy
    d = material.d_matrix()
    k = np.einsum("pki,kl,plj,p->ij", b, d, b, weights, optimize=True)
    return 0.5 * (k + k.T)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


class _BasisCache:
    """Per-direction basis tables at 1D point sets, tensor-combined on demand."""

    def __init__(self, spec: ProblemSpec):
        self.patch = spec.patch
        self.su: SplineSpace1D = spec.patch.space_u
        self.sv: SplineSpace1D = spec.patch.space_v
        self.order = 2 if spec.element_type == "kl_plate" else 1
        jac = spec.patch.constant_jacobian()
        if jac is None or not spec.patch.is_polynomial():
            raise ElementGeometryError(
                "assembly requires an affine polynomial patch; "
                "re-parametrize the geometry")
        self.jac = jac[:2, :2]
        self.det_j = float(np.linalg.det(self.jac))
        if self.det_j <= 0:
            raise ElementGeometryError("geometry Jacobian is not positive")
        self.jinv = np.linalg.inv(self.jac)

    def tables(self, xs, space):
        return eval_basis_many(space, xs, self.order)

    def combine(self, bu, bv):
        """Tensor products for one element's point set.

        ``bu``/``bv`` have shape (npts, order+1, p+1); returns dict of
        (npts, nloc) physical value/derivative tables, nloc = (p+1)(q+1),
        functions ordered i-major.
        """
        npts = bu.shape[0]
        p1, q1 = bu.shape[2], bv.shape[2]
        out = {}
        val = np.einsum("pi,pj->pij", bu[:, 0], bv[:, 0]).reshape(npts, -1)
        du = np.einsum("pi,pj->pij", bu[:, 1], bv[:, 0]).reshape(npts, -1)
        dv = np.einsum("pi,pj->pij", bu[:, 0], bv[:, 1]).reshape(npts, -1)
        out["val"] = val
        a, b = self.jinv[0, 0], self.jinv[1, 0]
        c, d = self.jinv[0, 1], self.jinv[1, 1]
        # physical gradient: J^{-T} [du, dv]
        out["dx"] = a * du + c * dv
        out["dy"] = b * du + d * dv
        if self.order >= 2:
            duu = np.einsum("pi,pj->pij", bu[:, 2], bv[:, 0]).reshape(npts, -1)
            duv = np.einsum("pi,pj->pij", bu[:, 1], bv[:, 1]).reshape(npts, -1)
            dvv = np.einsum("pi,pj->pij", bu[:, 0], bv[:, 2]).reshape(npts, -1)
            # affine geometry: H_x = J^{-T} H_u J^{-1}
            out["dxx"] = a * (a * duu + b * duv) + b * (a * duv + b * dvv)
            out["dxy"] = c * (a * duu + b * duv) + d * (a * duv + b * dvv)
            out["dyy"] = c * (c * duu + d * duv) + d * (c * duv + d * dvv)
        return out


def _span_to_element(space: SplineSpace1D) -> np.ndarray:
    """Lookup from knot-span index to element index."""
    kv = space.kv
    breaks = space.breakpoints
    out = np.zeros(kv.m - 1, dtype=int)
    for e in range(space.n_ele):
        s = kv.find_span(0.5 * (breaks[e] + breaks[e + 1]))
        out[s] = e
    return out


def _patchwise_rules(spec: ProblemSpec):
    """1D patch-wise rules for both directions of the patch."""
    tu = target_space(spec.patch.space_u, spec.element_type)
    tv = target_space(spec.patch.space_v, spec.element_type)
    return solve_patchwise_1d(tu), solve_patchwise_1d(tv)


def assemble(spec: ProblemSpec,
             classification: DomainClassification | None = None,
             rules=None) -> AssembledSystem:
    """Assemble stiffness and load under the spec's quadrature method.

    ``rules`` may carry precomputed 1D patch-wise rules ``(rule_u, rule_v)``
    so studies can share them across methods and meshes.
    """
    su, sv = spec.patch.space_u, spec.patch.space_v
    p, q = su.p, sv.p
    if spec.element_type == "kl_plate":
        for space in (su, sv):
            _, mults = space.kv.breakpoints_and_multiplicities()
            if mults.size > 2 and (space.kv.p - mults[1:-1].max()) < 1:
                raise UnsupportedContinuityError(
                    "plate bending needs C1 continuity across elements")
    mesh = Mesh2D.from_spaces(su, sv)
    if classification is None:
        classification = classify_domain((su, sv), spec.loops, mesh)
    dc = classification
    cache = _BasisCache(spec)
    ncomp = spec.n_components

    # active dof numbering
    active = dc.function_labels != 2  # not inactive
    active_id = np.full(active.shape, -1, dtype=int)
    active_id[active] = np.arange(int(active.sum()))
    pairs = np.argwhere(active)
    ndof = int(active.sum()) * ncomp

    use_pw = spec.quadrature == "pw_trimm"
    if use_pw:
        if rules is None:
            rules = _patchwise_rules(spec)
        rule2d = tensor_rule(rules[0], rules[1], mesh)
        pw_first_u, pw_bu = cache.tables(rule2d.points[:, 0], su)
        pw_first_v, pw_bv = cache.tables(rule2d.points[:, 1], sv)
        # bucket by the evaluation span so that points landing exactly on a
        # knot line stay consistent with the right-limit basis convention
        span2e_u = _span_to_element(su)
        span2e_v = _span_to_element(sv)
        pw_flat = (span2e_v[pw_first_v + sv.p] * mesh.n_u
                   + span2e_u[pw_first_u + su.p])
        order = np.argsort(pw_flat, kind="stable")
        counts_flat = np.bincount(pw_flat, minlength=mesh.n_ele)
        pw_buckets = np.split(order, np.cumsum(counts_flat)[:-1])

    # per-direction Gauss tables for full elements
    ng1 = max(p, q) + 1
    gauss_pts_u, gauss_w_u, gauss_first_u, gauss_bu = [], [], [], []
    for e in range(su.n_ele):
        a, b = su.element_bounds(e)
        x, w = gauss_on_interval(ng1, a, b)
        fu, bu = cache.tables(x, su)
        gauss_pts_u.append(x)
        gauss_w_u.append(w)
        gauss_first_u.append(fu)
        gauss_bu.append(bu)
    gauss_pts_v, gauss_w_v, gauss_first_v, gauss_bv = [], [], [], []
    for e in range(sv.n_ele):
        a, b = sv.element_bounds(e)
        x, w = gauss_on_interval(ng1, a, b)
        fv, bv = cache.tables(x, sv)
        gauss_pts_v.append(x)
        gauss_w_v.append(w)
        gauss_first_v.append(fv)
        gauss_bv.append(bv)

    d_mat = spec.material.d_matrix()
    if spec.element_type == "plane":
        d_mat = d_mat * spec.material.thickness

    rows, cols, vals = [], [], []
    f_vec = np.zeros(ndof)
    n_pw_bucketed = 0
    n_mapped_t = 0
    n_gauss_tra_pts = 0
    n_gauss_plain_pts = 0

    def local_dofs(i0, j0):
        """Global dof ids of the (p+1)(q+1) local functions, i-major."""
        ii = np.arange(i0, i0 + p + 1)
        jj = np.arange(j0, j0 + q + 1)
        act = active_id[ii[:, None], jj[None, :]].ravel()
        if np.any(act < 0):
            raise AssertionError("inactive function met in an active element")
        base = act * ncomp
        if ncomp == 1:
            return base, None
        dof = np.empty(base.size * 2, dtype=int)
        dof[0::2] = base
        dof[1::2] = base + 1
        return dof, act

    def trimmed_flags(i0, j0):
        ii = np.arange(i0, i0 + p + 1)
        jj = np.arange(j0, j0 + q + 1)
        return (dc.function_labels[ii[:, None], jj[None, :]] ==
                F_TRIMMED).ravel()

    def k_local(tab, wts):
        if spec.element_type == "plane":
            b = _plane_b_matrix(tab["dx"], tab["dy"])
        else:
            npts, nloc = tab["dxx"].shape
            b = np.empty((npts, 3, nloc))
            b[:, 0] = tab["dxx"]
            b[:, 1] = tab["dyy"]
            b[:, 2] = 2.0 * tab["dxy"]
        k = np.einsum("pki,kl,plj,p->ij", b, d_mat, b, wts, optimize=True)
        return 0.5 * (k + k.T)

    def accumulate(k_loc, f_loc, dof):
        rows.append(np.repeat(dof, dof.size))
        cols.append(np.tile(dof, dof.size))
        vals.append(k_loc.ravel())
        if f_loc is not None:
            np.add.at(f_vec, dof, f_loc)

    def element_tables_gauss(eu, ev):
        nu = gauss_pts_u[eu].size
        nv = gauss_pts_v[ev].size
        bu = np.repeat(gauss_bu[eu], nv, axis=0)
        bv = np.tile(gauss_bv[ev], (nu, 1, 1))
        wts = (np.repeat(gauss_w_u[eu], nv) * np.tile(gauss_w_v[ev], nu)
               * cache.det_j)
        tab = cache.combine(bu, bv)
        return tab, wts

    def element_tables_pw(e):
        idx = pw_buckets[e]
        if idx.size == 0:
            return None, None
        bu = pw_bu[idx]
        bv = pw_bv[idx]
        wts = rule2d.weights[idx] * cache.det_j
        return cache.combine(bu, bv), wts

    q_z = spec.body_load

    for e in range(mesh.n_ele):
        group = dc.groups[e]
        if group == G_IA:
            continue
        eu, ev = mesh.unflat(e)
        i0 = gauss_first_u[eu][0]
        j0 = gauss_first_v[ev][0]
        dof, _ = local_dofs(i0, j0)

        if group == G_T:
            part = dc.partitions.get(e)
            if part is None:
                continue
            pts_list, w_list = [], []
            for cell in part.cells:
                cp, cw = map_gauss_to_cell(cell, p, q)
                pts_list.append(cp)
                w_list.append(cw)
            pts = np.vstack(pts_list)
            wts = np.concatenate(w_list) * cache.det_j
            n_mapped_t += wts.size
            # keep points strictly inside the element so their evaluation
            # window matches the element's function window
            er = mesh.element_rect(e)
            margin = 1e-14 * mesh.extent
            pts[:, 0] = np.clip(pts[:, 0], er[0] + margin, er[1] - margin)
            pts[:, 1] = np.clip(pts[:, 1], er[2] + margin, er[3] - margin)
            fu, bu = cache.tables(pts[:, 0], su)
            fv, bv = cache.tables(pts[:, 1], sv)
            if np.any(fu != i0) or np.any(fv != j0):
                raise AssertionError("mapped point escaped its element")
            tab = cache.combine(bu, bv)
            k_loc = k_local(tab, wts)
            f_loc = None
            if q_z is not None:
                f_loc = tab["val"].T @ (wts * q_z)
            accumulate(k_loc, f_loc, dof)
            continue

        gauss_here = (not use_pw) or group == G_TRA
        pw_here = use_pw and group in (G_PW, G_TRA)

        k_sum = None
        f_sum = None
        if pw_here:
            tab, wts = element_tables_pw(e)
            if tab is not None:
                n_pw_bucketed += wts.size
                k_pw = k_local(tab, wts)
                f_pw = tab["val"].T @ (wts * q_z) if q_z is not None else None
                if group == G_TRA:
                    trf = trimmed_flags(i0, j0)
                    keep = ~(trf[:, None] | trf[None, :])
                    if ncomp == 2:
                        keep = np.kron(keep, np.ones((2, 2), dtype=bool))
                    k_pw = np.where(keep, k_pw, 0.0)
                    if f_pw is not None:
                        f_pw = np.where(~trf, f_pw, 0.0)
                k_sum = k_pw
                f_sum = f_pw
        if gauss_here:
            tab, wts = element_tables_gauss(eu, ev)
            if group == G_TRA and use_pw:
                n_gauss_tra_pts += wts.size
            else:
                n_gauss_plain_pts += wts.size
            k_g = k_local(tab, wts)
            f_g = tab["val"].T @ (wts * q_z) if q_z is not None else None
            if group == G_TRA and use_pw:
                trf = trimmed_flags(i0, j0)
                keep = trf[:, None] | trf[None, :]
                if ncomp == 2:
                    keep = np.kron(keep, np.ones((2, 2), dtype=bool))
                k_g = np.where(keep, k_g, 0.0)
                if f_g is not None:
                    f_g = np.where(trf, f_g, 0.0)
            k_sum = k_g if k_sum is None else k_sum + k_g
            if f_g is not None:
                f_sum = f_g if f_sum is None else f_sum + f_g
        if k_sum is not None:
            accumulate(k_sum, f_sum, dof)

    k_mat = sp.coo_matrix(
        (np.concatenate(vals) if vals else np.empty(0),
         (np.concatenate(rows) if rows else np.empty(0, dtype=int),
          np.concatenate(cols) if cols else np.empty(0, dtype=int))),
        shape=(ndof, ndof)).tocsr()

    groups = dc.group_counts()
    counts = predict_counts(p, q, spec.element_type,
                            groups["t"], groups["tra"], groups["pw"],
                            groups["ia"])
    if use_pw:
        counts.n_actual = n_pw_bucketed + n_gauss_tra_pts + n_mapped_t
    else:
        counts.n_actual = n_gauss_plain_pts + n_mapped_t
    counts.n_mapped_t = n_mapped_t
    counts.n_pw_bucketed = n_pw_bucketed

    system = AssembledSystem(
        K=k_mat, f=f_vec, spec=spec, classification=dc,
        active_id=active_id, active_pairs=pairs, n_components=ncomp,
        counts=counts)
    _apply_neumann(system)
    return system


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------


def _edge_normal_and_fixed(patch, edge):
    u0, u1, v0, v1 = patch.parametric_rect
    if edge == "u_min":
        return np.array([-1.0, 0.0]), ("u", u0)
    if edge == "u_max":
        return np.array([1.0, 0.0]), ("u", u1)
    if edge == "v_min":
        return np.array([0.0, -1.0]), ("v", v0)
    return np.array([0.0, 1.0]), ("v", v1)


def _apply_neumann(system: AssembledSystem):
    """Integrate edge tractions into the load vector.

    Each edge element gets a (max(p, q) + 1)-point Gauss rule; the edge must
    be untrimmed (trimmed boundaries are traction-free in every benchmark).
    """
    spec = system.spec
    if not spec.neumann:
        return
    patch = spec.patch
    su, sv = patch.space_u, patch.space_v
    p, q = su.p, sv.p
    ng = max(p, q) + 1
    for bc in spec.neumann:
        normal, (axis, value) = _edge_normal_and_fixed(patch, bc.edge)
        run_space = sv if axis == "u" else su
        breaks = run_space.breakpoints
        for a, b in zip(breaks[:-1], breaks[1:]):
            ts, ws = gauss_on_interval(ng, a, b)
            for t, w in zip(ts, ws):
                uv = (value, t) if axis == "u" else (t, value)
                ev = patch.evaluate(uv[0], uv[1], 1)
                ds = np.linalg.norm(ev.jacobian[:, 1 if axis == "u" else 0])
                x, y = ev.point[:2]
                if bc.traction == "kirsch":
                    if spec.kirsch is None:
                        raise ValueError(
                            "kirsch traction requested without field data")
                    tx, ty = spec.kirsch.traction(x, y, normal)
                else:
                    tx, ty = bc.traction(x, y, normal)
                nloc = ev.basis
                for a_i in range(p + 1):
                    for b_j in range(q + 1):
                        val = nloc[a_i, b_j]
                        if val == 0.0:
                            continue
                        gi, gj = ev.first_u + a_i, ev.first_v + b_j
                        aid = system.active_id[gi, gj]
                        if aid < 0:
                            continue
                        if system.n_components == 2:
                            system.f[aid * 2] += val * tx * ds * w
                            system.f[aid * 2 + 1] += val * ty * ds * w
                        else:
                            system.f[aid] += val * tx * ds * w


def apply_boundary_conditions(system: AssembledSystem) -> AssembledSystem:
    """Mark constrained dofs (homogeneous, strong) and return the system.

    Edge displacement of an open-knot patch depends only on the edge
    control points, so constraining their dofs enforces the condition
    exactly.
    """
    spec = system.spec
    n_fu, n_fv = system.active_id.shape
    free = np.ones(system.n_dofs, dtype=bool)
    comp_index = {"x": 0, "y": 1, "w": 0}
    for bc in spec.dirichlet:
        comp = comp_index[bc.component]
        if comp >= system.n_components:
            raise ValueError(f"component {bc.component!r} not present")
        if bc.edge == "u_min":
            funcs = [(0, j) for j in range(n_fv)]
        elif bc.edge == "u_max":
            funcs = [(n_fu - 1, j) for j in range(n_fv)]
        elif bc.edge == "v_min":
            funcs = [(i, 0) for i in range(n_fu)]
        else:
            funcs = [(i, n_fv - 1) for i in range(n_fu)]
        for i, j in funcs:
            aid = system.active_id[i, j]
            if aid >= 0:
                free[aid * system.n_components + comp] = False
    system.free = free
    return system


# ---------------------------------------------------------------------------
# Solve and energy
# ---------------------------------------------------------------------------


def solve(system: AssembledSystem, method: str = "direct",
          use_scaling: bool = True) -> np.ndarray:
    """Displacements with two-sided diagonal scaling of the free block.

    The scaled system ``D^{-1/2} K D^{-1/2}`` keeps tiny cut basis
    functions from wrecking the conditioning; one step of iterative
    refinement polishes the direct solve.  ``method="cg"`` switches to a
    Jacobi-preconditioned conjugate-gradient solve.
    """
    if system.free is None:
        apply_boundary_conditions(system)
    free = system.free
    k_ff = system.K[free][:, free].tocsc()
    f_f = system.f[free]
    n = f_f.size
    if n == 0:
        return np.zeros(system.n_dofs)
    diag = k_ff.diagonal()
    bad = np.flatnonzero(diag <= 0)
    if bad.size:
        raise SolverError(
            f"non-positive stiffness diagonal at free dof {int(bad[0])}")
    scale = 1.0 / np.sqrt(diag) if use_scaling else np.ones(n)
    s_mat = sp.diags(scale)
    k_s = (s_mat @ k_ff @ s_mat).tocsc()
    b_s = scale * f_f
    if method == "direct":
        try:
            lu = spla.splu(k_s)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        y = lu.solve(b_s)
        # one iterative refinement pass
        r = b_s - k_s @ y
        y = y + lu.solve(r)
    elif method == "cg":
        y, info = spla.cg(k_s, b_s, rtol=1e-14, atol=0.0, maxiter=20 * n)
        if info != 0:
            raise SolverError(f"conjugate gradients stopped with info={info}")
    else:
        raise ValueError(f"unknown solver method {method!r}")
    u_f = scale * y
    res = np.linalg.norm(k_ff @ u_f - f_f)
    nf = np.linalg.norm(f_f)
    if nf > 0 and res / nf > 1e-10:
        raise SolverError(
            f"solver residual {res / nf:.2e} exceeds 1e-10")
    u = np.zeros(system.n_dofs)
    u[free] = u_f
    return u


def elastic_energy(u: np.ndarray, system: AssembledSystem) -> EnergyReport:
    """W = u^T K u / 2 with the relative error against the reference."""
    w = 0.5 * float(u @ (system.K @ u))
    ref = system.spec.reference_energy
    err = abs(w - ref) / abs(ref) if ref else None
    ndofs = int(system.free.sum()) if system.free is not None else system.n_dofs
    return EnergyReport(energy=w, reference=ref, rel_error=err,
                        n_dofs=ndofs, counts=system.counts)


def displacement_at(system: AssembledSystem, u: np.ndarray, x: float,
                    y: float) -> np.ndarray:
    """Displacement components at a physical point of an affine patch."""
    patch = system.spec.patch
    jac = patch.constant_jacobian()
    if jac is None:
        raise ElementGeometryError("probes need an affine patch")
    u0, u1, v0, v1 = patch.parametric_rect
    origin = patch.evaluate(u0, v0, 0).point
    uv = np.linalg.solve(jac[:2, :2], np.asarray([x, y]) - origin[:2])
    ev = patch.evaluate(u0 + uv[0], v0 + uv[1], 0)
    ncomp = system.n_components
    out = np.zeros(ncomp)
    for a_i in range(patch.space_u.p + 1):
        for b_j in range(patch.space_v.p + 1):
            gi, gj = ev.first_u + a_i, ev.first_v + b_j
            aid = system.active_id[gi, gj]
            if aid < 0:
                continue
            for c in range(ncomp):
                out[c] += ev.basis[a_i, b_j] * u[aid * ncomp + c]
    return out


def run_case(spec: ProblemSpec, classification=None, rules=None):
    """Assemble, constrain, solve; returns (system, u, EnergyReport)."""
    system = assemble(spec, classification=classification, rules=rules)
    apply_boundary_conditions(system)
    u = solve(system)
    return system, u, elastic_energy(u, system)
