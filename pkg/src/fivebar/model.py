"""Closed-form geometry of the planar five-bar linkage.

Ground pivots A and B carry cranks of lengths l1 = |AC| and l3 = |BD| whose
moving ends connect through coupler links l2 = |CF| and l4 = |DF|.  The end
effector P is fixed in the coupler frame spanned by the unit vector u from C
toward F and its +90 degree rotation u_perp, at local coordinates (p, q).
A configuration is stored ambiently as z = (x, y, c_phi, s_phi, c_psi, s_psi)
so every constraint is polynomial; phi and psi are the crank angles at A and
B measured in the canonical frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TANGENCY_REL_TOL = 1e-9


class FiveBarError(Exception):
    """Base class for five-bar geometry errors."""


class DegenerateDesignError(FiveBarError):
    """Ground pivots coincide or a dimension is out of range."""


class SingularJacobianError(FiveBarError):
    """Velocity map requested at (or too close to) an input singularity."""


@dataclass(frozen=True)
class FrameTransform:
    """Rigid map from canonical coordinates back to the original frame."""

    angle: float
    translation: tuple[float, float]

    def point_to_original(self, xy):
        xy = np.asarray(xy, dtype=float)
        c, s = math.cos(self.angle), math.sin(self.angle)
        x = c * xy[..., 0] - s * xy[..., 1] + self.translation[0]
        y = s * xy[..., 0] + c * xy[..., 1] + self.translation[1]
        return np.stack([x, y], axis=-1)

    def point_to_canonical(self, xy):
        xy = np.asarray(xy, dtype=float)
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx = xy[..., 0] - self.translation[0]
        dy = xy[..., 1] - self.translation[1]
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)

    def config_to_original(self, z):
        """Map a configuration row (or array of rows) to the original frame."""
        z = np.asarray(z, dtype=float)
        c, s = math.cos(self.angle), math.sin(self.angle)
        out = np.empty_like(z)
        out[..., 0] = c * z[..., 0] - s * z[..., 1] + self.translation[0]
        out[..., 1] = s * z[..., 0] + c * z[..., 1] + self.translation[1]
        # crank angles shift by the frame rotation
        out[..., 2] = c * z[..., 2] - s * z[..., 3]
        out[..., 3] = s * z[..., 2] + c * z[..., 3]
        out[..., 4] = c * z[..., 4] - s * z[..., 5]
        out[..., 5] = s * z[..., 4] + c * z[..., 5]
        return out


@dataclass(frozen=True)
class FiveBarDesign:
    """Dimensions of a five-bar linkage in its original drawing frame."""

    a_x: float
    a_y: float
    b_x: float
    b_y: float
    l1: float
    l2: float
    l3: float
    l4: float
    p: float
    q: float

    def validate(self):
        lengths = (self.l1, self.l2, self.l3, self.l4)
        if any(not (l > 0.0) for l in lengths):
            raise DegenerateDesignError(f"link lengths must be positive, got {lengths}")
        if self.p == 0.0 and self.q == 0.0:
            raise DegenerateDesignError("end effector must not coincide with C")
        if math.hypot(self.b_x - self.a_x, self.b_y - self.a_y) <= 1e-14:
            raise DegenerateDesignError("ground pivots A and B coincide")
        return self


@dataclass(frozen=True)
class CanonicalDesign:
    """Five-bar dimensions reduced to the frame with A at the origin and B on +x."""

    b_x: float
    l1: float
    l2: float
    l3: float
    l4: float
    p: float
    q: float
    frame: FrameTransform = field(default=FrameTransform(0.0, (0.0, 0.0)))

    @property
    def rho(self) -> float:
        """Distance |CP| from the coupler pivot to the end effector."""
        return math.hypot(self.p, self.q)

    @property
    def ground_b(self):
        return np.array([self.b_x, 0.0])


def canonicalize(design: FiveBarDesign) -> CanonicalDesign:
    """Translate A to the origin and rotate B onto the positive x axis."""
    design.validate()
    dx = design.b_x - design.a_x
    dy = design.b_y - design.a_y
    dist = math.hypot(dx, dy)
    if dist <= 1e-14:
        raise DegenerateDesignError("ground pivots A and B coincide")
    angle = math.atan2(dy, dx)
    frame = FrameTransform(angle=angle, translation=(design.a_x, design.a_y))
    return CanonicalDesign(
        b_x=dist,
        l1=design.l1,
        l2=design.l2,
        l3=design.l3,
        l4=design.l4,
        p=design.p,
        q=design.q,
        frame=frame,
    )


@dataclass
class Configuration:
    """Point z = (x, y, c_phi, s_phi, c_psi, s_psi) on the configuration manifold.

    ``sigma`` is the kinematic branch sign (sign of cross(D-C, F-C)); it is 0
    for solutions produced at a circle tangency, which also sets ``tangency``.
    """

    x: float
    y: float
    c_phi: float
    s_phi: float
    c_psi: float
    s_psi: float
    sigma: int = 0
    tangency: bool = False

    @property
    def phi(self) -> float:
        return math.atan2(self.s_phi, self.c_phi)

    @property
    def psi(self) -> float:
        return math.atan2(self.s_psi, self.c_psi)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.c_phi, self.s_phi, self.c_psi, self.s_psi])

    @classmethod
    def from_array(cls, z, sigma: int = 0, tangency: bool = False) -> "Configuration":
        z = np.asarray(z, dtype=float)
        return cls(z[0], z[1], z[2], z[3], z[4], z[5], sigma=sigma, tangency=tangency)


@dataclass(frozen=True)
class VelocityEllipse:
    """Image of the unit circle of crank rates under the output velocity map."""

    semi_major: float
    semi_minor: float
    major_axis_angle: float


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _circle_intersections(c0, r0, c1, r1, rel_tol=TANGENCY_REL_TOL):
    """Intersection points of two circles plus a tangency flag.

    Returns (points, tangent) where points is a list of ndarray(2).  The two
    regular intersections are ordered so the first lies on the +90 degree side
    of the center line c0->c1.
    """
    c0 = np.asarray(c0, float)
    c1 = np.asarray(c1, float)
    delta = c1 - c0
    d = math.hypot(delta[0], delta[1])
    band = rel_tol * (r0 + r1)
    if d <= band:
        return [], False
    a = (d * d + r0 * r0 - r1 * r1) / (2.0 * d)
    h_sq = r0 * r0 - a * a
    tangent = abs(d - (r0 + r1)) < band or abs(d - abs(r0 - r1)) < band
    u = delta / d
    mid = c0 + a * u
    if tangent:
        return [mid], True
    if h_sq < 0.0:
        return [], False
    h = math.sqrt(h_sq)
    perp = np.array([-u[1], u[0]])
    return [mid + h * perp, mid - h * perp], False


def _coupler_points(d: CanonicalDesign, Z):
    """Chain points (C, D, F, P) for configuration rows Z of shape (..., 6)."""
    Z = np.asarray(Z, dtype=float)
    x, y = Z[..., 0], Z[..., 1]
    cphi, sphi = Z[..., 2], Z[..., 3]
    cpsi, spsi = Z[..., 4], Z[..., 5]
    C = np.stack([d.l1 * cphi, d.l1 * sphi], axis=-1)
    D = np.stack([d.b_x + d.l3 * cpsi, d.l3 * spsi], axis=-1)
    P = np.stack([x, y], axis=-1)
    rel = P - C
    rho_sq = d.p * d.p + d.q * d.q
    # u = R (P - C) / rho^2 with R = [[p, q], [-q, p]] inverts P = C + p u + q u_perp
    ux = (d.p * rel[..., 0] + d.q * rel[..., 1]) / rho_sq
    uy = (-d.q * rel[..., 0] + d.p * rel[..., 1]) / rho_sq
    F = C + d.l2 * np.stack([ux, uy], axis=-1)
    return C, D, F, P


def forward_kinematics(d: CanonicalDesign, phi: float, psi: float):
    """Assemble the linkage for crank angles (phi, psi).

    Returns at most two configurations, one per coupler branch.  Disjoint or
    nested crank circles give an empty list; a tangency within tolerance gives
    a single configuration flagged as produced at an input singularity.
    """
    C = np.array([d.l1 * math.cos(phi), d.l1 * math.sin(phi)])
    Dm = np.array([d.b_x + d.l3 * math.cos(psi), d.l3 * math.sin(psi)])
    points, tangent = _circle_intersections(C, d.l2, Dm, d.l4)
    out = []
    for k, F in enumerate(points):
        u = (F - C) / d.l2
        P = C + d.p * u + d.q * np.array([-u[1], u[0]])
        sigma = 0 if tangent else (1 if k == 0 else -1)
        out.append(
            Configuration(
                P[0], P[1],
                math.cos(phi), math.sin(phi), math.cos(psi), math.sin(psi),
                sigma=sigma, tangency=tangent,
            )
        )
    return out


def fk_batch(d: CanonicalDesign, phi, psi):
    """Vectorized forward kinematics over angle arrays.

    Returns (Z, sigma, parent, tangency): configuration rows (K, 6), branch
    signs, indices into the input arrays, and tangency flags.  Regular inputs
    contribute two rows, tangencies one, unreachable inputs none.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    cphi, sphi = np.cos(phi), np.sin(phi)
    cpsi, spsi = np.cos(psi), np.sin(psi)
    Cx, Cy = d.l1 * cphi, d.l1 * sphi
    Dx, Dy = d.b_x + d.l3 * cpsi, d.l3 * spsi
    ex, ey = Dx - Cx, Dy - Cy
    dist = np.hypot(ex, ey)
    band = TANGENCY_REL_TOL * (d.l2 + d.l4)
    ok = dist > band
    dist_safe = np.where(ok, dist, 1.0)
    a = (dist_safe**2 + d.l2**2 - d.l4**2) / (2.0 * dist_safe)
    h_sq = d.l2**2 - a**2
    tangent = ok & (
        (np.abs(dist - (d.l2 + d.l4)) < band) | (np.abs(dist - abs(d.l2 - d.l4)) < band)
    )
    solvable = ok & (tangent | (h_sq >= 0.0))
    h = np.sqrt(np.clip(h_sq, 0.0, None))
    h = np.where(tangent, 0.0, h)

    ux, uy = ex / dist_safe, ey / dist_safe
    midx, midy = Cx + a * ux, Cy + a * uy
    rows, sigmas, parents, tangs = [], [], [], []
    for branch in (1, -1):
        mask = solvable if branch == 1 else (solvable & ~tangent)
        if not np.any(mask):
            continue
        Fx = midx[mask] + branch * h[mask] * (-uy[mask])
        Fy = midy[mask] + branch * h[mask] * (ux[mask])
        cux = (Fx - Cx[mask]) / d.l2
        cuy = (Fy - Cy[mask]) / d.l2
        Px = Cx[mask] + d.p * cux - d.q * cuy
        Py = Cy[mask] + d.p * cuy + d.q * cux
        Z = np.column_stack([Px, Py, cphi[mask], sphi[mask], cpsi[mask], spsi[mask]])
        rows.append(Z)
        tg = tangent[mask]
        sigmas.append(np.where(tg, 0, branch))
        parents.append(np.nonzero(mask)[0])
        tangs.append(tg)
    if not rows:
        return (np.zeros((0, 6)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, bool))
    Z = np.concatenate(rows)
    sigma = np.concatenate(sigmas).astype(int)
    parent = np.concatenate(parents)
    tang = np.concatenate(tangs)
    order = np.lexsort((-sigma, parent))
    return Z[order], sigma[order], parent[order], tang[order]


def inverse_kinematics(d: CanonicalDesign, x: float, y: float):
    """All linkage configurations placing the end effector at (x, y).

    Up to two crank angles phi exist at A, and for each the coupler point F is
    fixed, leaving up to two crank angles psi at B: at most four solutions.
    """
    P = np.array([x, y], dtype=float)
    rho = d.rho
    c_points, tan_phi = _circle_intersections(np.zeros(2), d.l1, P, rho)
    rho_sq = rho * rho
    out = []
    for C in c_points:
        rel = P - C
        ux = (d.p * rel[0] + d.q * rel[1]) / rho_sq
        uy = (-d.q * rel[0] + d.p * rel[1]) / rho_sq
        F = C + d.l2 * np.array([ux, uy])
        d_points, tan_psi = _circle_intersections(d.ground_b, d.l3, F, d.l4)
        for Dm in d_points:
            dc = Dm - C
            fc = F - C
            cross = _cross(dc[0], dc[1], fc[0], fc[1])
            sigma = 0 if abs(cross) < 1e-12 else (1 if cross > 0 else -1)
            nphi = math.hypot(C[0], C[1])
            ndb = math.hypot(Dm[0] - d.b_x, Dm[1])
            out.append(
                Configuration(
                    x, y,
                    C[0] / nphi, C[1] / nphi,
                    (Dm[0] - d.b_x) / ndb, Dm[1] / ndb,
                    sigma=sigma, tangency=tan_phi or tan_psi,
                )
            )
    return out


def ik_batch(d: CanonicalDesign, x, y):
    """Vectorized inverse kinematics; returns (Z, sigma, parent)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    rows, sigmas, parents = [], [], []
    for i in range(x.size):
        for cfg in inverse_kinematics(d, float(x[i]), float(y[i])):
            rows.append(cfg.to_array())
            sigmas.append(cfg.sigma)
            parents.append(i)
    if not rows:
        return np.zeros((0, 6)), np.zeros(0, int), np.zeros(0, int)
    return np.array(rows), np.array(sigmas, int), np.array(parents, int)


def residual_inf(d: CanonicalDesign, Z):
    """Infinity norm of the four closure residuals, scaled to O(1)."""
    Z = np.asarray(Z, dtype=float)
    C, D, F, P = _coupler_points(d, Z)
    r1 = np.sum((P - C) ** 2, axis=-1) - d.rho**2
    r2 = np.sum((D - F) ** 2, axis=-1) - d.l4**2
    r3 = Z[..., 2] ** 2 + Z[..., 3] ** 2 - 1.0
    r4 = Z[..., 4] ** 2 + Z[..., 5] ** 2 - 1.0
    return np.max(np.abs(np.stack([r1, r2, r3, r4], axis=-1)), axis=-1)


def output_sing_values(d: CanonicalDesign, z):
    """Collinearity measures h1 = cross(C-A, P-C) and h2 = cross(D-B, F-D)."""
    Z = z.to_array() if isinstance(z, Configuration) else np.asarray(z, float)
    C, D, F, P = _coupler_points(d, Z)
    h1 = _cross(C[..., 0], C[..., 1], P[..., 0] - C[..., 0], P[..., 1] - C[..., 1])
    h2 = _cross(
        D[..., 0] - d.b_x, D[..., 1],
        F[..., 0] - D[..., 0], F[..., 1] - D[..., 1],
    )
    return h1, h2


def input_sing_value(d: CanonicalDesign, z):
    """Branch measure cross(D-C, F-C); zero exactly at input singularities."""
    Z = z.to_array() if isinstance(z, Configuration) else np.asarray(z, float)
    C, D, F, _ = _coupler_points(d, Z)
    return _cross(
        D[..., 0] - C[..., 0], D[..., 1] - C[..., 1],
        F[..., 0] - C[..., 0], F[..., 1] - C[..., 1],
    )


def velocity_maps_batch(d: CanonicalDesign, Z):
    """Output velocity maps (d(x,y)/d(phi,psi)) for configuration rows Z.

    Returns (J, ok) where J has shape (N, 2, 2) and ok marks rows where the
    closure Jacobian in (x, y) was invertible.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    C, D, F, P = _coupler_points(d, Z)
    rho_sq = d.rho**2
    h1, h2 = output_sing_values(d, Z)

    # closure residual gradients in (x, y)
    g1 = 2.0 * (P - C)
    fd = F - D
    g2 = 2.0 * d.l2 * np.stack(
        [d.p * fd[..., 0] - d.q * fd[..., 1], d.q * fd[..., 0] + d.p * fd[..., 1]],
        axis=-1,
    )
    Jz = np.stack([g1, g2], axis=-2)

    # closure residual gradients in (phi, psi)
    dC = d.l1 * np.stack([-Z[..., 3], Z[..., 2]], axis=-1)
    RdC = np.stack(
        [d.p * dC[..., 0] + d.q * dC[..., 1], -d.q * dC[..., 0] + d.p * dC[..., 1]],
        axis=-1,
    )
    dF_dphi = dC - (d.l2 / rho_sq) * RdC
    e21 = -2.0 * rho_sq * np.sum((D - F) * dF_dphi, axis=-1)
    Jin = np.empty(Z.shape[:-1] + (2, 2))
    Jin[..., 0, 0] = -2.0 * h1
    Jin[..., 0, 1] = 0.0
    Jin[..., 1, 0] = e21
    Jin[..., 1, 1] = -2.0 * rho_sq * h2

    det = Jz[..., 0, 0] * Jz[..., 1, 1] - Jz[..., 0, 1] * Jz[..., 1, 0]
    scale = np.max(np.abs(Jz), axis=(-2, -1)) ** 2
    ok = np.abs(det) > 1e-12 * np.maximum(scale, 1e-30)
    J = np.full(Z.shape[:-1] + (2, 2), np.nan)
    if np.any(ok):
        J[ok] = -np.linalg.solve(Jz[ok], Jin[ok])
    return J, ok


def velocity_map(d: CanonicalDesign, z):
    Z = z.to_array() if isinstance(z, Configuration) else np.asarray(z, float)
    J, ok = velocity_maps_batch(d, Z[None, :])
    if not ok[0]:
        raise SingularJacobianError("velocity map is undefined at an input singularity")
    return J[0]


def velocity_ellipse(d: CanonicalDesign, z) -> VelocityEllipse:
    """Singular values and major-axis direction of the output velocity map."""
    J = velocity_map(d, z)
    U, s, _ = np.linalg.svd(J)
    angle = math.atan2(U[1, 0], U[0, 0]) % math.pi
    return VelocityEllipse(semi_major=float(s[0]), semi_minor=float(s[1]), major_axis_angle=angle)
