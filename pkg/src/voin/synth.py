"""Synthetic occlusion benchmark: procedural scenes with exact masks and flow.

A scene is a textured object moving over a static textured background under a
per-frame affine (translation, rotation, isotropic scale). Because the motion
is analytic, the ground-truth optical flow and the amodal mask are exact, not
estimated. Occluders are free-form stroke shapes kept as continuous distance
fields so they can be scaled to hit a requested occlusion degree by bisection.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .data import (
    AMODAL_DIR,
    CLIP_DIR,
    FLOW_BWD_DIR,
    FLOW_FWD_DIR,
    GT_CLIP_DIR,
    OCC_DIR,
    VISIBLE_DIR,
    FlowSequence,
    MaskSequence,
    VideoClip,
    load_clip,
    load_flow_sequence,
    load_masks,
    save_clip,
    save_flow_sequence,
    save_masks,
    validate_sample,
)


class ParameterError(ValueError):
    """A synthesis parameter is out of its documented range."""


class BoundsError(ValueError):
    """The object trajectory leaves the frame."""


class SynthesisError(RuntimeError):
    """Bisection could not reach the requested occlusion degree."""


def _hash01(ix, iy, seed):
    # integer lattice hash -> [0,1); pure integer arithmetic so the value
    # noise is bit-identical across platforms
    h = ix.astype(np.uint64) * np.uint64(374761393)
    h = h + iy.astype(np.uint64) * np.uint64(668265263)
    h = h + np.uint64(seed & 0xFFFFFFFF) * np.uint64(2246822519)
    h = h & np.uint64(0xFFFFFFFF)
    h = ((h >> np.uint64(13)) ^ h) * np.uint64(1274126177)
    h = h & np.uint64(0xFFFFFFFF)
    h = (h >> np.uint64(16)) ^ h
    return (h & np.uint64(0xFFFFFFFF)).astype(np.float64) / float(2 ** 32)


@dataclass
class Texture:
    """Procedural color field, sampled at continuous coordinates."""

    kind: str = "checker"  # checker | stripes | gradient | noise | solid
    scale: float = 8.0
    angle: float = 0.0
    seed: int = 0
    color_a: tuple = (0.9, 0.9, 0.9)
    color_b: tuple = (0.1, 0.1, 0.1)

    def sample(self, xs, ys):
        xs = np.asarray(xs, np.float64)
        ys = np.asarray(ys, np.float64)
        if self.kind == "solid":
            t = np.zeros(xs.shape)
        elif self.kind == "checker":
            t = ((np.floor(xs / self.scale) + np.floor(ys / self.scale)) % 2.0)
        elif self.kind == "stripes":
            proj = xs * np.cos(self.angle) + ys * np.sin(self.angle)
            t = (np.floor(proj / self.scale) % 2.0)
        elif self.kind == "gradient":
            proj = xs * np.cos(self.angle) + ys * np.sin(self.angle)
            period = 4.0 * self.scale
            t = (proj % period) / period
        elif self.kind == "noise":
            gx = xs / self.scale
            gy = ys / self.scale
            ix = np.floor(gx)
            iy = np.floor(gy)
            fx = gx - ix
            fy = gy - iy
            # smoothstep keeps the field C1 so quantized colors vary gently
            ux = fx * fx * (3.0 - 2.0 * fx)
            uy = fy * fy * (3.0 - 2.0 * fy)
            ix = ix.astype(np.int64)
            iy = iy.astype(np.int64)
            v00 = _hash01(ix, iy, self.seed)
            v10 = _hash01(ix + 1, iy, self.seed)
            v01 = _hash01(ix, iy + 1, self.seed)
            v11 = _hash01(ix + 1, iy + 1, self.seed)
            t = (v00 * (1 - ux) + v10 * ux) * (1 - uy) + (v01 * (1 - ux) + v11 * ux) * uy
        else:
            raise ParameterError("unknown texture kind %r" % self.kind)
        a = np.asarray(self.color_a, np.float64)
        b = np.asarray(self.color_b, np.float64)
        return a + t[..., None] * (b - a)


@dataclass
class Trajectory:
    """Per-frame similarity transform: p = c_t + s_t * R(theta_t) q."""

    center: tuple = (0.0, 0.0)
    velocity: tuple = (0.0, 0.0)  # px per frame
    rotation: float = 0.0  # rad per frame
    scale_rate: float = 1.0  # multiplicative per frame
    scale0: float = 1.0

    def params_at(self, t):
        cx = self.center[0] + self.velocity[0] * t
        cy = self.center[1] + self.velocity[1] * t
        theta = self.rotation * t
        s = self.scale0 * self.scale_rate ** t
        return cx, cy, theta, s

    def to_local(self, px, py, t):
        cx, cy, theta, s = self.params_at(t)
        dx = px - cx
        dy = py - cy
        ct = np.cos(theta)
        st = np.sin(theta)
        qx = (ct * dx + st * dy) / s
        qy = (-st * dx + ct * dy) / s
        return qx, qy

    def displacement(self, px, py, t0, t1):
        # world motion of the material point sitting at p in frame t0,
        # by composing A_{t1} with A_{t0}^{-1} in closed form
        c0x, c0y, th0, s0 = self.params_at(t0)
        c1x, c1y, th1, s1 = self.params_at(t1)
        r = s1 / s0
        dth = th1 - th0
        ct = np.cos(dth)
        st = np.sin(dth)
        dx = px - c0x
        dy = py - c0y
        nx = c1x + r * (ct * dx - st * dy)
        ny = c1y + r * (st * dx + ct * dy)
        return nx - px, ny - py


@dataclass
class SceneSpec:
    """A single textured object on a static textured background."""

    height: int = 32
    width: int = 32
    frames: int = 5
    object_class: int = 0
    shape_kind: str = "ellipse"  # ellipse | polygon
    shape_params: tuple = (10.0, 6.0)  # ellipse (a, b) or flattened vertices
    trajectory: Trajectory = field(default_factory=Trajectory)
    object_texture: Texture = field(default_factory=Texture)
    background_texture: Texture = field(default_factory=lambda: Texture(kind="noise", scale=6.0, seed=7))

    def shape_radius(self):
        if self.shape_kind == "ellipse":
            return float(max(self.shape_params[:2]))
        verts = np.asarray(self.shape_params, np.float64).reshape(-1, 2)
        return float(np.max(np.hypot(verts[:, 0], verts[:, 1])))

    def inside(self, qx, qy):
        if self.shape_kind == "ellipse":
            a, b = self.shape_params[:2]
            return (qx / a) ** 2 + (qy / b) ** 2 <= 1.0
        if self.shape_kind == "polygon":
            verts = np.asarray(self.shape_params, np.float64).reshape(-1, 2)
            return _points_in_polygon(qx, qy, verts)
        raise ParameterError("unknown shape kind %r" % self.shape_kind)


def _points_in_polygon(px, py, verts):
    # even-odd ray cast; edges with zero y-extent never toggle
    inside = np.zeros(np.shape(px), bool)
    n = len(verts)
    j = n - 1
    for i in range(n):
        xi, yi = verts[i]
        xj, yj = verts[j]
        crosses = (yi > py) != (yj > py)
        denom = yj - yi
        denom = np.where(denom == 0.0, 1.0, denom)
        xcross = xi + (py - yi) * (xj - xi) / denom
        inside ^= crosses & (px < xcross)
        j = i
    return inside


def _check_bounds(scene):
    r = scene.shape_radius()
    for t in range(scene.frames):
        cx, cy, _, s = scene.trajectory.params_at(t)
        reach = r * s
        if cx - reach < 1.0 or cx + reach > scene.width - 2.0 \
                or cy - reach < 1.0 or cy + reach > scene.height - 2.0:
            raise BoundsError(
                "object leaves frame at t=%d (center %.1f,%.1f reach %.1f)"
                % (t, cx, cy, reach))


def render_scene(scene):
    """Rasterize the clean clip plus exact amodal masks and flow.

    Flow at object pixels is the analytic displacement of the material point;
    the background is static so its flow is zero. Backward flow at frame t+1
    is the exact inverse displacement.
    """
    _check_bounds(scene)
    H, W, T = scene.height, scene.width, scene.frames
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    frames = np.zeros((T, H, W, 3), np.float64)
    amodal = np.zeros((T, H, W), np.uint8)
    bg = scene.background_texture.sample(xs, ys)
    for t in range(T):
        qx, qy = scene.trajectory.to_local(xs, ys, t)
        ins = scene.inside(qx, qy)
        amodal[t] = ins.astype(np.uint8)
        obj = scene.object_texture.sample(qx, qy)
        frames[t] = np.where(ins[..., None], obj, bg)
    fwd = np.zeros((T - 1, H, W, 2), np.float64)
    bwd = np.zeros((T - 1, H, W, 2), np.float64)
    for t in range(T - 1):
        dux, duy = scene.trajectory.displacement(xs, ys, t, t + 1)
        fwd[t, ..., 0] = np.where(amodal[t] > 0, dux, 0.0)
        fwd[t, ..., 1] = np.where(amodal[t] > 0, duy, 0.0)
        dbx, dby = scene.trajectory.displacement(xs, ys, t + 1, t)
        bwd[t, ..., 0] = np.where(amodal[t + 1] > 0, dbx, 0.0)
        bwd[t, ..., 1] = np.where(amodal[t + 1] > 0, dby, 0.0)
    clip = VideoClip(np.clip(frames, 0.0, 1.0).astype(np.float32))
    return (clip,
            MaskSequence(amodal, "amodal"),
            FlowSequence(fwd.astype(np.float32), "forward"),
            FlowSequence(bwd.astype(np.float32), "backward"))


@dataclass
class OccluderSpec:
    """Free-form stroke occluder: polylines swept by a round brush.

    The stroke geometry lives in a continuous coordinate frame, so the same
    spec can be rasterized at any scale; bisection over that scale is what
    hits a requested occlusion degree.
    """

    seed: int = 0
    stroke_count: int = 2
    brush_width: float = 9.0
    vertex_count: int = 5
    deformation_amplitude: float = 0.0  # px, sinusoidal boundary wobble
    trajectory: Trajectory = field(default_factory=Trajectory)
    texture: Texture = field(default_factory=lambda: Texture(kind="noise", scale=3.0, seed=99, color_a=(0.45, 0.2, 0.5), color_b=(0.75, 0.6, 0.2)))


def _build_strokes(spec, H, W):
    """Random-walk polylines in image coordinates, one rng stream per spec."""
    if spec.stroke_count < 1:
        raise ParameterError("stroke_count must be >= 1")
    if spec.vertex_count < 1:
        raise ParameterError("vertex_count must be >= 1")
    if spec.brush_width < 1.0 or spec.brush_width > min(H, W):
        raise ParameterError("brush_width must be in [1, min(H, W)]")
    rng = np.random.default_rng(spec.seed)
    base_len = min(H, W) / 6.0
    strokes = []
    for _ in range(spec.stroke_count):
        x = rng.uniform(0.0, W)
        y = rng.uniform(0.0, H)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        pts = [(x, y)]
        for _ in range(spec.vertex_count - 1):
            ang = ang + rng.uniform(-np.pi / 2.0, np.pi / 2.0)
            step = rng.uniform(0.3, 1.0) * base_len
            x = x + step * np.cos(ang)
            y = y + step * np.sin(ang)
            pts.append((x, y))
        strokes.append(np.asarray(pts, np.float64))
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return strokes, phase


def _centered_strokes(spec, H, W):
    # animated occluders carry their geometry in local coordinates around
    # the joint centroid, so trajectory center and bisection scale both act
    # about the visual middle of the shape
    strokes, phase = _build_strokes(spec, H, W)
    centroid = np.concatenate(strokes).mean(axis=0)
    return [s - centroid for s in strokes], phase


def _dist_to_strokes(px, py, strokes):
    d = np.full(np.shape(px), np.inf)
    for poly in strokes:
        if len(poly) == 1:
            d = np.minimum(d, np.hypot(px - poly[0, 0], py - poly[0, 1]))
            continue
        for i in range(len(poly) - 1):
            ax, ay = poly[i]
            bx, by = poly[i + 1]
            ex = bx - ax
            ey = by - ay
            ln2 = ex * ex + ey * ey
            if ln2 == 0.0:
                cx, cy = ax, ay
            else:
                tt = np.clip(((px - ax) * ex + (py - ay) * ey) / ln2, 0.0, 1.0)
                cx = ax + tt * ex
                cy = ay + tt * ey
            d = np.minimum(d, np.hypot(px - cx, py - cy))
    return d


def gen_freeform_mask(spec, height, width):
    """Static binary raster of the stroke shape at unit scale."""
    strokes, _ = _build_strokes(spec, height, width)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    d = _dist_to_strokes(xs, ys, strokes)
    mask = (d <= spec.brush_width / 2.0).astype(np.uint8)
    return mask


def _occluder_support(spec, strokes, phase, xs, ys, t, total_frames, sigma):
    # pixel -> occluder-local coords, then uniform scale about the geometry
    qx, qy = spec.trajectory.to_local(xs, ys, t)
    qx = qx / sigma
    qy = qy / sigma
    d = _dist_to_strokes(qx, qy, strokes)
    r = spec.brush_width / 2.0
    if spec.deformation_amplitude > 0.0:
        phi = np.arctan2(qy, qx)
        wob = spec.deformation_amplitude * np.sin(
            3.0 * phi + 2.0 * np.pi * t / max(total_frames, 1) + phase)
        r_eff = np.maximum(r + wob, 0.05 * r)
    else:
        r_eff = r
    return d <= r_eff


@dataclass
class SynthSample:
    """One benchmark sample: clean clip, corrupted clip, masks, exact flow."""

    gt_clip: VideoClip
    corrupted_clip: VideoClip
    visible: MaskSequence
    amodal: MaskSequence
    occluded: MaskSequence
    flow_fwd: FlowSequence
    flow_bwd: FlowSequence
    object_class: int
    degrees: np.ndarray  # per-frame occlusion degree

    @property
    def mean_degree(self):
        return float(np.mean(self.degrees))


def occlusion_degree(occluded, amodal):
    """Fraction of amodal object pixels hidden by the occluder."""
    amodal_px = float(np.count_nonzero(amodal))
    if amodal_px == 0.0:
        return 0.0
    return float(np.count_nonzero(occluded)) / amodal_px


def synth_sample(scene, occluders, target_degree, tol=0.02, max_bisect=20):
    """Render a scene, then scale the occluders to hit target_degree.

    The occlusion degree is monotone in the occluder scale, so plain
    bisection converges; if the bracket cannot reach the target (strokes
    miss the object entirely) a SynthesisError asks for a different seed.
    """
    gt_clip, amodal, flow_fwd, flow_bwd = render_scene(scene)
    H, W, T = scene.height, scene.width, scene.frames
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)

    if not occluders:
        if target_degree != 0.0:
            raise ParameterError("nonzero target_degree needs occluders")
        zeros = np.zeros_like(amodal.masks)
        degs = np.zeros(T)
        sample = SynthSample(gt_clip, VideoClip(gt_clip.frames.copy()),
                             MaskSequence(amodal.masks.copy(), "visible"),
                             amodal, MaskSequence(zeros, "occluded"),
                             flow_fwd, flow_bwd, scene.object_class, degs)
        validate_sample(sample.corrupted_clip, sample.visible, sample.amodal,
                        sample.occluded, sample.flow_fwd, sample.flow_bwd)
        return sample

    if not (0.10 <= target_degree <= 0.70):
        raise ParameterError("target_degree must be in [0.10, 0.70]")

    built = [_centered_strokes(o, H, W) for o in occluders]

    def union_at(sigma):
        occ = np.zeros((T, H, W), bool)
        for t in range(T):
            for o, (strokes, phase) in zip(occluders, built):
                occ[t] |= _occluder_support(o, strokes, phase, xs, ys, t, T, sigma)
        return occ

    def mean_degree(occ):
        degs = [occlusion_degree(occ[t] & (amodal.masks[t] > 0), amodal.masks[t])
                for t in range(T)]
        return float(np.mean(degs))

    lo, hi = 1e-3, 1.0
    f_hi = mean_degree(union_at(hi))
    grow = 0
    while f_hi < target_degree and grow < 7:
        hi *= 2.0
        f_hi = mean_degree(union_at(hi))
        grow += 1
    if f_hi < target_degree - tol:
        raise SynthesisError(
            "cannot reach degree %.2f (max %.3f); try a different seed"
            % (target_degree, f_hi))

    sigma = hi
    occ_u = union_at(sigma)
    best = (abs(mean_degree(occ_u) - target_degree), sigma, occ_u)
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        occ_m = union_at(mid)
        f_m = mean_degree(occ_m)
        err = abs(f_m - target_degree)
        if err < best[0]:
            best = (err, mid, occ_m)
        if err <= tol:
            break
        if f_m < target_degree:
            lo = mid
        else:
            hi = mid
    err, sigma, occ_u = best
    if err > tol:
        raise SynthesisError(
            "bisection stalled at degree error %.4f for target %.2f; "
            "try a different seed" % (err, target_degree))

    occluded = (occ_u & (amodal.masks > 0)).astype(np.uint8)
    visible = ((amodal.masks > 0) & ~occ_u).astype(np.uint8)
    corrupted = gt_clip.frames.astype(np.float64).copy()
    for t in range(T):
        for o, (strokes, phase) in zip(occluders, built):
            sup = _occluder_support(o, strokes, phase, xs, ys, t, T, sigma)
            if not np.any(sup):
                continue
            qx, qy = o.trajectory.to_local(xs, ys, t)
            tex = o.texture.sample(qx, qy)
            corrupted[t] = np.where(sup[..., None], tex, corrupted[t])
    degs = np.asarray([occlusion_degree(occluded[t], amodal.masks[t])
                       for t in range(T)])
    sample = SynthSample(gt_clip,
                         VideoClip(np.clip(corrupted, 0.0, 1.0).astype(np.float32)),
                         MaskSequence(visible, "visible"),
                         amodal,
                         MaskSequence(occluded, "occluded"),
                         flow_fwd, flow_bwd, scene.object_class, degs)
    validate_sample(sample.corrupted_clip, sample.visible, sample.amodal,
                    sample.occluded, sample.flow_fwd, sample.flow_bwd)
    return sample


def save_sample(sample, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_clip(sample.corrupted_clip, os.path.join(out_dir, CLIP_DIR))
    save_clip(sample.gt_clip, os.path.join(out_dir, GT_CLIP_DIR))
    save_masks(sample.visible, os.path.join(out_dir, VISIBLE_DIR))
    save_masks(sample.amodal, os.path.join(out_dir, AMODAL_DIR))
    save_masks(sample.occluded, os.path.join(out_dir, OCC_DIR))
    save_flow_sequence(sample.flow_fwd, os.path.join(out_dir, FLOW_FWD_DIR))
    save_flow_sequence(sample.flow_bwd, os.path.join(out_dir, FLOW_BWD_DIR))
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write("object_class = %d\n" % sample.object_class)


def load_sample(sample_dir):
    corrupted = load_clip(os.path.join(sample_dir, CLIP_DIR))
    gt = load_clip(os.path.join(sample_dir, GT_CLIP_DIR))
    visible = load_masks(os.path.join(sample_dir, VISIBLE_DIR), "visible")
    amodal = load_masks(os.path.join(sample_dir, AMODAL_DIR), "amodal")
    occluded = load_masks(os.path.join(sample_dir, OCC_DIR), "occluded")
    fwd = load_flow_sequence(os.path.join(sample_dir, FLOW_FWD_DIR), "forward")
    bwd = load_flow_sequence(os.path.join(sample_dir, FLOW_BWD_DIR), "backward")
    object_class = 0
    meta = os.path.join(sample_dir, "meta.txt")
    if os.path.exists(meta):
        with open(meta) as fh:
            for line in fh:
                k, _, v = line.partition("=")
                if k.strip() == "object_class":
                    object_class = int(v)
    degs = np.asarray([occlusion_degree(occluded.masks[t], amodal.masks[t])
                       for t in range(amodal.masks.shape[0])])
    sample = SynthSample(gt, corrupted, visible, amodal, occluded,
                         fwd, bwd, object_class, degs)
    validate_sample(corrupted, visible, amodal, occluded, fwd, bwd)
    return sample


@dataclass
class SynthConfig:
    """Dataset-level knobs; per-sample randomness hangs off seed."""

    height: int = 32
    width: int = 32
    frames: int = 5
    num: int = 8
    seed: int = 0
    degree_min: float = 0.10
    degree_max: float = 0.70
    tol: float = 0.03
    classes: int = 4
    occluder_count: int = 1
    stroke_count: int = 2
    brush_width: float = 9.0
    vertex_count: int = 5
    deformation_amplitude: float = 0.0
    motion: str = "affine"  # affine | integer_translation


_TEX_FAMILIES = ("checker", "stripes", "noise", "gradient")


def _random_scene(cfg, rng):
    H, W, T = cfg.height, cfg.width, cfg.frames
    cls = int(rng.integers(cfg.classes))
    # class picks the texture family so a classifier has something to learn
    fam = _TEX_FAMILIES[cls % len(_TEX_FAMILIES)]
    ca = tuple(rng.uniform(0.55, 0.95, 3))
    cb = tuple(rng.uniform(0.05, 0.45, 3))
    obj_tex = Texture(kind=fam, scale=float(rng.uniform(2.5, 5.0)),
                      angle=float(rng.uniform(0, np.pi)),
                      seed=int(rng.integers(1 << 30)), color_a=ca, color_b=cb)
    bg_tex = Texture(kind="noise", scale=float(rng.uniform(4.0, 8.0)),
                     seed=int(rng.integers(1 << 30)),
                     color_a=tuple(rng.uniform(0.3, 0.6, 3)),
                     color_b=tuple(rng.uniform(0.6, 0.9, 3)))
    rmax = min(H, W) / 4.0
    if rng.uniform() < 0.5:
        a = rng.uniform(0.5 * rmax, rmax)
        b = rng.uniform(0.4 * rmax, 0.9 * rmax)
        kind, params = "ellipse", (float(a), float(b))
        reach = max(a, b)
    else:
        nv = int(rng.integers(5, 9))
        angs = np.sort(rng.uniform(0, 2 * np.pi, nv))
        rads = rng.uniform(0.5 * rmax, rmax, nv)
        verts = np.stack([rads * np.cos(angs), rads * np.sin(angs)], 1)
        kind, params = "polygon", tuple(verts.reshape(-1))
        reach = float(rads.max())
    margin = reach + 2.0
    if cfg.motion == "integer_translation":
        vx = int(rng.integers(-2, 3))
        vy = int(rng.integers(-2, 3))
        rot, srate = 0.0, 1.0
        cx = float(rng.integers(int(np.ceil(margin)), int(W - margin)))
        cy = float(rng.integers(int(np.ceil(margin)), int(H - margin)))
        # clamp the straight-line path into the frame
        while vx and not (margin <= cx + vx * (T - 1) <= W - 1 - margin):
            vx = vx - np.sign(vx)
        while vy and not (margin <= cy + vy * (T - 1) <= H - 1 - margin):
            vy = vy - np.sign(vy)
        vel = (float(vx), float(vy))
    elif cfg.motion == "affine":
        vx = rng.uniform(-1.5, 1.5)
        vy = rng.uniform(-1.5, 1.5)
        rot = rng.uniform(-0.05, 0.05)
        srate = rng.uniform(0.99, 1.01)
        margin = margin * srate ** (T - 1) if srate > 1 else margin
        cx = rng.uniform(margin + 1, W - 2 - margin)
        cy = rng.uniform(margin + 1, H - 2 - margin)
        while vx and not (margin <= cx + vx * (T - 1) <= W - 2 - margin):
            vx *= 0.5
        while vy and not (margin <= cy + vy * (T - 1) <= H - 2 - margin):
            vy *= 0.5
        vel = (float(vx), float(vy))
    else:
        raise ParameterError("unknown motion mode %r" % cfg.motion)
    traj = Trajectory(center=(cx, cy), velocity=vel, rotation=rot, scale_rate=srate)
    return SceneSpec(height=H, width=W, frames=T, object_class=cls,
                     shape_kind=kind, shape_params=params, trajectory=traj,
                     object_texture=obj_tex, background_texture=bg_tex)


def _random_occluders(cfg, scene, rng):
    occs = []
    T = cfg.frames
    for _ in range(cfg.occluder_count):
        cx0, cy0, _, _ = scene.trajectory.params_at(0)
        cx1, cy1, _, _ = scene.trajectory.params_at(T - 1)
        # start near one end of the object path, drift across it
        ox = cx0 + rng.uniform(-6, 6)
        oy = cy0 + rng.uniform(-6, 6)
        vx = (cx1 - ox) / max(T - 1, 1) + rng.uniform(-1.5, 1.5)
        vy = (cy1 - oy) / max(T - 1, 1) + rng.uniform(-1.5, 1.5)
        tex = Texture(kind="noise", scale=float(rng.uniform(2.0, 4.0)),
                      seed=int(rng.integers(1 << 30)),
                      color_a=(0.5, 0.18, 0.55), color_b=(0.8, 0.62, 0.15))
        occs.append(OccluderSpec(seed=int(rng.integers(1 << 30)),
                                 stroke_count=cfg.stroke_count,
                                 brush_width=cfg.brush_width,
                                 vertex_count=cfg.vertex_count,
                                 deformation_amplitude=cfg.deformation_amplitude,
                                 trajectory=Trajectory(center=(ox, oy),
                                                       velocity=(vx, vy)),
                                 texture=tex))
    return occs


def synth_dataset(cfg, out_dir):
    """Generate cfg.num samples with stratified degrees plus an index CSV."""
    os.makedirs(out_dir, exist_ok=True)
    master = np.random.default_rng(cfg.seed)
    rows = []
    span = cfg.degree_max - cfg.degree_min
    for i in range(cfg.num):
        u = master.uniform()
        target = cfg.degree_min + (i + u) * span / cfg.num
        target = min(max(target, cfg.degree_min), cfg.degree_max)
        base_seed = int(master.integers(1 << 31))
        sample = None
        seed = base_seed
        for attempt in range(5):
            seed = base_seed + attempt * 7919
            rng = np.random.default_rng(seed)
            scene = _random_scene(cfg, rng)
            occs = _random_occluders(cfg, scene, rng)
            try:
                sample = synth_sample(scene, occs, target, tol=cfg.tol)
                break
            except (SynthesisError, BoundsError):
                continue
        if sample is None:
            raise SynthesisError(
                "sample %d: no usable seed after 5 attempts near %d"
                % (i, base_seed))
        sid = "sample_%04d" % i
        save_sample(sample, os.path.join(out_dir, sid))
        rows.append((sid, seed, sample.object_class, sample.mean_degree))
    with open(os.path.join(out_dir, "index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "seed", "class", "mean_degree"])
        for sid, seed, cls, deg in rows:
            w.writerow([sid, seed, cls, "%.6f" % deg])
    return [r[0] for r in rows]


def load_dataset_index(out_dir):
    path = os.path.join(out_dir, "index.csv")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
