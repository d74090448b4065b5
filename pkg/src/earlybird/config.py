"""Flat ``key=value`` pipeline configuration with dotted section names.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown
keys and malformed values raise :class:`ConfigError` naming the key.
Tuples are whitespace- or comma-separated numbers.
"""
from dataclasses import dataclass, field, replace

from .descriptor import Variant
from .errors import ConfigError
from .pipeline import PipelineParams
from .simworld import BUNDLED_WAYPOINTS

# dotted key -> PipelineParams field
PARAM_KEYS = {
    "homography.anchors": "anchors",
    "homography.half_side": "half_side",
    "homography.patch_width": "patch_width",
    "homography.patch_height": "patch_height",
    "descriptor.variant": "variant",
    "descriptor.grid": "grid",
    "descriptor.bins": "bins",
    "descriptor.rings": "rings",
    "descriptor.ring_weight": "ring_weight",
    "descriptor.external": "external_descriptors",
    "match.shortlist_k": "shortlist_k",
    "detector.max_keypoints": "max_keypoints",
    "detector.nms_radius": "nms_radius",
    "detector.smoothing": "smoothing",
    "detector.harris_k": "harris_k",
    "matcher.patch": "patch",
    "matcher.ratio": "ratio",
    "register.trim_fraction": "trim_fraction",
    "register.min_inliers": "min_inliers",
    "register.max_rms": "max_rms",
    "register.max_tilt": "max_tilt",
    "register.depth_source": "depth_source",
    "optimize.kernel": "kernel",
    "optimize.cauchy_c": "cauchy_c",
    "optimize.max_iter": "max_iter",
    "optimize.tol": "tol",
    "optimize.odometry_information": "odometry_information",
    "optimize.loop_information": "loop_information",
    "evaluate.radius": "radius",
    "evaluate.inlier_threshold": "inlier_threshold",
    "evaluate.align": "align",
}

# tuple-valued fields and their required lengths
_TUPLE_LEN = {"anchors": 8, "odometry_information": 3, "loop_information": 3}
_OPTIONAL = {"anchors", "external_descriptors"}

DEFAULT_VARIANTS = ("raw", "homo", "homo-pirot")


@dataclass(frozen=True)
class Config:
    params: PipelineParams = field(default_factory=PipelineParams)
    sim_spec: str = "sim-S1"
    seed: int = 0
    sigma_trans: float = 0.02
    sigma_rot: float = 0.005
    dataset_path: str = None
    output_dir: str = "out"
    variants: tuple = DEFAULT_VARIANTS

    def with_overrides(self, seed=None, output_dir=None, variant=None):
        c = self
        if seed is not None:
            c = replace(c, seed=int(seed))
        if output_dir is not None:
            c = replace(c, output_dir=str(output_dir))
        if variant is not None:
            c = replace(c, params=replace(c.params, variant=parse_variant("descriptor.variant", variant)))
        return c


_OTHER_KEYS = {
    "sim.spec": "sim_spec",
    "sim.seed": "seed",
    "sim.sigma_trans": "sigma_trans",
    "sim.sigma_rot": "sigma_rot",
    "dataset.path": "dataset_path",
    "output.dir": "output_dir",
    "ablation.variants": "variants",
}


def parse_variant(key, text):
    try:
        return Variant.parse(text).value
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _convert(key, name, text, default):
    text = text.strip()
    if name in _OPTIONAL and text.lower() in ("", "none"):
        return None
    if name in _TUPLE_LEN:
        parts = text.replace(",", " ").split()
        try:
            vals = tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(key, f"expected numbers, got {text!r}") from None
        if len(vals) != _TUPLE_LEN[name]:
            raise ConfigError(key, f"expected {_TUPLE_LEN[name]} numbers, got {len(vals)}")
        return vals
    if isinstance(default, bool):
        t = text.lower()
        if t in ("1", "true", "yes", "on"):
            return True
        if t in ("0", "false", "no", "off"):
            return False
        raise ConfigError(key, f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {text!r}") from None
    if not text:
        raise ConfigError(key, "empty value")
    return text


def _check(cond, key, reason):
    if not cond:
        raise ConfigError(key, reason)


def validate(c):
    p = c.params
    key = {v: k for k, v in PARAM_KEYS.items()}
    _check(c.sim_spec in BUNDLED_WAYPOINTS, "sim.spec",
           f"unknown spec {c.sim_spec!r}; choose from {', '.join(sorted(BUNDLED_WAYPOINTS))}")
    _check(c.seed >= 0, "sim.seed", "must be non-negative")
    _check(c.sigma_trans >= 0, "sim.sigma_trans", "must be non-negative")
    _check(c.sigma_rot >= 0, "sim.sigma_rot", "must be non-negative")
    _check(bool(c.variants), "ablation.variants", "needs at least one variant")
    for name in ("patch_width", "patch_height", "grid", "shortlist_k", "max_keypoints", "max_iter"):
        _check(getattr(p, name) >= 1, key[name], "must be at least 1")
    _check(p.bins >= 2, key["bins"], "must be at least 2")
    _check(p.rings >= 0, key["rings"], "must be non-negative")
    _check(0.0 <= p.ring_weight <= 1.0, key["ring_weight"], "must lie in [0, 1]")
    _check(p.half_side > 0, key["half_side"], "must be positive")
    _check(p.patch >= 3 and p.patch % 2 == 1, key["patch"], "must be an odd size >= 3")
    _check(0.0 < p.ratio <= 1.0, key["ratio"], "must lie in (0, 1]")
    _check(p.nms_radius >= 0, key["nms_radius"], "must be non-negative")
    _check(p.smoothing >= 0, key["smoothing"], "must be non-negative")
    _check(0.0 <= p.trim_fraction < 1.0, key["trim_fraction"], "must lie in [0, 1)")
    _check(p.min_inliers >= 4, key["min_inliers"], "registration needs at least 4 points")
    _check(p.max_rms > 0, key["max_rms"], "must be positive")
    _check(p.max_tilt > 0, key["max_tilt"], "must be positive")
    _check(p.depth_source in ("plane", "raster"), key["depth_source"], "expected 'plane' or 'raster'")
    _check(p.kernel in ("none", "cauchy"), key["kernel"], "expected 'none' or 'cauchy'")
    _check(p.cauchy_c > 0, key["cauchy_c"], "must be positive")
    _check(p.tol > 0, key["tol"], "must be positive")
    for name in ("odometry_information", "loop_information"):
        _check(all(v > 0 for v in getattr(p, name)), key[name], "diagonal entries must be positive")
    _check(p.radius >= 0, key["radius"], "must be non-negative (0 selects the default)")
    _check(p.inlier_threshold > 0, key["inlier_threshold"], "must be positive")
    return c


def parse_config(text):
    """Build a validated :class:`Config` from ``key=value`` text."""
    pdefaults = PipelineParams()
    cdefaults = Config()
    pvals, cvals = {}, {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", "expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in PARAM_KEYS:
            name = PARAM_KEYS[k]
            if name == "variant":
                pvals[name] = parse_variant(k, v)
            else:
                pvals[name] = _convert(k, name, v, getattr(pdefaults, name))
        elif k in _OTHER_KEYS:
            name = _OTHER_KEYS[k]
            if name == "variants":
                tags = [t for t in v.replace(",", " ").split() if t]
                cvals[name] = tuple(parse_variant(k, t) for t in tags)
            elif name in ("dataset_path",):
                cvals[name] = v or None
            else:
                cvals[name] = _convert(k, name, v, getattr(cdefaults, name))
        else:
            raise ConfigError(k, "unknown key")
    return validate(replace(cdefaults, params=replace(pdefaults, **pvals), **cvals))


def load_config(path):
    if path is None:
        return validate(Config())
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(c):
    """Every key with its effective value, sorted; parses back to an equal Config."""
    rows = {k: getattr(c.params, name) for k, name in PARAM_KEYS.items()}
    for k, name in _OTHER_KEYS.items():
        v = getattr(c, name)
        rows[k] = "" if v is None and name == "dataset_path" else v
    return "".join(f"{k}={_fmt(rows[k])}\n" for k in sorted(rows))

