"""File-backed pipeline stages.

Each stage reads its inputs from the output directory, writes plain-text
artifacts next to them and can be re-run on its own. Artifacts carrying a
variant tag are suffixed with it, so several variants share one directory.

    dataset/                      simulate
    descriptors_<v>.txt           describe
    cost_<v>.csv, matches_<v>.csv, cost_<v>.svg                    match
    correspondences_<v>.csv, correspondences_<v>/*.csv, *.svg      correspond
    registration_<v>.csv, graph_<v>.g2o                            register
    optimized_<v>.g2o, trajectory_<v>.csv, optimize_<v>.csv        optimize
    report_<v>.txt, metrics_<v>.csv, trajectory_<v>.svg            evaluate
    report.txt                    pipeline
    ablation.txt, ablation.csv, ablation.svg                       ablation
"""
import csv
import os
from dataclasses import replace

import numpy as np

from . import descriptor as desc
from . import imggeom
from . import pipeline as P
from . import plotting
from .config import format_config
from .correspond import (
    CorrespondenceSet,
    read_correspondence_rows,
    reprojection_errors,
    write_correspondences_csv,
)
from .errors import DataError, MissingUpstreamArtifact
from .evalkit import ate_rmse, recall_at_radius
from .posegraph import parse_g2o, read_trajectory_csv, write_g2o, write_trajectory_csv
from .simworld import OdometryNoise, bundled_spec, generate_dataset

STAGES = ("simulate", "describe", "match", "correspond", "register", "optimize", "evaluate")

FLIP_NOTE = ("flip-lr mirrors the reference view left-right without any floor warp; it is reported "
             "as an ablation control for parity with the Flip-L-R row, not as a proposed input.")


def _num(x, digits=6):
    x = float(x)
    if not np.isfinite(x):
        return "nan"
    return f"{x:.{digits}f}"


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def _need(stage, path):
    if not os.path.exists(path):
        raise MissingUpstreamArtifact(stage, path)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _read_csv(stage, path):
    with open(_need(stage, path), newline="") as f:
        rd = csv.reader(f)
        try:
            header = next(rd)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        return header, [r for r in rd if r]


def _tag(cfg):
    return desc.Variant.parse(cfg.params.variant).value


def sim_spec(cfg):
    spec = bundled_spec(cfg.sim_spec, cfg.seed)
    return replace(spec, noise=OdometryNoise(cfg.sigma_trans, cfg.sigma_rot, cfg.seed))


def dataset_dir(cfg):
    return cfg.dataset_path or _out(cfg, "dataset")


def load_dataset(cfg):
    return P.Dataset.from_manifest(os.path.join(dataset_dir(cfg), "manifest.txt"))


def _prepare(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(_out(cfg, "config.txt"), "w") as f:
        f.write(format_config(cfg))


# -- stages -----------------------------------------------------------------

def simulate(cfg):
    _prepare(cfg)
    generate_dataset(sim_spec(cfg), dataset_dir(cfg))
    return dataset_dir(cfg)


def describe(cfg):
    _prepare(cfg)
    ds = load_dataset(cfg)
    dset = P.describe(ds, cfg.params)
    path = _out(cfg, f"descriptors_{_tag(cfg)}.txt")
    desc.save_descriptors(path, dset)
    return path


def _load_descriptors(cfg, ds):
    path = _need("describe", _out(cfg, f"descriptors_{_tag(cfg)}.txt"))
    return desc.load_descriptors(path, ds.ids, cfg.params.variant)


def match(cfg):
    _prepare(cfg)
    ds = load_dataset(cfg)
    m = P.match(ds, _load_descriptors(cfg, ds), cfg.params)
    tag = _tag(cfg)
    _write_csv(_out(cfg, f"cost_{tag}.csv"), ["query_id"] + [str(r) for r in m.reference_ids],
               [[str(q)] + [repr(float(x)) for x in row] for q, row in zip(m.query_ids, m.cost)])
    rank = {(c.query_id, c.ref_id): k for k, c in enumerate(m.shortlist)}
    _write_csv(_out(cfg, f"matches_{tag}.csv"), ["query_id", "ref_id", "distance", "shortlist_rank"],
               [[q, r, repr(float(d)), rank.get((q, r), -1)] for q, r, d in m.matches])
    plotting.cost_heatmap(m.cost, m.query_ids, m.reference_ids, m.matches, _out(cfg, f"cost_{tag}.svg"),
                          f"{ds.name}: cosine distance ({desc.Variant.parse(tag).label})")
    return m


def read_matches(cfg):
    """``(matches, shortlist)`` as written by :func:`match`."""
    _, rows = _read_csv("match", _out(cfg, f"matches_{_tag(cfg)}.csv"))
    try:
        matches = [(int(r[0]), int(r[1]), float(r[2])) for r in rows]
        ranked = sorted((int(r[3]), k) for k, r in enumerate(rows) if int(r[3]) >= 0)
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed matches file: {exc}") from None
    shortlist = [desc.LoopCandidate(*matches[k]) for _, k in ranked]
    return matches, shortlist


def _pair_name(rank, c):
    return f"{rank:02d}_{c.query_id}_{c.ref_id}.csv"


def correspond(cfg):
    _prepare(cfg)
    ds = load_dataset(cfg)
    _, shortlist = read_matches(cfg)
    tag = _tag(cfg)
    corr = P.correspond_candidates(ds, shortlist, cfg.params)
    pair_dir = _out(cfg, f"correspondences_{tag}")
    os.makedirs(pair_dir, exist_ok=True)
    rows = []
    for rank, (cand, cs) in enumerate(corr):
        name = _pair_name(rank, cand)
        write_correspondences_csv(os.path.join(pair_dir, name), cs)
        rows.append([rank, cand.query_id, cand.ref_id, repr(float(cand.distance)), len(cs), name])
    _write_csv(_out(cfg, f"correspondences_{tag}.csv"),
               ["rank", "query_id", "ref_id", "distance", "pairs", "file"], rows)
    if corr:
        cand, cs = corr[0]
        inl = _gt_inlier_mask(ds, cand, cs, cfg.params)
        mode = P.CORRESPONDENCE_MODE[desc.Variant.parse(tag)]
        plotting.correspondence_pair(ds.image(cand.query_id), ds.image(cand.ref_id), cs.q, cs.m, inl,
                                     _out(cfg, f"correspondences_{tag}.svg"),
                                     f"query {cand.query_id} / reference {cand.ref_id} ({mode})")
    return corr


def _gt_inlier_mask(ds, cand, cs, params):
    gt = P.FloorGroundTruth(ds.gt[cand.query_id], ds.gt[cand.ref_id], ds.camera)
    err = reprojection_errors(cs, gt)
    return np.isfinite(err) & (err <= params.inlier_threshold)


def read_correspondences(cfg, ds=None):
    """Shortlisted candidates with their correspondence sets, rebuilt from disk."""
    tag = _tag(cfg)
    _, rows = _read_csv("correspond", _out(cfg, f"correspondences_{tag}.csv"))
    variant = desc.Variant.parse(tag)
    mode = P.CORRESPONDENCE_MODE[variant]
    ds = ds or load_dataset(cfg)
    if mode == "raw":
        h, dims = np.eye(3), tuple(int(d) for d in ds.image_dims)
    else:
        h, dims = imggeom.normalize_homography(P.floor_homography_for(ds, cfg.params)), cfg.params.patch_dims
    out = []
    for r in rows:
        cand = desc.LoopCandidate(int(r[1]), int(r[2]), float(r[3]))
        a = read_correspondence_rows(_need("correspond", _out(cfg, os.path.join(f"correspondences_{tag}", r[5]))))
        cs = CorrespondenceSet(a[:, 4:6], a[:, 6:8], a[:, 0:2], a[:, 2:4], h, dims, mode == "homo-pirot", mode)
        out.append((cand, cs))
    return out


def register(cfg):
    _prepare(cfg)
    ds = load_dataset(cfg)
    corr = read_correspondences(cfg, ds)
    regs = P.register_pairs(ds, corr, cfg.params)
    tag = _tag(cfg)
    rows = []
    for r in regs:
        z = r.constraint.measurement if r.constraint is not None else (np.nan, np.nan, np.nan)
        rows.append([r.query_id, r.ref_id, r.pairs, r.inliers, _num(r.rms, 9), int(r.accepted), r.reason]
                    + [_num(v, 9) for v in z])
    _write_csv(_out(cfg, f"registration_{tag}.csv"),
               ["query_id", "ref_id", "pairs", "inliers", "rms", "accepted", "reason", "dx", "dy", "dtheta"], rows)
    g = P.build_graph(ds, [r.constraint for r in regs if r.accepted], cfg.params)
    with open(_out(cfg, f"graph_{tag}.g2o"), "w") as f:
        f.write(write_g2o(g))
    return regs


def optimize(cfg):
    _prepare(cfg)
    tag = _tag(cfg)
    with open(_need("register", _out(cfg, f"graph_{tag}.g2o"))) as f:
        g = parse_g2o(f.read())
    res = P.optimize_graph(g, cfg.params)
    with open(_out(cfg, f"optimized_{tag}.g2o"), "w") as f:
        f.write(write_g2o(res.graph))
    ids = sorted(res.graph.vertices)
    write_trajectory_csv(_out(cfg, f"trajectory_{tag}.csv"), ids, [res.graph.vertices[i] for i in ids])
    _write_csv(_out(cfg, f"optimize_{tag}.csv"), ["iteration", "chi2"],
               [[k, repr(float(c))] for k, c in enumerate(res.trace)])
    return res


def _loop_pairs(cfg):
    _, rows = _read_csv("register", _out(cfg, f"registration_{_tag(cfg)}.csv"))
    return [(int(r[0]), int(r[1])) for r in rows if r[5] == "1"]


def evaluate(cfg):
    """Metrics from the stage artifacts; writes the report and returns the metrics dict."""
    _prepare(cfg)
    ds = load_dataset(cfg)
    tag = _tag(cfg)
    params = cfg.params
    matches, _ = read_matches(cfg)
    corr = read_correspondences(cfg, ds)
    loops = _loop_pairs(cfg)
    ids, poses = read_trajectory_csv(_need("optimize", _out(cfg, f"trajectory_{tag}.csv")))
    est = dict(zip(ids, poses))
    odo = dict(enumerate(P.odometry_trajectory(ds)))
    radius = P.evaluation_radius(ds, params)
    pair_rows = []
    for cand, cs in corr:
        inl, total = P.pair_inliers(ds, cand, cs, params)
        pair_rows.append((cand.query_id, cand.ref_id, inl, total, (cand.query_id, cand.ref_id) in loops))
    inl = [r[2] for r in pair_rows]
    tot = [r[3] for r in pair_rows]
    metrics = {
        "recall": recall_at_radius(matches, ds.gt, radius, ds.reverse_ids),
        "radius": radius,
        "inliers_median": float(np.median(inl)) if inl else 0.0,
        "total_median": float(np.median(tot)) if tot else 0.0,
        "ate_odometry": ate_rmse(odo, ds.gt, params.align),
        "ate_optimized": ate_rmse(est, ds.gt, params.align),
        "ate_odometry_unaligned": ate_rmse(odo, ds.gt, False),
        "ate_optimized_unaligned": ate_rmse(est, ds.gt, False),
        "loops_accepted": len(loops),
    }
    with open(_out(cfg, f"report_{tag}.txt"), "w") as f:
        f.write(format_report(ds.name, tag, len(matches), metrics, pair_rows, params.align))
    _write_csv(_out(cfg, f"metrics_{tag}.csv"), ["metric", "value"],
               [[k, _num(v, 9)] for k, v in metrics.items()])
    label = desc.Variant.parse(tag).label
    plotting.trajectory_overlay({"ground truth": ds.gt, "odometry": odo, "optimized": est},
                                _out(cfg, f"trajectory_{tag}.svg"), loops, f"{ds.name}: {label}")
    return metrics


def format_report(name, tag, queries, metrics, pair_rows, align):
    label = desc.Variant.parse(tag).label
    lines = [f"dataset: {name}", f"variant: {label} ({tag})", ""]
    lines += ["[recall]", "variant  radius_m  queries  recall",
              f"{label}  {_num(metrics['radius'], 4)}  {queries}  {_num(metrics['recall'], 4)}", ""]
    lines += ["[inliers]", "rank  query  ref  inliers  total  ratio  loop"]
    for k, (q, r, a, b, used) in enumerate(pair_rows):
        lines.append(f"{k}  {q}  {r}  {a}  {b}  {_num(a / b if b else 0.0, 4)}  {'yes' if used else 'no'}")
    lines.append(f"median  -  -  {_num(metrics['inliers_median'], 1)}  {_num(metrics['total_median'], 1)}  "
                 f"{_num(metrics['inliers_median'] / metrics['total_median'] if metrics['total_median'] else 0.0, 4)}"
                 f"  {metrics['loops_accepted']}")
    lines.append("")
    ratio_a = metrics["ate_optimized"] / metrics["ate_odometry"] if metrics["ate_odometry"] else float("nan")
    ratio_u = (metrics["ate_optimized_unaligned"] / metrics["ate_odometry_unaligned"]
               if metrics["ate_odometry_unaligned"] else float("nan"))
    lines += ["[ate]", f"trajectory  ate_m ({'aligned' if align else 'unaligned'})  ate_m (unaligned)",
              f"odometry  {_num(metrics['ate_odometry'])}  {_num(metrics['ate_odometry_unaligned'])}",
              f"optimized  {_num(metrics['ate_optimized'])}  {_num(metrics['ate_optimized_unaligned'])}",
              f"ratio  {_num(ratio_a, 4)}  {_num(ratio_u, 4)}", ""]
    return "\n".join(lines)


def run_stage(name, cfg):
    fn = {"simulate": simulate, "describe": describe, "match": match, "correspond": correspond,
          "register": register, "optimize": optimize, "evaluate": evaluate}.get(name)
    if fn is None:
        raise ValueError(f"unknown stage {name!r}")
    return fn(cfg)


def run_pipeline(cfg, simulate_first=True):
    """Every stage in order; ``report.txt`` repeats the evaluate report of the configured variant."""
    for name in STAGES:
        if name == "simulate" and not (simulate_first and cfg.dataset_path is None):
            continue
        run_stage(name, cfg)
    tag = _tag(cfg)
    with open(_out(cfg, f"report_{tag}.txt")) as f:
        text = f.read()
    with open(_out(cfg, "report.txt"), "w") as f:
        f.write(text)
    return _out(cfg, "report.txt")


ABLATION_HEADER = ["variant", "recall", "inliers_median", "total_median", "loops_accepted",
                   "ate_odometry", "ate_optimized", "ate_ratio"]


def ablation(cfg, variants=None):
    """Run every stage after simulate once per variant and tabulate the outcomes."""
    variants = [desc.Variant.parse(v).value for v in (variants or cfg.variants)]
    if not os.path.exists(os.path.join(dataset_dir(cfg), "manifest.txt")):
        if cfg.dataset_path is not None:
            raise MissingUpstreamArtifact("simulate", os.path.join(dataset_dir(cfg), "manifest.txt"))
        simulate(cfg)
    rows, panels = [], []
    ds = load_dataset(cfg)
    odo = dict(enumerate(P.odometry_trajectory(ds)))
    for v in variants:
        vc = replace(cfg, params=cfg.params.with_variant(v))
        for name in STAGES[1:-1]:
            run_stage(name, vc)
        m = evaluate(vc)
        rows.append((v, m))
        ids, poses = read_trajectory_csv(_out(vc, f"trajectory_{v}.csv"))
        panels.append((desc.Variant.parse(v).label,
                       {"ground truth": ds.gt, "odometry": odo, "optimized": dict(zip(ids, poses))},
                       _loop_pairs(vc)))
    table = []
    for v, m in rows:
        ratio = m["ate_optimized"] / m["ate_odometry"] if m["ate_odometry"] else float("nan")
        table.append([v, _num(m["recall"], 4), _num(m["inliers_median"], 1), _num(m["total_median"], 1),
                      m["loops_accepted"], _num(m["ate_odometry"]), _num(m["ate_optimized"]), _num(ratio, 4)])
    _write_csv(_out(cfg, "ablation.csv"), ABLATION_HEADER, table)
    lines = [f"dataset: {ds.name}", "", "  ".join(ABLATION_HEADER)]
    lines += ["  ".join(str(x) for x in r) for r in table]
    if "flip-lr" in variants:
        lines += ["", "note: " + FLIP_NOTE]
    with open(_out(cfg, "ablation.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    plotting.ablation_overlays(panels, _out(cfg, "ablation.svg"))
    return rows
