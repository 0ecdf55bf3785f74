"""Command-line entry points and dataset manifests.

    homoscale gen --n 2 --count 8 --seed 0 --out data/
    homoscale estimate data/manifest.json --out est/
    homoscale train data/manifest.json --mu 0.1 --out train/
    homoscale eval data/manifest.json --estimates est/estimates.json --out report/
    homoscale plot report/robustness.csv --out report/robustness.svg

Every command is a pure function of its inputs, flags and seed.  Errors
are printed to stderr as a one-line JSON record with a stable code.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import algebra, estimator, evaluation, imaging, objective, synthesis
from .errors import HomoscaleError, MissingFile, NoMatches, ParseError, ValidationError

log = logging.getLogger("homoscale")

DEFAULT_SEED = 20231
MIN_POINTS = 4
LABEL_FLOOR = 6
CATEGORIES = set(synthesis.CATEGORIES)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Record:
    id: str
    source: str
    target: str
    category: str
    points: np.ndarray = None  # (N, 4) or None for unlabelled pairs
    chain: str = None
    base: str = ""

    def path(self, name):
        return os.path.join(self.base, name)

    def to_dict(self):
        d = {"id": self.id, "source": self.source, "target": self.target, "category": self.category}
        if self.points is not None:
            d["points"] = [[float(v) for v in row] for row in self.points]
        if self.chain is not None:
            d["chain"] = self.chain
        return d


def _fail(idx, msg):
    raise ValidationError(f"record {idx}: {msg}")


def _record(obj, idx, base):
    if not isinstance(obj, dict):
        _fail(idx, "not an object")
    for key in ("source", "target", "category"):
        if not isinstance(obj.get(key), str):
            _fail(idx, f"field '{key}' missing or not a string")
    if obj["category"] not in CATEGORIES:
        _fail(idx, f"field 'category': unknown category {obj['category']!r}")
    rid = obj.get("id", f"{idx:04d}")
    if not isinstance(rid, str):
        _fail(idx, "field 'id' must be a string")
    pts = obj.get("points")
    if pts is not None:
        try:
            pts = np.array(pts, dtype=float)
        except (TypeError, ValueError):
            _fail(idx, "field 'points' is not numeric")
        if pts.ndim != 2 or pts.shape[1] != 4 or not np.all(np.isfinite(pts)):
            _fail(idx, "field 'points' must be a list of finite [xs, ys, xt, yt]")
        if len(pts) < MIN_POINTS:
            _fail(idx, f"field 'points': {len(pts)} points, need at least {MIN_POINTS}")
        if len(pts) < LABEL_FLOOR:
            warnings.warn(f"record {idx} ({rid}): only {len(pts)} labelled points", stacklevel=3)
    chain = obj.get("chain")
    if chain is not None and not isinstance(chain, str):
        _fail(idx, "field 'chain' must be a string")
    return Record(rid, obj["source"], obj["target"], obj["category"], pts, chain, base)


def parse_manifest(path):
    """Validated records of a manifest JSON list; paths stay relative to
    the manifest's directory."""
    if not os.path.isfile(path):
        raise MissingFile(f"manifest not found: {path}")
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top level must be a list of records")
    base = os.path.dirname(os.path.abspath(path))
    records = [_record(obj, i, base) for i, obj in enumerate(doc)]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate record ids")
    return records


def manifest_text(records):
    return json.dumps([r.to_dict() for r in records], indent=2) + "\n"


def write_manifest(records, path):
    atomic_write(path, manifest_text(records))


# ---------------------------------------------------------------------------
# plumbing


def atomic_write(path, data):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def workers():
    cap = os.environ.get("HOMOSCALE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValidationError(f"HOMOSCALE_THREADS must be an integer, got {cap!r}")
    return n


def pmap(fn, items):
    """Ordered map over a process pool (serial for one worker)."""
    items = list(items)
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return w, h


def _lambda_w(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--lambda-w takes 'auto' or a number")


@dataclass
class RunConfig:
    command: str
    inputs: list = field(default_factory=list)
    out: str = "."
    seed: int = DEFAULT_SEED
    chain: synthesis.ChainConfig = field(default_factory=synthesis.ChainConfig)
    est: estimator.EstimatorConfig = field(default_factory=estimator.EstimatorConfig)
    opt: estimator.OptimizerConfig = field(default_factory=estimator.OptimizerConfig)
    loss: objective.LossConfig = field(default_factory=objective.LossConfig)
    extra: dict = field(default_factory=dict)


def _override(obj, values):
    known = {f.name for f in dataclasses.fields(obj)}
    kept = {k: v for k, v in values.items() if k in known and v is not None}
    return dataclasses.replace(obj, **kept)


def build_config(args):
    """Defaults, then the optional ``--config`` JSON sections, then flags."""
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        if not os.path.isfile(args.config):
            raise MissingFile(f"config not found: {args.config}")
        with open(args.config) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        for name, attr in (("chain", "chain"), ("estimator", "est"), ("optimizer", "opt"), ("loss", "loss")):
            if name in doc:
                setattr(cfg, attr, _override(getattr(cfg, attr), doc[name]))
        if "seed" in doc:
            cfg.seed = int(doc["seed"])
    a = vars(args)
    if a.get("resize"):
        w, h = a["resize"]
        cfg.chain = _override(cfg.chain, {"resize_w": w, "resize_h": h})
        cfg.est = _override(cfg.est, {"resize_w": w, "resize_h": h})
    cfg.chain = _override(cfg.chain, {"n": a.get("n"), "max_rate": a.get("max_overlap_rate")})
    cfg.est = _override(cfg.est, {"radius": a.get("radius"), "ratio": a.get("ratio")})
    cfg.opt = _override(cfg.opt, {"mu": a.get("mu"), "iterations": a.get("iters")})
    cfg.loss = _override(cfg.loss, {"lambda_w": a.get("lambda_w")})
    if a.get("seed") is not None:
        cfg.seed = a["seed"]
    cfg.inputs = list(a.get("inputs") or [])
    cfg.out = a.get("out") or "."
    cfg.extra = {k: v for k, v in a.items() if k not in {"command", "inputs", "out", "seed", "config"}}
    cfg.chain.seed = cfg.seed
    return cfg


# ---------------------------------------------------------------------------
# gen


def _gen_one(job):
    idx, cfg, src_path, src_size, out = job
    rng = synthesis.rng_for(cfg.seed, idx)
    if src_path:
        source = imaging.load_image(src_path)
    else:
        source = synthesis.textured_image(src_size[0], src_size[1], synthesis.rng_for(cfg.seed, idx, 1))
    chain = synthesis.build_chain(source, None, cfg, rng)
    stem = f"chain_{idx:04d}"
    synthesis.save_chain(chain, out, stem)
    pts = synthesis.ground_truth_points(chain.h_st, cfg.crop_w, cfg.crop_h, 9)
    rec = Record(stem, f"{stem}_s0.png", f"{stem}_t.png", "synthetic", pts, f"{stem}.json")
    return rec, chain.h_st


def cmd_gen(cfg):
    out = cfg.out
    count = cfg.extra.get("count") or 1
    size = cfg.extra.get("source_size") or (480, 720)
    sources = cfg.inputs
    jobs = [(i, cfg.chain, sources[i % len(sources)] if sources else None, size, out) for i in range(count)]
    results = pmap(_gen_one, jobs)
    records = [r for r, _ in results]
    write_manifest(records, os.path.join(out, "manifest.json"))
    truth = {r.id: algebra.to_json(h) for r, h in results}
    atomic_write(os.path.join(out, "ground_truth.json"), dump_json(truth))
    atomic_write(os.path.join(out, "config.json"), dump_json({"chain": synthesis.config_dict(cfg.chain), "seed": cfg.seed}))
    log.info("wrote %d chains to %s", len(records), out)
    return 0


# ---------------------------------------------------------------------------
# estimate


def _load_pair(rec):
    for name in (rec.source, rec.target):
        if not os.path.isfile(rec.path(name)):
            raise MissingFile(f"record {rec.id}: image not found: {name}")
    return imaging.load_image(rec.path(rec.source)), imaging.load_image(rec.path(rec.target))


def _diag_json(diag, rec):
    levels = []
    for lv in diag["levels"]:
        item = {k: lv[k] for k in ("space", "pyramid_level", "cell", "matches", "inlier_ratio")}
        item["h"] = algebra.to_json(lv["h"])
        if rec.points is not None:
            item["pme"] = evaluation.pme(lv["h"], rec.points).pme
        levels.append(item)
    return {"levels": levels}


def _estimate_one(job):
    rec, ecfg, progressive = job
    try:
        if progressive:
            if rec.chain is None:
                raise ValidationError(f"record {rec.id}: progressive mode needs a chain")
            chain = synthesis.load_chain(rec.path(rec.chain))
            h, factors = estimator.progressive_estimate(chain, ecfg)
            diag = {"factors": [algebra.to_json(f) for f in factors]}
        else:
            src, tgt = _load_pair(rec)
            h, d = estimator.estimate(src, tgt, ecfg)
            diag = _diag_json(d, rec)
    except HomoscaleError as exc:
        return rec, None, {"error": exc.code, "message": str(exc)}
    return rec, h, diag


def cmd_estimate(cfg):
    records = _records(cfg)
    progressive = cfg.extra.get("mode") == "progressive"
    results = pmap(_estimate_one, [(r, cfg.est, progressive) for r in records])
    estimates, rows, failed = {}, [], 0
    for rec, h, diag in results:
        atomic_write(os.path.join(cfg.out, "pairs", f"{rec.id}.json"), dump_json(
            {"id": rec.id, "h": None if h is None else algebra.to_json(h), "diagnostics": diag}))
        if h is None:
            failed += 1
            log.warning("pair %s failed: %s", rec.id, diag["error"])
            continue
        estimates[rec.id] = algebra.to_json(h)
        if rec.points is not None:
            rows.append(evaluation.pme(h, rec.points, rec.id, rec.category))
    atomic_write(os.path.join(cfg.out, "estimates.json"), dump_json(estimates))
    atomic_write(os.path.join(cfg.out, "pme.csv"), evaluation.write_records_csv(rows))
    return 0 if not failed else 3


# ---------------------------------------------------------------------------
# train


def _train_one(job):
    rec, cfg, init_mode, noise = job
    if rec.chain is None:
        raise ValidationError(f"record {rec.id}: training needs a chain with ground-truth hops")
    chain = synthesis.load_chain(rec.path(rec.chain))
    height, width = chain.source.shape[:2]
    n = chain.n
    problem = objective.ChainProblem(chain.gts, width, height)
    rng = synthesis.rng_for(cfg.seed, 7, int.from_bytes(rec.id.encode(), "little") % (2 ** 31))
    anchors, est = estimator.estimate_anchors(chain, cfg.est)
    for idx in sorted(set(range(n, 2 * n + 1)) - set(est)):
        log.warning("pair %s: no anchor for factor %d", rec.id, idx)
    prefix = [algebra.compose_chain(chain.gts[:i]) for i in range(n + 1)]
    if init_mode == "estimate":
        # the direct estimate, else any bridge carried back to the source frame
        h_st = est.get(problem.index("direct"))
        for i in range(n, 0, -1):
            if h_st is None and problem.index("bridge", i) in est:
                h_st = algebra.compose(est[problem.index("bridge", i)], prefix[i])
        if h_st is None:
            raise NoMatches(f"record {rec.id}: no pair of the chain could be estimated")
        bridges = [est.get(problem.index("bridge", i), algebra.compose(h_st, algebra.invert(prefix[i]))) for i in range(1, n + 1)]
        init = estimator.initial_offsets(chain.gts, bridges, h_st, width, height)
    else:
        h_st = chain.h_st if chain.h_st is not None else est.get(problem.index("direct"))
        if h_st is None:
            raise NoMatches(f"record {rec.id}: no ground truth or estimate for H_st")
        bridges = [algebra.compose(h_st, algebra.invert(prefix[i])) for i in range(1, n + 1)]
        init = estimator.initial_offsets(chain.gts, bridges, h_st, width, height)
        init = init + rng.uniform(-noise, noise, init.shape)
    result = estimator.direct_optimize(chain, init, cfg.opt, cfg.loss, anchors=anchors)
    return rec, result


def _trace_csv(trace):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "L_sup", "L_unsup", "lambda_w", "L_HIL", "anchor", "total"])
    for i, r in enumerate(trace):
        w.writerow([i] + [repr(float(v)) for v in (r.L_sup, r.L_unsup, r.lambda_w, r.L_HIL, r.anchor, r.total)])
    return out.getvalue()


def cmd_train(cfg):
    records = [r for r in _records(cfg) if r.chain is not None]
    if not records:
        raise ValidationError("no records with chains to train on")
    jobs = [(r, cfg, cfg.extra.get("init") or "estimate", cfg.extra.get("noise") or 3.0) for r in records]
    estimates = {}
    for rec, res in pmap(_train_one, jobs):
        base = os.path.join(cfg.out, rec.id)
        atomic_write(base + "_trace.csv", _trace_csv(res.trace))
        if cfg.extra.get("log"):
            atomic_write(base + "_trace.jsonl", "".join(r.to_json() + "\n" for r in res.trace))
        summary = {
            "id": rec.id,
            "hops": [algebra.to_json(h) for h in res.hops],
            "bridges": [algebra.to_json(h) for h in res.bridges],
            "h_st": algebra.to_json(res.h_st),
            "composed": algebra.to_json(res.composed),
            "residual": res.residual,
            "iterations": res.iterations,
            "converged": res.converged,
        }
        atomic_write(base + "_result.json", dump_json(summary))
        estimates[rec.id] = algebra.to_json(res.composed)
    atomic_write(os.path.join(cfg.out, "estimates.json"), dump_json(estimates))
    return 0


# ---------------------------------------------------------------------------
# eval / plot


def load_estimates(path):
    if not os.path.isfile(path):
        raise MissingFile(f"estimates not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return {k: algebra.from_json(v) for k, v in doc.items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"{path}: bad homography record ({exc})") from exc


def cmd_eval(cfg):
    records = [r for r in _records(cfg) if r.points is not None]
    if not records:
        raise ValidationError("manifest has no labelled records")
    methods = {"I3x3": {r.id: algebra.identity() for r in records}}
    for item in cfg.extra.get("estimates") or []:
        label, _, path = item.rpartition("=")
        label = label or os.path.splitext(os.path.basename(path))[0]
        methods[label] = load_estimates(path)
    by_method, all_rows = {}, []
    thresholds = evaluation.default_thresholds()
    curves = io.StringIO()
    cw = csv.writer(curves, lineterminator="\n")
    cw.writerow(["method", "threshold", "inlier_proportion"])
    for label, est in methods.items():
        recs = []
        for r in records:
            if r.id not in est:
                log.warning("%s: no estimate for %s", label, r.id)
                continue
            recs.append(evaluation.pme(est[r.id], r.points, r.id, r.category))
        by_method[label] = recs
        all_rows += [dataclasses.replace(x, pair_id=f"{label}/{x.pair_id}") for x in recs]
        if recs:
            curve = evaluation.inlier_curve(np.concatenate([x.errors for x in recs]), thresholds)
            for t, p in zip(curve.thresholds, curve.proportions):
                cw.writerow([label, f"{t:g}", f"{p:.6f}"])
    table = evaluation.category_report(by_method)
    ref = cfg.extra.get("reference") or "second_best"
    if ref != "second_best" and ref not in table.methods:
        raise ValidationError(f"unknown reference method {ref!r}")
    if len(table.methods) < 2 and ref == "second_best":
        ref = None
    atomic_write(os.path.join(cfg.out, "records.csv"), evaluation.write_records_csv(all_rows))
    atomic_write(os.path.join(cfg.out, "report.csv"), evaluation.to_csv(table, ref))
    atomic_write(os.path.join(cfg.out, "report.txt"), evaluation.render_text(table, ref))
    atomic_write(os.path.join(cfg.out, "robustness.csv"), curves.getvalue())
    return 0


def read_curves(path):
    if not os.path.isfile(path):
        raise MissingFile(f"curve CSV not found: {path}")
    curves = {}
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    try:
        for row in rows:
            label = row.get("method") or os.path.splitext(os.path.basename(path))[0]
            curves.setdefault(label, ([], []))
            curves[label][0].append(float(row["threshold"]))
            curves[label][1].append(float(row["inlier_proportion"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: not a robustness CSV ({exc})") from exc
    return {k: evaluation.RobustnessCurve(np.array(t), np.array(p)) for k, (t, p) in curves.items()}


def cmd_plot(cfg):
    if not cfg.inputs:
        raise ValidationError("plot needs at least one CSV")
    curves = {}
    for path in cfg.inputs:
        curves.update(read_curves(path))
    out = cfg.out if cfg.out.endswith(".svg") else os.path.join(cfg.out, "robustness.svg")
    tmp = f"{out}.tmp{os.getpid()}.svg"
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    evaluation.plot_curves(curves, tmp)
    os.replace(tmp, out)
    return 0


def _records(cfg):
    if len(cfg.inputs) != 1:
        raise ValidationError(f"{cfg.command} takes exactly one manifest")
    return parse_manifest(cfg.inputs[0])


COMMANDS = {"gen": cmd_gen, "estimate": cmd_estimate, "train": cmd_train, "eval": cmd_eval, "plot": cmd_plot}


def parser():
    p = argparse.ArgumentParser(prog="homoscale", description="Large-baseline homography toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=None, help="output directory (or .svg file for plot)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", help="JSON with chain/estimator/optimizer/loss sections")

    def est_flags(sp):
        sp.add_argument("--resize", type=_size, help="resized raster WxH (default 256x256)")
        sp.add_argument("--radius", type=int, help="local correlation radius")
        sp.add_argument("--ratio", type=float, help="coarse ratio-test threshold")

    g = sub.add_parser("gen", help="generate synthetic progressive chains")
    common(g)
    g.add_argument("inputs", nargs="*", help="optional source images (default: procedural textures)")
    g.add_argument("--n", type=int, help="number of inserted images")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--max-overlap-rate", type=float, dest="max_overlap_rate", help="max intermediate non-overlap rate")
    g.add_argument("--resize", type=_size)
    g.add_argument("--source-size", type=_size, dest="source_size", help="procedural source WxH (default 480x720)")

    e = sub.add_parser("estimate", help="estimate homographies for every manifest pair")
    common(e)
    e.add_argument("inputs", nargs=1, metavar="manifest")
    est_flags(e)
    e.add_argument("--mode", choices=("direct", "progressive"), default="direct")

    t = sub.add_parser("train", help="direct identity-loss optimisation per chain")
    common(t)
    t.add_argument("inputs", nargs=1, metavar="manifest")
    est_flags(t)
    t.add_argument("--lambda-w", type=_lambda_w, dest="lambda_w", help="'auto' or a fixed weight")
    t.add_argument("--mu", type=float, help="anchor weight")
    t.add_argument("--iters", type=int, help="iteration cap")
    t.add_argument("--init", choices=("estimate", "gt-noise"), default="estimate")
    t.add_argument("--noise", type=float, default=3.0, help="corner noise (px) for --init gt-noise")
    t.add_argument("--log", action="store_true", help="also write a JSON-lines loss log")

    v = sub.add_parser("eval", help="PME tables and robustness curves")
    common(v)
    v.add_argument("inputs", nargs=1, metavar="manifest")
    v.add_argument("--estimates", action="append", help="[label=]estimates.json (repeatable)")
    v.add_argument("--reference", help="method name for the relative columns (default: second best)")

    pl = sub.add_parser("plot", help="render robustness CSVs as SVG")
    common(pl)
    pl.add_argument("inputs", nargs="+", metavar="csv")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.command](cfg)
    except HomoscaleError as exc:
        sys.stderr.write(json.dumps({"error": exc.code, "message": str(exc)}, sort_keys=True) + "\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": "E_CONFIG", "message": str(exc)}, sort_keys=True) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
