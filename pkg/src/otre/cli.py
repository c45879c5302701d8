"""Command-line surface: enhance / degrade / evaluate.

`enhance` runs the feed-forward generator over a directory (optionally
followed by per-image refinement with a fixed gamma or a gamma grid search),
`degrade` synthesizes low-quality counterparts for the full-reference
protocol, `evaluate` scores pair manifests.  Every command writes a CSV
report plus a JSON sidecar echoing the resolved configuration, and exits
non-zero if any record failed (partial outputs are kept and flagged with a
`.partial` marker).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import degrade as degrade_mod
from . import imagekit, reopt
from .degrade import DatasetManifest, DegradeParams, ManifestEntry
from .errors import OtreError, UnknownMetric
from .nnforward import Generator

METRIC_FNS = {
    "psnr": lambda a, b: imagekit.psnr(a, b),
    "ssim": lambda a, b: imagekit.ssim(a, b),
    "msssim": lambda a, b: imagekit.ms_ssim(a, b),
}

_REPORT_FIELDS = [
    "input", "output", "status", "error", "iters", "residual", "gamma",
    "psnr", "ssim", "msssim",
]


@dataclass
class RunRecord:
    input: str
    output: str = ""
    status: str = "ok"
    error: str = ""
    iters: int | None = None
    residual: float | None = None
    gamma: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    msssim: float | None = None


@dataclass
class RunReport:
    records: list[RunRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.status == "ok" for r in self.records)

    def aggregates(self) -> dict[str, float]:
        out: dict[str, float] = {}
        good = [r for r in self.records if r.status == "ok"]
        for key in ("iters", "residual", "psnr", "ssim", "msssim"):
            vals = [getattr(r, key) for r in good if getattr(r, key) is not None]
            if vals:
                out[f"mean_{key}"] = float(np.mean(vals))
        return out

    def write(self, report_path) -> None:
        report_path = Path(report_path)
        with open(report_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=_REPORT_FIELDS)
            writer.writeheader()
            for r in self.records:
                row = {k: v for k, v in asdict(r).items() if v is not None}
                writer.writerow(row)
        sidecar = {
            "config": self.config,
            "aggregates": self.aggregates(),
            "wall_clock_sec": self.wall_clock,
            "partial": not self.ok,
        }
        report_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
        if not self.ok:
            # failures happened: keep whatever was produced, but flag it
            report_path.with_name(report_path.name + ".partial").touch()


def _pool_width(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("OTRE_THREADS")
    return max(1, int(env)) if env else 1


def _collect_inputs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    raise OtreError(f"input {path} does not exist")


def _load_rgb(path, side: int | None) -> np.ndarray:
    img = imagekit.load_image(path)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if side is not None:
        img = imagekit.preprocess(img, side)
    return img


def _metric_row(record: RunRecord, out_img, ref_img, metrics) -> None:
    for m in metrics:
        setattr(record, m, METRIC_FNS[m](out_img, ref_img))


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------

def cmd_enhance(args) -> RunReport:
    t0 = time.time()
    gen = Generator.load(args.weights, verify_sn=not args.no_sn_check)
    inputs = _collect_inputs(Path(args.input))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    ref_dir = Path(args.reference) if args.reference else None

    if args.gamma is not None:
        grid = [args.gamma]
    elif args.gamma_grid is not None:
        lo, hi, n = args.gamma_grid
        grid = reopt.default_gamma_grid(lo, hi, int(n))
    else:
        grid = reopt.default_gamma_grid()

    cfg = reopt.ReConfig(
        gamma=grid[0], eta=args.eta, tol=args.tol, max_iters=args.iters,
        fidelity=reopt.FIDELITY_MS_SSIM,
    )

    def work(src: Path) -> RunRecord:
        rec = RunRecord(input=str(src))
        try:
            y = _load_rgb(src, args.side)
            ref = None
            if ref_dir is not None:
                ref = _load_rgb(ref_dir / src.name, args.side)
            if args.refine:
                if len(grid) == 1:
                    x0 = gen(y)
                    result = reopt.refine(y, x0, cfg, gen, track_objective=args.trace)
                    gamma_star = grid[0]
                else:
                    gamma_star, result = reopt.gamma_grid_search(y, grid, cfg, gen, reference=ref)
                out = result.x_star
                rec.iters = result.iters
                rec.residual = result.stationarity_residual
                rec.gamma = gamma_star
                if args.trace and result.objective_trace:
                    reopt.write_trace_csv(out_dir / f"{src.stem}.trace.csv", result)
            else:
                out = gen(y)
            dst = out_dir / f"{src.stem}.png"
            imagekit.save_image(out, dst)
            rec.output = str(dst)
            if ref is not None:
                _metric_row(rec, out, ref, ("psnr", "ssim", "msssim"))
        except (OtreError, OSError) as e:
            rec.status = "error"
            rec.error = f"{type(e).__name__}: {e}"
        return rec

    with ThreadPoolExecutor(max_workers=_pool_width(args)) as pool:
        records = list(pool.map(work, inputs))
    report = RunReport(records=records, config=_echo_config(args), wall_clock=time.time() - t0)
    report.write(out_dir / "report.csv")
    return report


# ---------------------------------------------------------------------------
# degrade
# ---------------------------------------------------------------------------

def cmd_degrade(args) -> RunReport:
    t0 = time.time()
    inputs = _collect_inputs(Path(args.input))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.params:
        base = DegradeParams(**json.loads(Path(args.params).read_text()))
    else:
        base = DegradeParams(
            blur_sigma=args.blur_sigma,
            illum_strength=args.illum,
            brightness_shift=args.brightness,
            contrast_scale=args.contrast,
            noise_std=args.noise_std,
        )

    def work(item) -> tuple[RunRecord, ManifestEntry | None]:
        idx, src = item
        rec = RunRecord(input=str(src))
        try:
            img = _load_rgb(src, None)
            child = int(np.random.SeedSequence([args.seed, idx]).generate_state(1)[0])
            p = DegradeParams(
                blur_sigma=base.blur_sigma,
                illum_strength=base.illum_strength,
                brightness_shift=base.brightness_shift,
                contrast_scale=base.contrast_scale,
                noise_std=base.noise_std,
                seed=child,
            )
            out = degrade_mod.degrade(img, p)
            dst = out_dir / f"{src.stem}.png"
            imagekit.save_image(out, dst)
            rec.output = str(dst)
            entry = ManifestEntry(path=str(dst), label="synthetic-low", clean_path=str(src))
            return rec, entry
        except (OtreError, OSError) as e:
            rec.status = "error"
            rec.error = f"{type(e).__name__}: {e}"
            return rec, None

    with ThreadPoolExecutor(max_workers=_pool_width(args)) as pool:
        results = list(pool.map(work, enumerate(inputs)))
    manifest = DatasetManifest(entries=[e for _, e in results if e is not None])
    manifest.save(out_dir / "pairs.jsonl")
    report = RunReport(
        records=[r for r, _ in results], config=_echo_config(args), wall_clock=time.time() - t0
    )
    report.write(out_dir / "report.csv")
    return report


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> RunReport:
    t0 = time.time()
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in metrics:
        if m not in METRIC_FNS:
            raise UnknownMetric(f"{m!r} (choose from {sorted(METRIC_FNS)})")
    manifest = DatasetManifest.load(args.pairs)

    def work(entry: ManifestEntry) -> RunRecord:
        rec = RunRecord(input=entry.path, output=entry.clean_path or "")
        try:
            if entry.clean_path is None:
                raise OtreError(f"{entry.path}: no clean counterpart in manifest")
            a = _load_rgb(entry.path, None)
            b = _load_rgb(entry.clean_path, None)
            _metric_row(rec, a, b, metrics)
        except (OtreError, OSError) as e:
            rec.status = "error"
            rec.error = f"{type(e).__name__}: {e}"
        return rec

    with ThreadPoolExecutor(max_workers=_pool_width(args)) as pool:
        records = list(pool.map(work, manifest.entries))
    report = RunReport(records=records, config=_echo_config(args), wall_clock=time.time() - t0)
    out = Path(args.report) if args.report else Path(args.pairs).with_suffix(".metrics.csv")
    report.write(out)
    _print_table(report, metrics)
    return report


def _print_table(report: RunReport, metrics) -> None:
    cols = ["input"] + list(metrics)
    widths = {c: max(len(c), 8) for c in cols}
    for r in report.records:
        widths["input"] = max(widths["input"], len(Path(r.input).name))
    header = "  ".join(c.ljust(widths[c]) for c in cols)
    print(header)
    print("-" * len(header))
    for r in report.records:
        cells = [Path(r.input).name.ljust(widths["input"])]
        for m in metrics:
            v = getattr(r, m)
            cells.append(("-" if v is None else f"{v:.4f}").ljust(widths[m]))
        print("  ".join(cells))
    agg = report.aggregates()
    cells = ["mean".ljust(widths["input"])]
    for m in metrics:
        v = agg.get(f"mean_{m}")
        cells.append(("-" if v is None else f"{v:.4f}").ljust(widths[m]))
    print("  ".join(cells))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _echo_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otre", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="run the generator (optionally + refinement)")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--refine", action="store_true", help="refine each enhancement")
    p.add_argument("--gamma", type=float, default=None, help="fixed prior strength")
    p.add_argument("--gamma-grid", nargs=3, type=float, metavar=("LO", "HI", "N"),
                   default=None, help="log-spaced gamma grid search")
    p.add_argument("--eta", type=float, default=0.1, help="refinement step size")
    p.add_argument("--iters", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--reference", default=None, help="ground-truth directory for metrics")
    p.add_argument("--side", type=int, default=256, help="preprocess side length")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--trace", action="store_true", help="write per-image objective traces")
    p.add_argument("--no-sn-check", action="store_true",
                   help="skip spectral-norm verification at load")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("degrade", help="synthesize degraded counterparts")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--params", default=None, help="JSON file of DegradeParams fields")
    p.add_argument("--blur-sigma", type=float, default=1.0)
    p.add_argument("--illum", type=float, default=0.2)
    p.add_argument("--brightness", type=float, default=0.0)
    p.add_argument("--contrast", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("evaluate", help="score enhanced/clean pairs")
    p.add_argument("--pairs", required=True, help="pairs manifest (jsonl)")
    p.add_argument("--metrics", default="psnr,ssim,msssim")
    p.add_argument("--report", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except (OtreError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    for rec in report.records:
        if rec.status != "ok":
            print(f"error: {rec.input}: {rec.error}", file=sys.stderr)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
