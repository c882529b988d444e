"""Occlusion-robustness evaluation: metrics, occluder geometry, sweep.

The protocol measures how fitting accuracy degrades as synthetic occluders
hide keypoints. An occluder (oriented bar, circle, or rectangle) is anchored
at one joint's 2D location on a fixed 256x256 px canvas; every joint whose
keypoint falls inside the footprint is masked out of the observations, the
fit is re-run, and MPJPE against ground truth is recorded. Footprint size
grows with an integer degree-of-closeness (DoC) from 1 to 5. Masking
removes both the 2D keypoint and the 3D target of a covered joint: the
occluder stands in for image evidence going missing, and keeping a 3D row
for a joint whose keypoint is hidden would leak exactly the information the
experiment removes.

Sweep rows are plain dicts so report aggregates (DoC curves, summary
tables) are recomputable from the rows alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bodymodel import TemplateModel
from .camera import WeakPerspectiveCamera, project
from .chains import ChainSet, default_chain_set
from .observations import Observations
from .objectives import sample_plausible_poses, predict_joints
from .solver import NumericalFailure, SolverConfig, SolverMode, outer_solve

CANVAS_SIZE = 256  # px; square image fixture the occluders live on

_BASE_BAR_WIDTH = 10.0  # px per DoC step
_BASE_CIRCLE_RADIUS = 10.0  # px per DoC step
_BASE_RECT_AREA = 3000.0  # px^2 per DoC step


class OcclusionPattern(str, Enum):
    BAR = "bar"
    CIRCLE = "circle"
    RECTANGLE = "rectangle"


@dataclass(frozen=True)
class Occluder:
    """One occluder instance: pattern, size degree, and anchor joint.

    bar_angle orients the bar (radians, only used by BAR); rect_aspect is
    the rectangle's width:height ratio. The footprint size comes solely
    from (pattern, doc) via doc_size.
    """

    pattern: OcclusionPattern
    doc: int
    anchor_joint: int
    bar_angle: float = 0.0
    rect_aspect: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "pattern", OcclusionPattern(self.pattern))
        if not (1 <= self.doc <= 5):
            raise ValueError("doc must be in 1..5")
        if self.rect_aspect <= 0:
            raise ValueError("rect_aspect must be > 0")


def doc_size(pattern: OcclusionPattern, doc: int) -> float:
    """Footprint size for a degree of closeness: bar width px, circle
    radius px, or rectangle area px^2."""
    if not (1 <= doc <= 5):
        raise ValueError("doc must be in 1..5")
    pattern = OcclusionPattern(pattern)
    if pattern is OcclusionPattern.BAR:
        return _BASE_BAR_WIDTH * doc
    if pattern is OcclusionPattern.CIRCLE:
        return _BASE_CIRCLE_RADIUS * doc
    return _BASE_RECT_AREA * doc


def occluder_mask(x2d: np.ndarray, occluder: Occluder, anchor_xy: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside the occluder footprint anchored at
    anchor_xy. The bar is a full-canvas strip through the anchor."""
    x2d = np.asarray(x2d, dtype=np.float64).reshape(-1, 2)
    d = x2d - anchor_xy
    size = doc_size(occluder.pattern, occluder.doc)
    if occluder.pattern is OcclusionPattern.BAR:
        normal = np.array([-math.sin(occluder.bar_angle), math.cos(occluder.bar_angle)])
        return np.abs(d @ normal) <= size / 2.0
    if occluder.pattern is OcclusionPattern.CIRCLE:
        return np.linalg.norm(d, axis=1) <= size
    height = math.sqrt(size / occluder.rect_aspect)
    width = occluder.rect_aspect * height
    return (np.abs(d[:, 0]) <= width / 2.0) & (np.abs(d[:, 1]) <= height / 2.0)


def apply_occlusion(
    x2d: np.ndarray, vis2d: np.ndarray, occluder: Occluder
) -> tuple[np.ndarray, bool]:
    """Mask joints whose keypoints lie inside the occluder footprint.

    Returns (updated vis2d, applied). When the anchor joint is itself
    invisible there is nothing to anchor to and the mask is returned
    unchanged with applied=False. Masking is monotone: a joint already
    invisible stays invisible.
    """
    vis2d = np.asarray(vis2d, dtype=bool).reshape(-1)
    if not vis2d[occluder.anchor_joint]:
        return vis2d.copy(), False
    x2d = np.asarray(x2d, dtype=np.float64).reshape(-1, 2)
    inside = occluder_mask(x2d, occluder, x2d[occluder.anchor_joint])
    return vis2d & ~inside, True


# -- metrics -----------------------------------------------------------------


def mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean per-joint position error: plain Euclidean mean, no alignment."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"joint sets differ: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def pck(pred2d: np.ndarray, gt2d: np.ndarray, threshold_px: float) -> float:
    """Percentage of keypoints within threshold_px of ground truth."""
    if threshold_px <= 0:
        raise ValueError("threshold_px must be > 0")
    pred = np.asarray(pred2d, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt2d, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise ValueError(f"keypoint sets differ: {pred.shape} vs {gt.shape}")
    within = np.linalg.norm(pred - gt, axis=1) <= threshold_px
    return float(100.0 * within.mean())


# -- sweep cases -------------------------------------------------------------


@dataclass(frozen=True)
class SweepCase:
    """One synthetic evaluation case: ground truth and clean observations."""

    case_id: int
    pose: np.ndarray
    shape: np.ndarray
    camera: WeakPerspectiveCamera
    joints3d: np.ndarray
    joints2d: np.ndarray


def synth_sweep_cases(model: TemplateModel, n_cases: int, seed: int = 0) -> list[SweepCase]:
    """Noise-free 3D+2D cases from plausible poses, shapes in [-2, 2], and
    cameras that keep the body inside the canvas."""
    cases = []
    for i in range(n_cases):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        pose = sample_plausible_poses(1, rng)[0]
        shape = rng.uniform(-2.0, 2.0, model.shape_basis.shape[2])
        camera = WeakPerspectiveCamera(
            scale=float(rng.uniform(60.0, 110.0)),
            offset=rng.uniform(CANVAS_SIZE * 0.4, CANVAS_SIZE * 0.6, 2),
        )
        j3 = predict_joints(model, pose, shape)
        j2 = project(camera, j3)
        cases.append(SweepCase(i, pose, shape, camera, j3, j2))
    return cases


# -- sweep -------------------------------------------------------------------

DEFAULT_DOCS = (1, 2, 3, 4, 5)
DEFAULT_MODES = (
    SolverMode.HIERARCHICAL,
    SolverMode.FLAT_SINGLE_CHAIN,
    SolverMode.FORWARD_ONLY,
)
DEFAULT_PCK_THRESHOLD = 10.0  # px

# Row keys that go into the delimited report, in column order.
ROW_COLUMNS = (
    "case_id", "mode", "pattern", "doc", "anchor_joint", "n_masked",
    "mpjpe_units", "mpjpe_mm", "pck", "failed", "note",
)


@dataclass
class EvalReport:
    """Sweep output: one row dict per case-condition plus run metadata.

    Aggregates are not stored; doc_curve and summary recompute them from
    the rows so the report can never disagree with its own data.
    """

    rows: list[dict]
    modes: tuple[str, ...]
    patterns: tuple[str, ...]
    docs: tuple[int, ...]
    seed: int
    canvas_size: int
    pck_threshold: float
    config: dict

    def doc_curve(self, mode: str, pattern: str) -> list[tuple[int, float]]:
        """Median MPJPE (model units) per DoC for one mode and pattern,
        unoccluded baseline included as doc=0."""
        out = []
        for doc in (0, *self.docs):
            vals = [
                r["mpjpe_units"] for r in self.rows
                if r["mode"] == mode and not r["failed"]
                and (r["doc"] == 0 if doc == 0 else (r["doc"] == doc and r["pattern"] == pattern))
            ]
            if vals:
                out.append((doc, float(np.median(vals))))
        return out

    def median_mpjpe(self, mode: str, occluded: bool | None = None) -> float:
        """Median MPJPE over rows of one mode; occluded filters doc>0 rows
        (True), baseline rows (False), or everything (None)."""
        vals = [
            r["mpjpe_units"] for r in self.rows
            if r["mode"] == mode and not r["failed"]
            and (occluded is None or (r["doc"] > 0) == occluded)
        ]
        return float(np.median(vals)) if vals else float("nan")

    def per_joint_table(self, mode: str) -> list[float]:
        """Mean per-joint error (model units) over baseline rows of a mode."""
        rows = [r for r in self.rows if r["mode"] == mode and r["doc"] == 0 and not r["failed"]]
        if not rows:
            return []
        return np.mean([r["per_joint"] for r in rows], axis=0).tolist()

    def summary(self) -> dict:
        """Standard-vs-occluded table and DoC curves, recomputed from rows."""
        table = {
            mode: {
                "baseline_median": self.median_mpjpe(mode, occluded=False),
                "occluded_median": self.median_mpjpe(mode, occluded=True),
                "failed_rows": sum(1 for r in self.rows if r["mode"] == mode and r["failed"]),
            }
            for mode in self.modes
        }
        curves = {
            mode: {pattern: self.doc_curve(mode, pattern) for pattern in self.patterns}
            for mode in self.modes
        }
        return {
            "canvas_size_px": self.canvas_size,
            "pck_threshold_px": self.pck_threshold,
            "seed": self.seed,
            "docs": list(self.docs),
            "modes": list(self.modes),
            "patterns": list(self.patterns),
            "config": self.config,
            "standard_vs_occluded": table,
            "doc_curves": curves,
            "occlusion_semantics": (
                "occluders mask both the 2D keypoint and the 3D target of "
                "covered joints (information removal)"
            ),
        }


def _solve_row(model, chain_set, case, cfg, mode, occluder, pck_threshold):
    """Fit one case-condition and return its report row."""
    vis = np.ones(len(case.joints3d), dtype=bool)
    row = {
        "case_id": case.case_id,
        "mode": mode.value,
        "pattern": occluder.pattern.value if occluder else "",
        "doc": occluder.doc if occluder else 0,
        "anchor_joint": occluder.anchor_joint if occluder else -1,
        "n_masked": 0,
        "mpjpe_units": float("nan"),
        "mpjpe_mm": float("nan"),
        "pck": float("nan"),
        "per_joint": [],
        "failed": False,
        "note": "",
    }
    vis2d = vis.copy()
    if occluder is not None:
        vis2d, applied = apply_occlusion(case.joints2d, vis, occluder)
        if not applied:
            row["note"] = "anchor_invisible"
    vis3d = vis & vis2d  # hidden keypoint removes the joint's 3D row too
    row["n_masked"] = int((~vis2d).sum())
    run_cfg = SolverConfig(
        outer_iters=cfg.outer_iters,
        inner_iters=cfg.inner_iters,
        step_scale=cfg.step_scale,
        damping=cfg.damping,
        max_backtracks=cfg.max_backtracks,
        weights=cfg.weights,
        mode=mode,
        residual_provider=cfg.residual_provider,
    )
    try:
        obs = Observations(
            joints3d=case.joints3d, vis3d=vis3d,
            joints2d=case.joints2d, vis2d=vis2d,
        )
        state = outer_solve(model, chain_set, obs, run_cfg)
        pred = predict_joints(model, state.pose, state.shape)
        err = np.linalg.norm(pred - case.joints3d, axis=1)
        row["mpjpe_units"] = float(err.mean())
        row["mpjpe_mm"] = float(err.mean() * 1000.0)
        row["per_joint"] = err.tolist()
        row["pck"] = pck(project(case.camera, pred), case.joints2d, pck_threshold)
    except (NumericalFailure, ValueError) as exc:
        row["failed"] = True
        row["note"] = f"{type(exc).__name__}: {exc}"
    return row


def _case_rows(args) -> list[dict]:
    """All rows for one case (baseline plus every condition), in order."""
    model, chain_set, case, cfg, modes, patterns, docs, seed, pck_threshold = args
    draws = {}
    for p_idx, pattern in enumerate(patterns):
        rng = np.random.default_rng(np.random.SeedSequence((seed, case.case_id, p_idx)))
        draws[pattern] = (
            int(rng.integers(0, len(case.joints3d))),
            float(rng.uniform(0.0, math.pi)),
        )
    rows = []
    for mode in modes:
        rows.append(_solve_row(model, chain_set, case, cfg, mode, None, pck_threshold))
        for pattern in patterns:
            anchor, angle = draws[pattern]
            for doc in docs:
                occ = Occluder(
                    pattern=pattern, doc=doc, anchor_joint=anchor, bar_angle=angle,
                )
                rows.append(
                    _solve_row(model, chain_set, case, cfg, mode, occ, pck_threshold)
                )
    return rows


def run_occlusion_sweep(
    model: TemplateModel,
    cases: list[SweepCase],
    modes=DEFAULT_MODES,
    cfg: SolverConfig | None = None,
    *,
    patterns=tuple(OcclusionPattern),
    docs=DEFAULT_DOCS,
    seed: int = 0,
    pck_threshold: float = DEFAULT_PCK_THRESHOLD,
    chain_set: ChainSet | None = None,
    workers: int = 1,
) -> EvalReport:
    """Fit every case under every (pattern, DoC, mode) condition.

    Anchor joint and bar angle are drawn once per (case, pattern) and
    reused across DoCs, so a pattern's footprints nest as DoC grows and
    per-case degradation is attributable to footprint size alone. Failed
    solves keep their row, flagged, with NaN metrics.

    Cases are independent: workers > 1 fans them out over processes
    (inputs must pickle, so a custom residual_provider forces serial).
    Rows keep case order either way, so the report does not depend on
    the worker count.
    """
    cfg = cfg if cfg is not None else SolverConfig(outer_iters=6, inner_iters=4)
    chain_set = chain_set if chain_set is not None else default_chain_set(model.tree())
    modes = tuple(SolverMode(m) for m in modes)
    patterns = tuple(OcclusionPattern(p) for p in patterns)
    docs = tuple(int(d) for d in docs)
    if any(not (1 <= d <= 5) for d in docs):
        raise ValueError("docs must be in 1..5")
    jobs = [
        (model, chain_set, case, cfg, modes, patterns, docs, seed, pck_threshold)
        for case in cases
    ]
    if workers > 1 and len(jobs) > 1 and cfg.residual_provider is None:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            per_case = list(pool.map(_case_rows, jobs))
    else:
        per_case = [_case_rows(j) for j in jobs]
    rows = [r for case_rows in per_case for r in case_rows]
    return EvalReport(
        rows=rows,
        modes=tuple(m.value for m in modes),
        patterns=tuple(p.value for p in patterns),
        docs=docs,
        seed=seed,
        canvas_size=CANVAS_SIZE,
        pck_threshold=pck_threshold,
        config=cfg.to_dict(),
    )
