"""Case, state, and config persistence.

JSON containers follow the model-file conventions: a 'version' tag, a
'units' header, float64 arrays packed as base64 with an explicit shape
map. The run configuration is a single INI file with [solver],
[weights], [prior], and [sweep] sections; command-line flags override
file values, and every output file echoes the configuration and seeds
needed to regenerate it.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field

import numpy as np

from .bodymodel import UNITS_NOTE
from .camera import WeakPerspectiveCamera
from .jsonpack import ContainerError, pack_fields, unpack_fields
from .observations import Observations
from .solver import SolverConfig, SolverState, TraceRecord

CASE_VERSION = 1
STATE_VERSION = 1


class FileFormatError(ValueError):
    """Case/state/config file failed to parse or violates an invariant."""


@dataclass
class CaseFile:
    """One fitting problem: observations plus optional ground truth.

    Synthetic cases carry the generating seed and the ground-truth
    parameters so results can be scored and the file regenerated;
    cases built from external data leave those fields None.
    """

    observations: Observations
    model_ref: str = ""
    gt_pose: np.ndarray | None = None
    gt_shape: np.ndarray | None = None
    gt_camera: WeakPerspectiveCamera | None = None
    seed: int | None = None
    noise2d: float = 0.0
    notes: str = ""


def save_case(case: CaseFile, path) -> None:
    obs = case.observations
    doc = {
        "version": CASE_VERSION,
        "units": UNITS_NOTE,
        "model_ref": case.model_ref,
        "seed": case.seed,
        "noise2d": float(case.noise2d),
        "notes": case.notes,
        "vis3d": [int(v) for v in obs.vis3d],
        "vis2d": [int(v) for v in obs.vis2d],
        "shapes": {},
    }
    arrays = {"joints3d": obs.joints3d, "joints2d": obs.joints2d}
    if obs.param_targets is not None:
        arrays["target_pose"], arrays["target_shape"] = obs.param_targets
    if case.gt_pose is not None:
        arrays["gt_pose"] = case.gt_pose
    if case.gt_shape is not None:
        arrays["gt_shape"] = case.gt_shape
    pack_fields(doc, arrays)
    if case.gt_camera is not None:
        doc["gt_camera"] = case.gt_camera.to_dict()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_case(path) -> CaseFile:
    doc = _load_doc(path, CASE_VERSION, "case")
    try:
        arrs = unpack_fields(doc, ["joints3d", "joints2d"])
        k = arrs["joints3d"].shape[0]
        obs = Observations(
            joints3d=arrs["joints3d"],
            vis3d=np.asarray(doc["vis3d"], dtype=bool),
            joints2d=arrs["joints2d"],
            vis2d=np.asarray(doc["vis2d"], dtype=bool),
            param_targets=(
                tuple(unpack_fields(doc, ["target_pose", "target_shape"]).values())
                if "target_pose" in doc
                else None
            ),
        )
        gt_pose = unpack_fields(doc, ["gt_pose"])["gt_pose"] if "gt_pose" in doc else None
        gt_shape = unpack_fields(doc, ["gt_shape"])["gt_shape"] if "gt_shape" in doc else None
        gt_camera = (
            WeakPerspectiveCamera.from_dict(doc["gt_camera"]) if "gt_camera" in doc else None
        )
        obs.validate(k)
    except (KeyError, ContainerError, ValueError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    seed = doc.get("seed")
    return CaseFile(
        observations=obs,
        model_ref=doc.get("model_ref", ""),
        gt_pose=gt_pose,
        gt_shape=gt_shape,
        gt_camera=gt_camera,
        seed=None if seed is None else int(seed),
        noise2d=float(doc.get("noise2d", 0.0)),
        notes=doc.get("notes", ""),
    )


@dataclass
class StateFile:
    """A solver result plus the configuration that produced it."""

    state: SolverState
    config: SolverConfig | None = None
    breakdown: dict | None = None
    meta: dict = field(default_factory=dict)


def save_state(sf: StateFile, path) -> None:
    st = sf.state
    doc = {
        "version": STATE_VERSION,
        "units": UNITS_NOTE,
        "camera": None if st.camera is None else st.camera.to_dict(),
        "config": None if sf.config is None else sf.config.to_dict(),
        "breakdown": sf.breakdown,
        "meta": sf.meta,
        "trace": [r.to_dict() for r in st.trace],
        "shapes": {},
    }
    pack_fields(doc, {"pose": st.pose, "shape": st.shape})
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_state(path) -> StateFile:
    doc = _load_doc(path, STATE_VERSION, "state")
    try:
        arrs = unpack_fields(doc, ["pose", "shape"])
        cam = doc.get("camera")
        state = SolverState(
            pose=arrs["pose"],
            shape=arrs["shape"],
            camera=None if cam is None else WeakPerspectiveCamera.from_dict(cam),
            trace=[TraceRecord.from_dict(r) for r in doc.get("trace", [])],
        )
        cfg = doc.get("config")
        config = None if cfg is None else SolverConfig.from_dict(cfg)
    except (KeyError, TypeError, ContainerError, ValueError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    return StateFile(
        state=state,
        config=config,
        breakdown=doc.get("breakdown"),
        meta=doc.get("meta", {}),
    )


def _load_doc(path, version: int, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(
            f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("version") != version:
        raise FileFormatError(f"{path}: not a version-{version} {kind} file")
    return doc


# -- INI configuration ---------------------------------------------------------

DEFAULT_CONFIG = """\
[solver]
outer_iters = 3
inner_iters = 4
step_scale = 1.0
damping = 1e-4
max_backtracks = 8
mode = hierarchical

[weights]
w_3d = 1.0
w_2d = 1e-2
w_smpl = 1.0
w_kl = 1e-3

[prior]
# path to a prior file; empty selects the stock body prior
path =

[sweep]
n_cases = 50
seed = 0
patterns = bar,circle,rectangle
docs = 1,2,3,4,5
modes = hierarchical,flat,forward_only
pck_threshold = 10.0
workers = 0
"""


def load_config(path=None) -> configparser.ConfigParser:
    """Parse an INI config over the built-in defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    return cp


def solver_config_from(cp: configparser.ConfigParser, **overrides) -> SolverConfig:
    """SolverConfig from the [solver]/[weights] sections; kwargs override."""
    from .objectives import LossWeights

    try:
        kw = {
            "outer_iters": cp.getint("solver", "outer_iters"),
            "inner_iters": cp.getint("solver", "inner_iters"),
            "step_scale": cp.getfloat("solver", "step_scale"),
            "damping": cp.getfloat("solver", "damping"),
            "max_backtracks": cp.getint("solver", "max_backtracks"),
            "mode": cp.get("solver", "mode"),
            "weights": LossWeights(
                w_3d=cp.getfloat("weights", "w_3d"),
                w_2d=cp.getfloat("weights", "w_2d"),
                w_smpl=cp.getfloat("weights", "w_smpl"),
                w_kl=cp.getfloat("weights", "w_kl"),
            ),
        }
    except (configparser.Error, ValueError) as exc:
        raise FileFormatError(f"config: {exc}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise FileFormatError(f"config: {exc}") from exc
