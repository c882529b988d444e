"""Command-line surface: synth-model, synth-case, fit, sweep.

Every command is deterministic given its flags and seeds, and every
output file embeds the configuration and seeds needed to regenerate it.
Exit codes: 0 success, 2 usage, 3 input error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bodymodel import (
    ModelFormatError,
    load_model,
    mesh_function,
    save_model,
    save_obj,
    synth_model,
)
from .camera import DegenerateConfigurationError, project
from .chains import UnsupportedSkeletonError, default_chain_set
from .evaluate import (
    DEFAULT_DOCS,
    OcclusionPattern,
    SweepCase,
    mpjpe,
    run_occlusion_sweep,
    synth_sweep_cases,
)
from .files import (
    CaseFile,
    FileFormatError,
    StateFile,
    load_case,
    load_config,
    save_case,
    save_state,
    solver_config_from,
)
from .jsonpack import ContainerError
from .objectives import predict_joints, total_loss, default_pose_prior
from .observations import Observations
from .solver import NumericalFailure, SolverMode, outer_solve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

_INPUT_ERRORS = (
    OSError,
    ModelFormatError,
    FileFormatError,
    ContainerError,
    UnsupportedSkeletonError,
    ValueError,
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="chainfit",
        description="Kinematic body-model fitting and occlusion-robustness sweeps.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-model", help="generate a procedural template model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertices", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_synth_model)

    p = sub.add_parser("synth-case", help="generate a synthetic fitting case")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise2d", type=float, default=0.0, help="2D noise sigma, pixels")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_synth_case)

    p = sub.add_parser("fit", help="fit the model to one case")
    p.add_argument("--model", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--config", default=None, help="INI config; flags override it")
    p.add_argument("--mode", choices=[m.value for m in SolverMode], default=None)
    p.add_argument("--outer-iters", type=int, default=None)
    p.add_argument("--inner-iters", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-obj", default=None, help="write the fitted mesh as OBJ")
    p.set_defaults(run=cmd_fit)

    p = sub.add_parser("sweep", help="run the occlusion-robustness sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--cases-dir", default=None, help="directory of case files (else synthetic)")
    p.add_argument("--config", default=None, help="INI config; flags override it")
    p.add_argument("--n-cases", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--patterns", default=None, help="comma list: bar,circle,rectangle")
    p.add_argument("--docs", default=None, help="comma list of DoC levels in 1..5")
    p.add_argument("--modes", default=None, help="comma list of solver modes")
    p.add_argument("--pck-threshold", type=float, default=None)
    p.add_argument("--workers", type=int, default=None, help="0 = available cores")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(run=cmd_sweep)
    return ap


def cmd_synth_model(args) -> int:
    model = synth_model(args.seed, n_vertices=args.vertices)
    save_model(model, args.out)
    print(f"wrote model: {args.out} (seed {args.seed}, {args.vertices} vertices)")
    return EXIT_OK


def cmd_synth_case(args) -> int:
    model = load_model(args.model)
    case = synth_sweep_cases(model, 1, seed=args.seed)[0]
    joints2d = case.joints2d
    if args.noise2d > 0:
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, 1)))
        joints2d = joints2d + rng.normal(0.0, args.noise2d, size=joints2d.shape)
    k = len(case.joints3d)
    obs = Observations(
        joints3d=case.joints3d,
        vis3d=np.ones(k, dtype=bool),
        joints2d=joints2d,
        vis2d=np.ones(k, dtype=bool),
    )
    save_case(
        CaseFile(
            observations=obs,
            model_ref=args.model,
            gt_pose=case.pose,
            gt_shape=case.shape,
            gt_camera=case.camera,
            seed=args.seed,
            noise2d=args.noise2d,
            notes="synthetic",
        ),
        args.out,
    )
    print(f"wrote case: {args.out} (seed {args.seed}, noise2d {args.noise2d})")
    return EXIT_OK


def cmd_fit(args) -> int:
    model = load_model(args.model)
    case = load_case(args.case)
    cp = load_config(args.config)
    cfg = solver_config_from(
        cp, mode=args.mode, outer_iters=args.outer_iters, inner_iters=args.inner_iters
    )
    chain_set = default_chain_set(model.tree())
    state = outer_solve(model, chain_set, case.observations, cfg)
    prior = default_pose_prior() if cfg.weights.w_kl > 0 else None
    breakdown = total_loss(
        model, state.pose, state.shape, state.camera, case.observations, prior, cfg.weights
    )
    meta = {"model": str(args.model), "case": str(args.case)}
    line = f"fit: total loss {breakdown.total:.6g}"
    if case.gt_pose is not None:
        err = mpjpe(
            predict_joints(model, state.pose, state.shape),
            predict_joints(model, case.gt_pose, case.gt_shape),
        )
        meta["mpjpe_units"] = err
        line += f", MPJPE {err:.6g} model units"
    save_state(
        StateFile(state=state, config=cfg, breakdown=breakdown.to_dict(), meta=meta),
        args.out,
    )
    print(line)
    print(f"wrote state: {args.out}")
    if args.dump_obj:
        posed = mesh_function(model, state.pose, state.shape)
        save_obj(args.dump_obj, posed.vertices, model.faces)
        print(f"wrote mesh: {args.dump_obj}")
    return EXIT_OK


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_sweep(args) -> int:
    from .report import render_report_figures, write_report_csv, write_report_json

    model = load_model(args.model)
    cp = load_config(args.config)
    sw = cp["sweep"]
    seed = args.seed if args.seed is not None else sw.getint("seed")
    n_cases = args.n_cases if args.n_cases is not None else sw.getint("n_cases")
    patterns = _split(args.patterns if args.patterns is not None else sw.get("patterns"))
    docs = [int(d) for d in _split(args.docs if args.docs is not None else sw.get("docs"))]
    modes = _split(args.modes if args.modes is not None else sw.get("modes"))
    pck_threshold = (
        args.pck_threshold if args.pck_threshold is not None else sw.getfloat("pck_threshold")
    )
    workers = args.workers if args.workers is not None else sw.getint("workers")
    if workers == 0:
        workers = os.cpu_count() or 1
    cfg = solver_config_from(cp, outer_iters=6)

    if args.cases_dir is not None:
        cases = _load_sweep_cases(model, args.cases_dir)
    else:
        cases = synth_sweep_cases(model, n_cases, seed=seed)
    patterns = [OcclusionPattern(p) for p in patterns]
    report = run_occlusion_sweep(
        model,
        cases,
        modes=[SolverMode(m) for m in modes],
        cfg=cfg,
        patterns=patterns,
        docs=docs,
        seed=seed,
        pck_threshold=pck_threshold,
        workers=workers,
    )
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    json_path = os.path.join(args.out, "report.json")
    write_report_csv(report, csv_path)
    write_report_json(report, json_path)
    figures = render_report_figures(report, args.out)
    print(f"sweep: {len(cases)} cases, {len(report.rows)} rows")
    for mode in report.modes:
        print(
            f"  {mode}: baseline median {report.median_mpjpe(mode, occluded=False):.6g}, "
            f"occluded median {report.median_mpjpe(mode, occluded=True):.6g} model units"
        )
    for path in (csv_path, json_path, *figures):
        print(f"wrote {path}")
    return EXIT_OK


def _load_sweep_cases(model, cases_dir) -> list[SweepCase]:
    """Sweep cases from a directory of case files (ground truth required)."""
    names = sorted(n for n in os.listdir(cases_dir) if n.endswith(".json"))
    if not names:
        raise FileFormatError(f"{cases_dir}: no .json case files")
    cases = []
    for i, name in enumerate(names):
        cf = load_case(os.path.join(cases_dir, name))
        if cf.gt_pose is None or cf.gt_shape is None or cf.gt_camera is None:
            raise FileFormatError(f"{name}: sweep cases need ground truth")
        joints3d = predict_joints(model, cf.gt_pose, cf.gt_shape)
        cases.append(
            SweepCase(
                case_id=i,
                pose=cf.gt_pose,
                shape=cf.gt_shape,
                camera=cf.gt_camera,
                joints3d=joints3d,
                joints2d=project(cf.gt_camera, joints3d),
            )
        )
    return cases


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.run(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DegenerateConfigurationError as exc:
        print(f"degenerate configuration: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
