"""Chain-by-chain fitting of pose, shape, and camera.

The outer loop repeats {torso chain -> child chains -> shape -> camera}.
Each chain runs alternating forward/backward passes; a pass visits the
chain's joints in order and proposes a damped pseudo-inverse step for one
3-component axis-angle block at a time, evaluated at the configuration
already updated by the joints visited earlier in the pass. Each visit
fits the observed joints it is responsible for: descendants that a later
visit will re-fit are delegated to that visit (`_Engine.pass_targets`),
so a forward pass acts like forward substitution down the tree while a
backward pass, whose deeper blocks were just updated, re-fits broader
target sets. Every proposed step is backtracked against the objective
of the same owned-target subproblem it was built from and accepted only
on a strict decrease, so each recorded step is non-increasing in the
objective it was gated on.

Acceptance objectives are weighted sums of squared data errors. The
pose prior is deliberately excluded from acceptance: it enters only the
step proposal, where its whitened rows regularise the per-block
least-squares system toward the prior mean. Gating acceptance on data
terms alone makes a state consistent with the observations an exact
fixed point: data residuals are zero, so every prior-driven proposal
strictly increases the acceptance objective and is rejected, leaving
the parameters bitwise unchanged. Squared (rather than absolute) error
matters too: an objective that grows linearly around zero jams
one-block-at-a-time descent on its kinks, while the squared objective
charges only epsilon squared for the small collateral motion a block
step inflicts on already-fitted joints.

The reported loss breakdown keeps component-wise L1 data terms and the
prior term; it describes the state, while the trace records the
subproblem objectives the solver actually descends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bodymodel import TemplateModel, regress_rest_joints
from .camera import DegenerateConfigurationError, WeakPerspectiveCamera, estimate_camera
from .chains import Chain, ChainId, ChainSet
from .kinematics import (
    JointTransforms,
    KinematicTree,
    forward_kinematics,
    jacobian_columns_for_joint,
)
from .objectives import (
    LossWeights,
    PosePrior,
    combine_terms,
    default_pose_prior,
    loss_smpl,
)
from .observations import Observations

_ZERO_STEP = 1e-15
# Trust-region cap on one proposed block step (radians). Near-singular
# blocks otherwise produce gradient-over-damping steps too large for the
# backtracking range to tame.
_MAX_STEP = np.pi / 2
# Backtracking accepts only decreases beyond a small margin, relative plus
# absolute: near convergence the subproblems keep offering relatively large
# but physically meaningless improvements at ever-smaller scales (each
# accepted shape or camera update shifts every block's optimum a little),
# and without the absolute floor those churn forever as accepted steps.
def _sufficient_decrease(before: float, after: float) -> bool:
    return before - after > 1e-20 + 1e-10 * before


class NumericalFailure(RuntimeError):
    """Objective became non-finite; carries the trace up to the failure."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SolverMode(str, Enum):
    HIERARCHICAL = "hierarchical"
    NO_HIERARCHY = "no_hierarchy"
    FORWARD_ONLY = "forward_only"
    FLAT_SINGLE_CHAIN = "flat"


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the fitting schedule.

    outer_iters full cycles; inner_iters directional passes per chain per
    cycle (alternating forward/backward unless the mode says otherwise);
    per-block steps scaled by step_scale and halved up to max_backtracks
    times until the objective decreases. residual_provider is a seam for
    swapping the analytic step proposal; None selects the built-in damped
    pseudo-inverse.
    """

    outer_iters: int = 3
    inner_iters: int = 4
    step_scale: float = 1.0
    damping: float = 1e-4
    max_backtracks: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    mode: SolverMode = SolverMode.HIERARCHICAL
    residual_provider: object | None = None

    def __post_init__(self):
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if not (np.isfinite(self.step_scale) and self.step_scale > 0):
            raise ValueError("step_scale must be > 0")
        if not (np.isfinite(self.damping) and self.damping > 0):
            raise ValueError("damping must be > 0")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")
        object.__setattr__(self, "mode", SolverMode(self.mode))

    def to_dict(self) -> dict:
        return {
            "outer_iters": self.outer_iters,
            "inner_iters": self.inner_iters,
            "step_scale": self.step_scale,
            "damping": self.damping,
            "max_backtracks": self.max_backtracks,
            "weights": self.weights.to_dict(),
            "mode": self.mode.value,
        }

    @staticmethod
    def from_dict(d: dict) -> "SolverConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        return SolverConfig(**d)


@dataclass(frozen=True)
class TraceRecord:
    """One solver event: a proposed step, an update, or a skip note.

    objective_before/after hold the objective the event was gated on:
    the visit's owned-target data objective for chain records, the full
    data objective for init/shape/camera records. An accepted record
    always has objective_after <= objective_before; comparisons across
    records are only meaningful within one gating scope.
    """

    outer: int
    chain: str
    direction: str
    joint: int
    objective_before: float
    objective_after: float
    alpha: float
    accepted: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "outer": self.outer,
            "chain": self.chain,
            "direction": self.direction,
            "joint": self.joint,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "alpha": self.alpha,
            "accepted": self.accepted,
            "note": self.note,
        }

    @staticmethod
    def from_dict(d: dict) -> "TraceRecord":
        return TraceRecord(**d)


@dataclass
class SolverState:
    """Current parameters plus the event trace that produced them."""

    pose: np.ndarray
    shape: np.ndarray
    camera: WeakPerspectiveCamera | None
    trace: list[TraceRecord] = field(default_factory=list)

    def copy(self) -> "SolverState":
        return SolverState(
            pose=self.pose.copy(),
            shape=self.shape.copy(),
            camera=self.camera,
            trace=list(self.trace),
        )


def mean_initialization(joint_count: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Rest pose and mean shape: all zeros."""
    return np.zeros(3 * joint_count), np.zeros(10)


def shape_from_bone_lengths(
    model: TemplateModel,
    obs: Observations,
    *,
    ridge: float = 1e-6,
    iters: int = 12,
    min_bones: int = 10,
) -> np.ndarray:
    """Estimate shape coefficients from observed bone lengths.

    Bone lengths are invariant to pose, so they pin down the shape
    without knowing the rotations: for each bone whose two endpoint
    joints are 3D-visible, the rest offset between them is affine in
    the shape coefficients and its norm must match the observed
    distance. Gauss-Newton on those length residuals converges in a
    handful of iterations. Returns the mean shape (zeros) when fewer
    than min_bones bones are measurable or the estimate is implausible,
    so callers can use it unconditionally as an initializer.
    """
    n_coeff = model.shape_basis.shape[2]
    zeros = np.zeros(n_coeff)
    if not np.any(model.shape_basis) or obs.joints3d is None:
        return zeros
    parents = np.asarray(model.parents)
    child = np.nonzero(
        (parents >= 0) & obs.vis3d & obs.vis3d[np.maximum(parents, 0)]
    )[0]
    if child.size < min_bones:
        return zeros
    par = parents[child]
    rest0 = regress_rest_joints(model, model.template_vertices)
    dirs = np.einsum("kn,nic->cki", model.joint_regressor, model.shape_basis)
    base = rest0[child] - rest0[par]
    D = dirs[:, child] - dirs[:, par]
    length_obs = np.linalg.norm(obs.joints3d[child] - obs.joints3d[par], axis=1)
    beta = zeros.copy()
    eye = ridge * np.eye(n_coeff)
    for _ in range(iters):
        off = base + np.einsum("cki,c->ki", D, beta)
        length = np.maximum(np.linalg.norm(off, axis=1), 1e-12)
        unit = off / length[:, None]
        J = np.einsum("ki,cki->kc", unit, D)
        step = np.linalg.solve(J.T @ J + eye, J.T @ (length_obs - length))
        beta += step
        if float(np.linalg.norm(step)) < 1e-12:
            break
    if not np.all(np.isfinite(beta)) or float(np.abs(beta).max()) > 5.0:
        return zeros
    return beta


class DampedPseudoInverse:
    """Default per-block step: normal-equations damped least squares.

    Stacks, for the visit's owned targets (see `_Engine.pass_targets`),
    the 3D position rows and camera-mapped 2D rows, plus the whitened
    prior rows for this block and direct parameter-target rows.
    Solving (J^T J + damping I) d = J^T r is the same step as
    J^T (J J^T + damping I)^{-1} r for positive damping, in 3x3 form.
    """

    def propose(
        self,
        eng: "_Engine",
        chain: Chain,
        joint: int,
        step_targets,
        tf: JointTransforms,
        pred: np.ndarray,
        pose: np.ndarray,
    ) -> np.ndarray | None:
        t3, t2, targets = step_targets
        if not targets:
            return None
        w = eng.cfg.weights
        cols = jacobian_columns_for_joint(eng.tree, tf, pose[3 * joint : 3 * joint + 3], joint, targets)
        rowof = {t: 3 * i for i, t in enumerate(targets)}
        A = eng.cfg.damping * np.eye(3)
        g = np.zeros(3)
        sq = 0.0
        for t in t3:
            J = cols[rowof[t] : rowof[t] + 3]
            r = eng.obs3[t] - pred[t]
            A += w.w_3d * (J.T @ J)
            g += w.w_3d * (J.T @ r)
            sq += w.w_3d * float(r @ r)
        if t2:
            cam = eng.camera
            for t in t2:
                # Residual mapped back through the camera to the metric
                # image plane, so 3D and 2D rows share units and the
                # configured weights keep their intended balance.
                J = cols[rowof[t] : rowof[t] + 2]
                r = (eng.obs2[t] - (cam.scale * pred[t, :2] + cam.offset)) / cam.scale
                A += w.w_2d * (J.T @ J)
                g += w.w_2d * (J.T @ r)
                sq += w.w_2d * float(r @ r)
        if eng.prior_rows is not None and joint > 0 and sq > 0.0:
            # Prior rows scaled by the block's current data misfit: the
            # pull is proportional to how unexplained the targets still
            # are, so it vanishes at data consistency. A fixed-strength
            # pull would dominate the step direction once residuals are
            # small and ratchet the pose away through the data-only
            # acceptance test below.
            Wb = eng.prior_rows[:, 3 * joint - 3 : 3 * joint]
            z = eng.prior_rows @ (pose[3:] - eng.prior.mean)
            A += sq * (Wb.T @ Wb)
            g -= sq * (Wb.T @ z)
        if eng.smpl_pose is not None:
            blk = slice(3 * joint, 3 * joint + 3)
            s2 = 2.0 * w.w_smpl
            A += s2 * np.eye(3)
            g += s2 * (eng.smpl_pose[blk] - pose[blk])
        delta = np.linalg.solve(A, g)
        norm = float(np.linalg.norm(delta))
        if norm > _MAX_STEP:
            delta *= _MAX_STEP / norm
        return delta


_DEFAULT_PROVIDER = DampedPseudoInverse()


def _chain_name(chain: Chain) -> str:
    cid = chain.chain_id
    return cid.value if isinstance(cid, ChainId) else str(cid)


class _Engine:
    """Owns one fit: caches, current parameters, objective, and trace."""

    def __init__(
        self,
        obs: Observations,
        cfg: SolverConfig,
        model: TemplateModel | None = None,
        tree: KinematicTree | None = None,
        prior: PosePrior | None = None,
    ):
        if model is None and tree is None:
            raise ValueError("need a model or a kinematic tree")
        self.model = model
        self.tree = tree if tree is not None else model.tree()
        self.cfg = cfg
        self.prior = prior
        self.provider = cfg.residual_provider or _DEFAULT_PROVIDER
        k = self.tree.joint_count
        obs.validate(k)
        self.obs = obs
        self.obs3 = obs.joints3d
        self.obs2 = obs.joints2d
        self.vis3 = np.nonzero(obs.vis3d)[0]
        self.vis2 = np.nonzero(obs.vis2d)[0]
        self.smpl_pose = None
        self.smpl_shape = None
        if obs.param_targets is not None and cfg.weights.w_smpl > 0:
            self.smpl_pose, self.smpl_shape = obs.param_targets
        self.prior_rows = None
        if prior is not None and cfg.weights.w_kl > 0:
            if prior.dim != 3 * k - 3:
                raise ValueError(f"prior covers {prior.dim} dims, skeleton needs {3 * k - 3}")
            self.prior_rows = np.sqrt(cfg.weights.w_kl) * prior.whitening_rows()
        # shape machinery: rest joints are affine in the shape coefficients
        self.rest0 = None
        self.rest_dirs = None
        if model is not None:
            self.rest0 = regress_rest_joints(model, model.template_vertices)
            if np.any(model.shape_basis):
                self.rest_dirs = np.einsum("kn,nic->cki", model.joint_regressor, model.shape_basis)
        self._target_cache: dict[tuple, tuple] = {}
        # mutable fit state, set by attach()
        self.pose = None
        self.shape = None
        self.camera = None
        self.rest = None
        self.tf = None
        self.pred = None
        self.objective = np.nan
        self.trace: list[TraceRecord] = []
        self.outer = 0
        self.couple_dangling = True

    # -- state plumbing ----------------------------------------------------

    def attach(self, state: SolverState) -> None:
        self.pose = np.asarray(state.pose, np.float64).reshape(-1).copy()
        if self.pose.size != self.tree.pose_dim:
            raise ValueError(f"pose must have {self.tree.pose_dim} entries")
        self.shape = np.asarray(state.shape, np.float64).reshape(-1).copy()
        self.camera = state.camera
        if self.camera is None and self.vis2.size:
            self.camera = estimate_camera(
                self._posed(self.pose, self.rest_for(self.shape)).posed_joints,
                self.obs2,
                self.obs.vis2d,
            )
        self.trace = list(state.trace)
        self.rest = self.rest_for(self.shape)
        self.objective, self.tf, self.pred = self.eval_pose(self.pose)

    def detach(self) -> SolverState:
        return SolverState(
            pose=self.pose.copy(), shape=self.shape.copy(), camera=self.camera,
            trace=list(self.trace),
        )

    def rest_for(self, shape: np.ndarray) -> np.ndarray:
        if self.model is None:
            return self.tree.rest_joints
        if self.rest_dirs is None:
            return self.rest0
        return self.rest0 + np.tensordot(shape, self.rest_dirs, axes=1)

    def _posed(self, pose, rest) -> JointTransforms:
        return forward_kinematics(self.tree, pose, rest)

    # -- objective ---------------------------------------------------------

    def eval_pose(self, pose, rest=None, camera=None):
        """Full objective at (pose, current shape/camera unless overridden)."""
        rest = self.rest if rest is None else rest
        camera = self.camera if camera is None else camera
        tf = self._posed(pose, rest)
        pred = tf.posed_joints
        obj = self._terms(pose, pred, camera)
        return obj, tf, pred

    def _terms(self, pose, pred, camera) -> float:
        w = self.cfg.weights
        if self.vis3.size:
            d3 = pred[self.vis3] - self.obs3[self.vis3]
            l3 = float((d3 * d3).sum())
        else:
            l3 = 0.0
        if self.vis2.size:
            d2 = (camera.scale * pred[self.vis2, :2] + camera.offset - self.obs2[self.vis2]) / camera.scale
            l2 = float((d2 * d2).sum())
        else:
            l2 = 0.0
        ls = 0.0
        if self.smpl_pose is not None:
            ls = loss_smpl(pose, self.shape, (self.smpl_pose, self.smpl_shape))
        # Prior intentionally absent: acceptance gates on data fit only.
        return combine_terms(l3, l2, ls, 0.0, w)

    def owned_objective(self, pred, t3, t2, camera=None) -> float:
        """Data objective over one visit's owned targets.

        2D residuals are divided by the camera scale so both data terms
        are in model units (matching the step proposal rows).
        """
        camera = self.camera if camera is None else camera
        w = self.cfg.weights
        val = 0.0
        for t in t3:
            d = pred[t] - self.obs3[t]
            val += w.w_3d * float(d @ d)
        for t in t2:
            d = (camera.scale * pred[t, :2] + camera.offset - self.obs2[t]) / camera.scale
            val += w.w_2d * float(d @ d)
        return val

    def _check_finite(self, obj: float, where: str) -> None:
        if not np.isfinite(obj):
            raise NumericalFailure(f"objective became non-finite during {where}", self.trace)

    # -- trace helpers -------------------------------------------------------

    def note(self, chain: str, direction: str, joint: int, note: str, value: float = 0.0) -> None:
        self.trace.append(TraceRecord(
            outer=self.outer, chain=chain, direction=direction, joint=joint,
            objective_before=value, objective_after=value,
            alpha=0.0, accepted=False, note=note,
        ))

    # -- per-block steps -----------------------------------------------------

    def pass_targets(self, chain: Chain, order: tuple[int, ...], delegate: bool = True):
        """Per-visit target triples (t3, t2, all) for one pass over `order`.

        With delegate=True a visit owns the visible influenced descendants
        that no later visit can reach; targets sitting below a block that
        is still to be visited (later in this pass, or in a chain whose
        turn comes after this one) are delegated to that visit. Without
        the delegation rule a block near the root fits mostly joints its
        descendants have already matched, and those rows shrink the
        informative part of the step by their mass ratio, which stalls the
        solve; with it, a forward pass over consistent observations is
        plain forward substitution. Delegation presumes a later visit will
        push any unreachable remainder back up the tree (the backward
        pass), so modes without that return leg fit the full stack
        instead (delegate=False).

        Delegation to a later visit of this pass is unconditional: the
        chain's own pass alternation is the return leg. Delegation to a
        block of a later-scheduled chain additionally requires that block's
        joint (or a visible joint above it on the path) to be observed:
        a limb whose attachment joints are all masked dangles, and its
        surviving targets are the only constraint its ancestors here will
        ever see, so they own those targets instead of delegating. That
        extra ownership is worth taking only once the dangling chain has
        been reconciled at least once (couple_dangling, managed by the
        outer loop): pulling the torso toward a wrist while the arm still
        sits at its initial pose commits the fit to whatever configuration
        happens to reach, and later refinement stays in that basin.
        """
        key = (chain.chain_id, order, delegate, self.couple_dangling)
        hit = self._target_cache.get(key)
        if hit is not None:
            return hit
        par = self.tree.parent
        visible = self.obs.vis3d | self.obs.vis2d
        # Blocks some later-scheduled chain will revisit (empty for chains
        # whose influence is exactly their own joints).
        cross = frozenset(chain.influence) - frozenset(chain.joints)
        out = []
        for k, j in enumerate(order):
            later = frozenset(order[k + 1:]) if delegate else frozenset()
            use_cross = cross if delegate else frozenset()
            desc = self.tree.descendant_sets[j]
            owned = []
            for t in sorted(desc):
                if t not in chain.influence:
                    continue
                if not visible[t]:
                    continue
                a = par[t]
                while a != j:
                    if a in later:
                        break
                    if a in use_cross and (visible[a] or not self.couple_dangling):
                        break
                    a = par[a]
                if a == j:
                    owned.append(t)
            t3 = tuple(t for t in owned if self.obs.vis3d[t])
            t2 = tuple(t for t in owned if self.obs.vis2d[t])
            out.append((t3, t2, tuple(owned)))
        hit = tuple(out)
        self._target_cache[key] = hit
        return hit

    def block_step(self, chain: Chain, direction: str, joint: int, targets,
                   tf: JointTransforms, pred: np.ndarray, base_pose: np.ndarray) -> None:
        # Each visit is proposed AND gated on its owned-target subproblem;
        # the damage a step does to joints delegated to later visits is
        # theirs to repair. Gating on a wider objective re-couples the
        # blocks: already-matched downstream joints then veto the informative
        # part of every upstream step (only ~mass-ratio alpha survives
        # backtracking) and the solve crawls instead of substituting.
        t3, t2, owned = targets
        cid = _chain_name(chain)
        if not owned:
            self.note(cid, direction, joint, "no_data_influence")
            return
        delta = self.provider.propose(self, chain, joint, targets, tf, pred, base_pose)
        obj0 = self.owned_objective(self.pred, t3, t2)
        if delta is None or np.abs(delta).max() < _ZERO_STEP:
            self.note(cid, direction, joint, "zero_step", obj0)
            return
        blk = slice(3 * joint, 3 * joint + 3)
        alpha = self.cfg.step_scale
        for _ in range(self.cfg.max_backtracks + 1):
            cand = self.pose.copy()
            cand[blk] += alpha * delta
            tf_c = self._posed(cand, self.rest)
            pred_c = tf_c.posed_joints
            obj = self.owned_objective(pred_c, t3, t2)
            self._check_finite(obj, f"chain {cid} joint {joint}")
            if _sufficient_decrease(obj0, obj):
                self.pose, self.tf, self.pred = cand, tf_c, pred_c
                self.trace.append(TraceRecord(
                    outer=self.outer, chain=cid, direction=direction, joint=joint,
                    objective_before=obj0, objective_after=obj, alpha=alpha, accepted=True,
                ))
                return
            alpha *= 0.5
        self.trace.append(TraceRecord(
            outer=self.outer, chain=cid, direction=direction, joint=joint,
            objective_before=obj0, objective_after=obj0, alpha=0.0, accepted=False,
            note="rejected",
        ))

    # -- passes ----------------------------------------------------------------

    def chain_pass(self, chain: Chain, direction: str) -> None:
        if direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        cid = _chain_name(chain)
        visible = self.obs.vis3d | self.obs.vis2d
        if not any(visible[t] for t in chain.influence):
            self.note(cid, direction, -1, "no_visible_influence")
            return
        order = chain.joints if direction == "forward" else tuple(reversed(chain.joints))
        stale = self.cfg.mode is SolverMode.NO_HIERARCHY
        # Forward-only never returns root-ward and no-hierarchy visits do
        # not see each other's updates, so neither can honor a delegation.
        delegate = not stale and self.cfg.mode is not SolverMode.FORWARD_ONLY
        targets = self.pass_targets(chain, order, delegate)
        tf0, pred0, pose0 = self.tf, self.pred, self.pose
        for j, tgt in zip(order, targets):
            if stale:
                self.block_step(chain, direction, j, tgt, tf0, pred0, pose0)
            else:
                self.block_step(chain, direction, j, tgt, self.tf, self.pred, self.pose)

    def inner_solve_chain(self, chain: Chain) -> None:
        for p in range(self.cfg.inner_iters):
            if self.cfg.mode is SolverMode.FORWARD_ONLY:
                direction = "forward"
            else:
                direction = "forward" if p % 2 == 0 else "backward"
            self.chain_pass(chain, direction)

    # -- shape ------------------------------------------------------------------

    def shape_step(self) -> None:
        if self.model is None or self.rest_dirs is None:
            self.note("shape", "-", -1, "no_shape_basis",
                      self._terms(self.pose, self.pred, self.camera))
            return
        w = self.cfg.weights
        k = self.tree.joint_count
        # columns of d(posed joints)/d(shape): the translation recursion is
        # linear in the rest joints, rotations fixed at the current pose
        R = self.tf.global_rotations
        par = self.tree.parent
        jcols = np.empty((10, k, 3))
        for c in range(10):
            d = self.rest_dirs[c]
            jcols[c, 0] = d[0]
            for i in range(1, k):
                p = par[i]
                jcols[c, i] = R[p] @ (d[i] - d[p]) + jcols[c, p]
        A = self.cfg.damping * np.eye(10)
        g = np.zeros(10)
        for t in self.vis3:
            J = jcols[:, t, :].T  # (3,10)
            r = self.obs3[t] - self.pred[t]
            A += w.w_3d * (J.T @ J)
            g += w.w_3d * (J.T @ r)
        if self.vis2.size:
            s = self.camera.scale
            for t in self.vis2:
                J = jcols[:, t, :2].T  # (2,10), metric image plane
                r = (self.obs2[t] - (s * self.pred[t, :2] + self.camera.offset)) / s
                A += w.w_2d * (J.T @ J)
                g += w.w_2d * (J.T @ r)
        if self.smpl_shape is not None:
            s2 = 2.0 * w.w_smpl
            A += s2 * np.eye(10)
            g += s2 * (self.smpl_shape - self.shape)
        delta = np.linalg.solve(A, g)
        obj0 = self._terms(self.pose, self.pred, self.camera)
        if np.abs(delta).max() < _ZERO_STEP:
            self.note("shape", "-", -1, "zero_step", obj0)
            return
        alpha = self.cfg.step_scale
        for _ in range(self.cfg.max_backtracks + 1):
            cand = self.shape + alpha * delta
            rest_c = self.rest_for(cand)
            obj, tf_c, pred_c = self.eval_pose(self.pose, rest=rest_c)
            self._check_finite(obj, "shape update")
            if _sufficient_decrease(obj0, obj):
                self.shape, self.rest = cand, rest_c
                self.tf, self.pred, self.objective = tf_c, pred_c, obj
                self.trace.append(TraceRecord(
                    outer=self.outer, chain="shape", direction="-", joint=-1,
                    objective_before=obj0, objective_after=obj, alpha=alpha, accepted=True,
                ))
                return
            alpha *= 0.5
        self.trace.append(TraceRecord(
            outer=self.outer, chain="shape", direction="-", joint=-1,
            objective_before=obj0, objective_after=obj0, alpha=0.0, accepted=False,
            note="rejected",
        ))

    # -- camera -------------------------------------------------------------------

    def camera_step(self) -> None:
        if not self.vis2.size:
            self.note("camera", "-", -1, "no_2d_observations")
            return
        try:
            cam = estimate_camera(self.pred, self.obs2, self.obs.vis2d)
        except DegenerateConfigurationError:
            self.note("camera", "-", -1, "degenerate_configuration")
            return
        obj0 = self._terms(self.pose, self.pred, self.camera)
        obj = self._terms(self.pose, self.pred, cam)
        self._check_finite(obj, "camera update")
        if obj <= obj0:
            self.camera = cam
            self.trace.append(TraceRecord(
                outer=self.outer, chain="camera", direction="-", joint=-1,
                objective_before=obj0, objective_after=obj, alpha=1.0, accepted=True,
            ))
        else:
            self.note("camera", "-", -1, "rejected", obj0)


def _flat_chain(tree: KinematicTree) -> Chain:
    k = tree.joint_count
    return Chain(
        chain_id="flat", joints=tuple(range(k)), end_effector=k - 1,
        influence=tuple(range(k)),
    )


def _make_engine(obs, cfg, model=None, tree=None, prior=None) -> _Engine:
    return _Engine(obs, cfg, model=model, tree=tree, prior=prior)


def chain_pass(
    chain: Chain,
    state: SolverState,
    obs: Observations,
    cfg: SolverConfig,
    direction: str,
    *,
    model: TemplateModel | None = None,
    tree: KinematicTree | None = None,
    prior: PosePrior | None = None,
) -> SolverState:
    """One directional pass over a chain; returns the updated state.

    Standalone building block: no stock prior is injected here (outer_solve
    does that for the 24-joint body). Only the chain's pose blocks can
    change.
    """
    eng = _make_engine(obs, cfg, model=model, tree=tree, prior=prior)
    eng.attach(state)
    eng.chain_pass(chain, direction)
    return eng.detach()


def inner_solve_chain(
    chain: Chain,
    state: SolverState,
    obs: Observations,
    cfg: SolverConfig,
    *,
    model: TemplateModel | None = None,
    tree: KinematicTree | None = None,
    prior: PosePrior | None = None,
) -> SolverState:
    """cfg.inner_iters alternating passes (forward first) over one chain."""
    eng = _make_engine(obs, cfg, model=model, tree=tree, prior=prior)
    eng.attach(state)
    eng.inner_solve_chain(chain)
    return eng.detach()


def update_shape(
    state: SolverState,
    obs: Observations,
    cfg: SolverConfig,
    *,
    model: TemplateModel,
    prior: PosePrior | None = None,
) -> SolverState:
    """One damped Gauss-Newton step on the shape coefficients at fixed pose."""
    eng = _make_engine(obs, cfg, model=model, prior=prior)
    eng.attach(state)
    eng.shape_step()
    return eng.detach()


def outer_solve(
    model: TemplateModel,
    chain_set: ChainSet,
    obs: Observations,
    cfg: SolverConfig | None = None,
    init: SolverState | None = None,
    *,
    prior: PosePrior | None = None,
) -> SolverState:
    """Full fit: repeated {root chain, child chains, shape, camera} cycles.

    Starts from the rest pose, with the shape coefficients fit to the
    observed bone lengths (`shape_from_bone_lengths`; mean shape when too
    few bones are measurable) and a least-squares camera, unless an init
    state is given. Estimating the pose-invariant part of the shape up
    front matters: the chain passes can only place joints where the
    current bone lengths allow, so a wrong skeleton makes the pose absorb
    length error and the shape step then fits coefficients to the bent
    pose - an alternation that settles far from the optimum. With
    prior=None the stock body prior is used when the skeleton has 24
    joints (set weights.w_kl to 0 to disable the prior term instead).

    Raises:
        ValueError: inconsistent model/observations.
        NumericalFailure: non-finite objective; carries the trace.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    tree = model.tree()
    if prior is None and tree.joint_count == 24 and cfg.weights.w_kl > 0:
        prior = default_pose_prior()
    eng = _make_engine(obs, cfg, model=model, prior=prior)
    if init is None:
        pose0, _ = mean_initialization(tree.joint_count)
        shape0 = shape_from_bone_lengths(model, obs)
        init = SolverState(pose=pose0, shape=shape0, camera=None)
    eng.attach(init)
    eng.trace.append(TraceRecord(
        outer=0, chain="init", direction="-", joint=-1,
        objective_before=eng.objective, objective_after=eng.objective,
        alpha=0.0, accepted=True, note="init",
    ))
    eng._check_finite(eng.objective, "initialization")
    if cfg.mode is SolverMode.FLAT_SINGLE_CHAIN:
        schedule = (_flat_chain(tree),)
    else:
        schedule = (chain_set.root, *chain_set.children)
    for t in range(1, cfg.outer_iters + 1):
        eng.outer = t
        eng.couple_dangling = t > 1
        for chain in schedule:
            eng.inner_solve_chain(chain)
        eng.shape_step()
        eng.camera_step()
    return eng.detach()
