"""Rapid Entire Body Assessment: per-frame ergonomic risk from 3D joints.

The scoring pipeline is the classic worksheet: joint angles are banded
into small integer scores, Table A combines trunk/neck/legs (plus a load
point), Table B combines upper arm/lower arm/wrist (plus a coupling
point), Table C composes the two, and activity points push the final
score into [1, 15].  The tables themselves live in a plain-text resource
file so they can be inspected, swapped, and tested against the published
worksheet rather than trusted as magic constants.

A recognized action label can adjust a score after the fact: a data-driven
mapping file translates label tiers (object carried, manipulation type,
working height) into risk factors, and the frame is rescored with those
factors applied.  Unknown labels pass the score through unchanged, with a
warning recorded instead of an exception — a misrecognized frame should
never crash a monitoring loop.

Angle conventions (documented defaults, all configurable via `gravity`):
"up" is the negative gravity direction; the sagittal forward axis is
cross(left_hip - right_hip, up).  Trunk flexion is the signed angle of
the hip→shoulder axis in the sagittal plane (forward bend positive), neck
flexion is measured relative to the trunk, upper-arm elevation relative
to the hanging direction, and knee flexion as deviation from a straight
leg.  Twist/side-bend booleans default to False: they are unreliable to
infer from sparse Cartesian joints, so they are inputs, not estimates.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources as _resources

import numpy as np


class RebaError(ValueError):
    pass


COUPLING_LEVELS = ("good", "fair", "poor", "unacceptable")

RISK_BANDS = (
    (1, 1, "negligible"),
    (2, 3, "low"),
    (4, 7, "medium"),
    (8, 10, "high"),
    (11, 15, "very high"),
)


def risk_band(final: int) -> str:
    for lo, hi, name in RISK_BANDS:
        if lo <= final <= hi:
            return name
    raise RebaError(f"final score {final} outside [1, 15]")


@dataclass(frozen=True)
class PostureAngles:
    """Joint angles in degrees plus the worksheet's posture modifiers."""

    trunk_flexion: float = 0.0
    trunk_twist_or_side_bend: bool = False
    neck_flexion: float = 0.0
    neck_twist_or_side_bend: bool = False
    legs_bilateral: bool = True
    knee_flexion: float = 0.0
    upper_arm_elevation: float = 0.0
    shoulder_raised: bool = False
    arm_abducted: bool = False
    lower_arm_flexion: float = 0.0
    wrist_flexion: float = 0.0
    wrist_deviation: bool = False

    def __post_init__(self):
        for name in (
            "trunk_flexion", "neck_flexion", "knee_flexion",
            "upper_arm_elevation", "lower_arm_flexion", "wrist_flexion",
        ):
            value = getattr(self, name)
            if not math.isfinite(value) or not -180.0 <= value <= 180.0:
                raise RebaError(f"{name} must be a finite angle in [-180, 180], got {value}")


@dataclass(frozen=True)
class TaskFactors:
    """Load, grip, and activity context that the skeleton alone cannot see."""

    load_kg: float = 0.0
    shock_or_rapid_buildup: bool = False
    coupling: str = "good"
    static_hold: bool = False
    repeated_small_range: bool = False
    rapid_large_change: bool = False

    def __post_init__(self):
        if self.load_kg < 0:
            raise RebaError(f"load must be nonnegative, got {self.load_kg}")
        if self.coupling not in COUPLING_LEVELS:
            raise RebaError(f"coupling must be one of {COUPLING_LEVELS}, got {self.coupling!r}")


@dataclass(frozen=True)
class RebaScore:
    """Composed worksheet result, keeping the band indices for audit."""

    score_a: int
    score_b: int
    score_c: int
    final: int
    risk_band: str
    trunk: int
    neck: int
    legs: int
    upper_arm: int
    lower_arm: int
    wrist: int
    load_points: int
    coupling_points: int
    activity_points: int
    angles: PostureAngles | None = None
    factors: TaskFactors | None = None


# ---- scoring tables ----------------------------------------------------------


@dataclass(frozen=True)
class RebaTables:
    a: np.ndarray  # (5 trunk, 3 neck, 4 legs)
    b: np.ndarray  # (6 upper, 2 lower, 3 wrist)
    c: np.ndarray  # (12 score_a, 12 score_b)


def _parse_tables(text: str) -> RebaTables:
    a = np.zeros((5, 3, 4), dtype=np.int64)
    b = np.zeros((6, 2, 3), dtype=np.int64)
    c = np.zeros((12, 12), dtype=np.int64)
    seen_a = np.zeros((5, 3), dtype=bool)
    seen_b = np.zeros((6, 2), dtype=bool)
    seen_c = np.zeros(12, dtype=bool)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "table":
            continue  # axis declarations are documentation; shapes are fixed
        try:
            if parts[0] == "A":
                i, j = int(parts[1]), int(parts[2])
                values = [int(v) for v in parts[parts.index("=") + 1 :]]
                if not (1 <= i <= 5 and 1 <= j <= 3) or len(values) != 4:
                    raise ValueError
                a[i - 1, j - 1] = values
                seen_a[i - 1, j - 1] = True
            elif parts[0] == "B":
                i, j = int(parts[1]), int(parts[2])
                values = [int(v) for v in parts[parts.index("=") + 1 :]]
                if not (1 <= i <= 6 and 1 <= j <= 2) or len(values) != 3:
                    raise ValueError
                b[i - 1, j - 1] = values
                seen_b[i - 1, j - 1] = True
            elif parts[0] == "C":
                i = int(parts[1])
                values = [int(v) for v in parts[parts.index("=") + 1 :]]
                if not 1 <= i <= 12 or len(values) != 12:
                    raise ValueError
                c[i - 1] = values
                seen_c[i - 1] = True
            else:
                raise ValueError
        except ValueError:
            raise RebaError(f"tables file line {lineno}: cannot parse {raw.strip()!r}")
    for name, seen in (("A", seen_a), ("B", seen_b), ("C", seen_c)):
        if not seen.all():
            raise RebaError(f"tables file is missing rows of table {name}")
    if (a < 1).any() or (b < 1).any() or (c < 1).any() or (c > 12).any():
        raise RebaError("table entries must be positive (and table C at most 12)")
    return RebaTables(a=a, b=b, c=c)


def load_reba_tables(path: str | None = None) -> RebaTables:
    if path is None:
        text = _resources.files("skelact.resources").joinpath("reba_tables.txt").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return _parse_tables(text)


# ---- angle banding -----------------------------------------------------------


def trunk_band(angles: PostureAngles) -> int:
    a = angles.trunk_flexion
    if abs(a) < 5:
        s = 1
    elif abs(a) <= 20:
        s = 2
    elif a > 60:
        s = 4
    else:
        s = 3
    if angles.trunk_twist_or_side_bend:
        s += 1
    return min(s, 5)


def neck_band(angles: PostureAngles) -> int:
    s = 1 if 0 <= angles.neck_flexion <= 20 else 2
    if angles.neck_twist_or_side_bend:
        s += 1
    return min(s, 3)


def legs_band(angles: PostureAngles) -> int:
    s = 1 if angles.legs_bilateral else 2
    if angles.knee_flexion > 60:
        s += 2
    elif angles.knee_flexion >= 30:
        s += 1
    return min(s, 4)


def upper_arm_band(angles: PostureAngles) -> int:
    e = angles.upper_arm_elevation
    if abs(e) <= 20:
        s = 1
    elif e <= 45:
        s = 2
    elif e <= 90:
        s = 3
    else:
        s = 4
    if angles.shoulder_raised:
        s += 1
    if angles.arm_abducted:
        s += 1
    return min(s, 6)


def lower_arm_band(angles: PostureAngles) -> int:
    return 1 if 60 <= angles.lower_arm_flexion <= 100 else 2


def wrist_band(angles: PostureAngles) -> int:
    s = 1 if abs(angles.wrist_flexion) <= 15 else 2
    if angles.wrist_deviation:
        s += 1
    return min(s, 3)


def load_points(factors: TaskFactors) -> int:
    if factors.load_kg < 5:
        s = 0
    elif factors.load_kg <= 10:
        s = 1
    else:
        s = 2
    if factors.shock_or_rapid_buildup:
        s += 1
    return s


def coupling_points(factors: TaskFactors) -> int:
    return COUPLING_LEVELS.index(factors.coupling)


def activity_points(factors: TaskFactors) -> int:
    return int(factors.static_hold) + int(factors.repeated_small_range) + int(
        factors.rapid_large_change
    )


# ---- table composition -------------------------------------------------------


def score_group_a(tables: RebaTables, trunk: int, neck: int, legs: int, load: int) -> int:
    if not (1 <= trunk <= 5 and 1 <= neck <= 3 and 1 <= legs <= 4 and 0 <= load <= 3):
        raise RebaError(f"group A indices out of range: trunk={trunk} neck={neck} legs={legs} load={load}")
    return int(tables.a[trunk - 1, neck - 1, legs - 1]) + load


def score_group_b(tables: RebaTables, upper: int, lower: int, wrist: int, coupling: int) -> int:
    if not (1 <= upper <= 6 and 1 <= lower <= 2 and 1 <= wrist <= 3 and 0 <= coupling <= 3):
        raise RebaError(
            f"group B indices out of range: upper={upper} lower={lower} wrist={wrist} coupling={coupling}"
        )
    return int(tables.b[upper - 1, lower - 1, wrist - 1]) + coupling


def compose_score_c(tables: RebaTables, score_a: int, score_b: int, activity: int) -> tuple[int, int]:
    """Table C lookup plus activity points; returns (score_c, final)."""
    if not (1 <= score_a <= 12 and 1 <= score_b <= 12 and 0 <= activity <= 3):
        raise RebaError(f"composition out of range: a={score_a} b={score_b} activity={activity}")
    c = int(tables.c[score_a - 1, score_b - 1])
    return c, c + activity


def score_posture(angles: PostureAngles, factors: TaskFactors, tables: RebaTables) -> RebaScore:
    """Band the angles, walk the three tables, return the composed score."""
    trunk = trunk_band(angles)
    neck = neck_band(angles)
    legs = legs_band(angles)
    upper = upper_arm_band(angles)
    lower = lower_arm_band(angles)
    wrist = wrist_band(angles)
    load = load_points(factors)
    coupling = coupling_points(factors)
    activity = activity_points(factors)
    a = score_group_a(tables, trunk, neck, legs, load)
    b = score_group_b(tables, upper, lower, wrist, coupling)
    c, final = compose_score_c(tables, a, b, activity)
    return RebaScore(
        score_a=a, score_b=b, score_c=c, final=final, risk_band=risk_band(final),
        trunk=trunk, neck=neck, legs=legs,
        upper_arm=upper, lower_arm=lower, wrist=wrist,
        load_points=load, coupling_points=coupling, activity_points=activity,
        angles=angles, factors=factors,
    )


# ---- angle extraction from joints --------------------------------------------

REQUIRED_JOINTS = (
    "r_ankle", "l_ankle", "r_knee", "l_knee", "r_hip", "l_hip",
    "r_wrist", "l_wrist", "r_elbow", "l_elbow", "r_shoulder", "l_shoulder", "head",
)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise RebaError("degenerate joint geometry: zero-length segment")
    return v / n


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    cosang = float(np.clip(np.dot(_unit(u), _unit(v)), -1.0, 1.0))
    return math.degrees(math.acos(cosang))


def extract_angles(
    frame: np.ndarray,
    joint_names: tuple[str, ...] | list[str],
    gravity: tuple[float, float, float] = (0.0, -1.0, 0.0),
) -> PostureAngles | None:
    """Posture angles for one frame of shape (N, 3), or None if unscorable.

    A frame is unscorable when any required joint is missing or non-finite;
    the caller decides whether that is an error or just a gap in the stream.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[1] != 3:
        raise RebaError(f"expected a frame of shape (N, 3), got {frame.shape}")
    index = {name: i for i, name in enumerate(joint_names)}
    missing = [n for n in REQUIRED_JOINTS if n not in index]
    if missing:
        raise RebaError(f"joint names lack required entries: {missing}")

    def j(name: str) -> np.ndarray:
        return frame[index[name]]

    if not np.isfinite(np.stack([j(n) for n in REQUIRED_JOINTS])).all():
        return None

    up = _unit(-np.asarray(gravity, dtype=np.float64))
    try:
        lateral = j("l_hip") - j("r_hip")
        forward = _unit(np.cross(lateral, up))
        mid_hip = 0.5 * (j("l_hip") + j("r_hip"))
        mid_shoulder = 0.5 * (j("l_shoulder") + j("r_shoulder"))
        trunk = mid_shoulder - mid_hip
        if np.linalg.norm(trunk) < 1e-9:
            return None
        trunk_flex = math.degrees(math.atan2(np.dot(trunk, forward), np.dot(trunk, up)))

        neck = j("head") - mid_shoulder
        neck_sagittal = math.degrees(math.atan2(np.dot(neck, forward), np.dot(neck, up)))
        neck_flex = neck_sagittal - trunk_flex

        hang = -_unit(trunk)  # the arm's rest direction is "down the trunk"
        elevations = []
        lower_arms = []
        for side in ("r", "l"):
            upper_vec = j(f"{side}_elbow") - j(f"{side}_shoulder")
            elevations.append(_angle_between(upper_vec, hang))
            fore_vec = j(f"{side}_wrist") - j(f"{side}_elbow")
            lower_arms.append(_angle_between(upper_vec, fore_vec))
        upper_elev = max(elevations)
        # keep the forearm of whichever side lands in the worse band
        bands = [1 if 60 <= v <= 100 else 2 for v in lower_arms]
        if bands[0] == bands[1]:
            lower_flex = max(lower_arms)
        else:
            lower_flex = lower_arms[bands.index(max(bands))]

        knees = []
        for side in ("r", "l"):
            thigh = j(f"{side}_hip") - j(f"{side}_knee")
            shank = j(f"{side}_ankle") - j(f"{side}_knee")
            knees.append(180.0 - _angle_between(thigh, shank))
        knee_flex = max(knees)
    except RebaError:
        return None

    def clamp(v: float) -> float:
        return float(np.clip(v, -180.0, 180.0))

    return PostureAngles(
        trunk_flexion=clamp(trunk_flex),
        neck_flexion=clamp(neck_flex),
        knee_flexion=clamp(knee_flex),
        upper_arm_elevation=clamp(upper_elev),
        lower_arm_flexion=clamp(lower_flex),
        # hands carry no joints in this skeleton: wrist stays neutral, and
        # twist/side-bend cannot be inferred from positions alone
    )


# ---- label-driven adjustment --------------------------------------------------

_TASK_RULE_FIELDS = {
    "load_kg": float,
    "coupling": str,
    "shock": bool,
    "static_hold": bool,
    "repeated_small_range": bool,
    "rapid_large_change": bool,
}
_POSTURE_RULE_FIELDS = (
    "shoulder_raised", "arm_abducted", "legs_unstable", "wrist_deviation",
    "trunk_twist_or_side_bend", "neck_twist_or_side_bend",
)


@dataclass(frozen=True)
class ActionRule:
    tier: str
    value: str
    factors: dict


@dataclass(frozen=True)
class ActionMapping:
    """A label grammar (ordered tiers of values) plus factor rules."""

    tiers: tuple[tuple[str, tuple[str, ...]], ...]
    rules: tuple[ActionRule, ...]

    def parse_label(self, label: str) -> tuple[dict, list[str]]:
        """Split a label into tier values; returns (assignments, warnings).

        Tokens are matched against tiers in declared order; a tier value may
        span several `-`-separated tokens (longest match wins), and a tier
        may be absent.  Tokens that match nothing produce a warning.
        """
        tokens = label.split("-")
        assignments: dict = {}
        warnings: list[str] = []
        pos = 0
        tier_idx = 0
        while pos < len(tokens):
            matched = False
            for ti in range(tier_idx, len(self.tiers)):
                name, values = self.tiers[ti]
                best = None
                for value in values:
                    vtok = value.split("-")
                    if tokens[pos : pos + len(vtok)] == vtok:
                        if best is None or len(vtok) > len(best.split("-")):
                            best = value
                if best is not None:
                    assignments[name] = best
                    pos += len(best.split("-"))
                    tier_idx = ti + 1
                    matched = True
                    break
            if not matched:
                warnings.append(f"label {label!r}: unrecognized token {tokens[pos]!r}")
                pos += 1
        return assignments, warnings


def _parse_rule_value(key: str, value: str, lineno: int):
    if key in _TASK_RULE_FIELDS:
        kind = _TASK_RULE_FIELDS[key]
    elif key in _POSTURE_RULE_FIELDS:
        kind = bool
    else:
        raise RebaError(f"mapping file line {lineno}: unknown factor {key!r}")
    if kind is bool:
        if value not in ("0", "1"):
            raise RebaError(f"mapping file line {lineno}: {key} wants 0 or 1, got {value!r}")
        return value == "1"
    if kind is float:
        try:
            return float(value)
        except ValueError:
            raise RebaError(f"mapping file line {lineno}: bad number {value!r}")
    if key == "coupling" and value not in COUPLING_LEVELS:
        raise RebaError(f"mapping file line {lineno}: bad coupling {value!r}")
    return value


def _parse_mapping(text: str) -> ActionMapping:
    tiers: list[tuple[str, tuple[str, ...]]] = []
    rules: list[ActionRule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "tier":
            if len(parts) < 3:
                raise RebaError(f"mapping file line {lineno}: tier needs a name and values")
            tiers.append((parts[1], tuple(parts[2:])))
        elif parts[0] == "rule":
            if len(parts) < 3 or "=" not in parts[1]:
                raise RebaError(f"mapping file line {lineno}: rule needs tier=value and factors")
            tier, _, value = parts[1].partition("=")
            known = {name for name, _ in tiers}
            if tier not in known:
                raise RebaError(f"mapping file line {lineno}: rule references unknown tier {tier!r}")
            factors = {}
            for item in parts[2:]:
                key, sep, val = item.partition("=")
                if not sep:
                    raise RebaError(f"mapping file line {lineno}: expected factor=value, got {item!r}")
                factors[key] = _parse_rule_value(key, val, lineno)
            rules.append(ActionRule(tier=tier, value=value, factors=factors))
        else:
            raise RebaError(f"mapping file line {lineno}: expected `tier` or `rule`, got {parts[0]!r}")
    if not tiers:
        raise RebaError("mapping file declares no tiers")
    return ActionMapping(tiers=tuple(tiers), rules=tuple(rules))


def load_action_mapping(path: str | None = None) -> ActionMapping:
    if path is None:
        text = _resources.files("skelact.resources").joinpath("action_mapping.txt").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return _parse_mapping(text)


@dataclass(frozen=True)
class AdjustedScore:
    score: RebaScore
    warnings: tuple[str, ...]
    applied: tuple[str, ...]  # "tier=value" for each rule that fired


def adjust_with_action(
    score: RebaScore,
    label: str,
    mapping: ActionMapping,
    tables: RebaTables,
) -> AdjustedScore:
    """Re-score a frame with the risk factors implied by an action label.

    The input score must have been produced by score_posture (it carries
    its angles and factors).  Labels that match no rule leave the score
    untouched; unparseable fragments become warnings, never exceptions.
    """
    if score.angles is None or score.factors is None:
        raise RebaError("score lacks posture context; produce it with score_posture")
    assignments, warnings = mapping.parse_label(label)
    task_updates: dict = {}
    posture_updates: dict = {}
    applied: list[str] = []
    for rule in mapping.rules:
        if assignments.get(rule.tier) != rule.value:
            continue
        applied.append(f"{rule.tier}={rule.value}")
        for key, value in rule.factors.items():
            if key == "shock":
                task_updates["shock_or_rapid_buildup"] = value
            elif key == "legs_unstable":
                posture_updates["legs_bilateral"] = not value
            elif key in _TASK_RULE_FIELDS:
                task_updates[key] = value
            else:
                posture_updates[key] = value
    if not task_updates and not posture_updates:
        return AdjustedScore(score=score, warnings=tuple(warnings), applied=tuple(applied))
    angles = dataclasses.replace(score.angles, **posture_updates)
    factors = dataclasses.replace(score.factors, **task_updates)
    return AdjustedScore(
        score=score_posture(angles, factors, tables),
        warnings=tuple(warnings),
        applied=tuple(applied),
    )


# ---- per-sequence driver -------------------------------------------------------


@dataclass
class FrameAssessment:
    frame: int
    label: str
    raw: RebaScore | None        # None when the frame is unscorable
    adjusted: RebaScore | None
    warnings: tuple[str, ...]


def assess_sequence(
    joints: np.ndarray,
    joint_names,
    tables: RebaTables,
    labels=None,
    mapping: ActionMapping | None = None,
    factors: TaskFactors | None = None,
    gravity: tuple[float, float, float] = (0.0, -1.0, 0.0),
) -> list[FrameAssessment]:
    """Score every frame of a (T, N, 3) array, optionally label-adjusted."""
    base = factors if factors is not None else TaskFactors()
    out = []
    for t in range(joints.shape[0]):
        label = "" if labels is None else str(labels[t])
        angles = extract_angles(joints[t], joint_names, gravity)
        if angles is None:
            out.append(FrameAssessment(t, label, None, None, ("unscorable frame",)))
            continue
        raw = score_posture(angles, base, tables)
        adjusted = None
        warnings: tuple[str, ...] = ()
        if mapping is not None and label:
            result = adjust_with_action(raw, label, mapping, tables)
            adjusted = result.score
            warnings = result.warnings
        out.append(FrameAssessment(t, label, raw, adjusted, warnings))
    return out
