"""Disambiguate duplicate descriptions by recursive spatial region labeling.

A frame is partitioned into three Chebyshev rings (center, transition, edge)
crossed with four diagonal-split directions (top, bottom, left, right).
Instances that share a (category, description) pair get their box centers
labeled; labels shared by several instances spawn a child frame around those
centers and the partition repeats, producing a refinement path per instance.
Paths render as spatial phrases appended to the descriptions, and a
deterministic ordinal suffix absorbs the degenerate cases geometry cannot
separate (e.g. byte-identical centers), so per-image uniqueness always holds.

Everything is pure and deterministic; images can be processed in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .geometry import (
    Direction,
    Frame,
    Instance,
    RegionLabel,
    Ring,
    bbox_center,
    normalized_offset,
)


class MixedImages(ValueError):
    """The instance list spans more than one image."""


@dataclass(frozen=True)
class SpatialConfig:
    """Partition geometry and recursion limits.

    ``ring_fractions`` are the Chebyshev radii separating center/transition
    and transition/edge. ``inflation`` is the per-side padding fraction of a
    child frame's own extent; a degenerate (zero-extent) axis is widened to
    10% of the parent frame's extent instead.
    """

    ring_fractions: tuple[float, float] = (1.0 / 3.0, 2.0 / 3.0)
    max_depth: int = 8
    inflation: float = 0.1

    def __post_init__(self) -> None:
        f1, f2 = self.ring_fractions
        if not 0.0 < f1 < f2 <= 1.0:
            raise ValueError(f"ring_fractions must satisfy 0 < f1 < f2 <= 1, got {self.ring_fractions!r}")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth!r}")
        if self.inflation < 0:
            raise ValueError(f"inflation must be >= 0, got {self.inflation!r}")


@dataclass(frozen=True)
class RegionAssignment:
    """Where one instance ended up: its label path and the deepest frame.

    ``path[0]`` is the root-frame label; deeper entries come from refinement.
    ``needs_ordinal`` marks instances whose collisions survived ``max_depth``.
    """

    instance_id: str
    path: tuple[RegionLabel, ...]
    final_frame: Frame
    needs_ordinal: bool = False


def group_duplicates(instances: list[Instance]) -> list[list[Instance]]:
    """Groups of size >= 2 sharing an exact (category, description) pair.

    Groups are ordered by first occurrence; instances must share one image.
    """
    _require_single_image(instances)
    groups: dict[tuple[str, str], list[Instance]] = {}
    for inst in instances:
        groups.setdefault((inst.category, inst.description), []).append(inst)
    return [g for g in groups.values() if len(g) >= 2]


def assign_region(p: tuple[float, float], f: Frame, cfg: SpatialConfig) -> RegionLabel:
    """Label the point's (ring, direction) cell within the frame.

    Ring uses the Chebyshev radius r = max(|dx|, |dy|) of the normalized
    offset: center for r <= f1, transition for f1 < r <= f2, edge beyond.
    Direction splits diagonally: horizontal wins ties; only the exact frame
    center is undirected.
    """
    dx, dy = normalized_offset(p, f)
    f1, f2 = cfg.ring_fractions
    r = max(abs(dx), abs(dy))
    if r <= f1:
        ring = Ring.CENTER
    elif r <= f2:
        ring = Ring.TRANSITION
    else:
        ring = Ring.EDGE

    if dx == 0 and dy == 0:
        direction = Direction.NONE
    elif abs(dx) >= abs(dy):
        direction = Direction.LEFT if dx < 0 else Direction.RIGHT
    else:
        direction = Direction.TOP if dy < 0 else Direction.BOTTOM
    return RegionLabel(ring=ring, direction=direction)


def _child_frame(centers: list[tuple[float, float]], parent: Frame, cfg: SpatialConfig) -> Frame:
    """Minimal rectangle over the centers, inflated per side by ``inflation``.

    A zero-extent axis is widened to 10% of the parent frame's extent so the
    child stays a valid frame; the child may poke past the parent when the
    hull hugs a border (clamping would defeat guaranteed separation).
    """
    xs = [c[0] for c in centers]
    ys = [c[1] for c in centers]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)

    if x_hi > x_lo:
        pad = cfg.inflation * (x_hi - x_lo)
        x_lo, x_hi = x_lo - pad, x_hi + pad
    else:
        half = 0.05 * parent.width
        x_lo, x_hi = x_lo - half, x_hi + half

    if y_hi > y_lo:
        pad = cfg.inflation * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
    else:
        half = 0.05 * parent.height
        y_lo, y_hi = y_lo - half, y_hi + half

    return Frame(width=x_hi - x_lo, height=y_hi - y_lo, origin_x=x_lo, origin_y=y_lo)


def refine(
    group: list[Instance], f: Frame, cfg: SpatialConfig, depth: int = 0
) -> list[RegionAssignment]:
    """Recursively assign labels until each instance sits alone in its cell.

    Instances alone in their label at the current depth are finalized. Labels
    shared by two or more instances spawn a child frame around the colliding
    centers and recurse; at ``max_depth`` the survivors keep their current
    path and are marked for the ordinal fallback.
    """
    if not group:
        raise ValueError("group must be nonempty")
    if depth > cfg.max_depth:
        raise ValueError(f"depth {depth} exceeds max_depth {cfg.max_depth}")

    by_label: dict[RegionLabel, list[Instance]] = {}
    for inst in group:
        label = assign_region(bbox_center(inst.bbox), f, cfg)
        by_label.setdefault(label, []).append(inst)

    assignments: list[RegionAssignment] = []
    for label, members in by_label.items():
        if len(members) == 1:
            assignments.append(
                RegionAssignment(members[0].instance_id, (label,), f)
            )
        elif depth == cfg.max_depth:
            assignments.extend(
                RegionAssignment(m.instance_id, (label,), f, needs_ordinal=True)
                for m in members
            )
        else:
            child = _child_frame([bbox_center(m.bbox) for m in members], f, cfg)
            for sub in refine(members, child, cfg, depth + 1):
                assignments.append(
                    replace(sub, path=(label,) + sub.path)
                )
    return assignments


def render_spatial_phrase(a: RegionAssignment) -> str:
    """Render the label path as an English location phrase.

    A single label reads ``at the {label} of the image``; deeper paths nest
    deepest-first: ``in the {L2} part of the {L1} part of the {L0} of the
    image``.
    """
    if not a.path:
        raise ValueError("assignment path must be nonempty")
    words = [label.word for label in a.path]
    if len(words) == 1:
        return f"at the {words[0]} of the image"
    deepest_first = list(reversed(words))
    return "in the " + " part of the ".join(deepest_first) + " of the image"


def _insert_phrase(description: str, phrase: str) -> str:
    if description.endswith("."):
        return f"{description[:-1]}, {phrase}."
    return f"{description}, {phrase}"


def _require_single_image(instances: list[Instance]) -> None:
    image_ids = {inst.image_id for inst in instances}
    if len(image_ids) > 1:
        raise MixedImages(f"instances span multiple images: {sorted(image_ids)}")


def augment_with_assignments(
    instances: list[Instance], image_frame: Frame, cfg: SpatialConfig | None = None
) -> tuple[list[Instance], dict[str, RegionAssignment]]:
    """Like :func:`augment_descriptions`, also returning the region assignments.

    The assignment map covers duplicate-group members only; untouched
    instances have no entry.
    """
    cfg = cfg or SpatialConfig()
    _require_single_image(instances)
    for inst in instances:
        if not inst.description:
            raise ValueError(f"instance {inst.instance_id!r} has no description to augment")

    duplicate_groups = group_duplicates(instances)
    assignments: dict[str, RegionAssignment] = {}
    for group in duplicate_groups:
        for a in refine(group, image_frame, cfg):
            assignments[a.instance_id] = a

    # Texts already present on untouched instances are reserved first so the
    # ordinal fallback can never collide with them.
    used: set[tuple[str, str]] = {
        (inst.category, inst.description)
        for inst in instances
        if inst.instance_id not in assignments
    }

    augmented_base: dict[str, str] = {}
    base_counts: dict[tuple[str, str], int] = {}
    for inst in instances:
        a = assignments.get(inst.instance_id)
        if a is None:
            continue
        base = _insert_phrase(inst.description, render_spatial_phrase(a))
        augmented_base[inst.instance_id] = base
        key = (inst.category, base)
        base_counts[key] = base_counts.get(key, 0) + 1

    # Resolve residual collisions deterministically: within each colliding
    # text, order members top-to-bottom then left-to-right and suffix " (#k)".
    final_text: dict[str, str] = {}
    handled: set[tuple[str, str]] = set()
    for inst in instances:
        if inst.instance_id not in augmented_base:
            continue
        key = (inst.category, augmented_base[inst.instance_id])
        if key in handled:
            continue
        handled.add(key)
        members = [
            m
            for m in instances
            if m.instance_id in augmented_base
            and (m.category, augmented_base[m.instance_id]) == key
        ]
        category, base = key
        if len(members) == 1 and key not in used:
            final_text[members[0].instance_id] = base
            used.add(key)
            continue
        members.sort(key=lambda m: (bbox_center(m.bbox)[1], bbox_center(m.bbox)[0], m.instance_id))
        k = 1
        for m in members:
            while (category, f"{base} (#{k})") in used:
                k += 1
            text = f"{base} (#{k})"
            final_text[m.instance_id] = text
            used.add((category, text))
            k += 1

    result = [
        replace(inst, description=final_text[inst.instance_id])
        if inst.instance_id in final_text
        else inst
        for inst in instances
    ]
    return result, assignments


def augment_descriptions(
    instances: list[Instance], image_frame: Frame, cfg: SpatialConfig | None = None
) -> list[Instance]:
    """Rewrite duplicate descriptions with spatial phrases until unique.

    Instances outside every duplicate group come back byte-identical; after
    augmentation every (category, description) pair in the image is unique.
    """
    result, _ = augment_with_assignments(instances, image_frame, cfg)
    return result
