"""Frame-level object candidates from precomputed ViT patch features.

Per backbone: patch affinity graph -> second eigenvector of the normalized
Laplacian -> k-means over [eigenvector entry, normalized feature] rows ->
4-connected components -> scored masks/boxes. Masks from all backbones are
then consolidated by greedy IoU voting and the survivors are score-filtered.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import BBox, BoxSource, Candidate, FrameRef, clamp_box, nms, top_k
from .masks import bbox_of_mask, binarize, mask_iou

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass(frozen=True, slots=True)
class ExtractionParams:
    clusters: int = 4
    eig_weight: float = 1.0
    min_patches: int = 2
    vote_iou: float = 0.6
    consensus: float = 0.5
    keep_top: int = 150
    min_score: float = 0.0
    nms_iou: float | None = None
    corner_rule: bool = True  # clusters owning >= corner_min grid corners are background
    corner_min: int = 3
    seed: int = 0

    def validate(self) -> "ExtractionParams":
        if self.clusters < 1:
            raise ValueError(f"clusters {self.clusters} < 1")
        if self.min_patches < 1:
            raise ValueError(f"min_patches {self.min_patches} < 1")
        if not (0.0 < self.vote_iou <= 1.0):
            raise ValueError(f"vote_iou {self.vote_iou} outside (0, 1]")
        if not (0.0 <= self.consensus < 1.0):
            raise ValueError(f"consensus {self.consensus} outside [0, 1)")
        if self.keep_top < 1:
            raise ValueError(f"keep_top {self.keep_top} < 1")
        if not (0.0 <= self.min_score <= 1.0):
            raise ValueError(f"min_score {self.min_score} outside [0, 1]")
        if self.nms_iou is not None and not (0.0 < self.nms_iou <= 1.0):
            raise ValueError(f"nms_iou {self.nms_iou} outside (0, 1]")
        if not (2 <= self.corner_min <= 4):
            raise ValueError(f"corner_min {self.corner_min} outside 2..4")
        return self


@dataclass(frozen=True, slots=True, eq=False)
class FeatureMap:
    """Patch-feature grid [H_p, W_p, C] for one frame and one backbone."""

    frame: FrameRef
    backbone: str
    grid: np.ndarray
    patch_size: int

    def __post_init__(self) -> None:
        if self.grid.ndim != 3:
            raise ValueError(f"feature grid must be [H_p, W_p, C], got {self.grid.shape}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size {self.patch_size} < 1")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    def flat_features(self) -> np.ndarray:
        return self.grid.reshape(-1, self.grid.shape[2]).astype(np.float64)


@dataclass(frozen=True, slots=True)
class PatchClustering:
    labels: np.ndarray
    k: int
    inertia: float


@dataclass(frozen=True, slots=True)
class VoteGroup:
    """Provenance of one consolidated mask: member indices and their scores."""

    members: tuple[int, ...]
    score: float


def _unit_rows(features: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, features / safe, 0.0)


def build_affinity(features: np.ndarray) -> np.ndarray:
    """Nonnegative cosine affinity with unit diagonal.

    Negative cosines clamp to zero. Output is symmetric with values in
    [0, 1]. A zero-norm feature row has no direction to compare, so it is
    rejected with its patch index.
    """
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError(f"features must be [N, C] with N >= 1, got {features.shape}")
    feats = features.astype(np.float64)
    zero = np.nonzero(np.linalg.norm(feats, axis=1) == 0.0)[0]
    if zero.size:
        raise ValueError(f"zero-norm feature vector at patch {int(zero[0])}")
    unit = _unit_rows(feats)
    aff = np.clip(unit @ unit.T, 0.0, 1.0)
    aff = 0.5 * (aff + aff.T)  # kill rounding asymmetry
    np.fill_diagonal(aff, 1.0)
    return aff


def _lanczos_second_smallest(lap: np.ndarray, nullvec: np.ndarray, tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of lap restricted to the complement of nullvec.

    Lanczos with full reorthogonalization and a fixed seed-0 start vector;
    runs until the true residual ||L x - lambda x|| drops below tol or the
    Krylov basis exhausts the deflated space (at which point the Ritz pair
    is exact to rounding).
    """
    n = lap.shape[0]
    rng = np.random.default_rng(0)
    q = rng.standard_normal(n)
    q -= nullvec * (nullvec @ q)
    nq = np.linalg.norm(q)
    if nq == 0.0:  # absurdly unlucky start; deterministic fallback
        q = np.arange(1.0, n + 1.0)
        q -= nullvec * (nullvec @ q)
        nq = np.linalg.norm(q)
    q /= nq
    basis = [q]
    alphas: list[float] = []
    betas: list[float] = []
    best_val, best_vec = 0.0, q
    for step in range(n):
        w = lap @ basis[-1]
        alpha = float(basis[-1] @ w)
        alphas.append(alpha)
        # full reorthogonalization (twice) against the null direction and basis
        for _ in range(2):
            w -= nullvec * (nullvec @ w)
            for b in basis:
                w -= b * (b @ w)
        tri = np.diag(alphas)
        if betas:
            off = np.array(betas)
            tri += np.diag(off, 1) + np.diag(off, -1)
        vals, vecs = np.linalg.eigh(tri)
        ritz = np.stack(basis, axis=1) @ vecs[:, 0]
        ritz /= np.linalg.norm(ritz)
        best_val, best_vec = float(vals[0]), ritz
        resid = float(np.linalg.norm(lap @ ritz - best_val * ritz))
        beta = float(np.linalg.norm(w))
        if resid <= tol or beta <= 1e-13 or step == n - 1:
            break
        betas.append(beta)
        basis.append(w / beta)
    return best_val, best_vec


def ncut_second_eigenvector(affinity: np.ndarray) -> np.ndarray:
    """Second-smallest eigenvector of L_sym = I - D^{-1/2} A D^{-1/2}.

    Unit L2 norm, sign fixed so the largest-magnitude entry is positive,
    residual <= 1e-8, orthogonal to the known nullvector D^{1/2}*1. A
    disconnected graph makes the second eigenvalue 0 with multiplicity; a
    warning is emitted and any deterministic vector of that eigenspace
    (orthogonal to D^{1/2}*1) is returned.
    """
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"affinity must be square, got {a.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least 2 patches for a bipartition")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("affinity must be symmetric")
    deg = a.sum(axis=1)
    if np.any(deg <= 0.0):
        raise ValueError("affinity has a zero-degree node")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = -(a * inv_sqrt[:, None]) * inv_sqrt[None, :]
    lap[np.diag_indices(n)] += 1.0
    lap = 0.5 * (lap + lap.T)
    nullvec = np.sqrt(deg)
    nullvec /= np.linalg.norm(nullvec)
    val, vec = _lanczos_second_smallest(lap, nullvec)
    if val < 1e-10:
        warnings.warn(
            "affinity graph is disconnected; second eigenvalue is 0 with "
            "multiplicity, returned vector is one deterministic choice",
            stacklevel=2,
        )
    vec -= nullvec * (nullvec @ vec)
    vec /= np.linalg.norm(vec)
    peak = int(np.argmax(np.abs(vec)))
    if vec[peak] < 0.0:
        vec = -vec
    return vec


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(embeddings: np.ndarray, k: int, seed: int) -> PatchClustering:
    """Lloyd's algorithm with k-means++ seeding, deterministic per seed.

    Stops when assignments are stable or after 100 iterations. An empty
    cluster is repaired by re-seeding its center at the point farthest from
    its assigned center; assignments are never forced, so fully degenerate
    input (all points identical) converges with every point in one cluster.
    Inertia is asserted non-increasing every iteration.
    """
    pts = np.asarray(embeddings, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"embeddings must be [N, d], got {pts.shape}")
    n = pts.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k {k} outside 1..{n}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seed(pts, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(100):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), new_labels]
        inertia = float(point_d2.sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia)), "inertia increased"
        converged = (new_labels == labels).all() and np.isfinite(prev_inertia)
        labels = new_labels
        prev_inertia = inertia
        if converged:
            break
        for c in range(k):
            member = labels == c
            if member.any():
                centers[c] = pts[member].mean(axis=0)
            else:
                centers[c] = pts[int(point_d2.argmax())]
    return PatchClustering(labels=labels, k=k, inertia=prev_inertia)


def patch_embeddings(eigvec: np.ndarray, features: np.ndarray, eig_weight: float = 1.0) -> np.ndarray:
    """Rows [eigenvector entry * weight, unit-normalized feature]."""
    if eigvec.shape[0] != features.shape[0]:
        raise ValueError("eigenvector / feature count mismatch")
    return np.concatenate([eig_weight * eigvec[:, None], _unit_rows(features)], axis=1)


def _component_score(affinity: np.ndarray, idx: np.ndarray) -> float:
    if idx.size == 1:
        return float(affinity[idx[0], idx[0]])
    sub = affinity[np.ix_(idx, idx)]
    total = sub.sum() - np.trace(sub)
    return float(total / (idx.size * (idx.size - 1)))


def clusters_to_candidates(
    clustering: PatchClustering,
    affinity: np.ndarray,
    grid_shape: tuple[int, int],
    patch_size: int,
    frame: FrameRef,
    min_patches: int = 2,
    skip_clusters: frozenset[int] = frozenset(),
) -> tuple[list[Candidate], list[np.ndarray]]:
    """4-connected components of each cluster on the patch grid.

    Components with at least min_patches patches become candidates: the box
    is the tight patch rectangle scaled by patch_size and clamped to the
    frame; the score is the mean pairwise affinity inside the component; the
    mask is the component's patch blocks painted at frame resolution.
    """
    hp, wp = grid_shape
    label_grid = clustering.labels.reshape(hp, wp)
    cands: list[Candidate] = []
    masks: list[np.ndarray] = []
    for cluster in range(clustering.k):
        if cluster in skip_clusters:
            continue
        comp_map, n_comp = ndimage.label(label_grid == cluster, structure=_FOUR_CONN)
        for comp in range(1, n_comp + 1):
            rows, cols = np.nonzero(comp_map == comp)
            if rows.size < min_patches:
                continue
            box = clamp_box(
                BBox(
                    float(cols.min() * patch_size),
                    float(rows.min() * patch_size),
                    float((cols.max() + 1) * patch_size),
                    float((rows.max() + 1) * patch_size),
                ),
                frame.width,
                frame.height,
            )
            if box is None:
                continue
            flat_idx = rows * wp + cols
            score = _component_score(affinity, flat_idx)
            mask = np.zeros((frame.height, frame.width), dtype=np.float32)
            for r, c in zip(rows, cols):
                mask[r * patch_size : (r + 1) * patch_size, c * patch_size : (c + 1) * patch_size] = 1.0
            cands.append(Candidate(box=box, score=score, source=BoxSource.CURRENT, frame=frame))
            masks.append(mask)
    return cands, masks


def vote_masks(
    masks: list[np.ndarray],
    scores: list[float],
    vote_iou: float = 0.6,
    consensus: float = 0.5,
) -> tuple[list[np.ndarray], list[VoteGroup]]:
    """Greedy cross-backbone mask voting.

    The highest-scoring unused mask pivots a group of all unused masks whose
    binarized IoU with it reaches vote_iou; the consolidated mask keeps the
    pixels where the mean of the binarized members strictly exceeds the
    consensus threshold. Groups whose consolidated mask is empty are dropped.
    """
    if len(masks) != len(scores):
        raise ValueError("masks and scores must align")
    order = sorted(range(len(masks)), key=lambda i: (-scores[i], i))
    used = [False] * len(masks)
    out_masks: list[np.ndarray] = []
    groups: list[VoteGroup] = []
    for pivot in order:
        if used[pivot]:
            continue
        members = [pivot]
        used[pivot] = True
        for j in order:
            if used[j]:
                continue
            if mask_iou(masks[pivot], masks[j]) >= vote_iou:
                members.append(j)
                used[j] = True
        stack = np.stack([binarize(masks[m]).astype(np.float32) for m in members])
        consolidated = (stack.mean(axis=0) > consensus).astype(np.float32)
        if not consolidated.any():
            continue
        out_masks.append(consolidated)
        groups.append(
            VoteGroup(members=tuple(sorted(members)), score=float(np.mean([scores[m] for m in members])))
        )
    return out_masks, groups


def _background_clusters(clustering: PatchClustering, grid_shape: tuple[int, int], corner_min: int) -> frozenset[int]:
    hp, wp = grid_shape
    grid = clustering.labels.reshape(hp, wp)
    corners = [grid[0, 0], grid[0, wp - 1], grid[hp - 1, 0], grid[hp - 1, wp - 1]]
    return frozenset(
        c for c in range(clustering.k) if sum(int(x == c) for x in corners) >= corner_min
    )


def extract_candidates(
    feature_maps: list[FeatureMap],
    params: ExtractionParams | None = None,
) -> tuple[list[Candidate], list[np.ndarray]]:
    """Candidates for one frame from one or more backbone feature maps.

    Returns score-filtered candidates (top keep_top, optional NMS) with the
    consolidated masks aligned index-for-index.
    """
    params = (params or ExtractionParams()).validate()
    if not feature_maps:
        raise ValueError("need at least one feature map")
    frame = feature_maps[0].frame
    for fm in feature_maps[1:]:
        if fm.frame != frame:
            raise ValueError("feature maps must refer to the same frame")
    all_masks: list[np.ndarray] = []
    all_scores: list[float] = []
    for fm in feature_maps:
        feats = fm.flat_features()
        n = feats.shape[0]
        if n < 2:
            continue
        affinity = build_affinity(feats)
        if float(affinity.min()) >= 1.0 - 1e-9:
            # featureless frame: no affinity contrast to cut, the grid is one region
            clustering = PatchClustering(labels=np.zeros(n, dtype=np.int64), k=1, inertia=0.0)
        else:
            eigvec = ncut_second_eigenvector(affinity)
            emb = patch_embeddings(eigvec, feats, params.eig_weight)
            k = min(params.clusters, n)
            clustering = kmeans(emb, k, params.seed)
        skip = (
            _background_clusters(clustering, fm.grid_shape, params.corner_min)
            if params.corner_rule
            else frozenset()
        )
        cands, masks = clusters_to_candidates(
            clustering,
            affinity,
            fm.grid_shape,
            fm.patch_size,
            frame,
            params.min_patches,
            skip_clusters=skip,
        )
        all_masks.extend(masks)
        all_scores.extend(c.score for c in cands)
    voted, groups = vote_masks(all_masks, all_scores, params.vote_iou, params.consensus)
    candidates: list[Candidate] = []
    kept_masks: list[np.ndarray] = []
    for mask, group in zip(voted, groups):
        box = bbox_of_mask(mask)
        if box is None:
            continue
        clamped = clamp_box(box, frame.width, frame.height)
        if clamped is None:
            continue
        candidates.append(
            Candidate(box=clamped, score=group.score, source=BoxSource.CURRENT, frame=frame)
        )
        kept_masks.append(mask)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    picked = [i for i in order if candidates[i].score >= params.min_score][: params.keep_top]
    if params.nms_iou is not None:
        surviving = nms([candidates[i] for i in picked], params.nms_iou)
        # map back to indices to keep masks aligned (object identity)
        keep_ids = {id(c) for c in surviving}
        picked = [i for i in picked if id(candidates[i]) in keep_ids]
    return [candidates[i] for i in picked], [kept_masks[i] for i in picked]
