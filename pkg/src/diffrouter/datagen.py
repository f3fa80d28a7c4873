"""Synthetic multi-domain translation instances.

Three families:
  gaussian-affine: shared latent z ~ N(0, I), x^k = A_k z + b_k + s_k eps.
      The central domain uses an invertible map with near-zero noise, so
      non-central domains are conditionally independent given the central
      sample and every cross-domain conditional is available in closed form.
  moons-warp: two-moons latent with smooth per-domain warps (nonlinear
      stress test, no analytic oracle).
  glyphs: 8x8 glyph images (d=64); the central domain is the raw glyph, the
      non-central domains are a Sobel edge map and a rotated-and-shrunk copy.

Each edge dataset draws its pairs from a disjoint slice of one latent pool;
evaluation tuples come from a third disjoint slice and are aligned across
all K domains.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

FAMILIES = ("gaussian-affine", "moons-warp", "glyphs")

GLYPH_SIDE = 8
GLYPH_DIM = GLYPH_SIDE * GLYPH_SIDE

DATASET_MAGIC = "diffrouter-dataset"


@dataclass(frozen=True)
class Topology:
    K: int
    edges: tuple[tuple[int, int], ...]
    central: int | None = None

    def __post_init__(self):
        if len(self.edges) != self.K - 1:
            raise ValueError(f"spanning tree over {self.K} domains needs {self.K - 1} edges")
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) != self.K:
            raise ValueError("edge set does not connect all domains")
        if self.central is not None and any(self.central not in e for e in self.edges):
            raise ValueError("in star mode every edge must touch the central domain")

    def adjacency(self) -> dict[int, list[int]]:
        adj = {k: [] for k in range(self.K)}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def is_edge(self, a: int, b: int) -> bool:
        return (a, b) in self.edges or (b, a) in self.edges


@dataclass
class PairedDataset:
    """Aligned pairs for one tree edge: x_a[i] is from domain edge[0],
    x_b[i] from domain edge[1]."""

    edge: tuple[int, int]
    x_a: np.ndarray
    x_b: np.ndarray
    latent_indices: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.x_a.shape[0]

    def side(self, domain: int) -> np.ndarray:
        if domain == self.edge[0]:
            return self.x_a
        if domain == self.edge[1]:
            return self.x_b
        raise ValueError(f"domain {domain} is not on edge {self.edge}")


@dataclass
class EvalTuples:
    """Evaluation-only aligned tuples, samples[m, k] is domain k's view.
    Training operations only accept PairedDataset, never this type."""

    samples: np.ndarray  # (M, K, d)
    latent_indices: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def domain(self, k: int) -> np.ndarray:
        return self.samples[:, k, :]


@dataclass
class GaussianInstance:
    """Linear-Gaussian instance with closed-form cross-domain conditionals."""

    maps: list[np.ndarray]      # per-domain (d, dz)
    offsets: list[np.ndarray]   # per-domain (d,)
    noise: list[float]          # per-domain observation noise std
    latent_dim: int

    @property
    def K(self) -> int:
        return len(self.maps)

    @property
    def data_dim(self) -> int:
        return self.maps[0].shape[0]

    def sample_domains(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """All K domain views of latent rows z: returns (n, K, d)."""
        n = z.shape[0]
        out = np.empty((n, self.K, self.data_dim))
        for k in range(self.K):
            eps = rng.standard_normal((n, self.data_dim))
            out[:, k, :] = z @ self.maps[k].T + self.offsets[k] + self.noise[k] * eps
        return out


def analytic_conditional(inst: GaussianInstance, src: int, tgt: int,
                         x_src: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact Gaussian conditional p(x_tgt | x_src), composed through the shared
    latent. x_src may be a vector or (B, d) batch; the covariance does not
    depend on the conditioning value. Raises on a singular source covariance."""
    if src == tgt:
        raise ValueError("src and tgt must differ")
    A_s, A_t = inst.maps[src], inst.maps[tgt]
    cov_ss = A_s @ A_s.T + inst.noise[src] ** 2 * np.eye(inst.data_dim)
    cov_ts = A_t @ A_s.T
    try:
        gain = np.linalg.solve(cov_ss, cov_ts.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular source covariance; degenerate instance") from exc
    cond = np.linalg.cond(cov_ss)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError("singular source covariance; degenerate instance")
    delta = np.asarray(x_src, dtype=np.float64) - inst.offsets[src]
    mean = inst.offsets[tgt] + delta @ gain.T
    cov_tt = A_t @ A_t.T + inst.noise[tgt] ** 2 * np.eye(inst.data_dim)
    cov = cov_tt - gain @ cov_ts.T
    return mean, cov


def sample_conditional(inst: GaussianInstance, src: int, tgt: int, x_src: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """One draw from p(x_tgt | x_src) per row of x_src."""
    mean, cov = analytic_conditional(inst, src, tgt, np.atleast_2d(x_src))
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    eps = rng.standard_normal(mean.shape)
    return mean + eps @ chol.T


def noisy_conditional(inst: GaussianInstance, src: int, tgt: int, x_src: np.ndarray,
                      a_t: float, sigma_t: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional of the diffused target at signal level a_t:
    p(x_t^tgt | x_src) = N(a_t mu, a_t^2 Sigma + sigma_t^2 I)."""
    mean, cov = analytic_conditional(inst, src, tgt, x_src)
    return a_t * mean, a_t * a_t * cov + sigma_t * sigma_t * np.eye(cov.shape[0])


class OracleScorePredictor:
    """Exact noise predictor for a gaussian-affine instance.

    Implements the same call signature as the learned router:
    eps*(x_t, t, x_src, tgt, src) = sigma_t St^{-1} (x_t - a_t mu) with
    (mu, Sigma) the analytic conditional and St = a_t^2 Sigma + sigma_t^2 I.
    """

    def __init__(self, inst: GaussianInstance, sch):
        self.inst = inst
        self.sch = sch

    def __call__(self, x_t, t, x_src, tgt: int, src: int) -> np.ndarray:
        t = int(t)  # scalar steps only; the oracle has no per-row time path
        squeeze = np.asarray(x_t).ndim == 1
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        a_t = self.sch.a[t]
        sigma_t = self.sch.sigma[t]
        mean, cov = noisy_conditional(self.inst, src, tgt, np.atleast_2d(x_src), a_t, sigma_t)
        out = sigma_t * np.linalg.solve(cov, (x_t - mean).T).T
        return out[0] if squeeze else out


def _make_gaussian_instance(K: int, d: int, rng: np.random.Generator,
                            central: int = 0, central_noise: float = 0.01,
                            noncentral_noise: float = 0.12) -> GaussianInstance:
    maps, offsets, noise = [], [], []
    for k in range(K):
        if k == central:
            maps.append(np.eye(d))
            offsets.append(np.zeros(d))
            noise.append(central_noise)
        else:
            g = rng.normal(0.0, 0.35, size=(d, d))
            maps.append(np.eye(d) * rng.uniform(0.7, 1.3) + g)
            offsets.append(rng.normal(0.0, 1.0, size=d))
            noise.append(noncentral_noise)
    return GaussianInstance(maps=maps, offsets=offsets, noise=noise, latent_dim=d)


def _moons_latent(n: int, rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi, size=n)
    upper = rng.integers(0, 2, size=n).astype(bool)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    return np.column_stack([x, y]) + rng.normal(0.0, 0.05, size=(n, 2))


def _moons_warp(z: np.ndarray, k: int, rng: np.random.Generator,
                noise: float = 0.05) -> np.ndarray:
    if k == 0:
        out = z.copy()
    else:
        ang = 0.9 * k
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        out = z @ rot.T
        out[:, 1] += 0.5 * np.tanh(out[:, 0] * k)
    return out + rng.normal(0.0, noise, size=out.shape)


def _glyph_prototypes() -> np.ndarray:
    protos = []
    side = GLYPH_SIDE
    canvas = np.zeros((side, side))
    for r in (1, 3, 5):
        g = canvas.copy()
        g[r, 1:-1] = 1.0
        protos.append(g)
    for c in (2, 5):
        g = canvas.copy()
        g[1:-1, c] = 1.0
        protos.append(g)
    g = canvas.copy()
    np.fill_diagonal(g, 1.0)
    protos.append(g)
    g = canvas.copy()
    g[2:6, 2:6] = 1.0
    g[3:5, 3:5] = 0.0
    protos.append(g)
    g = canvas.copy()
    g[3:5, 1:-1] = 1.0
    g[1:-1, 3:5] = 1.0
    protos.append(g)
    return np.stack(protos)


def _sobel_edges(img: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(img, axis=0, mode="constant")
    gy = ndimage.sobel(img, axis=1, mode="constant")
    mag = np.hypot(gx, gy)
    return mag / 4.0


def _rotate_shrink(img: np.ndarray, angle_deg: float = 20.0, scale: float = 0.8) -> np.ndarray:
    ang = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]]) / scale
    center = (GLYPH_SIDE - 1) / 2.0
    offset = center - rot @ np.array([center, center])
    return ndimage.affine_transform(img, rot, offset=offset, order=1, mode="constant")


def _glyph_domains(z: np.ndarray, protos: np.ndarray, K: int,
                   rng: np.random.Generator) -> np.ndarray:
    """z columns: prototype index, row shift, col shift, brightness."""
    n = z.shape[0]
    out = np.empty((n, K, GLYPH_DIM))
    for i in range(n):
        proto = protos[int(z[i, 0])]
        img = np.roll(np.roll(proto, int(z[i, 1]), axis=0), int(z[i, 2]), axis=1)
        img = img * z[i, 3]
        views = [img, _sobel_edges(img), _rotate_shrink(img)]
        for k in range(K):
            base = views[k] if k < 3 else _rotate_shrink(img, angle_deg=-20.0)
            out[i, k, :] = base.reshape(-1) + rng.normal(0.0, 0.02, size=GLYPH_DIM)
    return out


def _glyph_latent(n: int, rng: np.random.Generator) -> np.ndarray:
    protos = _glyph_prototypes()
    idx = rng.integers(0, len(protos), size=n)
    shifts = rng.integers(-1, 2, size=(n, 2))
    brightness = rng.uniform(0.7, 1.0, size=n)
    return np.column_stack([idx, shifts[:, 0], shifts[:, 1], brightness])


def _build_instance(topo: Topology, d: int, N: int, M: int, family: str,
                    seed: int, edge_shift: float = 0.0):
    """Shared machinery: draws one latent pool, cuts disjoint slices per edge
    and for evaluation, and maps latents through the family's domain views."""
    rng = np.random.default_rng(seed)
    K = topo.K
    n_pool = (K - 1) * N + M
    inst = None
    if family == "gaussian-affine":
        inst = _make_gaussian_instance(K, d, rng, central=topo.central or 0)
        pool = rng.standard_normal((n_pool, inst.latent_dim))

        def views(z, rng):
            return inst.sample_domains(z, rng)
    elif family == "moons-warp":
        if d != 2:
            raise ValueError("moons-warp requires d=2")
        pool = _moons_latent(n_pool, rng)

        def views(z, rng):
            out = np.empty((z.shape[0], K, 2))
            for k in range(K):
                out[:, k, :] = _moons_warp(z, k, rng)
            return out
    elif family == "glyphs":
        if d != GLYPH_DIM:
            raise ValueError(f"glyphs family requires d={GLYPH_DIM}")
        protos = _glyph_prototypes()
        pool = _glyph_latent(n_pool, rng)

        def views(z, rng):
            return _glyph_domains(z, protos, K, rng)
    else:
        raise ValueError(f"unknown instance family {family!r}")

    datasets = []
    for e_idx, (a, b) in enumerate(topo.edges):
        idx = np.arange(e_idx * N, (e_idx + 1) * N)
        z = pool[idx].copy()
        if edge_shift != 0.0 and family == "gaussian-affine":
            z = z + edge_shift * e_idx
        all_views = views(z, rng)
        datasets.append(PairedDataset(edge=(a, b), x_a=all_views[:, a, :],
                                      x_b=all_views[:, b, :], latent_indices=idx))
    eval_idx = np.arange((K - 1) * N, n_pool)
    eval_views = views(pool[eval_idx], rng)
    tuples = EvalTuples(samples=eval_views, latent_indices=eval_idx)
    return datasets, tuples, inst


def make_star_instance(K: int, d: int, N: int, seed: int, family: str = "gaussian-affine",
                       M: int = 5000, central: int = 0, edge_shift: float = 0.0):
    """Star topology: every edge joins a non-central domain to `central`.
    Returns (Topology, [PairedDataset], EvalTuples, GaussianInstance | None)."""
    if K < 2:
        raise ValueError("star instance needs K >= 2")
    if family not in FAMILIES:
        raise ValueError(f"unknown instance family {family!r}")
    edges = tuple((k, central) for k in range(K) if k != central)
    topo = Topology(K=K, edges=edges, central=central)
    datasets, tuples, inst = _build_instance(topo, d, N, M, family, seed, edge_shift)
    return topo, datasets, tuples, inst


def make_chain_instance(K: int, d: int, N: int, seed: int, M: int = 5000,
                        family: str = "gaussian-affine"):
    """Path topology 0-1-...-K-1 with one paired dataset per consecutive pair."""
    if K < 3:
        raise ValueError("chain instance needs K >= 3")
    edges = tuple((k, k + 1) for k in range(K - 1))
    topo = Topology(K=K, edges=edges, central=None)
    datasets, tuples, inst = _build_instance(topo, d, N, M, family, seed)
    return topo, datasets, tuples, inst


def partial_correlation(xi: np.ndarray, xj: np.ndarray, xc: np.ndarray) -> float:
    """Max absolute correlation between residuals of xi and xj after
    regressing out xc (with intercept)."""
    design = np.column_stack([np.ones(len(xc)), xc])
    coef_i, *_ = np.linalg.lstsq(design, xi, rcond=None)
    coef_j, *_ = np.linalg.lstsq(design, xj, rcond=None)
    ri = xi - design @ coef_i
    rj = xj - design @ coef_j
    corr = np.corrcoef(np.column_stack([ri, rj]).T)
    di = ri.shape[1]
    return float(np.max(np.abs(corr[:di, di:])))


def save_paired_dataset(path, ds: PairedDataset, meta: dict) -> None:
    lines = [DATASET_MAGIC, f"edge={ds.edge[0]},{ds.edge[1]}", f"n={len(ds)}",
             f"d={ds.x_a.shape[1]}"]
    for k in sorted(meta):
        lines.append(f"{k}={meta[k]}")
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in (ds.x_a, ds.x_b, ds.latent_indices.astype(np.float64)):
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            fh.write(struct.pack("<I", flat.size))
            fh.write(flat.tobytes())


def load_paired_dataset(path) -> PairedDataset:
    header, arrays = _load_blocks(path)
    a, b = (int(v) for v in header["edge"].split(","))
    n, d = int(header["n"]), int(header["d"])
    return PairedDataset(edge=(a, b), x_a=arrays[0].reshape(n, d),
                         x_b=arrays[1].reshape(n, d),
                         latent_indices=arrays[2].astype(np.int64))


def save_eval_tuples(path, tuples: EvalTuples, meta: dict) -> None:
    M, K, d = tuples.samples.shape
    lines = [DATASET_MAGIC, f"m={M}", f"k={K}", f"d={d}"]
    for key in sorted(meta):
        lines.append(f"{key}={meta[key]}")
    lines.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        flat = np.ascontiguousarray(tuples.samples, dtype="<f4").reshape(-1)
        fh.write(struct.pack("<I", flat.size))
        fh.write(flat.tobytes())
        idx = np.ascontiguousarray(tuples.latent_indices, dtype="<f4").reshape(-1)
        fh.write(struct.pack("<I", idx.size))
        fh.write(idx.tobytes())


def load_eval_tuples(path) -> EvalTuples:
    header, arrays = _load_blocks(path)
    M, K, d = int(header["m"]), int(header["k"]), int(header["d"])
    return EvalTuples(samples=arrays[0].reshape(M, K, d),
                      latent_indices=arrays[1].astype(np.int64))


def _load_blocks(path) -> tuple[dict, list[np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.index(b"---\n")
    lines = blob[:sep].decode("utf-8").strip().split("\n")
    if lines[0] != DATASET_MAGIC:
        raise ValueError(f"{path} is not a diffrouter dataset file")
    header = {}
    for line in lines[1:]:
        k, _, v = line.partition("=")
        header[k] = v
    offset = sep + 4
    arrays = []
    while offset < len(blob):
        (count,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count,
                                    offset=offset).astype(np.float64))
        offset += 4 * count
    return header, arrays


def instance_to_dict(inst: GaussianInstance) -> dict:
    return {"latent_dim": inst.latent_dim,
            "maps": [m.tolist() for m in inst.maps],
            "offsets": [o.tolist() for o in inst.offsets],
            "noise": list(inst.noise)}


def instance_from_dict(data: dict) -> GaussianInstance:
    return GaussianInstance(maps=[np.array(m) for m in data["maps"]],
                            offsets=[np.array(o) for o in data["offsets"]],
                            noise=[float(s) for s in data["noise"]],
                            latent_dim=int(data["latent_dim"]))


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
