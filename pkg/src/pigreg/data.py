"""Datasets: synthetic generators, a download manifest, a checksummed cache
and parsing with train-only standardization.

Downloads go through an injectable ``transport(url) -> bytes`` so tests can
run offline. The cache keeps the downloaded bytes untouched under
``<cache_dir>/<name>/<sha256>.raw``; archive members are extracted at parse
time.
"""

import hashlib
import io
import os
import tempfile
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

CACHE_ENV = "PIGREG_CACHE_DIR"


class FetchError(RuntimeError):
    pass


class NetworkError(FetchError):
    """Download failed; retrying later may help."""


class ChecksumError(FetchError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    x: np.ndarray
    y: np.ndarray
    provenance: str = ""
    x_mean: np.ndarray = None
    x_std: np.ndarray = None
    y_mean: np.ndarray = None
    y_std: np.ndarray = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def destandardize_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean

    def destandardize_x(self, x):
        return np.asarray(x) * self.x_std + self.x_mean


# --- synthetic data ----------------------------------------------------------


def toy_generate(n, x_low=0.0, x_high=10.0, rng=None, noise=True):
    """y = x sin x + 0.3 e1 + 0.3 x e2 with x uniform on [x_low, x_high]."""
    if n < 1 or not x_low < x_high:
        raise ValueError("need n >= 1 and x_low < x_high")
    x = rng.uniform(x_low, x_high, size=n)
    e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
    y = x * np.sin(x)
    if noise:
        y = y + 0.3 * e1 + 0.3 * x * e2
    prov = f"toy n={n} range=[{x_low!r}, {x_high!r}] noise={noise}"
    return Dataset("toy", x[:, None], y[:, None], prov)


def toy_conditional_variance(x):
    return 0.09 + 0.09 * np.asarray(x) ** 2


def bump_noise_std(x, s, scale=1.0):
    """Noise std with variance proportional to exp(-0.5 (|x| / s)^2)."""
    r = np.linalg.norm(np.atleast_2d(x), axis=1)
    return scale * np.exp(-0.25 * (r / s) ** 2)


def heteroscedastic_bump_generate(n, s, rng, dim=1, half_width=3.0, scale=1.0):
    """Uniform inputs on [-half_width, half_width]^dim, zero-mean noise peaking at 0."""
    if n < 1 or not s > 0:
        raise ValueError("need n >= 1 and s > 0")
    x = rng.uniform(-half_width, half_width, size=(n, dim))
    y = bump_noise_std(x, s, scale) * rng.standard_normal(n)
    return Dataset("bump", x, y[:, None], f"bump n={n} s={s!r} dim={dim}")


# --- manifest ----------------------------------------------------------------


def _columns(spec):
    cols = []
    for part in spec.split(","):
        if "-" in part:
            a, b = part.split("-")
            cols.extend(range(int(a), int(b) + 1))
        else:
            cols.append(int(part))
    return tuple(cols)


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    url: str
    fmt: str  # "csv:<delim>" or "whitespace"
    targets: tuple
    features: tuple
    skip_rows: int = 0
    sha256: str = "-"
    member: str = "-"
    shape: tuple = field(default=())

    @property
    def pinned(self):
        return self.sha256 != "-"

    @classmethod
    def from_line(cls, line):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 9:
            raise ParseError(f"manifest line needs 9 tab-separated fields, got {len(parts)}: {line!r}")
        name, url, fmt, targets, features, skip, sha, member, shape = parts
        return cls(
            name, url, fmt, _columns(targets), _columns(features), int(skip), sha, member,
            tuple(int(t) for t in shape.split(",")),
        )


def load_manifest(path=None):
    if path is None:
        text = resources.files("pigreg").joinpath("resources/manifest.tsv").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    entries = {}
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            e = ManifestEntry.from_line(line)
            entries[e.name] = e
    return entries


# --- fetching ----------------------------------------------------------------


def default_cache_dir():
    return os.environ.get(CACHE_ENV) or os.path.join(os.path.expanduser("~"), ".cache", "pigreg")


def urllib_transport(url, timeout=60):
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise NetworkError(f"download of {url} failed: {exc}") from exc


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path, payload):
    d = os.path.dirname(path)
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cached_path(entry: ManifestEntry, cache_dir):
    """Where the raw file lives (or would live); None for an unpinned miss."""
    d = os.path.join(cache_dir, entry.name)
    if entry.pinned:
        return os.path.join(d, f"{entry.sha256}.raw")
    if os.path.isdir(d):
        raws = sorted(f for f in os.listdir(d) if f.endswith(".raw"))
        if raws:
            return os.path.join(d, raws[0])
    return None


def fetch(entry: ManifestEntry, cache_dir=None, transport=urllib_transport):
    """Return (path, cache_hit). Verifies the checksum on hits and downloads."""
    cache_dir = cache_dir or default_cache_dir()
    path = cached_path(entry, cache_dir)
    if path is not None and os.path.exists(path):
        if entry.pinned:
            actual = sha256_file(path)
            if actual != entry.sha256:
                raise ChecksumError(
                    f"{entry.name}: cached file checksum mismatch, expected {entry.sha256}, actual {actual} ({path})"
                )
        return path, True
    payload = transport(entry.url)
    actual = hashlib.sha256(payload).hexdigest()
    if entry.pinned and actual != entry.sha256:
        raise ChecksumError(f"{entry.name}: download checksum mismatch, expected {entry.sha256}, actual {actual}")
    path = os.path.join(cache_dir, entry.name, f"{actual}.raw")
    _atomic_write(path, payload)
    return path, False


# --- parsing -----------------------------------------------------------------


def _raw_text(path, entry):
    with open(path, "rb") as fh:
        payload = fh.read()
    if entry.member != "-":
        try:
            with zipfile.ZipFile(io.BytesIO(payload)) as zf:
                payload = zf.read(entry.member)
        except (zipfile.BadZipFile, KeyError) as exc:
            raise ParseError(f"{entry.name}: cannot read archive member {entry.member}: {exc}") from exc
    return payload.decode("utf-8", errors="replace")


def load_table(path, entry: ManifestEntry):
    """Parse the raw file into float arrays (X, Y) using the entry's layout."""
    text = _raw_text(path, entry)
    delim = None
    if entry.fmt.startswith("csv:"):
        delim = entry.fmt[4:]
    elif entry.fmt != "whitespace":
        raise ParseError(f"{entry.name}: unknown format {entry.fmt!r}")
    rows, width = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if lineno <= entry.skip_rows or not line.strip():
            continue
        cells = line.split(delim) if delim else line.split()
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"{entry.name} line {lineno}: expected {width} columns, found {len(cells)}")
        try:
            values = [float(c.strip().strip('"')) for c in cells]
        except ValueError as exc:
            raise ParseError(f"{entry.name} line {lineno}: non-numeric cell ({exc})") from exc
        rows.append(values)
    if not rows:
        raise ParseError(f"{entry.name}: no data rows")
    table = np.array(rows)
    needed = max(entry.targets + entry.features)
    if needed >= table.shape[1]:
        raise ParseError(f"{entry.name}: manifest needs column {needed}, file has {table.shape[1]}")
    if not np.all(np.isfinite(table)):
        raise ParseError(f"{entry.name}: NaN or Inf in parsed table")
    return table[:, list(entry.features)], table[:, list(entry.targets)]


def standardize_split(name, x, y, train_idx, test_idx, provenance=""):
    """Standardize both folds with constants computed on the train fold only."""
    xtr, ytr = x[train_idx], y[train_idx]
    xm, ym = xtr.mean(axis=0), ytr.mean(axis=0)
    xs, ys = xtr.std(axis=0), ytr.std(axis=0)
    xs = np.where(xs > 0, xs, 1.0)
    ys = np.where(ys > 0, ys, 1.0)

    def make(idx, tag):
        return Dataset(f"{name}:{tag}", (x[idx] - xm) / xs, (y[idx] - ym) / ys, provenance, xm, xs, ym, ys)

    return make(train_idx, "train"), make(test_idx, "test")


def random_split(n, train_fraction, rng):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def parse_and_standardize(path, entry: ManifestEntry, train_fraction=0.9, rng=None):
    x, y = load_table(path, entry)
    tr, te = random_split(len(x), train_fraction, rng)
    return standardize_split(entry.name, x, y, tr, te, provenance=entry.url)
