"""Machine profile files: one cluster per document, simple `key = value`
lines with `#` comments. Shipped profiles describe the two clusters of an
Exynos-5422-like part, plus the shared-k_c variant for the small cluster.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path
from typing import Union

from .model import CacheConfig, ClusterSpec, CoreClass, Topology

_REQUIRED_KEYS = (
    "class", "core_count", "l1d_bytes", "l2_bytes",
    "n_c", "k_c", "m_c", "m_r", "n_r",
)

BUILTIN_PROFILES = (
    "exynos5422-a15",
    "exynos5422-a7",
    "exynos5422-a7-shared-kc",
)


class ProfileError(ValueError):
    pass


def parse_profile(text: str, name: str = "<profile>") -> ClusterSpec:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProfileError(f"{name}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()

    missing = [k for k in _REQUIRED_KEYS if k not in values]
    if missing:
        raise ProfileError(f"{name}: missing keys: {', '.join(missing)}")

    try:
        core_class = CoreClass(values["class"].lower())
    except ValueError:
        raise ProfileError(f"{name}: class must be 'fast' or 'slow', got {values['class']!r}")

    def intval(key):
        try:
            return int(values[key])
        except ValueError:
            raise ProfileError(f"{name}: {key} must be an integer, got {values[key]!r}")

    cfg = CacheConfig(n_c=intval("n_c"), k_c=intval("k_c"), m_c=intval("m_c"),
                      m_r=intval("m_r"), n_r=intval("n_r"))
    try:
        slowdown = float(values.get("emulated_slowdown", "1.0"))
    except ValueError:
        raise ProfileError(f"{name}: emulated_slowdown must be a number")
    return ClusterSpec(
        core_class=core_class,
        core_count=intval("core_count"),
        l1d_bytes=intval("l1d_bytes"),
        l2_bytes=intval("l2_bytes"),
        cache_config=cfg,
        emulated_slowdown=slowdown,
    )


def load_profile(path: Union[str, Path]) -> ClusterSpec:
    path = Path(path)
    return parse_profile(path.read_text(), name=str(path))


def format_profile(cluster: ClusterSpec) -> str:
    cfg = cluster.cache_config
    lines = [
        f"class = {cluster.core_class.value}",
        f"core_count = {cluster.core_count}",
        f"l1d_bytes = {cluster.l1d_bytes}",
        f"l2_bytes = {cluster.l2_bytes}",
        f"n_c = {cfg.n_c}",
        f"k_c = {cfg.k_c}",
        f"m_c = {cfg.m_c}",
        f"m_r = {cfg.m_r}",
        f"n_r = {cfg.n_r}",
        f"emulated_slowdown = {cluster.emulated_slowdown}",
    ]
    return "\n".join(lines) + "\n"


def save_profile(cluster: ClusterSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(format_profile(cluster))


def builtin_profile(name: str) -> ClusterSpec:
    """Load one of the shipped cluster profiles by name (without .cfg)."""
    if name not in BUILTIN_PROFILES:
        raise ProfileError(f"unknown builtin profile {name!r}; "
                           f"available: {', '.join(BUILTIN_PROFILES)}")
    ref = importlib.resources.files(__package__) / "profiles" / f"{name}.cfg"
    return parse_profile(ref.read_text(), name=name)


def builtin_topology() -> Topology:
    """The shipped two-cluster big.LITTLE-like topology."""
    return Topology((builtin_profile("exynos5422-a15"),
                     builtin_profile("exynos5422-a7")))
