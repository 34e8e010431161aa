import pytest

from asymgemm.model import CoreClass
from asymgemm.profiles import (
    BUILTIN_PROFILES,
    ProfileError,
    builtin_profile,
    builtin_topology,
    format_profile,
    load_profile,
    parse_profile,
    save_profile,
)


def test_builtin_a15_values():
    a15 = builtin_profile("exynos5422-a15")
    assert a15.core_class is CoreClass.FAST
    assert (a15.core_count, a15.l1d_bytes, a15.l2_bytes) == (4, 32768, 2097152)
    cfg = a15.cache_config
    assert (cfg.m_c, cfg.k_c, cfg.n_c, cfg.m_r, cfg.n_r) == (152, 952, 4096, 4, 4)


def test_builtin_a7_values():
    a7 = builtin_profile("exynos5422-a7")
    assert a7.core_class is CoreClass.SLOW
    assert a7.l2_bytes == 524288
    cfg = a7.cache_config
    assert (cfg.m_c, cfg.k_c) == (80, 352)


def test_builtin_shared_kc_values():
    shared = builtin_profile("exynos5422-a7-shared-kc")
    cfg = shared.cache_config
    assert (cfg.m_c, cfg.k_c) == (32, 952)


def test_every_builtin_loads():
    for name in BUILTIN_PROFILES:
        builtin_profile(name)
    topo = builtin_topology()
    assert topo.total_cores == 8


def test_round_trip(tmp_path):
    a15 = builtin_profile("exynos5422-a15")
    path = tmp_path / "out.cfg"
    save_profile(a15, path)
    assert load_profile(path) == a15


def test_comments_and_whitespace():
    text = format_profile(builtin_profile("exynos5422-a7"))
    noisy = "# header\n\n" + text.replace("=", "  =  ")
    assert parse_profile(noisy) == builtin_profile("exynos5422-a7")


def test_missing_key_rejected():
    with pytest.raises(ProfileError, match="missing keys"):
        parse_profile("class = fast\ncore_count = 4\n")


def test_bad_class_rejected():
    text = format_profile(builtin_profile("exynos5422-a7")).replace(
        "class = slow", "class = medium")
    with pytest.raises(ProfileError, match="class"):
        parse_profile(text)


def test_unknown_builtin_rejected():
    with pytest.raises(ProfileError, match="unknown builtin"):
        builtin_profile("cortex-x99")
