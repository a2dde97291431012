"""Smoke test for the wsnas_py extension.

Builds the extension with cargo unless WSNAS_PY_LIB points at a built
library, then exercises each binding once.
"""

import importlib.util
import json
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_library() -> pathlib.Path:
    env = os.environ.get("WSNAS_PY_LIB")
    if env:
        return pathlib.Path(env)
    subprocess.run(
        ["cargo", "build", "--release", "-p", "wsnas-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = pathlib.Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    for name in ("libwsnas_py.so", "libwsnas_py.dylib", "wsnas_py.dll"):
        p = target / "release" / name
        if p.exists():
            return p
    raise FileNotFoundError("built extension not found under " + str(target))


def load(lib: pathlib.Path, workdir: pathlib.Path):
    dest = workdir / ("wsnas_py.pyd" if sys.platform == "win32" else "wsnas_py.so")
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("wsnas_py", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def write_table(path: pathlib.Path, m) -> None:
    lines = [json.dumps({"format": "wsnas-bench-v1", "fingerprint": "smoke", "passes_per_training": 10})]
    for i, op in enumerate(["conv3x3", "conv1x1", "maxpool3x3"]):
        enc = m.prune(f"ops={op};adj=101")
        ops, adj = enc.split(";")
        lines.append(json.dumps({
            "hash": m.canonical_hash(enc),
            "ops": ops.removeprefix("ops="),
            "adj": adj.removeprefix("adj="),
            "val_acc_mean": 0.5 + 0.1 * i,
            "val_acc_std": 0.0,
            "test_acc_mean": 0.45 + 0.1 * i,
            "test_acc_std": 0.0,
            "train_time_s": 1.0,
            "repeats": 1,
        }))
    path.write_text("\n".join(lines) + "\n")


def main() -> int:
    lib = build_library()
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        m = load(lib, tmp)

        assert m.channel_allocation(3, 128) == [42, 43, 43]
        assert m.count_unique("full@v3e9") == 7

        a = m.prune("ops=conv3x3,conv1x1;adj=110011")
        b = m.prune("ops=conv1x1,conv3x3;adj=110011")
        assert m.canonical_hash(a) == m.canonical_hash(b), (a, b)
        assert m.param_count(a) > m.param_count("ops=;adj=1")

        assert abs(m.spearman([1, 2, 3, 4], [10, 20, 25, 100]) - 1.0) < 1e-12
        t = m.two_sample_test([1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.0])
        assert abs(t["mean_diff"] + 1.0) < 1e-12 and 0.0 < t["p_value"] < 1.0
        assert 27 <= m.required_sample_size(0.5) <= 33
        assert abs(m.superiority_probability(0.39) - 0.61) < 0.01

        table_path = tmp / "table.jsonl"
        write_table(table_path, m)
        table = m.BenchTable.load(str(table_path))
        assert len(table) == 3 and table.fingerprint == "smoke"
        rec = table.query("ops=maxpool3x3;adj=101")
        assert abs(rec["val_acc_mean"] - 0.7) < 1e-12
        assert abs(table.random_search_regret(3, 0)) < 1e-12
        try:
            table.query("ops=conv3x3,conv3x3;adj=110011")
        except KeyError:
            pass
        else:
            raise AssertionError("unknown architecture must raise KeyError")
        try:
            m.prune("ops=conv3x3;adj=1x0")
        except ValueError:
            pass
        else:
            raise AssertionError("malformed encoding must raise ValueError")
    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
